//! Built-in stroke glyphs. Each glyph is a set of polylines on a 4×6 grid
//! (x right, y down, baseline at y = 6).

pub const GRID_W: f64 = 4.0;
pub const GRID_H: f64 = 6.0;

const GLYPHS: &[(char, &str)] = &[
    ('0', "1,0 3,0 4,1 4,5 3,6 1,6 0,5 0,1 1,0;0,5 4,1"),
    ('1', "1,1 2,0 2,6;1,6 3,6"),
    ('2', "0,1 1,0 3,0 4,1 4,2 0,6 4,6"),
    ('3', "0,0 4,0 2,2 3,2 4,3 4,5 3,6 1,6 0,5"),
    ('4', "3,6 3,0 0,4 4,4"),
    ('5', "4,0 0,0 0,2 3,2 4,3 4,5 3,6 0,6"),
    ('6', "4,0 2,0 0,2 0,5 1,6 3,6 4,5 4,4 3,3 0,3"),
    ('7', "0,0 4,0 1,6"),
    (
        '8',
        "1,0 3,0 4,1 4,2 3,3 1,3 0,4 0,5 1,6 3,6 4,5 4,4 3,3;1,3 0,2 0,1 1,0",
    ),
    ('9', "4,3 1,3 0,2 0,1 1,0 3,0 4,1 4,4 2,6 0,6"),
    ('A', "0,6 2,0 4,6;1,4 3,4"),
    ('B', "0,6 0,0 3,0 4,1 4,2 3,3 0,3;3,3 4,4 4,5 3,6 0,6"),
    ('C', "4,1 3,0 1,0 0,1 0,5 1,6 3,6 4,5"),
    ('D', "0,0 0,6 2,6 4,4 4,2 2,0 0,0"),
    ('E', "4,0 0,0 0,6 4,6;0,3 3,3"),
    ('F', "4,0 0,0 0,6;0,3 3,3"),
    ('G', "4,1 3,0 1,0 0,1 0,5 1,6 3,6 4,5 4,3 2,3"),
    ('H', "0,0 0,6;4,0 4,6;0,3 4,3"),
    ('I', "1,0 3,0;2,0 2,6;1,6 3,6"),
    ('J', "4,0 4,5 3,6 1,6 0,5"),
    ('K', "0,0 0,6;4,0 0,4;1,3 4,6"),
    ('L', "0,0 0,6 4,6"),
    ('M', "0,6 0,0 2,3 4,0 4,6"),
    ('N', "0,6 0,0 4,6 4,0"),
    ('O', "1,0 3,0 4,1 4,5 3,6 1,6 0,5 0,1 1,0"),
    ('P', "0,6 0,0 3,0 4,1 4,2 3,3 0,3"),
    ('Q', "1,0 3,0 4,1 4,5 3,6 1,6 0,5 0,1 1,0;2,4 4,6"),
    ('R', "0,6 0,0 3,0 4,1 4,2 3,3 0,3;2,3 4,6"),
    ('S', "4,1 3,0 1,0 0,1 0,2 1,3 3,3 4,4 4,5 3,6 1,6 0,5"),
    ('T', "0,0 4,0;2,0 2,6"),
    ('U', "0,0 0,5 1,6 3,6 4,5 4,0"),
    ('V', "0,0 2,6 4,0"),
    ('W', "0,0 1,6 2,3 3,6 4,0"),
    ('X', "0,0 4,6;4,0 0,6"),
    ('Y', "0,0 2,3 4,0;2,3 2,6"),
    ('Z', "0,0 4,0 0,6 4,6"),
    ('a', "0,2 3,2 4,3 4,6;4,4 1,4 0,5 1,6 4,6"),
    ('b', "0,0 0,6 3,6 4,5 4,3 3,2 0,2"),
    ('c', "4,2 1,2 0,3 0,5 1,6 4,6"),
    ('d', "4,0 4,6 1,6 0,5 0,3 1,2 4,2"),
    ('e', "0,4 4,4 4,3 3,2 1,2 0,3 0,5 1,6 4,6"),
    ('f', "4,0 3,0 2,1 2,6;0,2 4,2"),
    ('g', "4,5 1,5 0,4 0,3 1,2 4,2 4,6 3,7 0,7"),
    ('h', "0,0 0,6;0,3 1,2 3,2 4,3 4,6"),
    ('i', "2,2 2,6;2,0 2,1"),
    ('j', "3,2 3,6 2,7 0,7;3,0 3,1"),
    ('k', "0,0 0,6;4,2 0,5;1,4 4,6"),
    ('l', "1,0 2,0 2,6 3,6"),
    ('m', "0,6 0,2;0,3 1,2 2,3 2,6;2,3 3,2 4,3 4,6"),
    ('n', "0,6 0,2;0,3 1,2 3,2 4,3 4,6"),
    ('o', "1,2 3,2 4,3 4,5 3,6 1,6 0,5 0,3 1,2"),
    ('p', "0,7 0,2 3,2 4,3 4,4 3,5 0,5"),
    ('q', "4,7 4,2 1,2 0,3 0,4 1,5 4,5"),
    ('r', "0,6 0,2;0,4 2,2 4,2"),
    ('s', "4,2 1,2 0,3 1,4 3,4 4,5 3,6 0,6"),
    ('t', "2,0 2,5 3,6 4,6;0,2 4,2"),
    ('u', "0,2 0,5 1,6 3,6 4,5;4,2 4,6"),
    ('v', "0,2 2,6 4,2"),
    ('w', "0,2 1,6 2,4 3,6 4,2"),
    ('x', "0,2 4,6;4,2 0,6"),
    ('y', "0,2 2,6;4,2 1,7 0,7"),
    ('z', "0,2 4,2 0,6 4,6"),
    ('.', "2,5.6 2,6"),
    (',', "2,5.5 1.5,7"),
    (':', "2,2 2,2.5;2,5.5 2,6"),
    (';', "2,2 2,2.5;2,5.5 1.5,7"),
    ('-', "1,3.5 3,3.5"),
    ('+', "0.5,3.5 3.5,3.5;2,2 2,5"),
    ('/', "0,6 4,0"),
    ('!', "2,0 2,4;2,5.6 2,6"),
    ('?', "0,1 1,0 3,0 4,1 4,2 2,3.5 2,4.5;2,5.6 2,6"),
    ('\'', "2,0 2,1.5"),
    ('"', "1.5,0 1.5,1.5;2.5,0 2.5,1.5"),
    ('(', "3,0 1.5,2 1.5,4 3,6"),
    (')', "1,0 2.5,2 2.5,4 1,6"),
    ('&', "4,6 1,2 1,1 2,0 3,1 3,2 0,4 0,5 1,6 2,6 4,4"),
    (
        '%',
        "0,6 4,0;0.5,0.5 1.5,0.5 1.5,1.5 0.5,1.5 0.5,0.5;2.5,4.5 3.5,4.5 3.5,5.5 2.5,5.5 2.5,4.5",
    ),
];

/// Polylines of `c`; space maps to an empty glyph. `None` when unsupported.
pub fn glyph(c: char) -> Option<Vec<Vec<(f64, f64)>>> {
    if c == ' ' {
        return Some(Vec::new());
    }
    let (_, spec) = GLYPHS.iter().find(|(g, _)| *g == c)?;
    Some(
        spec.split(';')
            .map(|line| {
                line.split_whitespace()
                    .map(|pt| {
                        let (x, y) = pt.split_once(',').expect("glyph point");
                        (x.parse().expect("glyph x"), y.parse().expect("glyph y"))
                    })
                    .collect()
            })
            .collect(),
    )
}

pub fn supported(c: char) -> bool {
    c == ' ' || GLYPHS.iter().any(|(g, _)| *g == c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_glyph_parses_and_stays_in_box() {
        for (c, _) in GLYPHS {
            let g = glyph(*c).unwrap();
            assert!(!g.is_empty());
            for line in g {
                assert!(!line.is_empty());
                for (x, y) in line {
                    assert!(
                        (0.0..=GRID_W).contains(&x) && (0.0..=GRID_H + 1.0).contains(&y),
                        "{c}"
                    );
                }
            }
        }
    }

    #[test]
    fn glyphs_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for (_, s) in GLYPHS {
            assert!(seen.insert(*s));
        }
    }
}
