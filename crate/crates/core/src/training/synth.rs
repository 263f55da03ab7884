//! Programmatic handwriting-like synthesis with layout labels.

use image::{GrayImage, Luma};
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::glyphs::{self, GRID_H, GRID_W};
use crate::config::SynthConfig;
use crate::encoder::ScaleLevel;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Rng, Stream};

/// Height of one text row in pixels.
pub const ROW_HEIGHT: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    /// 8-bit grayscale, white background, dark ink.
    pub image: GrayImage,
    /// Plain text for lines, tagged layout string otherwise.
    pub label: String,
    pub level: ScaleLevel,
    pub seed: u64,
}

impl SyntheticSample {
    pub fn ink_pixels(&self) -> usize {
        self.image.pixels().filter(|p| p.0[0] < 255).count()
    }
}

fn check_alphabet(cfg: &SynthConfig) -> Result<Vec<char>> {
    let chars: Vec<char> = cfg.alphabet.chars().collect();
    if chars.is_empty() {
        return Err(Error::Parameter("synthesis alphabet is empty".into()));
    }
    if let Some(c) = chars.iter().find(|c| !glyphs::supported(**c)) {
        return Err(Error::Parameter(format!("no built-in glyph for {c:?}")));
    }
    if chars.iter().all(|&c| c == ' ') {
        return Err(Error::Parameter(
            "synthesis alphabet has only spaces".into(),
        ));
    }
    if cfg.min_chars == 0 || cfg.max_chars < cfg.min_chars {
        return Err(Error::Parameter(
            "synth.min_chars must be in 1..=max_chars".into(),
        ));
    }
    Ok(chars)
}

/// `count` samples; sample `i` depends only on `(cfg, level, seed, i)`.
pub fn generate_synthetic(
    cfg: &SynthConfig,
    level: ScaleLevel,
    count: usize,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    let chars = check_alphabet(cfg)?;
    (0..count)
        .map(|i| {
            let s = crate::rng::derive_seed(seed, Stream::Synthesis, i as u64);
            Ok(render_sample(cfg, &chars, level, s))
        })
        .collect()
}

/// One sample from its own seed.
pub fn render_sample(
    cfg: &SynthConfig,
    chars: &[char],
    level: ScaleLevel,
    seed: u64,
) -> SyntheticSample {
    let mut rng = stream_rng(seed, Stream::Synthesis, 0);
    let (h, w) = level.image_size();
    let mut canvas = Canvas::new(w, h);
    let label = match level {
        ScaleLevel::Line => {
            let text = random_text(&mut rng, chars, cfg.min_chars, cfg.max_chars);
            canvas.text_row(cfg, &mut rng, &text, 0, 0, w);
            text
        }
        ScaleLevel::Paragraph => {
            let lines: Vec<String> = (0..h / ROW_HEIGHT)
                .map(|r| {
                    let t = random_text(&mut rng, chars, cfg.min_chars, cfg.max_chars);
                    canvas.text_row(cfg, &mut rng, &t, r * ROW_HEIGHT, 0, w);
                    t
                })
                .collect();
            format!("<D><P><S><B>{}</B></S></P></D>", lines.join("\n"))
        }
        _ => {
            let col_w = w / level.columns();
            let pages: Vec<String> = (0..level.columns())
                .map(|c| page(cfg, &mut rng, chars, &mut canvas, c * col_w, col_w, h))
                .collect();
            format!("<D>{}</D>", pages.concat())
        }
    };
    if cfg.noise > 0.0 {
        for v in canvas.ink.iter_mut() {
            if *v == 0.0 && rng.gen::<f64>() < cfg.noise {
                *v = 1.0;
            }
        }
    }
    SyntheticSample {
        image: canvas.into_image(),
        label,
        level,
        seed,
    }
}

/// One page column: optional number row, optional annotation row, body.
fn page(
    cfg: &SynthConfig,
    rng: &mut Rng,
    chars: &[char],
    canvas: &mut Canvas,
    x0: usize,
    w: usize,
    h: usize,
) -> String {
    let rows = h / ROW_HEIGHT;
    let mut row = 0;
    let mut out = String::from("<P>");
    if rng.gen_bool(0.5) {
        let n = random_text(rng, chars, 1, 3.min(cfg.max_chars));
        let indent = w / 2;
        canvas.text_row(cfg, rng, &n, row * ROW_HEIGHT, x0 + indent, w - indent);
        out.push_str(&format!("<N>{n}</N>"));
        row += 1;
    }
    out.push_str("<S>");
    if rng.gen_bool(0.5) && rows - row > 2 {
        let a = random_text(
            rng,
            chars,
            cfg.min_chars.min(4),
            4.min(cfg.max_chars).max(cfg.min_chars.min(4)),
        );
        let indent = w / 4;
        canvas.text_row(cfg, rng, &a, row * ROW_HEIGHT, x0 + indent, w - indent);
        out.push_str(&format!("<A>{a}</A>"));
        row += 1;
    }
    let body: Vec<String> = (row..rows)
        .map(|r| {
            let t = random_text(rng, chars, cfg.min_chars, cfg.max_chars);
            canvas.text_row(cfg, rng, &t, r * ROW_HEIGHT, x0, w);
            t
        })
        .collect();
    out.push_str(&format!("<B>{}</B></S></P>", body.join("\n")));
    out
}

/// Random string without leading, trailing or repeated spaces.
fn random_text(rng: &mut Rng, chars: &[char], min: usize, max: usize) -> String {
    loop {
        let n = rng.gen_range(min..=max);
        let mut s = String::new();
        for _ in 0..n {
            let c = *chars.choose(rng).expect("nonempty alphabet");
            if c == ' ' && (s.is_empty() || s.ends_with(' ')) {
                continue;
            }
            s.push(c);
        }
        let s = s.trim_end().to_string();
        if !s.is_empty() {
            return s;
        }
    }
}

struct Canvas {
    w: usize,
    h: usize,
    ink: Vec<f64>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Canvas {
            w,
            h,
            ink: vec![0.0; w * h],
        }
    }

    fn into_image(self) -> GrayImage {
        let mut img = GrayImage::new(self.w as u32, self.h as u32);
        for (i, v) in self.ink.iter().enumerate() {
            let p = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            img.put_pixel((i % self.w) as u32, (i / self.w) as u32, Luma([p]));
        }
        img
    }

    /// Anti-aliased thick segment.
    fn segment(&mut self, a: (f64, f64), b: (f64, f64), width: f64) {
        let r = width / 2.0 + 1.0;
        let (x0, x1) = (a.0.min(b.0) - r, a.0.max(b.0) + r);
        let (y0, y1) = (a.1.min(b.1) - r, a.1.max(b.1) + r);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        for y in (y0.floor().max(0.0) as usize)
            ..=(y1.ceil().max(0.0) as usize).min(self.h.saturating_sub(1))
        {
            for x in (x0.floor().max(0.0) as usize)
                ..=(x1.ceil().max(0.0) as usize).min(self.w.saturating_sub(1))
            {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = if len2 == 0.0 {
                    0.0
                } else {
                    (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
                };
                let (cx, cy) = (a.0 + t * dx - px, a.1 + t * dy - py);
                let cover = (width / 2.0 + 0.5 - (cx * cx + cy * cy).sqrt()).clamp(0.0, 1.0);
                let v = &mut self.ink[y * self.w + x];
                *v = v.max(cover);
            }
        }
    }

    /// Draws `text` in the row starting at `top`, within `[x0, x0 + w)`.
    fn text_row(
        &mut self,
        cfg: &SynthConfig,
        rng: &mut Rng,
        text: &str,
        top: usize,
        x0: usize,
        w: usize,
    ) {
        let mut glyph_h = ROW_HEIGHT as f64 * rng.gen_range(0.5..0.6);
        let stroke = rng.gen_range(cfg.stroke_min..=cfg.stroke_max.max(cfg.stroke_min));
        let slant = if cfg.slant > 0.0 {
            rng.gen_range(-cfg.slant..=cfg.slant)
        } else {
            0.0
        };
        let n = text.chars().count();
        let spacing: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(cfg.spacing_min..=cfg.spacing_max.max(cfg.spacing_min)))
            .collect();
        let jitter: Vec<f64> = (0..n)
            .map(|_| {
                if cfg.jitter > 0.0 {
                    rng.gen_range(-cfg.jitter..=cfg.jitter)
                } else {
                    0.0
                }
            })
            .collect();
        let margin = 3.0 + stroke + slant.abs() * glyph_h;
        let avail = w as f64 - 2.0 * margin;
        let width_at = |gh: f64| n as f64 * gh / GRID_H * GRID_W + spacing.iter().sum::<f64>();
        if width_at(glyph_h) > avail {
            let scale_room = avail - spacing.iter().sum::<f64>();
            glyph_h = (scale_room / (n as f64 * GRID_W) * GRID_H).max(4.0);
        }
        let s = glyph_h / GRID_H;
        let slack = (avail - width_at(glyph_h)).max(0.0);
        let mut x = x0 as f64 + margin + rng.gen_range(0.0..=slack);
        let baseline = top as f64 + ROW_HEIGHT as f64 * 0.72;
        for (i, c) in text.chars().enumerate() {
            let base = baseline + jitter[i];
            for line in glyphs::glyph(c).unwrap_or_default() {
                let pts: Vec<(f64, f64)> = line
                    .iter()
                    .map(|&(gx, gy)| {
                        let y = base - (GRID_H - gy) * s;
                        (x + gx * s + slant * (base - y), y)
                    })
                    .collect();
                if pts.len() == 1 {
                    self.segment(pts[0], pts[0], stroke);
                }
                for pair in pts.windows(2) {
                    self.segment(pair[0], pair[1], stroke);
                }
            }
            x += GRID_W * s + spacing[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{layout_tokens_from_str, parse_layout, ParseMode};

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::default();
        let a = generate_synthetic(&cfg, ScaleLevel::Line, 3, 9).unwrap();
        let b = generate_synthetic(&cfg, ScaleLevel::Line, 3, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&cfg, ScaleLevel::Line, 3, 10).unwrap();
        assert_ne!(a[0].image, c[0].image);
    }

    #[test]
    fn every_sample_has_ink_and_expected_size() {
        let cfg = SynthConfig::default();
        for level in ScaleLevel::ALL {
            for s in generate_synthetic(&cfg, level, 4, 1).unwrap() {
                let (h, w) = level.image_size();
                assert_eq!(
                    (s.image.height() as usize, s.image.width() as usize),
                    (h, w)
                );
                assert!(s.ink_pixels() > 0);
            }
        }
    }

    #[test]
    fn page_labels_parse_strictly() {
        let cfg = SynthConfig::default();
        for level in [
            ScaleLevel::Paragraph,
            ScaleLevel::SinglePage,
            ScaleLevel::DoublePage,
            ScaleLevel::TriplePage,
        ] {
            for s in generate_synthetic(&cfg, level, 6, 2).unwrap() {
                let toks = layout_tokens_from_str(&s.label);
                let parsed = parse_layout(&toks, ParseMode::Strict).unwrap();
                parsed.graph.validate().unwrap();
                let pages = parsed.graph.children(0).len();
                assert_eq!(pages, level.columns(), "{}", s.label);
            }
        }
    }

    #[test]
    fn line_labels_use_alphabet() {
        let cfg = SynthConfig::default();
        for s in generate_synthetic(&cfg, ScaleLevel::Line, 20, 3).unwrap() {
            let n = s.label.chars().count();
            assert!((cfg.min_chars..=cfg.max_chars).contains(&n));
            assert!(s.label.chars().all(|c| cfg.alphabet.contains(c)));
        }
    }

    #[test]
    fn bad_alphabets() {
        let empty = SynthConfig {
            alphabet: String::new(),
            ..SynthConfig::default()
        };
        assert!(matches!(
            generate_synthetic(&empty, ScaleLevel::Line, 1, 0),
            Err(Error::Parameter(_))
        ));
        let odd = SynthConfig {
            alphabet: "ab\u{1F600}".into(),
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&odd, ScaleLevel::Line, 1, 0).is_err());
    }
}
