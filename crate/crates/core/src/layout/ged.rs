use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::graph::{DocumentGraph, EdgeKind, NodeKind};

/// Largest graph (node count) searched exactly.
pub const EXACT_LIMIT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GedMode {
    Exact,
    /// Cost of a greedy node assignment; an upper bound on the distance.
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GedResult {
    pub distance: usize,
    pub mode: GedMode,
}

/// Graph edit distance with unit costs: node insertion, deletion and kind
/// substitution; typed directed edge insertion and deletion. Leaf text is
/// not part of the edit model.
pub fn graph_edit_distance(g1: &DocumentGraph, g2: &DocumentGraph) -> GedResult {
    let a = Compact::new(g1);
    let b = Compact::new(g2);
    let (upper, _) = greedy(&a, &b);
    if a.n.max(b.n) <= EXACT_LIMIT {
        GedResult {
            distance: exact(&a, &b, upper),
            mode: GedMode::Exact,
        }
    } else {
        GedResult {
            distance: upper,
            mode: GedMode::Greedy,
        }
    }
}

/// Node kinds plus adjacency as a dense typed matrix.
pub(crate) struct Compact {
    pub n: usize,
    pub kinds: Vec<NodeKind>,
    /// `adj[u * n + v]`: edge kind from u to v, if any.
    pub adj: Vec<Option<EdgeKind>>,
    pub edges: Vec<(usize, usize, EdgeKind)>,
}

impl Compact {
    pub fn new(g: &DocumentGraph) -> Self {
        let n = g.len();
        let edges = g.edges();
        let mut adj = vec![None; n * n];
        for &(u, v, k) in &edges {
            adj[u * n + v] = Some(k);
        }
        Compact {
            n,
            kinds: g.nodes().iter().map(|x| x.kind).collect(),
            adj,
            edges,
        }
    }

    fn edge(&self, u: usize, v: usize) -> Option<EdgeKind> {
        self.adj[u * self.n + v]
    }
}

/// Total cost of a complete mapping `map[i] = Some(j)` (substitution) or
/// `None` (deletion); unmapped nodes of `b` are insertions.
pub(crate) fn mapping_cost(a: &Compact, b: &Compact, map: &[Option<usize>]) -> usize {
    let mut cost = 0;
    let mut used = vec![false; b.n];
    for (i, m) in map.iter().enumerate() {
        match m {
            Some(j) => {
                used[*j] = true;
                if a.kinds[i] != b.kinds[*j] {
                    cost += 1;
                }
            }
            None => cost += 1,
        }
    }
    cost += used.iter().filter(|u| !**u).count();
    let mut kept = 0;
    for &(u, v, k) in &a.edges {
        if let (Some(x), Some(y)) = (map[u], map[v]) {
            if b.edge(x, y) == Some(k) {
                kept += 1;
            }
        }
    }
    cost + a.edges.len() + b.edges.len() - 2 * kept
}

/// Assigns each node of `a` in order to the cheapest free node of `b`
/// (counting edge agreement with earlier assignments) or to deletion.
fn greedy(a: &Compact, b: &Compact) -> (usize, Vec<Option<usize>>) {
    let mut map: Vec<Option<usize>> = Vec::with_capacity(a.n);
    let mut used = vec![false; b.n];
    for i in 0..a.n {
        let mut best: Option<(i64, usize)> = None;
        for j in (0..b.n).filter(|&j| !used[j]) {
            let mut score: i64 = if a.kinds[i] == b.kinds[j] { 0 } else { 1 };
            for (p, m) in map.iter().enumerate() {
                if let Some(q) = m {
                    let agree = |x: Option<EdgeKind>, y: Option<EdgeKind>| x.is_some() && x == y;
                    if agree(a.edge(p, i), b.edge(*q, j)) {
                        score -= 1;
                    }
                    if agree(a.edge(i, p), b.edge(j, *q)) {
                        score -= 1;
                    }
                }
            }
            if best.is_none_or(|(s, _)| score < s) {
                best = Some((score, j));
            }
        }
        // substitution never costs more than deletion plus insertion
        match best {
            Some((_, j)) => {
                used[j] = true;
                map.push(Some(j));
            }
            None => map.push(None),
        }
    }
    (mapping_cost(a, b, &map), map)
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
struct State {
    /// Images of `a`'s first `map.len()` nodes.
    map: Vec<Option<usize>>,
    /// Bitmask of used `b` nodes.
    used: u32,
    /// Exact cost of everything among assigned nodes.
    g: usize,
}

fn exact(a: &Compact, b: &Compact, upper: usize) -> usize {
    let mut best = upper;
    let mut heap = BinaryHeap::new();
    let start = State {
        map: Vec::new(),
        used: 0,
        g: 0,
    };
    heap.push(Reverse((heuristic(a, b, &start), start)));
    while let Some(Reverse((f, st))) = heap.pop() {
        if f >= best {
            break;
        }
        let i = st.map.len();
        if i == a.n {
            // all of a assigned: remaining b nodes and their edges are insertions
            let total = st.g + completion(b, st.used);
            best = best.min(total);
            continue;
        }
        let candidates = (0..b.n)
            .filter(|j| st.used & (1 << j) == 0)
            .map(Some)
            .chain([None]);
        for m in candidates {
            let mut g = st.g + node_cost(a, b, i, m);
            for (p, mp) in st.map.iter().enumerate() {
                g += pair_cost(a, b, p, i, *mp, m);
            }
            let mut map = st.map.clone();
            map.push(m);
            let used = st.used | m.map_or(0, |j| 1 << j);
            let next = State { map, used, g };
            let f = next.g + heuristic(a, b, &next);
            if f < best {
                heap.push(Reverse((f, next)));
            }
        }
    }
    best
}

fn node_cost(a: &Compact, b: &Compact, i: usize, m: Option<usize>) -> usize {
    match m {
        Some(j) => usize::from(a.kinds[i] != b.kinds[j]),
        None => 1,
    }
}

/// Edge cost between an earlier node `p` and the new node `i`, both ways.
fn pair_cost(
    a: &Compact,
    b: &Compact,
    p: usize,
    i: usize,
    mp: Option<usize>,
    mi: Option<usize>,
) -> usize {
    let one = |ea: Option<EdgeKind>, eb: Option<EdgeKind>| -> usize {
        match (ea, eb) {
            (None, None) => 0,
            (Some(x), Some(y)) if x == y => 0,
            (Some(_), Some(_)) => 2,
            _ => 1,
        }
    };
    match (mp, mi) {
        (Some(x), Some(y)) => one(a.edge(p, i), b.edge(x, y)) + one(a.edge(i, p), b.edge(y, x)),
        _ => usize::from(a.edge(p, i).is_some()) + usize::from(a.edge(i, p).is_some()),
    }
}

/// Insertions for unused `b` nodes and every `b` edge touching one.
fn completion(b: &Compact, used: u32) -> usize {
    let free = |v: usize| used & (1 << v) == 0;
    let nodes = (0..b.n).filter(|&v| free(v)).count();
    let edges = b
        .edges
        .iter()
        .filter(|(u, v, _)| free(*u) || free(*v))
        .count();
    nodes + edges
}

/// Admissible lower bound on the cost still to come.
fn heuristic(a: &Compact, b: &Compact, st: &State) -> usize {
    let done = st.map.len();
    let mut ca = [0usize; 6];
    let mut cb = [0usize; 6];
    for k in &a.kinds[done..] {
        ca[*k as usize] += 1;
    }
    let mut free_b = 0;
    for v in 0..b.n {
        if st.used & (1 << v) == 0 {
            cb[b.kinds[v] as usize] += 1;
            free_b += 1;
        }
    }
    let common: usize = ca.iter().zip(&cb).map(|(x, y)| x.min(y)).sum();
    let nodes = (a.n - done).max(free_b) - common;
    // edges still undecided, per type
    let mut edges = 0;
    for kind in [EdgeKind::Hierarchy, EdgeKind::ReadingOrder] {
        let ra = a
            .edges
            .iter()
            .filter(|(u, v, k)| *k == kind && (*u >= done || *v >= done))
            .count();
        let rb = b
            .edges
            .iter()
            .filter(|(u, v, k)| *k == kind && (st.used & (1 << u) == 0 || st.used & (1 << v) == 0))
            .count();
        edges += ra.abs_diff(rb);
    }
    nodes + edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::graph::{layout_tokens_from_str, parse_layout, ParseMode};

    fn graph(s: &str) -> DocumentGraph {
        parse_layout(&layout_tokens_from_str(s), ParseMode::Strict)
            .unwrap()
            .graph
    }

    #[test]
    fn identical_graphs_have_zero_distance() {
        let g = graph("<D><P><N>1</N><S><A>a</A><B>b</B></S></P><P></P></D>");
        assert_eq!(graph_edit_distance(&g, &g).distance, 0);
    }

    #[test]
    fn one_extra_leaf_costs_two() {
        let g1 = graph("<D><P><S><B>x</B></S></P><P></P></D>");
        let g2 = graph("<D><P><S><B>x</B></S></P><P><N>2</N></P></D>");
        let r = graph_edit_distance(&g1, &g2);
        assert_eq!(
            r,
            GedResult {
                distance: 2,
                mode: GedMode::Exact
            }
        );
    }

    #[test]
    fn large_graphs_fall_back_to_greedy() {
        let mut s = String::from("<D><P>");
        for _ in 0..6 {
            s.push_str("<S><B>x</B></S>");
        }
        s.push_str("</P></D>");
        let g = graph(&s);
        let r = graph_edit_distance(&g, &g);
        assert_eq!(r.mode, GedMode::Greedy);
        assert_eq!(r.distance, 0);
    }
}
