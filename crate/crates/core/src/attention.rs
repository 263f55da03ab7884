//! Scaled dot-product attention and its variants: causal, memory-augmented,
//! sparse, logit-scaled, and the integrated multi-head layer that mixes them.

use crate::error::{dim_err, Error, Result};
use crate::layers::{Ctx, Init};
use crate::tensor::{Tape, Var, MASKED};

/// Mechanism assigned to one head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Dense,
    Memory,
    Sparse,
}

/// Boolean `[T, S]` pattern of allowed query/key pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseMask {
    pub rows: usize,
    pub cols: usize,
    allowed: Vec<bool>,
}

impl SparseMask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(dim_err!(
                "mask has {} entries, expected {rows}×{cols}",
                allowed.len()
            ));
        }
        Ok(SparseMask {
            rows,
            cols,
            allowed,
        })
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        SparseMask {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    /// Local band `|s − t| ≤ ⌊(w − 1)/2⌋` plus every `stride`-th key.
    pub fn banded(rows: usize, cols: usize, window: usize, stride: usize) -> Self {
        let half = window.saturating_sub(1) / 2;
        let mut allowed = Vec::with_capacity(rows * cols);
        for t in 0..rows {
            for s in 0..cols {
                allowed.push(s.abs_diff(t) <= half || (stride > 0 && s % stride == 0));
            }
        }
        SparseMask {
            rows,
            cols,
            allowed,
        }
    }

    /// Strictly causal: key `s` visible to query `t` iff `s ≤ t`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n).flat_map(|t| (0..n).map(move |s| s <= t)).collect();
        SparseMask {
            rows: n,
            cols: n,
            allowed,
        }
    }

    pub fn allowed(&self, t: usize, s: usize) -> bool {
        self.allowed[t * self.cols + s]
    }

    pub fn is_full(&self) -> bool {
        self.allowed.iter().all(|&a| a)
    }

    pub fn intersect(&self, other: &SparseMask) -> Result<SparseMask> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(dim_err!(
                "mask shapes {}×{} and {}×{} differ",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            ));
        }
        let allowed = self
            .allowed
            .iter()
            .zip(&other.allowed)
            .map(|(a, b)| *a && *b)
            .collect();
        Ok(SparseMask { allowed, ..*self })
    }

    /// Additive form: 0 where allowed, [`MASKED`] elsewhere, with `extra`
    /// always-allowed columns appended (memory slots).
    pub fn additive(&self, extra: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.rows * (self.cols + extra));
        for t in 0..self.rows {
            let row = &self.allowed[t * self.cols..(t + 1) * self.cols];
            if extra == 0 && !row.iter().any(|&a| a) {
                return Err(Error::Contract(format!(
                    "attention row {t} has no visible key"
                )));
            }
            out.extend(row.iter().map(|&a| if a { 0.0 } else { MASKED }));
            out.extend(std::iter::repeat_n(0.0, extra));
        }
        Ok(out)
    }
}

/// Per-head attention inputs beyond Q, K, V.
#[derive(Clone, Copy, Default)]
pub struct HeadOptions<'a> {
    /// Memory rows `[k_mem, d_k]` appended to both keys and values.
    pub memory: Option<Var>,
    /// Multiplier on the scaled logits; `None` leaves them untouched.
    pub omega: Option<f64>,
    pub mask: Option<&'a SparseMask>,
}

/// One head: `softmax(QKᵀ/√d_k · ω + M) V` over `[K; M_mem]`, `[V; M_mem]`.
/// Returns the output and the attention weights.
pub fn attend(tape: &Tape, q: Var, k: Var, v: Var, opts: HeadOptions<'_>) -> Result<(Var, Var)> {
    let (sq, sk, sv) = (tape.shape(q), tape.shape(k), tape.shape(v));
    if sq.len() != 2 || sk.len() != 2 || sv.len() != 2 || sq[1] != sk[1] || sk[0] != sv[0] {
        return Err(dim_err!("attention shapes q {sq:?} k {sk:?} v {sv:?}"));
    }
    if sk[0] == 0 {
        return Err(dim_err!("attention over zero keys"));
    }
    let (k, v, extra) = match opts.memory {
        Some(m) => {
            let sm = tape.shape(m);
            if sm.len() != 2 || sm[1] != sk[1] {
                return Err(dim_err!("memory {sm:?} does not match key width {}", sk[1]));
            }
            (tape.concat(&[k, m], 0)?, tape.concat(&[v, m], 0)?, sm[0])
        }
        None => (k, v, 0),
    };
    let logits = tape.matmul(q, tape.transpose(k)?)?;
    let mut logits = tape.scale(logits, 1.0 / (sq[1] as f64).sqrt());
    if let Some(w) = opts.omega {
        logits = tape.scale(logits, w);
    }
    if let Some(mask) = opts.mask {
        if (mask.rows, mask.cols) != (sq[0], sk[0]) {
            return Err(dim_err!(
                "mask {}×{} for {}×{} logits",
                mask.rows,
                mask.cols,
                sq[0],
                sk[0]
            ));
        }
        logits = tape.add_const(logits, &mask.additive(extra)?)?;
    }
    let weights = tape.softmax(logits, 1)?;
    Ok((tape.matmul(weights, v)?, weights))
}

/// Head layout and options of one multi-head attention sublayer.
#[derive(Clone, Debug)]
pub struct MultiHeadSpec {
    pub heads: Vec<HeadKind>,
    pub causal: bool,
    pub omega: Option<f64>,
    /// Explicit pattern for sparse heads; takes precedence over `band`.
    pub sparse: Option<SparseMask>,
    /// `(window, stride)` of the banded pattern built per key length.
    pub band: Option<(usize, usize)>,
}

impl MultiHeadSpec {
    pub fn dense(h: usize) -> Self {
        MultiHeadSpec {
            heads: vec![HeadKind::Dense; h],
            causal: false,
            omega: None,
            sparse: None,
            band: None,
        }
    }

    /// First `⌈h/2⌉` heads memory-augmented, the rest sparse.
    pub fn integrated(h: usize) -> Self {
        let n_mem = h.div_ceil(2);
        let heads = (0..h)
            .map(|i| {
                if i < n_mem {
                    HeadKind::Memory
                } else {
                    HeadKind::Sparse
                }
            })
            .collect();
        MultiHeadSpec {
            heads,
            ..Self::dense(h)
        }
    }

    fn has_groups(&self) -> bool {
        self.heads.contains(&HeadKind::Memory) && self.heads.contains(&HeadKind::Sparse)
    }
}

/// Registers projections `q, k, v, o`, per-head memory and group weights.
pub fn init_multi_head(
    init: &mut Init,
    prefix: &str,
    d: usize,
    spec: &MultiHeadSpec,
    k_mem: usize,
    lambdas: (f64, f64),
) {
    for p in ["q", "k", "v", "o"] {
        init.linear(&format!("{prefix}.{p}"), d, d, true);
    }
    let d_k = d / spec.heads.len();
    if k_mem > 0 {
        for (i, kind) in spec.heads.iter().enumerate() {
            if *kind == HeadKind::Memory {
                init.store
                    .init_small(init.rng, format!("{prefix}.mem.{i}"), &[k_mem, d_k], 0.1);
            }
        }
    }
    if spec.has_groups() {
        let t = crate::tensor::Tensor::new(vec![1, 2], vec![lambdas.0, lambdas.1]).expect("shape");
        init.store.insert(format!("{prefix}.lambda"), t);
    }
}

/// Normalized group weight `2·λ_g / (λ_mem + λ_sparse)` as a scalar var.
fn group_scale(tape: &Tape, lambda: Var, g: usize) -> Result<Var> {
    let l = tape.value(lambda).to_vec();
    if l.len() != 2 {
        return Err(dim_err!("group weights need 2 entries, got {}", l.len()));
    }
    let s = l[0] + l[1];
    if s == 0.0 || !s.is_finite() {
        return Err(Error::Numeric(format!("group weights sum to {s}")));
    }
    let value = 2.0 * l[g] / s;
    Ok(tape.custom(Vec::new(), vec![value], &[lambda], move |c| {
        let l = c.input(0);
        let s = l[0] + l[1];
        let g0 = c.grad[0];
        let d = |j: usize| 2.0 * (if j == g { s } else { 0.0 } - l[g]) / (s * s) * g0;
        vec![Some(vec![d(0), d(1)])]
    }))
}

/// Multi-head attention: project, run each head with its mechanism, scale
/// the memory and sparse groups, concatenate and project with Wᴼ.
pub fn multi_head(
    ctx: &Ctx,
    prefix: &str,
    q_src: Var,
    kv_src: Var,
    spec: &MultiHeadSpec,
) -> Result<Var> {
    let t = ctx.tape;
    let h = spec.heads.len();
    let d = t.shape(q_src)[1];
    if h == 0 || !d.is_multiple_of(h) {
        return Err(dim_err!("{h} heads do not divide width {d}"));
    }
    let d_k = d / h;
    let q = ctx.linear(q_src, &format!("{prefix}.q"))?;
    let k = ctx.linear(kv_src, &format!("{prefix}.k"))?;
    let v = ctx.linear(kv_src, &format!("{prefix}.v"))?;
    let (tq, sk) = (t.shape(q)[0], t.shape(k)[0]);

    let causal = spec.causal.then(|| SparseMask::causal(tq));
    if causal.is_some() && tq != sk {
        return Err(dim_err!(
            "causal attention needs equal lengths, got {tq} and {sk}"
        ));
    }
    let explicit = match (&spec.sparse, spec.band) {
        (Some(s), _) => Some(s.clone()),
        (None, Some((w, stride))) => Some(SparseMask::banded(tq, sk, w, stride)),
        _ => None,
    };
    let sparse = match (explicit, &causal) {
        (Some(s), Some(c)) => Some(s.intersect(c)?),
        (s, _) => s,
    };
    let active = |m: Option<SparseMask>| m.filter(|m| !m.is_full());
    let base_mask = active(causal.clone());
    let sparse_mask = active(sparse).or_else(|| base_mask.clone());

    let lambda_name = format!("{prefix}.lambda");
    let scales = if spec.has_groups() && ctx.has(&lambda_name) {
        let l = ctx.p(&lambda_name)?;
        Some((group_scale(t, l, 0)?, group_scale(t, l, 1)?))
    } else {
        None
    };

    let mut outs = Vec::with_capacity(h);
    for (i, kind) in spec.heads.iter().enumerate() {
        let qh = t.narrow(q, 1, i * d_k, d_k)?;
        let kh = t.narrow(k, 1, i * d_k, d_k)?;
        let vh = t.narrow(v, 1, i * d_k, d_k)?;
        let mem_name = format!("{prefix}.mem.{i}");
        let memory = match kind {
            HeadKind::Memory if ctx.has(&mem_name) => Some(ctx.p(&mem_name)?),
            _ => None,
        };
        let mask = match kind {
            HeadKind::Sparse => sparse_mask.as_ref(),
            _ => base_mask.as_ref(),
        };
        let opts = HeadOptions {
            memory,
            omega: spec.omega,
            mask,
        };
        let (mut out, _) = attend(t, qh, kh, vh, opts)?;
        if let Some((sm, ss)) = scales {
            let s = if *kind == HeadKind::Memory { sm } else { ss };
            out = t.mul_scalar_var(out, s)?;
        }
        outs.push(out);
    }
    let cat = if outs.len() == 1 {
        outs[0]
    } else {
        t.concat(&outs, 1)?
    };
    ctx.linear(cat, &format!("{prefix}.o"))
}

/// Average-pools a `[S, d]` sequence by 2 along S (a trailing odd row is
/// kept alone). Implemented as a constant pooling-matrix product.
pub fn pool_sequence(tape: &Tape, x: Var) -> Result<Var> {
    let s = tape.shape(x)[0];
    let rows = s.div_ceil(2);
    let mut p = vec![0.0; rows * s];
    for r in 0..rows {
        let (a, b) = (2 * r, (2 * r + 1).min(s - 1));
        if a == b {
            p[r * s + a] = 1.0;
        } else {
            p[r * s + a] = 0.5;
            p[r * s + b] = 0.5;
        }
    }
    let pm = tape.constant_from(&[rows, s], p)?;
    tape.matmul(pm, x)
}

/// Feature pyramid for fusion: level 0 is `x`, each further level pools the
/// previous one by 2.
pub fn fusion_levels(tape: &Tape, x: Var, n: usize) -> Result<Vec<Var>> {
    let mut levels = vec![x];
    for _ in 1..n {
        let prev = *levels.last().expect("nonempty");
        levels.push(pool_sequence(tape, prev)?);
    }
    Ok(levels)
}

/// `Σ_l softmax(λ)_l · MHA(Q, K_l, V_l)` with projections shared across levels.
pub fn adaptive_fusion(
    ctx: &Ctx,
    prefix: &str,
    q_src: Var,
    levels: &[Var],
    spec: &MultiHeadSpec,
) -> Result<Var> {
    let t = ctx.tape;
    if levels.is_empty() {
        return Err(Error::Contract("adaptive fusion over zero levels".into()));
    }
    let per_level = |kv: Var| multi_head(ctx, &format!("{prefix}.attn"), q_src, kv, spec);
    if levels.len() == 1 {
        return per_level(levels[0]);
    }
    let lam = ctx.p(&format!("{prefix}.fusion"))?;
    let w = t.softmax(lam, 1)?;
    let mut acc: Option<Var> = None;
    for (l, &kv) in levels.iter().enumerate() {
        let out = per_level(kv)?;
        let wl = t.narrow(w, 1, l, 1)?;
        let term = t.mul_scalar_var(out, wl)?;
        acc = Some(match acc {
            Some(a) => t.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::rng::{stream_rng, Stream};
    use crate::tensor::Tensor;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        use rand::Rng as _;
        let mut r = stream_rng(seed, Stream::Init, 9);
        Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn banded_mask_pattern() {
        let m = SparseMask::banded(6, 6, 3, 4);
        assert!(m.allowed(3, 2) && m.allowed(3, 4) && !m.allowed(3, 5));
        assert!(m.allowed(5, 0) && m.allowed(5, 4));
        let one = SparseMask::banded(4, 4, 1, 100);
        for t in 0..4 {
            for s in 0..4 {
                assert_eq!(one.allowed(t, s), s == t || s == 0);
            }
        }
    }

    #[test]
    fn empty_row_is_contract_error() {
        let m = SparseMask::new(2, 2, vec![true, false, false, false]).unwrap();
        assert!(matches!(m.additive(0), Err(Error::Contract(_))));
    }

    #[test]
    fn masked_weights_are_exactly_zero_and_rows_sum_to_one() {
        let tape = Tape::new();
        let q = tape.constant(&rand_tensor(&[5, 4], 1));
        let k = tape.constant(&rand_tensor(&[7, 4], 2));
        let v = tape.constant(&rand_tensor(&[7, 4], 3));
        let mask = SparseMask::banded(5, 7, 3, 100);
        let (_, w) = attend(
            &tape,
            q,
            k,
            v,
            HeadOptions {
                mask: Some(&mask),
                ..Default::default()
            },
        )
        .unwrap();
        let w = tape.value(w);
        for t in 0..5 {
            let row = &w[t * 7..(t + 1) * 7];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for s in 0..7 {
                if !mask.allowed(t, s) {
                    assert_eq!(row[s], 0.0);
                }
            }
        }
    }

    #[test]
    fn memory_mass_sums_to_one() {
        let tape = Tape::new();
        let q = tape.constant(&rand_tensor(&[3, 4], 1));
        let k = tape.constant(&rand_tensor(&[2, 4], 2));
        let m = tape.constant(&rand_tensor(&[5, 4], 4));
        let (out, w) = attend(
            &tape,
            q,
            k,
            k,
            HeadOptions {
                memory: Some(m),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(tape.shape(w), vec![3, 7]);
        assert_eq!(tape.shape(out), vec![3, 4]);
        for row in tape.value(w).chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let bad = tape.constant(&rand_tensor(&[5, 3], 4));
        assert!(attend(
            &tape,
            q,
            k,
            k,
            HeadOptions {
                memory: Some(bad),
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn group_scale_gradient() {
        let report = crate::tensor::gradcheck::check_gradients(
            &[Tensor::new(vec![1, 2], vec![0.3, 0.9]).unwrap()],
            |t, v| {
                let a = group_scale(t, v[0], 0)?;
                let b = group_scale(t, v[0], 1)?;
                let b = t.scale(b, 3.0);
                t.add(a, b)
            },
        )
        .unwrap();
        assert!(report.passed(1e-6), "{report:?}");
    }

    #[test]
    fn equal_lambdas_give_unit_scale() {
        let tape = Tape::new();
        let l = tape.constant(&Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap());
        assert_eq!(tape.item(group_scale(&tape, l, 0).unwrap()), 1.0);
    }

    #[test]
    fn pooled_sequence_values() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::new(vec![3, 1], vec![1.0, 3.0, 5.0]).unwrap());
        let p = pool_sequence(&tape, x).unwrap();
        assert_eq!(&*tape.value(p), &[2.0, 5.0]);
    }

    #[test]
    fn identical_levels_make_fusion_weight_irrelevant() {
        let mut store = ParamStore::new();
        let mut rng = stream_rng(5, Stream::Init, 0);
        let spec = MultiHeadSpec::integrated(2);
        init_multi_head(
            &mut Init {
                store: &mut store,
                rng: &mut rng,
            },
            "f.attn",
            8,
            &spec,
            2,
            (0.5, 0.5),
        );
        let run = |lam: [f64; 2]| {
            let mut s = store.clone();
            s.insert("f.fusion", Tensor::new(vec![1, 2], lam.to_vec()).unwrap());
            let tape = Tape::new();
            let ctx = Ctx::eval(&tape, &s);
            let q = tape.constant(&rand_tensor(&[3, 8], 1));
            let kv = tape.constant(&rand_tensor(&[4, 8], 2));
            let y = adaptive_fusion(&ctx, "f", q, &[kv, kv], &spec).unwrap();
            let out = tape.value(y).to_vec();
            out
        };
        let (a, b) = (run([0.0, 0.0]), run([2.0, -1.0]));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
