//! Connectionist temporal classification loss.

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Tape, Var};

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Minimum frame count for `target`: its length plus one separator per
/// adjacent repeat.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// `−ln Σ_π Π_t exp(lp[t, π_t])` over all alignments π that collapse to
/// `target`. `log_probs` is `[T, V]`; `blank` indexes the blank column.
/// The inputs are treated as log-scores, so the gradient is exactly
/// `−γ_t(k)`, the posterior occupancy of symbol `k` at frame `t`.
pub fn ctc_loss(tape: &Tape, log_probs: Var, target: &[usize], blank: usize) -> Result<Var> {
    let shape = tape.shape(log_probs);
    if shape.len() != 2 {
        return Err(dim_err!("ctc expects [T, V], got {shape:?}"));
    }
    let (t_len, v) = (shape[0], shape[1]);
    if blank >= v {
        return Err(dim_err!("blank {blank} outside vocabulary of {v}"));
    }
    if let Some(&bad) = target.iter().find(|&&k| k >= v || k == blank) {
        return Err(Error::Token(format!(
            "target symbol {bad} invalid for ctc over {v} classes"
        )));
    }
    if min_frames(target) > t_len {
        return Err(Error::InfeasibleTarget(format!(
            "target of length {} needs {} frames, have {t_len}",
            target.len(),
            min_frames(target)
        )));
    }
    let lp = tape.value(log_probs).to_vec();
    let (alpha, beta, ext) = recursions(&lp, t_len, v, target, blank);
    let s_len = ext.len();
    let ll = if s_len == 1 {
        alpha[(t_len - 1) * s_len]
    } else {
        log_add(
            alpha[(t_len - 1) * s_len + s_len - 1],
            alpha[(t_len - 1) * s_len + s_len - 2],
        )
    };
    if !ll.is_finite() {
        return Err(Error::Numeric(format!("ctc log-likelihood is {ll}")));
    }
    Ok(tape.custom(Vec::new(), vec![-ll], &[log_probs], move |c| {
        let g = c.grad[0];
        let mut grad = vec![0.0; t_len * v];
        for t in 0..t_len {
            for s in 0..s_len {
                let occ = alpha[t * s_len + s] + beta[t * s_len + s] - ll;
                if occ > f64::NEG_INFINITY {
                    grad[t * v + ext[s]] -= g * occ.exp();
                }
            }
        }
        vec![Some(grad)]
    }))
}

/// Log-space forward (emission at t included) and backward (emission at t
/// excluded) variables over the blank-extended label.
fn recursions(
    lp: &[f64],
    t_len: usize,
    v: usize,
    target: &[usize],
    blank: usize,
) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &k in target {
        ext.push(k);
        ext.push(blank);
    }
    let s_len = ext.len();
    let ninf = f64::NEG_INFINITY;
    let skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp[ext[0]];
    if s_len > 1 {
        alpha[1] = lp[ext[1]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                a = log_add(a, alpha[(t - 1) * s_len + s - 1]);
            }
            if skip(s) {
                a = log_add(a, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = if a == ninf {
                ninf
            } else {
                a + lp[t * v + ext[s]]
            };
        }
    }
    let mut beta = vec![ninf; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = |s2: usize| beta[(t + 1) * s_len + s2] + lp[(t + 1) * v + ext[s2]];
            let mut b = next(s);
            if s + 1 < s_len {
                b = log_add(b, next(s + 1));
            }
            if s + 2 < s_len && skip(s + 2) {
                b = log_add(b, next(s + 2));
            }
            beta[t * s_len + s] = b;
        }
    }
    (alpha, beta, ext)
}

/// Greedy CTC decoding: argmax per frame, merge repeats, drop blanks.
pub fn ctc_greedy(log_probs: &[f64], v: usize, blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = blank;
    for row in log_probs.chunks(v) {
        let mut k = 0;
        for (i, &x) in row.iter().enumerate() {
            if x > row[k] {
                k = i;
            }
        }
        if k != blank && k != prev {
            out.push(k);
        }
        prev = k;
    }
    out
}
