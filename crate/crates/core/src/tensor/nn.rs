use super::{Tape, Var};
use crate::error::{dim_err, Error, Result};

/// Surrogate for −∞ in additive attention masks. Large enough that
/// `exp(x − max)` underflows to exactly zero.
pub const MASKED: f64 = -1.0e30;

/// Normalized extent for [`Tape::normalize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Per channel over the spatial extent of a `[C, H, W]` map.
    Instance,
    /// Per row over the last axis.
    Layer,
}

/// (outer, axis length, inner) decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(dim_err!("axis {axis} out of range for {shape:?}"));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

fn for_each_lane(
    outer: usize,
    len: usize,
    inner: usize,
    mut f: impl FnMut(&dyn Fn(usize) -> usize),
) {
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            f(&|k| base + k * inner);
        }
    }
}

impl Tape {
    /// Max-stabilized softmax along `axis`.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x);
        let (outer, len, inner) = split_axis(&shape, axis)?;
        let xv = self.value(x).to_vec();
        if xv.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let mut y = vec![0.0; xv.len()];
        for_each_lane(outer, len, inner, |at| {
            let m = (0..len)
                .map(|k| xv[at(k)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for k in 0..len {
                let e = (xv[at(k)] - m).exp();
                y[at(k)] = e;
                s += e;
            }
            for k in 0..len {
                y[at(k)] /= s;
            }
        });
        Ok(self.custom(shape, y, &[x], move |c| {
            let mut dx = vec![0.0; c.grad.len()];
            for_each_lane(outer, len, inner, |at| {
                let dot: f64 = (0..len).map(|k| c.grad[at(k)] * c.output[at(k)]).sum();
                for k in 0..len {
                    dx[at(k)] = c.output[at(k)] * (c.grad[at(k)] - dot);
                }
            });
            vec![Some(dx)]
        }))
    }

    /// Max-stabilized log-softmax along `axis`.
    pub fn log_softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x);
        let (outer, len, inner) = split_axis(&shape, axis)?;
        let xv = self.value(x).to_vec();
        if xv.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("log_softmax input contains NaN".into()));
        }
        let mut y = vec![0.0; xv.len()];
        for_each_lane(outer, len, inner, |at| {
            let m = (0..len)
                .map(|k| xv[at(k)])
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..len).map(|k| (xv[at(k)] - m).exp()).sum::<f64>().ln();
            for k in 0..len {
                y[at(k)] = xv[at(k)] - lse;
            }
        });
        Ok(self.custom(shape, y, &[x], move |c| {
            let mut dx = vec![0.0; c.grad.len()];
            for_each_lane(outer, len, inner, |at| {
                let gs: f64 = (0..len).map(|k| c.grad[at(k)]).sum();
                for k in 0..len {
                    dx[at(k)] = c.grad[at(k)] - c.output[at(k)].exp() * gs;
                }
            });
            vec![Some(dx)]
        }))
    }

    /// Zero-mean unit-variance normalization without affine terms.
    pub fn normalize(&self, x: Var, mode: NormMode, eps: f64) -> Result<Var> {
        if eps <= 0.0 || !eps.is_finite() {
            return Err(Error::Parameter(format!(
                "normalization eps must be > 0, got {eps}"
            )));
        }
        let shape = self.shape(x);
        let (groups, len) = match mode {
            NormMode::Instance => {
                if shape.len() != 3 {
                    return Err(dim_err!("instance norm expects [C, H, W], got {shape:?}"));
                }
                (shape[0], shape[1] * shape[2])
            }
            NormMode::Layer => {
                let len = *shape
                    .last()
                    .ok_or_else(|| dim_err!("layer norm of a scalar"))?;
                (shape.iter().product::<usize>() / len, len)
            }
        };
        let xv = self.value(x).to_vec();
        let mut y = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; groups];
        for g in 0..groups {
            let lane = &xv[g * len..(g + 1) * len];
            let mean = lane.iter().sum::<f64>() / len as f64;
            let var = lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[g] = is;
            for (o, v) in y[g * len..(g + 1) * len].iter_mut().zip(lane) {
                *o = (v - mean) * is;
            }
        }
        Ok(self.custom(shape, y, &[x], move |c| {
            let mut dx = vec![0.0; c.grad.len()];
            let n = len as f64;
            for g in 0..groups {
                let dy = &c.grad[g * len..(g + 1) * len];
                let xh = &c.output[g * len..(g + 1) * len];
                let sum_dy: f64 = dy.iter().sum();
                let sum_dy_xh: f64 = dy.iter().zip(xh).map(|(a, b)| a * b).sum();
                for k in 0..len {
                    dx[g * len + k] = inv_std[g] / n * (n * dy[k] - sum_dy - xh[k] * sum_dy_xh);
                }
            }
            vec![Some(dx)]
        }))
    }
}
