use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{Tape, Var};
use crate::error::{dim_err, Error, Result};

/// Flat index into `small` for every flat index of `big`, where `small` has
/// the same rank with each dimension either 1 or equal to `big`'s.
fn broadcast_map(big: &[usize], small: &[usize]) -> Result<Vec<usize>> {
    if big.len() != small.len() || big.iter().zip(small).any(|(&b, &s)| s != 1 && s != b) {
        return Err(dim_err!("cannot broadcast {small:?} onto {big:?}"));
    }
    let n: usize = big.iter().product();
    let rank = big.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        strides[d] = if small[d] == 1 { 0 } else { acc };
        acc *= small[d];
    }
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    for _ in 0..n {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < big[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(map)
}

fn same_shape(tape: &Tape, a: Var, b: Var, op: &str) -> Result<Vec<usize>> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa != sb {
        return Err(dim_err!("{op}: shape mismatch {sa:?} vs {sb:?}"));
    }
    Ok(sa)
}

impl Tape {
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let shape = same_shape(self, a, b, "add")?;
        let value: Vec<f64> = {
            let (x, y) = (self.value(a), self.value(b));
            x.iter().zip(y.iter()).map(|(p, q)| p + q).collect()
        };
        Ok(self.custom(shape, value, &[a, b], |c| {
            vec![Some(c.grad.to_vec()), Some(c.grad.to_vec())]
        }))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let shape = same_shape(self, a, b, "sub")?;
        let value: Vec<f64> = {
            let (x, y) = (self.value(a), self.value(b));
            x.iter().zip(y.iter()).map(|(p, q)| p - q).collect()
        };
        Ok(self.custom(shape, value, &[a, b], |c| {
            vec![
                Some(c.grad.to_vec()),
                Some(c.grad.iter().map(|g| -g).collect()),
            ]
        }))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let shape = same_shape(self, a, b, "mul")?;
        let value: Vec<f64> = {
            let (x, y) = (self.value(a), self.value(b));
            x.iter().zip(y.iter()).map(|(p, q)| p * q).collect()
        };
        Ok(self.custom(shape, value, &[a, b], |c| {
            let (x, y) = (c.input(0), c.input(1));
            vec![
                c.needs(0)
                    .then(|| c.grad.iter().zip(y).map(|(g, v)| g * v).collect()),
                c.needs(1)
                    .then(|| c.grad.iter().zip(x).map(|(g, v)| g * v).collect()),
            ]
        }))
    }

    /// `a + b` with `b` broadcast over unit dimensions.
    pub fn add_bcast(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let map = broadcast_map(&sa, &sb)?;
        let nb: usize = sb.iter().product();
        let value: Vec<f64> = {
            let (x, y) = (self.value(a), self.value(b));
            x.iter().zip(&map).map(|(p, &j)| p + y[j]).collect()
        };
        Ok(self.custom(sa, value, &[a, b], move |c| {
            let mut gb = vec![0.0; nb];
            for (g, &j) in c.grad.iter().zip(&map) {
                gb[j] += g;
            }
            vec![Some(c.grad.to_vec()), Some(gb)]
        }))
    }

    /// `a ⊙ b` with `b` broadcast over unit dimensions.
    pub fn mul_bcast(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let map = broadcast_map(&sa, &sb)?;
        let nb: usize = sb.iter().product();
        let value: Vec<f64> = {
            let (x, y) = (self.value(a), self.value(b));
            x.iter().zip(&map).map(|(p, &j)| p * y[j]).collect()
        };
        Ok(self.custom(sa, value, &[a, b], move |c| {
            let (x, y) = (c.input(0), c.input(1));
            let ga = c
                .needs(0)
                .then(|| c.grad.iter().zip(&map).map(|(g, &j)| g * y[j]).collect());
            let gb = c.needs(1).then(|| {
                let mut gb = vec![0.0; nb];
                for ((g, &j), xv) in c.grad.iter().zip(&map).zip(x) {
                    gb[j] += g * xv;
                }
                gb
            });
            vec![ga, gb]
        }))
    }

    /// Multiplies by a scalar variable of shape `[]` or `[1]`.
    pub fn mul_scalar_var(&self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(dim_err!("mul_scalar_var: expected scalar"));
        }
        let sa = self.shape(a);
        let value: Vec<f64> = {
            let k = self.value(s)[0];
            self.value(a).iter().map(|v| v * k).collect()
        };
        Ok(self.custom(sa, value, &[a, s], |c| {
            let k = c.input(1)[0];
            let x = c.input(0);
            vec![
                c.needs(0).then(|| c.grad.iter().map(|g| g * k).collect()),
                c.needs(1)
                    .then(|| vec![c.grad.iter().zip(x).map(|(g, v)| g * v).sum()]),
            ]
        }))
    }

    pub fn scale(&self, a: Var, k: f64) -> Var {
        let shape = self.shape(a);
        let value = self.value(a).iter().map(|v| v * k).collect();
        self.custom(shape, value, &[a], move |c| {
            vec![Some(c.grad.iter().map(|g| g * k).collect())]
        })
    }

    pub fn add_scalar(&self, a: Var, k: f64) -> Var {
        let shape = self.shape(a);
        let value = self.value(a).iter().map(|v| v + k).collect();
        self.custom(shape, value, &[a], |c| vec![Some(c.grad.to_vec())])
    }

    /// Elementwise product with a constant buffer (dropout masks).
    pub fn mul_const(&self, a: Var, k: Vec<f64>) -> Result<Var> {
        let shape = self.shape(a);
        if k.len() != shape.iter().product::<usize>() {
            return Err(dim_err!(
                "mul_const: buffer length {} for {shape:?}",
                k.len()
            ));
        }
        let value = self.value(a).iter().zip(&k).map(|(v, m)| v * m).collect();
        Ok(self.custom(shape, value, &[a], move |c| {
            vec![Some(c.grad.iter().zip(&k).map(|(g, m)| g * m).collect())]
        }))
    }

    /// Elementwise sum with a constant buffer (additive attention masks).
    pub fn add_const(&self, a: Var, k: &[f64]) -> Result<Var> {
        let shape = self.shape(a);
        if k.len() != shape.iter().product::<usize>() {
            return Err(dim_err!(
                "add_const: buffer length {} for {shape:?}",
                k.len()
            ));
        }
        let value = self.value(a).iter().zip(k).map(|(v, m)| v + m).collect();
        Ok(self.custom(shape, value, &[a], |c| vec![Some(c.grad.to_vec())]))
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Var {
        let shape = self.shape(a);
        let value = self.value(a).iter().map(|&v| f(v)).collect();
        self.custom(shape, value, &[a], move |c| {
            let x = c.input(0);
            vec![Some(
                c.grad
                    .iter()
                    .zip(x)
                    .zip(c.output)
                    .map(|((g, &xv), &yv)| g * df(xv, yv))
                    .collect(),
            )]
        })
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, f64::exp, |_, y| y)
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, f64::ln, |x, _| 1.0 / x)
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |v| v * v, |x, _| 2.0 * x)
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, f64::abs, |x, _| x.signum() * (x != 0.0) as u8 as f64)
    }

    pub fn sum(&self, a: Var) -> Var {
        let n = self.value(a).len();
        let value = vec![self.value(a).iter().sum()];
        self.custom(Vec::new(), value, &[a], move |c| {
            vec![Some(vec![c.grad[0]; n])]
        })
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum of a list of same-shaped variables.
    pub fn add_all(&self, vars: &[Var]) -> Result<Var> {
        let (first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::Contract("add_all of an empty list".into()))?;
        rest.iter().try_fold(*first, |acc, &v| self.add(acc, v))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err!("matmul: incompatible shapes {sa:?} · {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(&self.value(a), &self.value(b), &mut out, m, k, n);
        Ok(self.custom(vec![m, n], out, &[a, b], move |c| {
            let ga = c.needs(0).then(|| {
                let mut g = vec![0.0; m * k];
                gemm_nt(c.grad, c.input(1), &mut g, m, n, k);
                g
            });
            let gb = c.needs(1).then(|| {
                let mut g = vec![0.0; k * n];
                gemm_tn(c.input(0), c.grad, &mut g, m, k, n);
                g
            });
            vec![ga, gb]
        }))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(dim_err!("transpose expects a matrix, got {s:?}"));
        }
        let (m, n) = (s[0], s[1]);
        let value = transpose_buf(&self.value(a), m, n);
        Ok(self.custom(vec![n, m], value, &[a], move |c| {
            vec![Some(transpose_buf(c.grad, n, m))]
        }))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let n = self.value(a).len();
        if shape.iter().product::<usize>() != n {
            return Err(dim_err!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(a)
            ));
        }
        let value = self.value(a).to_vec();
        Ok(self.custom(shape.to_vec(), value, &[a], |c| vec![Some(c.grad.to_vec())]))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&self, vars: &[Var], axis: usize) -> Result<Var> {
        let shapes: Vec<Vec<usize>> = vars.iter().map(|&v| self.shape(v)).collect();
        let first = shapes
            .first()
            .ok_or_else(|| Error::Contract("concat of an empty list".into()))?;
        if axis >= first.len() {
            return Err(dim_err!("concat axis {axis} out of range for {first:?}"));
        }
        for s in &shapes {
            if s.len() != first.len()
                || s.iter()
                    .zip(first)
                    .enumerate()
                    .any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(dim_err!("concat: incompatible shapes {first:?} and {s:?}"));
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let widths: Vec<usize> = shapes.iter().map(|s| s[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut value = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&v, &w) in vars.iter().zip(&widths) {
                value.extend_from_slice(&self.value(v)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = shapes.iter().map(|s| s[axis]).sum();
        Ok(self.custom(shape, value, vars, move |c| {
            let mut grads: Vec<Vec<f64>> = widths
                .iter()
                .map(|w| Vec::with_capacity(w * outer))
                .collect();
            for o in 0..outer {
                let mut off = o * total;
                for (g, &w) in grads.iter_mut().zip(&widths) {
                    g.extend_from_slice(&c.grad[off..off + w]);
                    off += w;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(dim_err!(
                "narrow [{start}, {}) on axis {axis} of {s:?}",
                start + len
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let full = s[axis] * inner;
        let (lo, w) = (start * inner, len * inner);
        let mut value = Vec::with_capacity(outer * w);
        {
            let x = self.value(a);
            for o in 0..outer {
                value.extend_from_slice(&x[o * full + lo..o * full + lo + w]);
            }
        }
        let mut shape = s.clone();
        shape[axis] = len;
        let n = s.iter().product();
        Ok(self.custom(shape, value, &[a], move |c| {
            let mut g = vec![0.0; n];
            for o in 0..outer {
                g[o * full + lo..o * full + lo + w].copy_from_slice(&c.grad[o * w..(o + 1) * w]);
            }
            vec![Some(g)]
        }))
    }

    /// Rows `ids` of a `[rows, width]` table.
    pub fn gather_rows(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(dim_err!("gather_rows expects a matrix, got {s:?}"));
        }
        let (rows, width) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Token(format!(
                "row {bad} out of range for {rows} rows"
            )));
        }
        if ids.is_empty() {
            return Err(dim_err!("gather_rows with no ids"));
        }
        let mut value = Vec::with_capacity(ids.len() * width);
        {
            let x = self.value(table);
            for &i in ids {
                value.extend_from_slice(&x[i * width..(i + 1) * width]);
            }
        }
        let ids = ids.to_vec();
        Ok(
            self.custom(vec![ids.len(), width], value, &[table], move |c| {
                let mut g = vec![0.0; rows * width];
                for (r, &i) in ids.iter().enumerate() {
                    for (d, s) in g[i * width..(i + 1) * width]
                        .iter_mut()
                        .zip(&c.grad[r * width..(r + 1) * width])
                    {
                        *d += s;
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// Picks `a[t, idx[t]]` from a `[T, V]` matrix.
    pub fn pick(&self, a: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != idx.len() {
            return Err(dim_err!("pick: {} indices for {s:?}", idx.len()));
        }
        let (t, v) = (s[0], s[1]);
        if idx.iter().any(|&i| i >= v) {
            return Err(Error::Token(format!(
                "pick index out of range for width {v}"
            )));
        }
        let value = {
            let x = self.value(a);
            idx.iter().enumerate().map(|(r, &i)| x[r * v + i]).collect()
        };
        let idx = idx.to_vec();
        Ok(self.custom(vec![t], value, &[a], move |c| {
            let mut g = vec![0.0; t * v];
            for (r, &i) in idx.iter().enumerate() {
                g[r * v + i] = c.grad[r];
            }
            vec![Some(g)]
        }))
    }
}

pub(crate) fn transpose_buf(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
    out
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
