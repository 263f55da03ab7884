//! Adam with optional global-norm gradient clipping.

use std::collections::HashMap;

use crate::params::ParamStore;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies accumulated gradients. Parameters without a gradient buffer
    /// are left alone; a zero learning rate leaves everything bitwise intact.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for (name, t) in store.iter_mut() {
            let Some(g) = t.grad.clone() else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            }
            if self.lr == 0.0 {
                continue;
            }
            for (i, p) in t.data_mut().iter_mut().enumerate() {
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm(store: &ParamStore) -> f64 {
    store
        .iter()
        .filter_map(|(_, t)| t.grad.as_ref())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max`; returns the
/// norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max: f64) -> f64 {
    let n = grad_norm(store);
    if n > max && n.is_finite() {
        store.scale_grads(max / n);
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(vec![3], vec![0.1, -0.7, 3.3]).unwrap());
        s.get_mut("w").unwrap().grad = Some(vec![0.5, -2.0, 1e-3]);
        s
    }

    #[test]
    fn zero_lr_is_bitwise_identity() {
        let mut s = store();
        let before = s.get("w").unwrap().data().to_vec();
        let mut opt = Adam::new(0.0, 0.9, 0.999, 1e-8);
        opt.step(&mut s);
        opt.step(&mut s);
        assert_eq!(s.get("w").unwrap().data(), &before[..]);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut s = store();
        let mut opt = Adam::new(0.01, 0.9, 0.999, 1e-12);
        opt.step(&mut s);
        let d = s.get("w").unwrap().data();
        assert!((d[0] - 0.09).abs() < 1e-9 && (d[1] + 0.69).abs() < 1e-9);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut s = store();
        let before = clip_grad_norm(&mut s, 1.0);
        assert!(before > 2.0);
        assert!((grad_norm(&s) - 1.0).abs() < 1e-12);
    }
}
