//! Named parameter storage shared by every model component.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered map from dotted parameter names to learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t.with_grad());
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Parameter(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            t.zero_grad();
        }
    }

    /// Scales every accumulated gradient.
    pub fn scale_grads(&mut self, k: f64) {
        for t in self.params.values_mut() {
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|v| *v *= k);
            }
        }
    }

    /// Rounds every value through 32-bit storage precision.
    pub fn round_to_f32(&mut self) {
        for t in self.params.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    // -- initializers ------------------------------------------------------

    /// Uniform(−1/√fan_in, 1/√fan_in) weights.
    pub fn init_uniform(
        &mut self,
        rng: &mut impl Rng,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
    ) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound));
        self.insert(name, t);
    }

    pub fn init_const(&mut self, name: impl Into<String>, shape: &[usize], value: f64) {
        self.insert(name, Tensor::full(shape, value));
    }

    /// Scaled normal-ish init for embeddings and memory slots.
    pub fn init_small(
        &mut self,
        rng: &mut impl Rng,
        name: impl Into<String>,
        shape: &[usize],
        scale: f64,
    ) {
        let t = Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0) * scale);
        self.insert(name, t);
    }
}
