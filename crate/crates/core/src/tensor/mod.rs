//! Dense 64-bit tensors and a reverse-mode differentiation tape.
//!
//! Values live on a [`Tape`] as nodes addressed by [`Var`] handles. Every
//! operation records a local gradient rule; [`Tape::backward`] replays the
//! record in reverse. Learnable parameters are owned by a
//! [`ParamStore`](crate::params::ParamStore) and bound onto the tape per step.

mod conv;
pub mod gradcheck;
pub(crate) mod kernels;
mod nn;
mod ops;

use std::cell::{Ref, RefCell};
use std::collections::HashMap;

use crate::error::{dim_err, Error, Result};
use crate::params::ParamStore;

pub use conv::{conv_out_len, Conv2dSpec};
pub use nn::{NormMode, MASKED};

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(dim_err!("zero-sized dimension in shape {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(dim_err!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(&[], value)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor as learnable.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![0.0; self.data.len()]);
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(dim_err!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Inputs handed to a local gradient rule.
pub struct BackwardCtx<'a> {
    pub grad: &'a [f64],
    pub output: &'a [f64],
    inputs: Vec<&'a [f64]>,
    needs: Vec<bool>,
}

impl BackwardCtx<'_> {
    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs[i]
    }

    /// Whether input `i` participates in differentiation.
    pub fn needs(&self, i: usize) -> bool {
        self.needs[i]
    }
}

/// Local gradient rule: one optional gradient buffer per input.
pub type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>>>;

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    inputs: Vec<Var>,
    needs_grad: bool,
    backward: Option<BackwardFn>,
}

/// Record of executed operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<HashMap<String, Var>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, t: &Tensor) -> Var {
        self.leaf_raw(t.shape.clone(), t.data.clone(), false)
    }

    /// Leaf that receives a gradient when `t.requires_grad` is set.
    pub fn leaf(&self, t: &Tensor) -> Var {
        self.leaf_raw(t.shape.clone(), t.data.clone(), t.requires_grad)
    }

    pub fn constant_from(&self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.leaf_raw(t.shape, t.data, false))
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.leaf_raw(Vec::new(), vec![value], false)
    }

    fn leaf_raw(&self, shape: Vec<usize>, value: Vec<f64>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            inputs: Vec::new(),
            needs_grad,
            backward: None,
        });
        Var(nodes.len() - 1)
    }

    /// Binds a named parameter; repeated binds within one tape share a node.
    pub fn param(&self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.borrow().get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::Parameter(format!("unknown parameter `{name}`")))?;
        let v = self.leaf(t);
        self.bound.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    /// Records an operation with a custom gradient rule.
    pub fn custom(
        &self,
        shape: Vec<usize>,
        value: Vec<f64>,
        inputs: &[Var],
        backward: impl Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = inputs.iter().any(|v| nodes[v.0].needs_grad);
        nodes.push(Node {
            shape,
            value,
            inputs: inputs.to_vec(),
            needs_grad,
            backward: needs_grad.then(|| Box::new(backward) as BackwardFn),
        });
        Var(nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    pub fn value(&self, v: Var) -> Ref<'_, [f64]> {
        Ref::map(self.nodes.borrow(), |n| n[v.0].value.as_slice())
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.0];
        Tensor {
            shape: n.shape.clone(),
            data: n.value.clone(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                grad: &g,
                output: &node.value,
                inputs: node
                    .inputs
                    .iter()
                    .map(|v| nodes[v.0].value.as_slice())
                    .collect(),
                needs: node.inputs.iter().map(|v| nodes[v.0].needs_grad).collect(),
            };
            let local = backward(&ctx);
            debug_assert_eq!(local.len(), node.inputs.len());
            for (input, lg) in node.inputs.iter().zip(local) {
                let Some(lg) = lg else { continue };
                if !nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&lg).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(lg),
                }
            }
        }
        let bound = self.bound.borrow().clone();
        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.shape.clone()).collect(),
            bound,
        })
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    bound: HashMap<String, Var>,
}

impl Gradients {
    /// Gradient of a leaf; zeros when the leaf did not influence the loss.
    pub fn get(&self, v: Var) -> Vec<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.shapes[v.0].iter().product()],
        }
    }

    /// Adds gradients into every learnable parameter of `store`. Parameters
    /// that were not bound, or did not reach the loss, receive zeros.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (name, t) in store.iter_mut() {
            if !t.requires_grad {
                continue;
            }
            let acc = t.grad.get_or_insert_with(|| vec![0.0; t.data.len()]);
            if let Some(v) = self.bound.get(name) {
                if let Some(g) = &self.grads[v.0] {
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
}
