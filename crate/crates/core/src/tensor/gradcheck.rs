//! Central finite-difference gradient checks.
//!
//! The relative error of one input is `‖analytic − numeric‖₂ / max(‖analytic‖₂,
//! ‖numeric‖₂)`, with both norms taken over the whole gradient of that input.
//! A check passes when every input's error is below the threshold.
//! Norms are floored at [`NORM_FLOOR`].

use super::{Tape, Tensor, Var};
use crate::error::Result;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_input: Vec<f64>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares tape gradients against central differences (step [`DEFAULT_EPS`])
/// for every input with `requires_grad` set.
pub fn check_gradients<F>(inputs: &[Tensor], f: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    check_gradients_with(inputs, DEFAULT_EPS, f)
}

pub fn check_gradients_with<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&tape, &vars)?;
        Ok(tape.item(out))
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut per_input = Vec::new();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        if !t.requires_grad {
            continue;
        }
        let analytic = grads.get(vars[i]);
        let mut numeric = vec![0.0; t.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = t.data()[j];
            work[i].data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        per_input.push(relative_error(&analytic, &numeric));
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_input,
        max_rel_error,
    })
}

/// Gradient norms below this are compared absolutely: a true gradient of
/// exactly zero (e.g. a bias shifting all softmax logits equally) yields
/// only round-off in the central difference.
pub const NORM_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    diff / scale.max(NORM_FLOOR)
}
