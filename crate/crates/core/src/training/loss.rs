//! Composite training loss: layout and text cross-entropy with
//! complexity-modulated weights, plus the complexity regression term.

use serde::{Deserialize, Serialize};

use crate::config::LossConfig;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};
use crate::vocab::Vocab;

/// Scalar values of every loss component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub layout: f64,
    pub text: f64,
    /// `(C − C_target)² + λ_reg · penalty`.
    pub complexity: f64,
    pub penalty: f64,
    pub lambda_layout: f64,
    pub lambda_text: f64,
    pub curriculum_alpha: f64,
    pub total: f64,
}

/// `λ_layout(C)`, `λ_text(C)`.
pub fn loss_weights(cfg: &LossConfig, c: f64) -> (f64, f64) {
    (cfg.layout.eval(c), cfg.text.eval(c))
}

/// Mean negative log-likelihood over layout-tag targets and over the
/// remaining (text) targets. `None` when a class has no positions.
pub fn split_cross_entropy(
    tape: &Tape,
    logits: Var,
    targets: &[usize],
    vocab: &Vocab,
) -> Result<(Option<Var>, Option<Var>)> {
    if targets.is_empty() {
        return Err(Error::Contract("empty target sequence".into()));
    }
    let lsm = tape.log_softmax(logits, 1)?;
    let picked = tape.pick(lsm, targets)?;
    let layout: Vec<bool> = targets.iter().map(|&t| vocab.is_layout(t)).collect();
    let mean_over = |want: bool| -> Result<Option<Var>> {
        let n = layout.iter().filter(|&&l| l == want).count();
        if n == 0 {
            return Ok(None);
        }
        let w = layout
            .iter()
            .map(|&l| if l == want { -1.0 / n as f64 } else { 0.0 })
            .collect();
        Ok(Some(tape.sum(tape.mul_const(picked, w)?)))
    };
    Ok((mean_over(true)?, mean_over(false)?))
}

/// Complexity inputs of the composite loss.
pub struct ComplexityTerm {
    /// φ output for the sample, differentiable.
    pub value: Var,
    pub target: f64,
    /// Finite-difference estimate of the mean absolute input gradient.
    pub penalty: Option<Var>,
}

/// `α_l · (λ_layout(C)·L_layout + λ_text(C)·L_text + λ_c·L_c)`, with the
/// weights evaluated at the detached complexity `c_weights`.
pub fn composite_loss(
    tape: &Tape,
    logits: Var,
    targets: &[usize],
    vocab: &Vocab,
    c_weights: f64,
    complexity: Option<&ComplexityTerm>,
    cfg: &LossConfig,
    curriculum_alpha: f64,
) -> Result<(Var, LossParts)> {
    let (layout, text) = split_cross_entropy(tape, logits, targets, vocab)?;
    let (wl, wt) = loss_weights(cfg, c_weights);
    let mut parts = LossParts {
        lambda_layout: wl,
        lambda_text: wt,
        curriculum_alpha,
        ..LossParts::default()
    };
    let mut terms = Vec::new();
    if let Some(l) = layout {
        parts.layout = tape.item(l);
        terms.push(tape.scale(l, wl));
    }
    if let Some(t) = text {
        parts.text = tape.item(t);
        terms.push(tape.scale(t, wt));
    }
    if let Some(c) = complexity {
        let diff = tape.add_scalar(c.value, -c.target);
        let mut lc = tape.sum(tape.square(diff));
        if let Some(p) = c.penalty {
            parts.penalty = tape.item(p);
            lc = tape.add(lc, tape.scale(p, cfg.lambda_reg))?;
        }
        parts.complexity = tape.item(lc);
        terms.push(tape.scale(lc, cfg.lambda_c));
    }
    let sum = if terms.len() == 1 {
        terms[0]
    } else {
        tape.add_all(&terms)?
    };
    let total = tape.scale(sum, curriculum_alpha);
    parts.total = tape.item(total);
    if !parts.total.is_finite() {
        return Err(Error::Numeric(format!("loss is {}", parts.total)));
    }
    Ok((total, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FactorParams;
    use crate::tensor::gradcheck::check_gradients;
    use crate::tensor::Tensor;
    use crate::vocab::EOT;

    fn setup() -> (Vocab, Vec<usize>) {
        let v = Vocab::from_alphabet("ab\n").unwrap();
        let mut t = v.encode("<D><P><S><B>ab</B></S></P></D>").0;
        t.push(EOT);
        (v, t)
    }

    fn one_hot(targets: &[usize], v: usize, k: f64) -> Tensor {
        Tensor::from_fn(&[targets.len(), v], |i| {
            if targets[i / v] == i % v {
                k
            } else {
                0.0
            }
        })
    }

    fn unit() -> LossConfig {
        let one = FactorParams {
            base: 2.0,
            gamma: 0.0,
            delta: 0.0,
            theta: 0.0,
        };
        LossConfig {
            layout: one,
            text: one,
            lambda_c: 0.0,
            ..LossConfig::default()
        }
    }

    #[test]
    fn perfect_predictions_give_zero_ce() {
        let (v, t) = setup();
        let tape = Tape::new();
        let logits = tape.constant(&one_hot(&t, v.len(), 1e4));
        let (l, x) = split_cross_entropy(&tape, logits, &t, &v).unwrap();
        assert_eq!(tape.item(l.unwrap()).abs(), 0.0);
        assert_eq!(tape.item(x.unwrap()).abs(), 0.0);
    }

    #[test]
    fn unit_weights_sum_components() {
        let (v, t) = setup();
        let tape = Tape::new();
        let logits = tape.constant(&Tensor::from_fn(&[t.len(), v.len()], |i| {
            (i % 7) as f64 * 0.3
        }));
        let (_, p) = composite_loss(&tape, logits, &t, &v, 0.3, None, &unit(), 1.0).unwrap();
        assert_eq!(p.lambda_layout, 1.0);
        assert_eq!(p.total, p.layout + p.text);
        assert!(p.layout > 0.0 && p.text > 0.0);
    }

    #[test]
    fn weight_midpoint() {
        let cfg = LossConfig::default();
        let (wl, _) = loss_weights(&cfg, cfg.layout.theta);
        let p = cfg.layout;
        assert!((wl - p.base * (1.0 + p.gamma * p.theta) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn no_layout_positions_means_zero_layout_loss() {
        let v = Vocab::from_alphabet("ab").unwrap();
        let t = vec![v.id("a").unwrap(), EOT];
        let tape = Tape::new();
        let logits = tape.constant(&Tensor::zeros(&[2, v.len()]));
        let (_, p) = composite_loss(&tape, logits, &t, &v, 0.0, None, &unit(), 1.0).unwrap();
        assert_eq!(p.layout, 0.0);
        assert!((p.text - (v.len() as f64).ln()).abs() < 1e-12);
        assert!(split_cross_entropy(&tape, logits, &[], &v).is_err());
    }

    #[test]
    fn gradient_through_logits_and_complexity() {
        let (v, t) = setup();
        let n = v.len();
        let logits = Tensor::from_fn(&[t.len(), n], |i| ((i * 31) % 17) as f64 / 9.0 - 0.8);
        let c = Tensor::new(vec![1, 1], vec![0.3]).unwrap();
        let p = Tensor::new(vec![], vec![0.05]).unwrap();
        let cfg = LossConfig::default();
        let r = check_gradients(&[logits, c, p], |tape, x| {
            let term = ComplexityTerm {
                value: x[1],
                target: 0.5,
                penalty: Some(x[2]),
            };
            Ok(composite_loss(tape, x[0], &t, &v, 0.4, Some(&term), &cfg, 0.7)?.0)
        })
        .unwrap();
        assert!(r.passed(1e-6), "{r:?}");
    }

    #[test]
    fn curriculum_weight_scales_gradient_linearly() {
        let (v, t) = setup();
        let grad = |alpha: f64| {
            let tape = Tape::new();
            let x =
                tape.leaf(&Tensor::from_fn(&[t.len(), v.len()], |i| (i % 5) as f64).with_grad());
            let (l, _) =
                composite_loss(&tape, x, &t, &v, 0.2, None, &LossConfig::default(), alpha).unwrap();
            tape.backward(l).unwrap().get(x)
        };
        let (a, b) = (grad(0.6), grad(1.2));
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() < 1e-9);
        }
    }
}
