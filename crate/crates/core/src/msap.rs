//! Multi-scale adaptive processing: the complexity network φ, complexity
//! gating of the encoder sequence, the warmup-scheduled first pass and the
//! adaptive-query second pass.

use crate::attention::{init_multi_head, multi_head, MultiHeadSpec};
use crate::config::{FactorParams, ModelConfig, MsapConfig};
use crate::encoder::{self, EncoderConfig, ScaleLevel};
use crate::error::{dim_err, Result};
use crate::layers::{sinusoid, Ctx, Init};
use crate::tensor::Var;

/// Positions of the relative encoding are `i / S` scaled by this factor.
pub const RELATIVE_SCALE: f64 = 64.0;

/// `α_e = α₀ (1 + γ · min(1, e / E_warmup))`.
pub fn warmup_alpha(cfg: &MsapConfig, epoch: f64) -> f64 {
    let ramp = if cfg.warmup_epochs <= 0.0 {
        1.0
    } else {
        (epoch.max(0.0) / cfg.warmup_epochs).min(1.0)
    };
    cfg.warmup_alpha0 * (1.0 + cfg.warmup_gamma * ramp)
}

/// α, β, ω evaluated at one complexity value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingFactors {
    pub alpha: f64,
    pub beta: f64,
    pub omega: f64,
}

pub fn compute_scaling_factors(cfg: &MsapConfig, c: f64) -> ScalingFactors {
    ScalingFactors {
        alpha: cfg.alpha.eval(c),
        beta: cfg.beta.eval(c),
        omega: cfg.omega.eval(c),
    }
}

/// Input width of φ's first layer for a stem with `channels` outputs.
pub fn phi_input_width(level: ScaleLevel, channels: usize) -> usize {
    let (ph, pw) = level.pool_dims();
    channels * ph * pw
}

pub fn init_params(model: &ModelConfig, cfg: &MsapConfig, level: ScaleLevel, init: &mut Init) {
    let h = cfg.phi_hidden;
    init.linear(
        "msap.phi.fc1",
        phi_input_width(level, model.block_channels),
        h,
        true,
    );
    init.layer_norm("msap.phi.norm", h);
    init.linear("msap.phi.fc2", h, h, true);
    init.linear("msap.phi.fc3", h, 1, true);
    let d = model.d_model;
    init.linear("msap.select", d + 1, d, true);
    init.linear("msap.second.embed", d, d, true);
    init.linear("msap.second.doc", d, d, true);
    init_multi_head(
        init,
        "msap.second.attn",
        d,
        &second_pass_spec(model, None),
        model.k_mem,
        (model.lambda_mem, model.lambda_sparse),
    );
}

/// φ: adaptive pool → flatten → LN(ReLU(W₁·)) → Dropout(ReLU(W₂·)) →
/// sigmoid(W₃·). Returns a `[1, 1]` score in (0, 1).
pub fn assess_complexity(ctx: &Ctx, cfg: &MsapConfig, level: ScaleLevel, f: Var) -> Result<Var> {
    let t = ctx.tape;
    let s = t.shape(f);
    if s.len() != 3 {
        return Err(dim_err!("complexity network expects [C, H, W], got {s:?}"));
    }
    let (ph, pw) = level.pool_dims();
    // Maps smaller than the pool grid (narrow inputs) are first repeated.
    let (fy, fx) = (ph.div_ceil(s[1]), pw.div_ceil(s[2]));
    let f = if fy > 1 || fx > 1 {
        t.upsample_nearest(f, fy, fx)?
    } else {
        f
    };
    let pooled = t.adaptive_avg_pool2d(f, ph, pw)?;
    let flat = t.reshape(pooled, &[1, s[0] * ph * pw])?;
    let h = t.relu(ctx.linear(flat, "msap.phi.fc1")?);
    let h = ctx.layer_norm(h, "msap.phi.norm")?;
    let h = t.relu(ctx.linear(h, "msap.phi.fc2")?);
    let h = ctx.dropout(h, cfg.phi_dropout)?;
    Ok(t.sigmoid(ctx.linear(h, "msap.phi.fc3")?))
}

/// `f ⊙ σ(W_g [C; mean(f)] + b_g)` on a `[S, d]` sequence.
pub fn select_features(ctx: &Ctx, f: Var, c: Var) -> Result<Var> {
    let t = ctx.tape;
    let s = t.shape(f);
    if s.len() != 2 {
        return Err(dim_err!("select_features expects [S, d], got {s:?}"));
    }
    let pool = row_mean(ctx, f)?;
    let c = t.reshape(c, &[1, 1])?;
    let z = t.concat(&[c, pool], 1)?;
    let gate = t.sigmoid(ctx.linear(z, "msap.select")?);
    t.mul_bcast(f, gate)
}

/// Mean over rows of `[S, d]` as `[1, d]`.
fn row_mean(ctx: &Ctx, x: Var) -> Result<Var> {
    let t = ctx.tape;
    let n = t.shape(x)[0];
    let ones = t.constant_from(&[1, n], vec![1.0 / n as f64; n])?;
    t.matmul(ones, x)
}

/// Outputs of the first pass.
pub struct FirstPass {
    /// Stem output, the input of φ.
    pub stem: Var,
    /// Encoder output before positional encoding, `[d, H, W]`.
    pub base: Var,
    /// `flatten(base + α_e · PE2D)`, `[H·W, d]`.
    pub f1: Var,
    pub alpha_e: f64,
}

/// Encoder blocks 1–5 and the warmup-scaled 2D positional encoding.
pub fn first_pass(
    ctx: &Ctx,
    enc: &EncoderConfig,
    msap: &MsapConfig,
    x: Var,
    epoch: f64,
) -> Result<FirstPass> {
    let (stem, f4) = encoder::blocks_1_to_4(ctx, enc, x)?;
    let f5 = encoder::gated_conv_fcn(ctx, enc, f4)?;
    let base = encoder::project(ctx, enc, f5)?;
    let s = ctx.tape.shape(base);
    let alpha_e = warmup_alpha(msap, epoch);
    let mut pe = encoder::positional_encoding_2d(s[1], s[2], s[0])?;
    pe.data_mut().iter_mut().for_each(|v| *v *= alpha_e);
    let f1 = encoder::flatten_with_pe(ctx.tape, base, &pe)?;
    Ok(FirstPass {
        stem,
        base,
        f1,
        alpha_e,
    })
}

fn second_pass_spec(model: &ModelConfig, omega: Option<f64>) -> MultiHeadSpec {
    MultiHeadSpec {
        omega,
        band: Some((model.sparse_window, model.sparse_stride)),
        ..MultiHeadSpec::integrated(model.num_heads)
    }
}

/// Sinusoidal encoding of the relative index `i / S`, `[S, d]`.
pub fn relative_position_encoding(s: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; s * d];
    for i in 0..s {
        let pos = i as f64 / s as f64 * RELATIVE_SCALE;
        for i2 in (0..d).step_by(2) {
            let (a, b) = sinusoid(pos, i2, d);
            out[i * d + i2] = a;
            if i2 + 1 < d {
                out[i * d + i2 + 1] = b;
            }
        }
    }
    out
}

/// Complexity-scaled multi-head attention: logits multiplied by ω.
pub fn complexity_scaled_multihead(
    ctx: &Ctx,
    prefix: &str,
    q: Var,
    kv: Var,
    spec: &MultiHeadSpec,
    omega: f64,
) -> Result<Var> {
    let spec = MultiHeadSpec {
        omega: Some(omega),
        ..spec.clone()
    };
    multi_head(ctx, prefix, q, kv, &spec)
}

/// Adaptive queries `E(f₁) + α·P_doc + β·R` attend over `f₁` with memory
/// and sparse heads and ω-scaled logits; the result is scaled by α.
pub fn second_pass(
    ctx: &Ctx,
    model: &ModelConfig,
    f1: Var,
    factors: ScalingFactors,
) -> Result<Var> {
    let t = ctx.tape;
    let s = t.shape(f1);
    let (n, d) = (s[0], s[1]);
    let e = ctx.linear(f1, "msap.second.embed")?;
    let doc = ctx.linear(row_mean(ctx, f1)?, "msap.second.doc")?;
    let q = t.add_bcast(e, t.scale(doc, factors.alpha))?;
    let r: Vec<f64> = relative_position_encoding(n, d)
        .into_iter()
        .map(|v| v * factors.beta)
        .collect();
    let q = t.add_const(q, &r)?;
    let spec = second_pass_spec(model, None);
    let out = complexity_scaled_multihead(ctx, "msap.second.attn", q, f1, &spec, factors.omega)?;
    Ok(t.scale(out, factors.alpha))
}

/// Factor evaluated on a tape scalar, for callers that need gradients
/// through C: `base·(1+γC)·sigmoid(−δ(C−θ))`.
pub fn factor_on_tape(ctx: &Ctx, p: &FactorParams, c: Var) -> Var {
    let t = ctx.tape;
    let lin = t.add_scalar(t.scale(c, p.gamma), 1.0);
    let gate = t.sigmoid(t.add_scalar(t.scale(c, -p.delta), p.delta * p.theta));
    let prod = t.mul(lin, gate).expect("same shape");
    t.scale(prod, p.base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::rng::{stream_rng, Stream};
    use crate::tensor::{Tape, Tensor};
    use rand::Rng as _;

    fn model() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            num_heads: 2,
            block_channels: 8,
            stem_channels: [4, 4, 8],
            k_mem: 2,
            ..ModelConfig::default()
        }
    }

    fn setup(level: ScaleLevel) -> (ModelConfig, MsapConfig, ParamStore) {
        let m = model();
        let cfg = MsapConfig {
            phi_hidden: 8,
            ..MsapConfig::default()
        };
        let mut store = ParamStore::new();
        let mut rng = stream_rng(0, Stream::Init, 0);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        init_params(&m, &cfg, level, &mut init);
        encoder::init_params(&EncoderConfig::new(&m, level), &mut init);
        (m, cfg, store)
    }

    fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor {
        let mut r = stream_rng(seed, Stream::Init, 3);
        Tensor::from_fn(shape, |_| r.gen_range(-scale..scale))
    }

    #[test]
    fn warmup_schedule_constants() {
        let c = MsapConfig::default();
        assert_eq!(warmup_alpha(&c, 0.0), 0.1);
        assert!((warmup_alpha(&c, 150.0) - 0.15).abs() < 1e-15);
        assert_eq!(warmup_alpha(&c, 300.0), warmup_alpha(&c, 150.0));
        let mut prev = 0.0;
        for e in 0..400 {
            let a = warmup_alpha(&c, e as f64);
            assert!(a >= prev);
            prev = a;
        }
    }

    #[test]
    fn factor_constant_case() {
        let p = FactorParams {
            base: 3.0,
            gamma: 0.0,
            delta: 0.0,
            theta: 0.7,
        };
        for c in [0.0, 0.3, 1.0] {
            assert_eq!(p.eval(c), 1.5);
        }
    }

    #[test]
    fn complexity_in_unit_interval_and_deterministic_in_eval() {
        let (_, cfg, store) = setup(ScaleLevel::Line);
        for seed in 0..50 {
            let tape = Tape::new();
            let ctx = Ctx::eval(&tape, &store);
            let f = tape.constant(&random(&[8, 4, 16], seed, 10.0));
            let c = tape.item(assess_complexity(&ctx, &cfg, ScaleLevel::Line, f).unwrap());
            let c2 = tape.item(assess_complexity(&ctx, &cfg, ScaleLevel::Line, f).unwrap());
            assert!(c > 0.0 && c < 1.0);
            assert_eq!(c, c2);
        }
    }

    #[test]
    fn zero_gate_halves_features() {
        let (_, _, mut store) = setup(ScaleLevel::Line);
        store
            .get_mut("msap.select.weight")
            .unwrap()
            .data_mut()
            .fill(0.0);
        store
            .get_mut("msap.select.bias")
            .unwrap()
            .data_mut()
            .fill(0.0);
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let f = tape.constant(&random(&[5, 16], 1, 1.0));
        let c = tape.scalar(0.4);
        let y = select_features(&ctx, f, c).unwrap();
        assert_eq!(tape.shape(y), vec![5, 16]);
        let (yv, fv) = (tape.value(y).to_vec(), tape.value(f).to_vec());
        assert!(yv.iter().zip(&fv).all(|(a, b)| *a == 0.5 * b));
    }

    #[test]
    fn first_pass_adds_scaled_pe() {
        let (m, cfg, store) = setup(ScaleLevel::Line);
        let enc = EncoderConfig::new(&m, ScaleLevel::Line);
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let x = tape.constant(&random(&[3, 32, 64], 2, 1.0));
        let fp = first_pass(&ctx, &enc, &cfg, x, 0.0).unwrap();
        assert_eq!(fp.alpha_e, 0.1);
        let s = tape.shape(fp.base);
        let pe = encoder::positional_encoding_2d(s[1], s[2], s[0]).unwrap();
        let base = tape.value(fp.base).to_vec();
        let f1 = tape.value(fp.f1).to_vec();
        let (h, w, d) = (s[1], s[2], s[0]);
        for j in 0..h * w {
            for c in 0..d {
                let recovered = f1[j * d + c] - 0.1 * pe.data()[c * h * w + j];
                assert!((recovered - base[c * h * w + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn second_pass_shape_and_zero_alpha() {
        let (m, _, store) = setup(ScaleLevel::Line);
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let f1 = tape.constant(&random(&[6, 16], 4, 1.0));
        let f = ScalingFactors {
            alpha: 0.8,
            beta: 0.5,
            omega: 1.2,
        };
        assert_eq!(
            tape.shape(second_pass(&ctx, &m, f1, f).unwrap()),
            vec![6, 16]
        );
        let zero = second_pass(&ctx, &m, f1, ScalingFactors { alpha: 0.0, ..f }).unwrap();
        assert!(tape.value(zero).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn factor_on_tape_matches_formula() {
        let (_, _, store) = setup(ScaleLevel::Line);
        let p = FactorParams {
            base: 1.3,
            gamma: 0.4,
            delta: 5.0,
            theta: 0.35,
        };
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        for i in 0..=100 {
            let c = i as f64 / 100.0;
            let v = tape.item(factor_on_tape(&ctx, &p, tape.scalar(c)));
            assert!((v - p.eval(c)).abs() < 1e-12);
        }
    }
}
