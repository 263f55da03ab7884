//! Named finite-difference checks over every differentiable building block.
//!
//! Each check reduces its output to a scalar with fixed random weights, so
//! the whole Jacobian is exercised, and compares tape gradients of the
//! inputs and of the selected parameters against central differences.

use rand::Rng as _;

use crate::attention::{
    adaptive_fusion, attend, fusion_levels, multi_head, HeadOptions, SparseMask,
};
use crate::config::{LossConfig, ModelConfig, MsapConfig};
use crate::decoder;
use crate::encoder::{self, EncoderConfig, ScaleLevel};
use crate::error::Result;
use crate::layers::Ctx;
use crate::model::{encode, ComplexityMode, ModelSpec};
use crate::msap;
use crate::params::ParamStore;
use crate::rng::{stream_rng, Rng, Stream};
use crate::tensor::gradcheck::{relative_error, GradCheckReport, DEFAULT_EPS, DEFAULT_TOLERANCE};
use crate::tensor::{Conv2dSpec, NormMode, Tape, Tensor, Var};
use crate::training::ctc::ctc_loss;
use crate::training::curriculum::gradient_penalty;
use crate::training::loss::{composite_loss, ComplexityTerm};
use crate::vocab::Vocab;

/// Outcome of one named check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Like [`check_gradients`](crate::tensor::gradcheck::check_gradients) but
/// also differentiates the parameters whose names satisfy `select`.
pub fn check_params<F>(
    params: &ParamStore,
    select: impl Fn(&str) -> bool,
    inputs: &[Tensor],
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&Ctx, &[Var]) -> Result<Var>,
{
    let eval = |store: &ParamStore, ins: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, store);
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&ctx, &vars)?;
        Ok(tape.item(out))
    };

    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, params);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&ctx, &vars)?;
    let grads = tape.backward(out)?;
    let mut with_grads = params.clone();
    with_grads.zero_grads();
    grads.accumulate_into(&mut with_grads);

    let mut per_input = Vec::new();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        if !t.requires_grad {
            continue;
        }
        let mut numeric = vec![0.0; t.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = t.data()[j];
            work[i].data_mut()[j] = orig + DEFAULT_EPS;
            let up = eval(params, &work)?;
            work[i].data_mut()[j] = orig - DEFAULT_EPS;
            let down = eval(params, &work)?;
            work[i].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * DEFAULT_EPS);
        }
        per_input.push(relative_error(&grads.get(vars[i]), &numeric));
    }

    let names: Vec<String> = params
        .names()
        .filter(|n| select(n))
        .map(str::to_string)
        .collect();
    let mut store = params.clone();
    for name in names {
        let n = params.require(&name)?.numel();
        let mut numeric = vec![0.0; n];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = params.require(&name)?.data()[j];
            store.get_mut(&name).expect("present").data_mut()[j] = orig + DEFAULT_EPS;
            let up = eval(&store, inputs)?;
            store.get_mut(&name).expect("present").data_mut()[j] = orig - DEFAULT_EPS;
            let down = eval(&store, inputs)?;
            store.get_mut(&name).expect("present").data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * DEFAULT_EPS);
        }
        let analytic = with_grads
            .require(&name)?
            .grad
            .clone()
            .unwrap_or_else(|| vec![0.0; n]);
        per_input.push(relative_error(&analytic, &numeric));
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_input,
        max_rel_error,
    })
}

/// Model configuration small enough for exhaustive differencing.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        stem_channels: [2, 3, 4],
        block_channels: 4,
        num_layers: 1,
        num_heads: 2,
        ffn_hidden: 6,
        k_mem: 2,
        sparse_window: 3,
        sparse_stride: 2,
        fusion_levels: 2,
        dropout: 0.0,
        se_reduction: 2,
        ..ModelConfig::default()
    }
}

pub fn tiny_msap() -> MsapConfig {
    MsapConfig {
        phi_hidden: 4,
        ..MsapConfig::default()
    }
}

fn tiny_vocab() -> Vocab {
    Vocab::from_alphabet("ab").expect("valid alphabet")
}

fn tiny_spec(level: ScaleLevel) -> ModelSpec {
    ModelSpec {
        model: tiny_model(),
        msap: tiny_msap(),
        level,
        vocab_size: tiny_vocab().len(),
    }
}

fn tiny_params(level: ScaleLevel, seed: u64) -> ParamStore {
    let mut store = tiny_spec(level).init_params(&mut stream_rng(seed, Stream::Init, 0));
    // Non-trivial affine and bias values so their gradients are exercised.
    let mut rng = stream_rng(seed, Stream::Init, 1);
    for (_, t) in store.iter_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    store
}

fn random(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi)).with_grad()
}

/// `Σ y ⊙ r` with fixed pseudo-random weights `r`.
fn readout(tape: &Tape, y: Var) -> Result<Var> {
    let n: usize = tape.shape(y).iter().product();
    let mut rng = stream_rng(0x5eed, Stream::Init, n as u64);
    let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Ok(tape.sum(tape.mul_const(y, r)?))
}

type Check = fn() -> Result<GradCheckReport>;

fn tensor_check<F>(inputs: &[Tensor], f: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    crate::tensor::gradcheck::check_gradients(inputs, |t, v| readout(t, f(t, v)?))
}

fn rng(i: u64) -> Rng {
    stream_rng(17, Stream::Init, i)
}

fn op_elementwise() -> Result<GradCheckReport> {
    let mut r = rng(1);
    let a = random(&mut r, &[2, 3], -1.0, 1.0);
    let b = random(&mut r, &[2, 3], -1.0, 1.0);
    let row = random(&mut r, &[1, 3], -1.0, 1.0);
    let s = random(&mut r, &[1, 1], -1.0, 1.0);
    tensor_check(&[a, b, row, s], |t, v| {
        let x = t.add(v[0], v[1])?;
        let x = t.mul(x, t.sub(v[0], v[1])?)?;
        let x = t.add_bcast(x, v[2])?;
        let x = t.mul_bcast(x, v[2])?;
        let x = t.mul_scalar_var(x, v[3])?;
        let x = t.add_scalar(t.scale(x, 1.5), 0.25);
        let x = t.mul_const(x, vec![0.5, -1.0, 2.0, 1.0, 0.3, -0.7])?;
        t.add_const(x, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    })
}

fn op_unary() -> Result<GradCheckReport> {
    let mut r = rng(2);
    let a = random(&mut r, &[3, 4], -2.0, 2.0);
    let p = random(&mut r, &[3, 4], 0.5, 2.0);
    tensor_check(&[a, p], |t, v| {
        let parts = [
            t.relu(v[0]),
            t.sigmoid(v[0]),
            t.exp(v[0]),
            t.ln(v[1]),
            t.square(v[0]),
            t.abs(v[0]),
        ];
        let x = t.add_all(&parts)?;
        let m = t.mean(x);
        let s = t.sum(t.square(x));
        t.concat(
            &[
                t.reshape(m, &[1, 1])?,
                t.reshape(s, &[1, 1])?,
                t.reshape(x, &[1, 12])?,
            ],
            1,
        )
    })
}

fn op_matmul_shape() -> Result<GradCheckReport> {
    let mut r = rng(3);
    let a = random(&mut r, &[3, 4], -1.0, 1.0);
    let b = random(&mut r, &[4, 2], -1.0, 1.0);
    let table = random(&mut r, &[5, 2], -1.0, 1.0);
    tensor_check(&[a, b, table], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        let y = t.transpose(y)?;
        let y = t.reshape(y, &[3, 2])?;
        let g = t.gather_rows(v[2], &[4, 0, 4])?;
        let y = t.concat(&[y, g], 1)?;
        let n = t.narrow(y, 1, 1, 3)?;
        let p = t.pick(n, &[0, 2, 1])?;
        t.concat(&[t.reshape(n, &[1, 9])?, t.reshape(p, &[1, 3])?], 1)
    })
}

fn op_conv() -> Result<GradCheckReport> {
    let mut r = rng(4);
    let x = random(&mut r, &[2, 5, 6], -1.0, 1.0);
    let k = random(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
    let kg = random(&mut r, &[4, 1, 3, 3], -1.0, 1.0);
    tensor_check(&[x, k, kg], |t, v| {
        let a = t.conv2d(v[0], v[1], Conv2dSpec::new(1, 1))?;
        let b = t.conv2d(v[0], v[2], Conv2dSpec::strided((2, 1), 1).with_groups(2))?;
        t.concat(&[t.reshape(a, &[1, 90])?, t.reshape(b, &[1, 72])?], 1)
    })
}

fn op_dsconv() -> Result<GradCheckReport> {
    let mut r = rng(5);
    let x = random(&mut r, &[2, 4, 5], -1.0, 1.0);
    let d = random(&mut r, &[2, 1, 3, 3], -1.0, 1.0);
    let p = random(&mut r, &[3, 2, 1, 1], -1.0, 1.0);
    tensor_check(&[x, d, p], |t, v| {
        t.depthwise_separable_conv2d(v[0], v[1], v[2], (2, 1), 1)
    })
}

fn op_pooling() -> Result<GradCheckReport> {
    let mut r = rng(6);
    let x = random(&mut r, &[2, 6, 4], -1.0, 1.0);
    tensor_check(&[x], |t, v| {
        let a = t.avg_pool2d(v[0], 2)?;
        let b = t.adaptive_avg_pool2d(v[0], 4, 3)?;
        let g = t.global_avg_pool(v[0])?;
        let u = t.upsample_nearest(a, 2, 3)?;
        let flat = |y: Var| {
            let n: usize = t.shape(y).iter().product();
            t.reshape(y, &[1, n])
        };
        t.concat(&[flat(a)?, flat(b)?, flat(g)?, flat(u)?], 1)
    })
}

fn op_softmax() -> Result<GradCheckReport> {
    let mut r = rng(7);
    let x = random(&mut r, &[3, 4], -2.0, 2.0);
    tensor_check(&[x], |t, v| {
        let a = t.softmax(v[0], 1)?;
        let b = t.log_softmax(v[0], 0)?;
        let c = t.softmax(
            t.add_const(
                v[0],
                &[
                    0.0,
                    crate::tensor::MASKED,
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                ],
            )?,
            1,
        )?;
        t.concat(&[a, b, c], 1)
    })
}

fn op_normalize() -> Result<GradCheckReport> {
    let mut r = rng(8);
    let x = random(&mut r, &[3, 4, 5], -1.0, 1.0);
    let y = random(&mut r, &[4, 6], -1.0, 1.0);
    tensor_check(&[x, y], |t, v| {
        let a = t.normalize(v[0], NormMode::Instance, 1e-5)?;
        let b = t.normalize(v[1], NormMode::Layer, 1e-5)?;
        t.concat(&[t.reshape(a, &[1, 60])?, t.reshape(b, &[1, 24])?], 1)
    })
}

fn op_attention_head() -> Result<GradCheckReport> {
    let mut r = rng(9);
    let q = random(&mut r, &[4, 3], -1.0, 1.0);
    let k = random(&mut r, &[5, 3], -1.0, 1.0);
    let v = random(&mut r, &[5, 3], -1.0, 1.0);
    let m = random(&mut r, &[2, 3], -1.0, 1.0);
    let mask = SparseMask::banded(4, 5, 3, 2);
    tensor_check(&[q, k, v, m], move |t, x| {
        let opts = HeadOptions {
            memory: Some(x[3]),
            omega: Some(1.3),
            mask: Some(&mask),
        };
        Ok(attend(t, x[0], x[1], x[2], opts)?.0)
    })
}

fn encoder_stem() -> Result<GradCheckReport> {
    let params = tiny_params(ScaleLevel::Line, 1);
    let x = random(&mut rng(10), &[3, 16, 16], 0.0, 1.0);
    check_params(
        &params,
        |n| n.starts_with("encoder.stem"),
        &[x],
        |c, v| readout(c.tape, encoder::stem(c, v[0])?),
    )
}

fn encoder_gated_dsconv() -> Result<GradCheckReport> {
    let params = tiny_params(ScaleLevel::Line, 2);
    let x = random(&mut rng(11), &[4, 6, 8], -1.0, 1.0);
    check_params(
        &params,
        |n| n.starts_with("encoder.dsconv"),
        &[x],
        |c, v| readout(c.tape, encoder::gated_dsconv(c, ScaleLevel::Line, v[0])?),
    )
}

fn encoder_octave_se() -> Result<GradCheckReport> {
    let params = tiny_params(ScaleLevel::Line, 3);
    let cfg = EncoderConfig::new(&tiny_model(), ScaleLevel::Line);
    let x = random(&mut rng(12), &[4, 6, 8], -1.0, 1.0);
    check_params(
        &params,
        |n| n.starts_with("encoder.octave") || n.starts_with("encoder.se"),
        &[x],
        |c, v| {
            let (h, l) = encoder::octave_conv(c, &cfg, v[0])?;
            readout(c.tape, encoder::se_fuse(c, h, l)?)
        },
    )
}

fn encoder_gated_fcn() -> Result<GradCheckReport> {
    let params = tiny_params(ScaleLevel::Line, 4);
    let cfg = EncoderConfig::new(&tiny_model(), ScaleLevel::Line);
    let x = random(&mut rng(13), &[4, 4, 6], -1.0, 1.0);
    check_params(
        &params,
        |n| {
            n.starts_with("encoder.gconv")
                || n.starts_with("encoder.fcn")
                || n.starts_with("encoder.proj")
        },
        &[x],
        |c, v| {
            let f = encoder::gated_conv_fcn(c, &cfg, v[0])?;
            readout(c.tape, encoder::project(c, &cfg, f)?)
        },
    )
}

fn encoder_flatten_pe() -> Result<GradCheckReport> {
    let mut r = rng(14);
    let f = random(&mut r, &[8, 2, 3], -1.0, 1.0);
    let mut pe = encoder::positional_encoding_2d(2, 3, 8)?;
    pe.data_mut().iter_mut().for_each(|v| *v *= 0.1);
    tensor_check(&[f], move |t, v| encoder::flatten_with_pe(t, v[0], &pe))
}

fn decoder_embedding() -> Result<GradCheckReport> {
    let params = tiny_params(ScaleLevel::Line, 5);
    let cfg = decoder::DecoderConfig::new(&tiny_model(), tiny_vocab().len());
    check_params(
        &params,
        |n| n == "decoder.embed",
        &[],
        |c, _| readout(c.tape, decoder::embed_with_pe1d(c, &cfg, &[1, 4, 5, 4])?),
    )
}

fn decoder_self_attention() -> Result<GradCheckReport> {
    let params = tiny_params(ScaleLevel::Line, 6);
    let cfg = decoder::DecoderConfig::new(&tiny_model(), tiny_vocab().len());
    let x = random(&mut rng(15), &[4, 8], -1.0, 1.0);
    check_params(
        &params,
        |n| n.starts_with("decoder.layers.0.self"),
        &[x],
        |c, v| {
            readout(
                c.tape,
                multi_head(c, "decoder.layers.0.self", v[0], v[0], &cfg.self_spec())?,
            )
        },
    )
}

fn decoder_cross_fusion() -> Result<GradCheckReport> {
    let mut params = tiny_params(ScaleLevel::Line, 7);
    // Unequal level weights so the fusion softmax has a non-trivial gradient.
    if let Some(t) = params.get_mut("decoder.layers.0.cross.fusion") {
        t.data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = 0.3 * i as f64 - 0.1);
    }
    let cfg = decoder::DecoderConfig::new(&tiny_model(), tiny_vocab().len());
    let mut r = rng(16);
    let q = random(&mut r, &[3, 8], -1.0, 1.0);
    let mem = random(&mut r, &[6, 8], -1.0, 1.0);
    check_params(
        &params,
        |n| n.starts_with("decoder.layers.0.cross"),
        &[q, mem],
        |c, v| {
            let levels = fusion_levels(c.tape, v[1], cfg.fusion_levels)?;
            readout(
                c.tape,
                adaptive_fusion(
                    c,
                    "decoder.layers.0.cross",
                    v[0],
                    &levels,
                    &cfg.cross_spec(),
                )?,
            )
        },
    )
}

fn decoder_ffn_norm() -> Result<GradCheckReport> {
    let params = tiny_params(ScaleLevel::Line, 8);
    let x = random(&mut rng(17), &[3, 8], -1.0, 1.0);
    check_params(
        &params,
        |n| n.starts_with("decoder.layers.0.ffn") || n.starts_with("decoder.layers.0.norm3"),
        &[x],
        |c, v| {
            readout(
                c.tape,
                decoder::pffn_block(
                    c,
                    "decoder.layers.0.ffn",
                    "decoder.layers.0.norm3",
                    v[0],
                    0.0,
                )?,
            )
        },
    )
}

fn decoder_full() -> Result<GradCheckReport> {
    let params = tiny_params(ScaleLevel::Line, 9);
    let cfg = decoder::DecoderConfig::new(&tiny_model(), tiny_vocab().len());
    let mem = random(&mut rng(18), &[5, 8], -1.0, 1.0);
    check_params(
        &params,
        |n| n.starts_with("decoder.layers.0.norm") || n.starts_with("decoder.out"),
        &[mem],
        |c, v| readout(c.tape, decoder::forward(c, &cfg, &[1, 4, 5], v[0])?),
    )
}

fn msap_phi() -> Result<GradCheckReport> {
    let params = tiny_params(ScaleLevel::Line, 10);
    let cfg = tiny_msap();
    let f = random(&mut rng(19), &[4, 8, 20], -1.0, 1.0);
    check_params(
        &params,
        |n| n.starts_with("msap.phi"),
        &[f],
        |c, v| msap::assess_complexity(c, &cfg, ScaleLevel::Line, v[0]),
    )
}

fn msap_gate() -> Result<GradCheckReport> {
    let params = tiny_params(ScaleLevel::Line, 11);
    let mut r = rng(20);
    let f = random(&mut r, &[5, 8], -1.0, 1.0);
    let c = random(&mut r, &[1, 1], 0.1, 0.9);
    check_params(
        &params,
        |n| n == "msap.select.weight" || n == "msap.select.bias",
        &[f, c],
        |c, v| readout(c.tape, msap::select_features(c, v[0], v[1])?),
    )
}

fn msap_second_pass() -> Result<GradCheckReport> {
    let params = tiny_params(ScaleLevel::Line, 12);
    let model = tiny_model();
    let factors = msap::compute_scaling_factors(&tiny_msap(), 0.4);
    let f = random(&mut rng(21), &[6, 8], -1.0, 1.0);
    check_params(
        &params,
        |n| n.starts_with("msap.second"),
        &[f],
        |c, v| readout(c.tape, msap::second_pass(c, &model, v[0], factors)?),
    )
}

fn msap_factors() -> Result<GradCheckReport> {
    let params = ParamStore::new();
    let c = random(&mut rng(22), &[1, 1], 0.1, 0.9);
    let cfg = tiny_msap();
    check_params(
        &params,
        |_| false,
        &[c],
        |ctx, v| {
            let parts = [
                msap::factor_on_tape(ctx, &cfg.alpha, v[0]),
                msap::factor_on_tape(ctx, &cfg.beta, v[0]),
                msap::factor_on_tape(ctx, &cfg.omega, v[0]),
            ];
            readout(ctx.tape, ctx.tape.concat(&parts, 1)?)
        },
    )
}

fn loss_composite() -> Result<GradCheckReport> {
    let vocab = tiny_vocab();
    let mut r = rng(23);
    let logits = random(&mut r, &[6, vocab.len()], -2.0, 2.0);
    let c = random(&mut r, &[1, 1], 0.2, 0.8);
    let pen = random(&mut r, &[], 0.1, 0.5);
    let d = vocab.id("<D>").expect("tag");
    let d_close = vocab.id("</D>").expect("tag");
    let a = vocab.id("a").expect("text");
    let targets = vec![d, a, a + 1, a, d_close, crate::vocab::EOT];
    let cfg = LossConfig::default();
    tensor_check(&[logits, c, pen], move |t, v| {
        let term = ComplexityTerm {
            value: v[1],
            target: 0.25,
            penalty: Some(v[2]),
        };
        Ok(composite_loss(t, v[0], &targets, &vocab, 0.4, Some(&term), &cfg, 0.75)?.0)
    })
}

fn loss_ctc() -> Result<GradCheckReport> {
    let mut r = rng(24);
    let lp = random(&mut r, &[6, 4], -2.0, 0.0);
    tensor_check(&[lp], |t, v| {
        let ls = t.log_softmax(v[0], 1)?;
        ctc_loss(t, ls, &[0, 1, 1], 3)
    })
}

fn loss_gradient_penalty() -> Result<GradCheckReport> {
    let params = tiny_params(ScaleLevel::Line, 13);
    let spec = tiny_spec(ScaleLevel::Line);
    let image = Tensor::from_fn(&[3, 16, 64], |i| ((i * 37) % 11) as f64 / 10.0);
    check_params(
        &params,
        |n| n.starts_with("msap.phi.fc3") || n.starts_with("encoder.stem.2"),
        &[],
        |c, _| {
            let mut r = rng(25);
            let p = gradient_penalty(c.tape, c.params, &spec, &image, 3, 1e-2, &mut r)?;
            Ok(p.expect("pixels > 0"))
        },
    )
}

fn model_encode() -> Result<GradCheckReport> {
    let params = tiny_params(ScaleLevel::Line, 14);
    let spec = tiny_spec(ScaleLevel::Line);
    let image = random(&mut rng(26), &[3, 32, 64], 0.0, 1.0);
    check_params(
        &params,
        |n| n.starts_with("msap.select") || n.starts_with("encoder.proj"),
        &[],
        move |c, _| {
            let x = c.tape.constant(&image);
            let e = encode(c, &spec, x, 3.0, ComplexityMode::PerSample)?;
            readout(c.tape, e.memory)
        },
    )
}

/// Every check in the suite, in a stable order.
pub const CHECKS: &[(&str, Check)] = &[
    ("tensor.elementwise", op_elementwise),
    ("tensor.unary_and_reductions", op_unary),
    ("tensor.matmul_and_indexing", op_matmul_shape),
    ("tensor.conv2d", op_conv),
    ("tensor.depthwise_separable_conv2d", op_dsconv),
    ("tensor.pooling", op_pooling),
    ("tensor.softmax", op_softmax),
    ("tensor.normalize", op_normalize),
    ("attention.head", op_attention_head),
    ("encoder.stem", encoder_stem),
    ("encoder.gated_dsconv", encoder_gated_dsconv),
    ("encoder.octave_se", encoder_octave_se),
    ("encoder.gated_conv_fcn", encoder_gated_fcn),
    ("encoder.flatten_with_pe", encoder_flatten_pe),
    ("decoder.embedding", decoder_embedding),
    ("decoder.self_attention", decoder_self_attention),
    ("decoder.cross_fusion", decoder_cross_fusion),
    ("decoder.ffn_norm", decoder_ffn_norm),
    ("decoder.forward", decoder_full),
    ("msap.phi", msap_phi),
    ("msap.gate", msap_gate),
    ("msap.second_pass", msap_second_pass),
    ("msap.factors", msap_factors),
    ("loss.composite", loss_composite),
    ("loss.ctc", loss_ctc),
    ("loss.gradient_penalty", loss_gradient_penalty),
    ("model.encode", model_encode),
];

/// Runs the checks whose names contain `filter` (all when `None`).
pub fn run_suite(filter: Option<&str>) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for &(name, check) in CHECKS {
        if filter.is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let report = check()?;
        out.push(CheckResult {
            name,
            max_rel_error: report.max_rel_error,
            passed: report.passed(DEFAULT_TOLERANCE),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_params_catches_a_wrong_gradient() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::new(vec![1, 2], vec![0.3, -0.4]).unwrap());
        // A custom op whose backward rule is deliberately off by a factor 2.
        let report = check_params(
            &params,
            |_| true,
            &[],
            |c, _| {
                let w = c.p("w")?;
                let value = c.tape.value(w).iter().map(|v| v * v).collect();
                let y = c.tape.custom(vec![1, 2], value, &[w], |b| {
                    vec![Some(
                        b.grad.iter().zip(b.input(0)).map(|(g, x)| g * x).collect(),
                    )]
                });
                Ok(c.tape.sum(y))
            },
        )
        .unwrap();
        assert!(!report.passed(DEFAULT_TOLERANCE));
    }

    #[test]
    fn model_level_checks_pass() {
        let mut all = run_suite(Some("model.")).unwrap();
        all.extend(run_suite(Some("penalty")).unwrap());
        for r in all {
            assert!(r.passed, "{} failed: {:e}", r.name, r.max_rel_error);
        }
    }
}
