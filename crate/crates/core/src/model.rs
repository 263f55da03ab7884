//! The full recognizer: encoder first pass, complexity assessment, feature
//! gating, second pass and decoder.

use crate::config::{ModelConfig, MsapConfig};
use crate::decoder::{self, DecodeMode, DecodeOutput, DecoderConfig};
use crate::encoder::{self, EncoderConfig, ScaleLevel};
use crate::error::Result;
use crate::layers::{Ctx, Init};
use crate::msap::{self, ScalingFactors};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

/// Everything needed to build the parameter set and run the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub model: ModelConfig,
    pub msap: MsapConfig,
    pub level: ScaleLevel,
    pub vocab_size: usize,
}

impl ModelSpec {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig::new(&self.model, self.level)
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig::new(&self.model, self.vocab_size)
    }

    pub fn init_params(&self, rng: &mut Rng) -> ParamStore {
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng,
        };
        encoder::init_params(&self.encoder(), &mut init);
        msap::init_params(&self.model, &self.msap, self.level, &mut init);
        decoder::init_params(&self.decoder(), &mut init);
        store
    }
}

/// Where the complexity used for gating and scaling comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ComplexityMode {
    /// The sample's own φ output.
    PerSample,
    /// A fixed value, e.g. the per-epoch level estimate during training.
    Fixed(f64),
}

/// Encoder-side outputs of one forward pass.
pub struct Encoded {
    /// Decoder memory `f₁ + f₂`, `[S, d]`.
    pub memory: Var,
    /// φ output `[1, 1]`, differentiable.
    pub complexity: Var,
    /// Complexity value used for gating and scaling.
    pub c_used: f64,
    pub factors: ScalingFactors,
    pub alpha_e: f64,
}

pub fn encode(
    ctx: &Ctx,
    spec: &ModelSpec,
    image: Var,
    epoch: f64,
    mode: ComplexityMode,
) -> Result<Encoded> {
    let enc = spec.encoder();
    let fp = msap::first_pass(ctx, &enc, &spec.msap, image, epoch)?;
    let complexity = msap::assess_complexity(ctx, &spec.msap, spec.level, fp.stem)?;
    let (c_used, c_gate) = match mode {
        ComplexityMode::PerSample => (ctx.tape.item(complexity), complexity),
        ComplexityMode::Fixed(c) => (c, ctx.tape.scalar(c)),
    };
    let f1 = msap::select_features(ctx, fp.f1, c_gate)?;
    let factors = msap::compute_scaling_factors(&spec.msap, c_used);
    let f2 = msap::second_pass(ctx, &spec.model, f1, factors)?;
    let memory = ctx.tape.add(f1, f2)?;
    Ok(Encoded {
        memory,
        complexity,
        c_used,
        factors,
        alpha_e: fp.alpha_e,
    })
}

/// Image tensor `[3, H, W]` to decoder memory in evaluation mode.
pub fn encode_eval(
    params: &ParamStore,
    spec: &ModelSpec,
    image: &Tensor,
    epoch: f64,
) -> Result<(Tensor, f64)> {
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, params).with_norm_eps(spec.model.norm_eps);
    let x = tape.constant(image);
    let e = encode(&ctx, spec, x, epoch, ComplexityMode::PerSample)?;
    Ok((tape.to_tensor(e.memory), e.c_used))
}

/// Result of recognizing one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Recognition {
    pub output: DecodeOutput,
    pub complexity: f64,
}

/// Greedy recognition of one image.
pub fn recognize(
    params: &ParamStore,
    spec: &ModelSpec,
    image: &Tensor,
    epoch: f64,
) -> Result<Recognition> {
    let (memory, complexity) = encode_eval(params, spec, image, epoch)?;
    let output = decoder::decode_sequence(
        params,
        &spec.decoder(),
        &memory,
        spec.model.max_decode_len,
        DecodeMode::Greedy,
    )?;
    Ok(Recognition { output, complexity })
}
