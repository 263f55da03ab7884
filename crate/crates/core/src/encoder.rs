//! Five-block convolutional encoder.
//!
//! Block 1 (stem) reduces both spatial axes by 8 with three stride-2 stages
//! and refines with a stride-1 convolution. Block 2 (gated depthwise
//! separable) and block 5 (gated convolution + FCN stage) each halve the
//! height, and halve the width too for double and triple pages, giving
//! `H/32 × W/{8,16,32}` overall. Blocks 3–4 split the map into octave
//! frequency branches and fuse them back with squeeze-and-excitation.

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{dim_err, Error, Result};
use crate::layers::{sinusoid, Ctx, Init};
use crate::tensor::{Conv2dSpec, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleLevel {
    Line,
    Paragraph,
    SinglePage,
    DoublePage,
    TriplePage,
}

impl ScaleLevel {
    pub const ALL: [ScaleLevel; 5] = [
        ScaleLevel::Line,
        ScaleLevel::Paragraph,
        ScaleLevel::SinglePage,
        ScaleLevel::DoublePage,
        ScaleLevel::TriplePage,
    ];

    /// Curriculum index l ∈ 1..=5.
    pub fn index(self) -> usize {
        self as usize + 1
    }

    pub fn from_index(l: usize) -> Option<Self> {
        Self::ALL.get(l.wrapping_sub(1)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ScaleLevel::Line => "line",
            ScaleLevel::Paragraph => "paragraph",
            ScaleLevel::SinglePage => "single_page",
            ScaleLevel::DoublePage => "double_page",
            ScaleLevel::TriplePage => "triple_page",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s || (s == "page" && *l == ScaleLevel::SinglePage))
            .ok_or_else(|| Error::Parameter(format!("unknown scale level `{s}`")))
    }

    /// Final channel count C_f.
    pub fn channels(self) -> usize {
        match self {
            ScaleLevel::DoublePage => 128,
            ScaleLevel::TriplePage => 256,
            _ => 64,
        }
    }

    pub fn width_divisor(self) -> usize {
        match self {
            ScaleLevel::DoublePage => 16,
            ScaleLevel::TriplePage => 32,
            _ => 8,
        }
    }

    /// Width strides of blocks 2 and 5.
    pub fn width_strides(self) -> (usize, usize) {
        match self {
            ScaleLevel::DoublePage => (2, 1),
            ScaleLevel::TriplePage => (2, 2),
            _ => (1, 1),
        }
    }

    /// Page columns r (1 below page level).
    pub fn columns(self) -> usize {
        match self {
            ScaleLevel::DoublePage => 2,
            ScaleLevel::TriplePage => 3,
            _ => 1,
        }
    }

    /// Adaptive pooling grid of the complexity network.
    pub fn pool_dims(self) -> (usize, usize) {
        match self {
            ScaleLevel::Line => (4, 16),
            ScaleLevel::Paragraph => (8, 16),
            _ => (16, 16 * self.columns()),
        }
    }

    /// Synthetic image size (height, width).
    pub fn image_size(self) -> (usize, usize) {
        match self {
            ScaleLevel::Line => (32, 128),
            ScaleLevel::Paragraph => (64, 128),
            _ => (128, 128 * self.columns()),
        }
    }
}

impl std::fmt::Display for ScaleLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub level: ScaleLevel,
    pub stem_channels: [usize; 3],
    pub block_channels: usize,
    pub d_model: usize,
    pub dropout: f64,
    pub octave_alpha: f64,
    pub se_reduction: usize,
}

impl EncoderConfig {
    pub fn new(model: &ModelConfig, level: ScaleLevel) -> Self {
        EncoderConfig {
            level,
            stem_channels: model.stem_channels,
            block_channels: model.block_channels,
            d_model: model.d_model,
            dropout: model.dropout,
            octave_alpha: model.octave_alpha,
            se_reduction: model.se_reduction,
        }
    }

    pub fn c_f(&self) -> usize {
        self.level.channels()
    }

    pub fn low_channels(&self) -> usize {
        (self.octave_alpha * self.block_channels as f64).round() as usize
    }

    pub fn high_channels(&self) -> usize {
        self.block_channels - self.low_channels()
    }

    pub fn se_hidden(&self) -> usize {
        (self.block_channels / self.se_reduction.max(1)).max(1)
    }

    /// Output grid (H_f, W_f) for an input of `h × w`.
    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (h / 32, w / self.level.width_divisor())
    }
}

pub const PREFIX: &str = "encoder";

/// Registers all encoder parameters.
pub fn init_params(cfg: &EncoderConfig, init: &mut Init) {
    let [s0, s1, s2] = cfg.stem_channels;
    let b = cfg.block_channels;
    init.conv_block("encoder.stem.0", 3, s0, 7);
    init.conv_block("encoder.stem.1", s0, s1, 3);
    init.conv_block("encoder.stem.2", s1, s2, 3);
    init.conv_block("encoder.stem.3", s2, b, 3);
    for branch in ["gate", "local"] {
        let p = format!("encoder.dsconv.{branch}");
        init.conv(&format!("{p}.depth"), 1, b, 3, false);
        init.conv(&format!("{p}.point"), b, b, 1, false);
        init.instance_norm(&format!("{p}.norm"), b);
        init.conv(&format!("{p}.mix"), b, b, 1, true);
    }
    let (hi, lo) = (cfg.high_channels(), cfg.low_channels());
    init.conv("encoder.octave.hh", hi, hi, 3, false);
    init.conv("encoder.octave.hl", hi, lo, 3, false);
    init.conv("encoder.octave.ll", lo, lo, 3, false);
    init.conv("encoder.octave.lh", lo, hi, 3, false);
    init.instance_norm("encoder.octave.norm_h", hi);
    init.instance_norm("encoder.octave.norm_l", lo);
    init.linear("encoder.se.fc1", b, cfg.se_hidden(), true);
    init.linear("encoder.se.fc2", cfg.se_hidden(), b, true);
    init.conv_block("encoder.gconv.feature", b, b, 3);
    init.conv("encoder.gconv.mask", b, b, 3, true);
    init.conv_block("encoder.fcn", b, cfg.c_f(), 3);
    if cfg.c_f() != cfg.d_model {
        init.conv("encoder.proj", cfg.c_f(), cfg.d_model, 1, true);
    }
}

/// Block 1: three stride-2 stages (7×7, 3×3, 3×3) then a stride-1 3×3
/// convolution, each followed by instance norm and ReLU.
pub fn stem(ctx: &Ctx, x: Var) -> Result<Var> {
    let shape = ctx.tape.shape(x);
    if shape.len() != 3 || shape[0] != 3 {
        return Err(dim_err!("encoder input must be [3, H, W], got {shape:?}"));
    }
    let y = ctx.conv_block(x, "encoder.stem.0", Conv2dSpec::new(2, 3))?;
    let y = ctx.conv_block(y, "encoder.stem.1", Conv2dSpec::new(2, 1))?;
    let y = ctx.conv_block(y, "encoder.stem.2", Conv2dSpec::new(2, 1))?;
    ctx.conv_block(y, "encoder.stem.3", Conv2dSpec::new(1, 1))
}

fn dsconv_branch(ctx: &Ctx, f: Var, branch: &str, stride: (usize, usize)) -> Result<Var> {
    let p = format!("encoder.dsconv.{branch}");
    let d = ctx.p(&format!("{p}.depth.weight"))?;
    let pt = ctx.p(&format!("{p}.point.weight"))?;
    let y = ctx.tape.depthwise_separable_conv2d(f, d, pt, stride, 1)?;
    let y = ctx.instance_norm(y, &format!("{p}.norm"))?;
    let y = ctx.tape.relu(y);
    ctx.conv(y, &format!("{p}.mix"), Conv2dSpec::default())
}

/// Block 2: `sigmoid(W_g ∗ DSConv_g(f)) ⊙ (W_l ∗ DSConv_l(f))`, halving the
/// height (and the width at double/triple scale).
pub fn gated_dsconv(ctx: &Ctx, level: ScaleLevel, f: Var) -> Result<Var> {
    let stride = (2, level.width_strides().0);
    let g = dsconv_branch(ctx, f, "gate", stride)?;
    let l = dsconv_branch(ctx, f, "local", stride)?;
    let g = ctx.tape.sigmoid(g);
    ctx.tape.mul(g, l)
}

/// Block 3: octave convolution. The first `(1 − α)·C` channels form the
/// high-frequency input, the rest are pooled to half resolution as the
/// low-frequency input.
pub fn octave_conv(ctx: &Ctx, cfg: &EncoderConfig, f: Var) -> Result<(Var, Var)> {
    let t = ctx.tape;
    let shape = t.shape(f);
    if shape.len() != 3 || shape[0] != cfg.block_channels {
        return Err(dim_err!(
            "octave conv expects {} channels, got {shape:?}",
            cfg.block_channels
        ));
    }
    if !shape[1].is_multiple_of(2) || !shape[2].is_multiple_of(2) {
        return Err(dim_err!(
            "octave low branch needs even spatial dims, got {shape:?}"
        ));
    }
    let (hi, lo) = (cfg.high_channels(), cfg.low_channels());
    let xh = t.narrow(f, 0, 0, hi)?;
    let xl = t.avg_pool2d(t.narrow(f, 0, hi, lo)?, 2)?;
    let same = Conv2dSpec::new(1, 1);
    let hh = ctx.conv(xh, "encoder.octave.hh", same)?;
    let lh = t.upsample_nearest(ctx.conv(xl, "encoder.octave.lh", same)?, 2, 2)?;
    let ll = ctx.conv(xl, "encoder.octave.ll", same)?;
    let hl = ctx.conv(t.avg_pool2d(xh, 2)?, "encoder.octave.hl", same)?;
    let yh = ctx.instance_norm(t.add(hh, lh)?, "encoder.octave.norm_h")?;
    let yl = ctx.instance_norm(t.add(ll, hl)?, "encoder.octave.norm_l")?;
    Ok((t.relu(yh), t.relu(yl)))
}

/// Block 4: upsample the low branch, concatenate, and recalibrate channels
/// with squeeze-and-excitation gates.
pub fn se_fuse(ctx: &Ctx, high: Var, low: Var) -> Result<Var> {
    let t = ctx.tape;
    let up = t.upsample_nearest(low, 2, 2)?;
    let (sh, su) = (t.shape(high), t.shape(up));
    if sh[1..] != su[1..] {
        return Err(dim_err!(
            "se_fuse: high {sh:?} and upsampled low {su:?} differ"
        ));
    }
    let x = t.concat(&[high, up], 0)?;
    let c = sh[0] + su[0];
    let s = t.reshape(t.global_avg_pool(x)?, &[1, c])?;
    let z = t.relu(ctx.linear(s, "encoder.se.fc1")?);
    let gate = t.sigmoid(ctx.linear(z, "encoder.se.fc2")?);
    let gate = t.reshape(gate, &[c, 1, 1])?;
    t.mul_bcast(x, gate)
}

/// Gated convolution: `feature ⊙ sigmoid(mask)`.
pub fn gated_conv(ctx: &Ctx, f: Var) -> Result<Var> {
    let same = Conv2dSpec::new(1, 1);
    let feat = ctx.conv_block(f, "encoder.gconv.feature", same)?;
    let mask = ctx.conv(f, "encoder.gconv.mask", same)?;
    let gate = ctx.tape.sigmoid(mask);
    ctx.tape.mul(feat, gate)
}

/// Block 5: gated convolution, mixed dropout, then the last FCN stage that
/// completes the /32 height reduction and sets C_f channels.
pub fn gated_conv_fcn(ctx: &Ctx, cfg: &EncoderConfig, f: Var) -> Result<Var> {
    let g = gated_conv(ctx, f)?;
    let g = ctx.mix_dropout(g, cfg.dropout)?;
    let stride = (2, cfg.level.width_strides().1);
    ctx.conv_block(g, "encoder.fcn", Conv2dSpec::strided(stride, 1))
}

/// 1×1 projection to d_model when C_f differs.
pub fn project(ctx: &Ctx, cfg: &EncoderConfig, f: Var) -> Result<Var> {
    if cfg.c_f() == cfg.d_model {
        Ok(f)
    } else {
        ctx.conv(f, "encoder.proj", Conv2dSpec::default())
    }
}

/// Blocks 1–4; returns the stem output too (the complexity network reads it).
pub fn blocks_1_to_4(ctx: &Ctx, cfg: &EncoderConfig, x: Var) -> Result<(Var, Var)> {
    let f1 = stem(ctx, x)?;
    let f2 = gated_dsconv(ctx, cfg.level, f1)?;
    let (h, l) = octave_conv(ctx, cfg, f2)?;
    Ok((f1, se_fuse(ctx, h, l)?))
}

/// Plain encoder: blocks 1–5, projection, flattening with 2D encoding.
pub fn encode(ctx: &Ctx, cfg: &EncoderConfig, x: Var) -> Result<Var> {
    let (_, f4) = blocks_1_to_4(ctx, cfg, x)?;
    let f5 = gated_conv_fcn(ctx, cfg, f4)?;
    let f = project(ctx, cfg, f5)?;
    let s = ctx.tape.shape(f);
    let pe = positional_encoding_2d(s[1], s[2], s[0])?;
    flatten_with_pe(ctx.tape, f, &pe)
}

/// `[d, H, W]` encoding: channels `[0, d/2)` hold x with interleaved
/// sin/cos, channels `[d/2, d)` hold y.
pub fn positional_encoding_2d(h: usize, w: usize, d: usize) -> Result<Tensor> {
    if d == 0 || !d.is_multiple_of(4) {
        return Err(Error::Parameter(format!(
            "2D positional encoding needs d_model divisible by 4, got {d}"
        )));
    }
    let half = d / 2;
    let mut out = vec![0.0; d * h * w];
    for y in 0..h {
        for x in 0..w {
            for i2 in (0..half).step_by(2) {
                let (sx, cx) = sinusoid(x as f64, i2, d);
                let (sy, cy) = sinusoid(y as f64, i2, d);
                let at = |c: usize| (c * h + y) * w + x;
                out[at(i2)] = sx;
                out[at(i2 + 1)] = cx;
                out[at(half + i2)] = sy;
                out[at(half + i2 + 1)] = cy;
            }
        }
    }
    Tensor::new(vec![d, h, w], out)
}

/// `f^1D[j] = f[:, y, x] + PE(x, y)` with `j = y·W + x`; returns `[H·W, d]`.
pub fn flatten_with_pe(tape: &Tape, f: Var, pe: &Tensor) -> Result<Var> {
    let s = tape.shape(f);
    if s != pe.shape() {
        return Err(dim_err!(
            "feature map {s:?} does not match positional encoding {:?}",
            pe.shape()
        ));
    }
    let y = tape.add_const(f, pe.data())?;
    let y = tape.reshape(y, &[s[0], s[1] * s[2]])?;
    tape.transpose(y)
}
