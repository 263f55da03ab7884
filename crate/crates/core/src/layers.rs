//! Parameterized building blocks shared by the encoder, decoder and MSAP.

use std::cell::RefCell;

use rand::Rng as _;

use crate::error::{dim_err, Result};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::{Conv2dSpec, NormMode, Tape, Var};

/// Forward-pass context: tape, parameters, mode and dropout randomness.
pub struct Ctx<'a> {
    pub tape: &'a Tape,
    pub params: &'a ParamStore,
    pub train: bool,
    pub norm_eps: f64,
    rng: Option<RefCell<Rng>>,
}

impl<'a> Ctx<'a> {
    pub fn eval(tape: &'a Tape, params: &'a ParamStore) -> Self {
        Ctx {
            tape,
            params,
            train: false,
            norm_eps: 1e-5,
            rng: None,
        }
    }

    pub fn train(tape: &'a Tape, params: &'a ParamStore, rng: Rng) -> Self {
        Ctx {
            tape,
            params,
            train: true,
            norm_eps: 1e-5,
            rng: Some(RefCell::new(rng)),
        }
    }

    pub fn with_norm_eps(mut self, eps: f64) -> Self {
        self.norm_eps = eps;
        self
    }

    pub fn p(&self, name: &str) -> Result<Var> {
        self.tape.param(self.params, name)
    }

    pub fn has(&self, name: &str) -> bool {
        self.params.contains(name)
    }

    /// Uniform draws in [0, 1) from the dropout stream.
    fn uniforms(&self, n: usize) -> Vec<f64> {
        match &self.rng {
            Some(r) => {
                let mut r = r.borrow_mut();
                (0..n).map(|_| r.gen::<f64>()).collect()
            }
            None => vec![1.0; n],
        }
    }

    fn coin(&self) -> bool {
        self.uniforms(1)[0] < 0.5
    }

    /// x · W + b for x `[T, in]`, W `[in, out]`, b `[1, out]`.
    pub fn linear(&self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(&format!("{prefix}.weight"))?;
        let y = self.tape.matmul(x, w)?;
        let bname = format!("{prefix}.bias");
        if self.has(&bname) {
            let b = self.p(&bname)?;
            self.tape.add_bcast(y, b)
        } else {
            Ok(y)
        }
    }

    /// Convolution plus optional per-channel bias `[C, 1, 1]`.
    pub fn conv(&self, x: Var, prefix: &str, spec: Conv2dSpec) -> Result<Var> {
        let k = self.p(&format!("{prefix}.weight"))?;
        let y = self.tape.conv2d(x, k, spec)?;
        let bname = format!("{prefix}.bias");
        if self.has(&bname) {
            let b = self.p(&bname)?;
            self.tape.add_bcast(y, b)
        } else {
            Ok(y)
        }
    }

    /// Instance normalization with affine gain and shift `[C, 1, 1]`.
    pub fn instance_norm(&self, x: Var, prefix: &str) -> Result<Var> {
        let n = self.tape.normalize(x, NormMode::Instance, self.norm_eps)?;
        let g = self.p(&format!("{prefix}.gain"))?;
        let b = self.p(&format!("{prefix}.shift"))?;
        let y = self.tape.mul_bcast(n, g)?;
        self.tape.add_bcast(y, b)
    }

    /// Layer normalization over the last axis with affine `[1, d]`.
    pub fn layer_norm(&self, x: Var, prefix: &str) -> Result<Var> {
        let n = self.tape.normalize(x, NormMode::Layer, self.norm_eps)?;
        let g = self.p(&format!("{prefix}.gain"))?;
        let b = self.p(&format!("{prefix}.shift"))?;
        let y = self.tape.mul_bcast(n, g)?;
        self.tape.add_bcast(y, b)
    }

    /// conv → instance norm → ReLU.
    pub fn conv_block(&self, x: Var, prefix: &str, spec: Conv2dSpec) -> Result<Var> {
        let y = self.conv(x, &format!("{prefix}.conv"), spec)?;
        let y = self.instance_norm(y, &format!("{prefix}.norm"))?;
        Ok(self.tape.relu(y))
    }

    /// Inverted element dropout; identity outside training.
    pub fn dropout(&self, x: Var, p: f64) -> Result<Var> {
        if !self.train || p <= 0.0 {
            return Ok(x);
        }
        let n: usize = self.tape.shape(x).iter().product();
        let mask = dropout_mask(&self.uniforms(n), p);
        self.tape.mul_const(x, mask)
    }

    /// Inverted dropout of whole channels of a `[C, H, W]` map.
    pub fn channel_dropout(&self, x: Var, p: f64) -> Result<Var> {
        if !self.train || p <= 0.0 {
            return Ok(x);
        }
        let shape = self.tape.shape(x);
        if shape.len() != 3 {
            return Err(dim_err!("channel dropout expects [C, H, W], got {shape:?}"));
        }
        let per_channel = dropout_mask(&self.uniforms(shape[0]), p);
        let hw = shape[1] * shape[2];
        let mask = per_channel
            .iter()
            .flat_map(|&m| std::iter::repeat_n(m, hw))
            .collect();
        self.tape.mul_const(x, mask)
    }

    /// Element or channel dropout, chosen per call with equal odds.
    pub fn mix_dropout(&self, x: Var, p: f64) -> Result<Var> {
        if !self.train || p <= 0.0 {
            return Ok(x);
        }
        if self.coin() {
            self.dropout(x, p)
        } else {
            self.channel_dropout(x, p)
        }
    }
}

fn dropout_mask(u: &[f64], p: f64) -> Vec<f64> {
    let keep = if p >= 1.0 { 0.0 } else { 1.0 / (1.0 - p) };
    u.iter().map(|&v| if v < p { 0.0 } else { keep }).collect()
}

/// Registers parameters with the conventions [`Ctx`] expects.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut Rng,
}

impl Init<'_> {
    pub fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, bias: bool) {
        self.store.init_uniform(
            self.rng,
            format!("{prefix}.weight"),
            &[fan_in, fan_out],
            fan_in,
        );
        if bias {
            self.store
                .init_const(format!("{prefix}.bias"), &[1, fan_out], 0.0);
        }
    }

    /// Kernel `[c_out, c_in / groups, k, k]`.
    pub fn conv(
        &mut self,
        prefix: &str,
        c_in_per_group: usize,
        c_out: usize,
        k: usize,
        bias: bool,
    ) {
        let fan_in = c_in_per_group * k * k;
        self.store.init_uniform(
            self.rng,
            format!("{prefix}.weight"),
            &[c_out, c_in_per_group, k, k],
            fan_in,
        );
        if bias {
            self.store
                .init_const(format!("{prefix}.bias"), &[c_out, 1, 1], 0.0);
        }
    }

    pub fn instance_norm(&mut self, prefix: &str, c: usize) {
        self.store
            .init_const(format!("{prefix}.gain"), &[c, 1, 1], 1.0);
        self.store
            .init_const(format!("{prefix}.shift"), &[c, 1, 1], 0.0);
    }

    pub fn layer_norm(&mut self, prefix: &str, d: usize) {
        self.store
            .init_const(format!("{prefix}.gain"), &[1, d], 1.0);
        self.store
            .init_const(format!("{prefix}.shift"), &[1, d], 0.0);
    }

    pub fn conv_block(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize) {
        self.conv(&format!("{prefix}.conv"), c_in, c_out, k, false);
        self.instance_norm(&format!("{prefix}.norm"), c_out);
    }
}

/// Sinusoidal encoding of position `pos` at even/odd channel pair `2i`:
/// frequency `1 / 10000^(2i / d)`.
pub fn sinusoid(pos: f64, i2: usize, d: usize) -> (f64, f64) {
    let angle = pos / 10000f64.powf(i2 as f64 / d as f64);
    (angle.sin(), angle.cos())
}

/// Standard 1D encoding `[T, d]`.
pub fn positional_encoding_1d(t: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; t * d];
    for pos in 0..t {
        for i2 in (0..d).step_by(2) {
            let (s, c) = sinusoid(pos as f64, i2, d);
            out[pos * d + i2] = s;
            if i2 + 1 < d {
                out[pos * d + i2 + 1] = c;
            }
        }
    }
    out
}
