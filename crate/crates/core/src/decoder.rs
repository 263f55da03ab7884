//! Post-norm transformer decoder: causal self-attention, fused
//! memory/sparse cross-attention over the encoder sequence, and a
//! position-wise feed-forward block, each wrapped as `LN(x + sublayer(x))`.

use crate::attention::{
    adaptive_fusion, fusion_levels, init_multi_head, multi_head, MultiHeadSpec,
};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::layers::{positional_encoding_1d, Ctx, Init};
use crate::params::ParamStore;
use crate::tensor::{Tape, Tensor, Var};
use crate::vocab::{TokenSequence, EOT, SOT};

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub ffn_hidden: usize,
    pub k_mem: usize,
    pub sparse_window: usize,
    pub sparse_stride: usize,
    pub fusion_levels: usize,
    pub lambda_mem: f64,
    pub lambda_sparse: f64,
    pub dropout: f64,
    pub norm_eps: f64,
    pub vocab_size: usize,
}

impl DecoderConfig {
    pub fn new(model: &ModelConfig, vocab_size: usize) -> Self {
        DecoderConfig {
            num_layers: model.num_layers,
            d_model: model.d_model,
            num_heads: model.num_heads,
            ffn_hidden: model.ffn_hidden,
            k_mem: model.k_mem,
            sparse_window: model.sparse_window,
            sparse_stride: model.sparse_stride,
            fusion_levels: model.fusion_levels,
            lambda_mem: model.lambda_mem,
            lambda_sparse: model.lambda_sparse,
            dropout: model.dropout,
            norm_eps: model.norm_eps,
            vocab_size,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn self_spec(&self) -> MultiHeadSpec {
        MultiHeadSpec {
            causal: true,
            ..MultiHeadSpec::dense(self.num_heads)
        }
    }

    pub fn cross_spec(&self) -> MultiHeadSpec {
        MultiHeadSpec {
            band: Some((self.sparse_window, self.sparse_stride)),
            ..MultiHeadSpec::integrated(self.num_heads)
        }
    }
}

fn layer_prefix(i: usize) -> String {
    format!("decoder.layers.{i}")
}

pub fn init_params(cfg: &DecoderConfig, init: &mut Init) {
    let d = cfg.d_model;
    init.store
        .init_small(init.rng, "decoder.embed", &[cfg.vocab_size, d], 0.1);
    for i in 0..cfg.num_layers {
        let p = layer_prefix(i);
        init_multi_head(
            init,
            &format!("{p}.self"),
            d,
            &cfg.self_spec(),
            0,
            (0.5, 0.5),
        );
        init.layer_norm(&format!("{p}.norm1"), d);
        init_multi_head(
            init,
            &format!("{p}.cross.attn"),
            d,
            &cfg.cross_spec(),
            cfg.k_mem,
            (cfg.lambda_mem, cfg.lambda_sparse),
        );
        if cfg.fusion_levels > 1 {
            init.store
                .init_const(format!("{p}.cross.fusion"), &[1, cfg.fusion_levels], 0.0);
        }
        init.layer_norm(&format!("{p}.norm2"), d);
        init_pffn(init, &format!("{p}.ffn"), d, cfg.ffn_hidden);
        init.layer_norm(&format!("{p}.norm3"), d);
    }
    init.linear("decoder.out", d, cfg.vocab_size, true);
}

pub fn init_pffn(init: &mut Init, prefix: &str, d: usize, hidden: usize) {
    init.linear(&format!("{prefix}.fc1"), d, hidden, true);
    init.linear(&format!("{prefix}.fc2"), hidden, d, true);
}

/// `E(y) + PE1D`, shape `[T, d]`.
pub fn embed_with_pe1d(ctx: &Ctx, cfg: &DecoderConfig, tokens: &[usize]) -> Result<Var> {
    let e = ctx.p("decoder.embed")?;
    let x = ctx.tape.gather_rows(e, tokens)?;
    ctx.tape
        .add_const(x, &positional_encoding_1d(tokens.len(), cfg.d_model))
}

/// `ReLU(x W₁ + b₁) W₂ + b₂`.
pub fn pffn(ctx: &Ctx, prefix: &str, x: Var) -> Result<Var> {
    let h = ctx.tape.relu(ctx.linear(x, &format!("{prefix}.fc1"))?);
    ctx.linear(h, &format!("{prefix}.fc2"))
}

/// `LN(x + dropout(sub))`.
pub fn residual_norm(ctx: &Ctx, x: Var, sub: Var, norm: &str, p: f64) -> Result<Var> {
    let sub = ctx.dropout(sub, p)?;
    ctx.layer_norm(ctx.tape.add(x, sub)?, norm)
}

pub fn pffn_block(ctx: &Ctx, prefix: &str, norm: &str, x: Var, p: f64) -> Result<Var> {
    let y = pffn(ctx, prefix, x)?;
    residual_norm(ctx, x, y, norm, p)
}

/// One decoder layer over precomputed fusion levels of the memory.
pub fn decoder_layer(
    ctx: &Ctx,
    cfg: &DecoderConfig,
    i: usize,
    x: Var,
    levels: &[Var],
) -> Result<Var> {
    let p = layer_prefix(i);
    let a = multi_head(ctx, &format!("{p}.self"), x, x, &cfg.self_spec())?;
    let x = residual_norm(ctx, x, a, &format!("{p}.norm1"), cfg.dropout)?;
    let c = adaptive_fusion(ctx, &format!("{p}.cross"), x, levels, &cfg.cross_spec())?;
    let x = residual_norm(ctx, x, c, &format!("{p}.norm2"), cfg.dropout)?;
    pffn_block(
        ctx,
        &format!("{p}.ffn"),
        &format!("{p}.norm3"),
        x,
        cfg.dropout,
    )
}

/// Logits `[T, V]` for decoder inputs `tokens` attending to `memory` `[S, d]`.
pub fn forward(ctx: &Ctx, cfg: &DecoderConfig, tokens: &[usize], memory: Var) -> Result<Var> {
    let mut x = embed_with_pe1d(ctx, cfg, tokens)?;
    x = ctx.dropout(x, cfg.dropout)?;
    let levels = fusion_levels(ctx.tape, memory, cfg.fusion_levels)?;
    for i in 0..cfg.num_layers {
        x = decoder_layer(ctx, cfg, i, x, &levels)?;
    }
    ctx.linear(x, "decoder.out")
}

/// Teacher-forcing pair: inputs `[<sot>, y…]`, targets `[y…, <eot>]`.
pub fn shift_targets(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut inputs = Vec::with_capacity(labels.len() + 1);
    inputs.push(SOT);
    inputs.extend_from_slice(labels);
    let mut targets = labels.to_vec();
    targets.push(EOT);
    (inputs, targets)
}

pub enum DecodeMode<'a> {
    /// Consumes `[<sot>, targets…]`; `targets` excludes the end token.
    TeacherForced(&'a [usize]),
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutput {
    /// Step logits `[T, V]`.
    pub logits: Tensor,
    /// Emitted tokens, including the end token when reached.
    pub tokens: TokenSequence,
    /// Greedy decoding hit `max_len` without emitting the end token.
    pub truncated: bool,
}

impl DecodeOutput {
    /// Per-step probabilities (softmax of the logits).
    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        let v = self.logits.shape()[1];
        self.logits
            .data()
            .chunks(v)
            .map(|row| {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|x| x / s).collect()
            })
            .collect()
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Decodes with frozen parameters (evaluation mode).
pub fn decode_sequence(
    params: &ParamStore,
    cfg: &DecoderConfig,
    memory: &Tensor,
    max_len: usize,
    mode: DecodeMode<'_>,
) -> Result<DecodeOutput> {
    if max_len == 0 {
        return Err(Error::Contract("max_len must be at least 1".into()));
    }
    match mode {
        DecodeMode::TeacherForced(targets) => {
            let (inputs, _) = shift_targets(targets);
            let tape = Tape::new();
            let ctx = Ctx::eval(&tape, params).with_norm_eps(cfg.norm_eps);
            let m = tape.constant(memory);
            let logits = tape.to_tensor(forward(&ctx, cfg, &inputs, m)?);
            let v = logits.shape()[1];
            let tokens = logits.data().chunks(v).map(argmax).collect();
            Ok(DecodeOutput {
                logits,
                tokens: TokenSequence(tokens),
                truncated: false,
            })
        }
        DecodeMode::Greedy => {
            let mut inputs = vec![SOT];
            let mut rows: Vec<f64> = Vec::new();
            let mut truncated = true;
            for _ in 0..max_len {
                let tape = Tape::new();
                let ctx = Ctx::eval(&tape, params).with_norm_eps(cfg.norm_eps);
                let m = tape.constant(memory);
                let logits = forward(&ctx, cfg, &inputs, m)?;
                let v = cfg.vocab_size;
                let all = tape.value(logits);
                let last = &all[(inputs.len() - 1) * v..];
                rows.extend_from_slice(last);
                let next = argmax(last);
                inputs.push(next);
                if next == EOT {
                    truncated = false;
                    break;
                }
            }
            let steps = inputs.len() - 1;
            Ok(DecodeOutput {
                logits: Tensor::new(vec![steps, cfg.vocab_size], rows)?,
                tokens: TokenSequence(inputs[1..].to_vec()),
                truncated,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng as _;

    fn micro() -> DecoderConfig {
        let model = ModelConfig {
            d_model: 8,
            num_layers: 2,
            num_heads: 2,
            ffn_hidden: 12,
            k_mem: 3,
            sparse_window: 3,
            sparse_stride: 4,
            ..ModelConfig::default()
        };
        DecoderConfig::new(&model, 7)
    }

    fn setup(cfg: &DecoderConfig, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = stream_rng(seed, Stream::Init, 0);
        init_params(
            cfg,
            &mut Init {
                store: &mut store,
                rng: &mut rng,
            },
        );
        store
    }

    fn memory(s: usize, d: usize, seed: u64) -> Tensor {
        let mut r = stream_rng(seed, Stream::Init, 77);
        Tensor::from_fn(&[s, d], |_| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_embedding_gives_pe_at_origin() {
        let cfg = micro();
        let mut store = setup(&cfg, 1);
        store.get_mut("decoder.embed").unwrap().data_mut().fill(0.0);
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let x = embed_with_pe1d(&ctx, &cfg, &[4, 4]).unwrap();
        let v = tape.value(x);
        assert_eq!(&v[..8], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_ne!(&v[..8], &v[8..]);
        drop(v);
        assert!(matches!(
            embed_with_pe1d(&ctx, &cfg, &[7]),
            Err(Error::Token(_))
        ));
    }

    #[test]
    fn zero_ffn_gives_layer_norm() {
        let cfg = micro();
        let mut store = setup(&cfg, 1);
        for n in ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"] {
            store
                .get_mut(&format!("decoder.layers.0.ffn.{n}"))
                .unwrap()
                .data_mut()
                .fill(0.0);
        }
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let x = tape.constant(&memory(3, 8, 2));
        let y = pffn_block(
            &ctx,
            "decoder.layers.0.ffn",
            "decoder.layers.0.norm3",
            x,
            0.0,
        )
        .unwrap();
        let ln = ctx.layer_norm(x, "decoder.layers.0.norm3").unwrap();
        assert_eq!(&*tape.value(y), &*tape.value(ln));
    }

    #[test]
    fn forced_end_token_stops_after_one_step() {
        let cfg = micro();
        let mut store = setup(&cfg, 1);
        store
            .get_mut("decoder.out.weight")
            .unwrap()
            .data_mut()
            .fill(0.0);
        store.get_mut("decoder.out.bias").unwrap().data_mut()[EOT] = 10.0;
        let out = decode_sequence(&store, &cfg, &memory(5, 8, 3), 20, DecodeMode::Greedy).unwrap();
        assert_eq!(out.tokens.0, vec![EOT]);
        assert!(!out.truncated);
    }

    #[test]
    fn greedy_is_deterministic_and_rows_normalize() {
        let cfg = micro();
        let store = setup(&cfg, 4);
        let m = memory(6, 8, 5);
        let a = decode_sequence(&store, &cfg, &m, 6, DecodeMode::Greedy).unwrap();
        let b = decode_sequence(&store, &cfg, &m, 6, DecodeMode::Greedy).unwrap();
        assert_eq!(a, b);
        for row in a.probabilities() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        if a.tokens.0.last() != Some(&EOT) {
            assert!(a.truncated && a.tokens.len() == 6);
        }
    }

    #[test]
    fn greedy_matches_teacher_forced_on_its_own_output() {
        let cfg = micro();
        let store = setup(&cfg, 6);
        let m = memory(6, 8, 5);
        let g = decode_sequence(&store, &cfg, &m, 5, DecodeMode::Greedy).unwrap();
        let prefix: Vec<usize> = g.tokens.0.iter().copied().filter(|&t| t != EOT).collect();
        let tf = decode_sequence(&store, &cfg, &m, 5, DecodeMode::TeacherForced(&prefix)).unwrap();
        let v = cfg.vocab_size;
        for (i, row) in g.logits.data().chunks(v).enumerate() {
            let other = &tf.logits.data()[i * v..(i + 1) * v];
            for (a, b) in row.iter().zip(other) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shift_pairs() {
        assert_eq!(shift_targets(&[5, 6]), (vec![SOT, 5, 6], vec![5, 6, EOT]));
    }
}
