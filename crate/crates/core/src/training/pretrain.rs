//! CTC pre-training of the encoder with a temporary linear head.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::Serialize;

use super::augment::augment;
use super::ctc::{ctc_greedy, ctc_loss};
use super::optim::{clip_grad_norm, Adam};
use super::{level_samples, train_seed, Sample};
use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::config::RunConfig;
use crate::encoder::{self, EncoderConfig, ScaleLevel};
use crate::error::{Error, Result};
use crate::layers::{Ctx, Init};
use crate::params::ParamStore;
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Tape, Var};
use crate::vocab::Vocab;

pub const HEAD: &str = "ctc_head";

#[derive(Serialize)]
struct PretrainRecord {
    epoch: usize,
    loss: f64,
    batch_size: usize,
}

pub struct PretrainOutcome {
    pub checkpoint: PathBuf,
    pub losses: Vec<f64>,
}

pub fn init_pretrain_params(cfg: &RunConfig, vocab: &Vocab) -> ParamStore {
    let mut store = ParamStore::new();
    let mut rng = stream_rng(cfg.training.seed, Stream::Init, 0);
    let mut init = Init {
        store: &mut store,
        rng: &mut rng,
    };
    encoder::init_params(&EncoderConfig::new(&cfg.model, ScaleLevel::Line), &mut init);
    init.linear(HEAD, cfg.model.d_model, vocab.len() + 1, true);
    store.round_to_f32();
    store
}

/// Frame log-probabilities `[S, V + 1]`; the blank is the last column.
pub fn ctc_log_probs(ctx: &Ctx, cfg: &RunConfig, image: Var) -> Result<Var> {
    let enc = EncoderConfig::new(&cfg.model, ScaleLevel::Line);
    let seq = encoder::encode(ctx, &enc, image)?;
    let logits = ctx.linear(seq, HEAD)?;
    ctx.tape.log_softmax(logits, 1)
}

/// Greedy CTC transcription with pre-trained parameters.
pub fn ctc_transcribe(
    params: &ParamStore,
    cfg: &RunConfig,
    vocab: &Vocab,
    sample: &Sample,
) -> Result<String> {
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, params).with_norm_eps(cfg.model.norm_eps);
    let lp = ctc_log_probs(&ctx, cfg, tape.constant(&sample.image))?;
    let ids = ctc_greedy(&tape.value(lp), vocab.len() + 1, vocab.len());
    Ok(vocab.decode(&crate::vocab::TokenSequence(ids)))
}

/// Runs CTC pre-training on synthetic lines and writes `<out>/pretrain`.
pub fn pretrain(cfg: &RunConfig, vocab: &Vocab, out: &Path) -> Result<PretrainOutcome> {
    let t = &cfg.training;
    let samples = level_samples(
        cfg,
        vocab,
        ScaleLevel::Line,
        t.pretrain_samples,
        train_seed(t.seed, ScaleLevel::Line),
    )?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join("pretrain_log.jsonl");
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut params = init_pretrain_params(cfg, vocab);
    let mut opt = Adam::new(t.lr, t.adam_beta1, t.adam_beta2, t.adam_eps);
    let batch = t.pretrain_batch.max(1);
    let blank = vocab.len();
    let mut losses = Vec::new();
    for epoch in 0..t.pretrain_epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut stream_rng(t.seed, Stream::Shuffle, epoch as u64));
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            params.zero_grads();
            for &i in chunk {
                let s = &samples[i];
                let tape = Tape::new();
                let rng = stream_rng(t.seed, Stream::Dropout, ((epoch as u64) << 32) | i as u64);
                let ctx = Ctx::train(&tape, &params, rng).with_norm_eps(cfg.model.norm_eps);
                let mut aug_rng =
                    stream_rng(t.seed, Stream::Augment, ((epoch as u64) << 32) | i as u64);
                let image = augment(&s.image, &t.augment, &mut aug_rng);
                let lp = ctc_log_probs(&ctx, cfg, tape.constant(&image))?;
                let text: Vec<usize> = s
                    .tokens
                    .iter()
                    .copied()
                    .filter(|&id| vocab.is_text(id))
                    .collect();
                let loss = match ctc_loss(&tape, lp, &text, blank) {
                    Ok(l) => l,
                    Err(Error::InfeasibleTarget(m)) => {
                        log::warn!("skipping pre-training sample {i}: {m}");
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let v = tape.item(loss);
                if !v.is_finite() {
                    return Err(Error::Divergence {
                        level: 0,
                        epoch,
                        last_good: None,
                    });
                }
                total += v;
                let loss = tape.scale(loss, 1.0 / chunk.len() as f64);
                tape.backward(loss)?.accumulate_into(&mut params);
            }
            if let Some(c) = t.grad_clip {
                clip_grad_norm(&mut params, c);
            }
            opt.step(&mut params);
            params.round_to_f32();
        }
        opt.lr *= t.lr_decay;
        let mean = total / samples.len().max(1) as f64;
        losses.push(mean);
        let rec = PretrainRecord {
            epoch,
            loss: mean,
            batch_size: batch,
        };
        writeln!(log, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&log_path, e))?;
        log::info!("pretrain epoch {epoch}: ctc loss {mean:.4}");
    }
    let path = out.join("pretrain");
    Checkpoint {
        kind: CheckpointKind::Pretrain,
        level: ScaleLevel::Line,
        epoch: 0.0,
        complexity: None,
        config: cfg.clone(),
        vocab: vocab.clone(),
        params,
    }
    .save(&path)?;
    Ok(PretrainOutcome {
        checkpoint: path,
        losses,
    })
}
