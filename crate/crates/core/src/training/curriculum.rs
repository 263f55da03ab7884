//! Line-to-page curriculum training of the full recognizer.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::Serialize;

use super::augment::augment;
use super::loss::{composite_loss, ComplexityTerm, LossParts};
use super::optim::{clip_grad_norm, Adam};
use super::{
    adaptive_batch_size, level_samples, teacher_force_corrupt, train_seed, transfer_weights,
    Sample, TransferReport,
};
use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::config::{LevelPlan, RunConfig};
use crate::decoder::{self, shift_targets};
use crate::encoder::{self, ScaleLevel};
use crate::error::{Error, Result};
use crate::layers::Ctx;
use crate::model::{self, ComplexityMode, ModelSpec};
use crate::msap;
use crate::params::ParamStore;
use crate::rng::{stream_rng, Rng, Stream};
use crate::tensor::{Tape, Tensor, Var};
use crate::vocab::Vocab;

/// One line of the training log.
#[derive(Clone, Debug, Serialize)]
pub struct EpochRecord {
    pub level: ScaleLevel,
    pub epoch: usize,
    pub global_epoch: usize,
    pub loss: f64,
    pub layout: f64,
    pub text: f64,
    pub complexity: f64,
    pub penalty: f64,
    /// Per-epoch complexity estimate C_l.
    pub c_mean: f64,
    pub batch_size: usize,
    pub curriculum_alpha: f64,
    pub alpha_e: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct LevelOutcome {
    pub level: ScaleLevel,
    pub checkpoint: PathBuf,
    pub best_loss: f64,
    pub transfer: TransferReport,
    pub records: Vec<EpochRecord>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub levels: Vec<LevelOutcome>,
    pub log: PathBuf,
}

impl TrainSummary {
    pub fn final_checkpoint(&self) -> Option<&Path> {
        self.levels.last().map(|l| l.checkpoint.as_path())
    }
}

/// Hook called with the initial parameters of each level.
pub type LevelStartHook<'a> = dyn FnMut(ScaleLevel, &ParamStore, &TransferReport) + 'a;

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Parameters to transfer into the first level (e.g. pre-training).
    pub init: Option<&'a ParamStore>,
    pub on_level_start: Option<Box<LevelStartHook<'a>>>,
}

pub fn model_spec(cfg: &RunConfig, level: ScaleLevel, vocab: &Vocab) -> ModelSpec {
    ModelSpec {
        model: cfg.model.clone(),
        msap: cfg.msap.clone(),
        level,
        vocab_size: vocab.len(),
    }
}

/// `α_l`: linear ramp from start to end over the level's epochs.
pub fn curriculum_alpha(cfg: &RunConfig, epoch: usize, epochs: usize) -> f64 {
    let t = &cfg.training;
    if epochs <= 1 {
        return t.curriculum_alpha_end;
    }
    let f = epoch as f64 / (epochs - 1) as f64;
    t.curriculum_alpha_start + (t.curriculum_alpha_end - t.curriculum_alpha_start) * f
}

pub fn c_target(plan: &LevelPlan) -> f64 {
    plan.c_target
        .unwrap_or((plan.level.index() as f64 - 1.0) / 4.0)
}

/// Mean φ output over the first `probe` samples in evaluation mode.
pub fn level_complexity(
    params: &ParamStore,
    spec: &ModelSpec,
    samples: &[Sample],
    probe: usize,
) -> Result<f64> {
    let n = probe.min(samples.len()).max(1).min(samples.len());
    if n == 0 {
        return Ok(0.5);
    }
    let mut sum = 0.0;
    for s in &samples[..n] {
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, params).with_norm_eps(spec.model.norm_eps);
        let stem = encoder::stem(&ctx, tape.constant(&s.image))?;
        sum += tape.item(msap::assess_complexity(&ctx, &spec.msap, spec.level, stem)?);
    }
    Ok(sum / n as f64)
}

/// Finite-difference estimate of `mean_p |∂C/∂x_p|` over random pixels,
/// recorded on `tape` so its parameter gradient flows into φ and the stem.
pub fn gradient_penalty(
    tape: &Tape,
    params: &ParamStore,
    spec: &ModelSpec,
    image: &Tensor,
    pixels: usize,
    h: f64,
    rng: &mut Rng,
) -> Result<Option<Var>> {
    if pixels == 0 {
        return Ok(None);
    }
    let ctx = Ctx::eval(tape, params).with_norm_eps(spec.model.norm_eps);
    let s = image.shape();
    let hw = s[1] * s[2];
    let mut terms = Vec::with_capacity(pixels);
    for _ in 0..pixels {
        let p = rng.gen_range(0..hw);
        let shifted = |sign: f64| {
            let mut t = image.clone();
            for c in 0..s[0] {
                t.data_mut()[c * hw + p] += sign * h;
            }
            t
        };
        let phi = |t: &Tensor| -> Result<Var> {
            let stem = encoder::stem(&ctx, tape.constant(t))?;
            msap::assess_complexity(&ctx, &spec.msap, spec.level, stem)
        };
        let d = tape.sub(phi(&shifted(1.0))?, phi(&shifted(-1.0))?)?;
        terms.push(tape.scale(tape.sum(tape.abs(d)), 1.0 / (2.0 * h)));
    }
    let sum = if terms.len() == 1 {
        terms[0]
    } else {
        tape.add_all(&terms)?
    };
    Ok(Some(tape.scale(sum, 1.0 / pixels as f64)))
}

/// Inputs shared by every sample of one training step.
pub struct StepContext<'a> {
    pub cfg: &'a RunConfig,
    pub spec: &'a ModelSpec,
    pub vocab: &'a Vocab,
    pub c_level: f64,
    pub c_target: f64,
    pub epoch: f64,
    pub curriculum_alpha: f64,
}

/// Loss of one sample; `dropout`, `corruption` and `penalty` seed the
/// respective random choices.
pub fn sample_loss(
    tape: &Tape,
    params: &ParamStore,
    step: &StepContext<'_>,
    sample: &Sample,
    rngs: (Rng, Rng, Option<Rng>),
) -> Result<(Var, LossParts)> {
    let (dropout, mut corruption, penalty_rng) = rngs;
    let cfg = step.cfg;
    let ctx = Ctx::train(tape, params, dropout).with_norm_eps(cfg.model.norm_eps);
    let x = tape.constant(&sample.image);
    let enc = model::encode(
        &ctx,
        step.spec,
        x,
        step.epoch,
        ComplexityMode::Fixed(step.c_level),
    )?;
    let (inputs, targets) = shift_targets(&sample.tokens);
    let inputs = teacher_force_corrupt(
        &inputs,
        cfg.training.corruption_rate,
        step.vocab,
        &mut corruption,
    );
    let logits = decoder::forward(&ctx, &step.spec.decoder(), &inputs, enc.memory)?;
    let lc = &cfg.training.loss;
    let penalty = match penalty_rng {
        Some(mut r) if lc.lambda_reg > 0.0 => gradient_penalty(
            tape,
            params,
            step.spec,
            &sample.image,
            lc.penalty_pixels,
            lc.penalty_step,
            &mut r,
        )?,
        _ => None,
    };
    let term = ComplexityTerm {
        value: enc.complexity,
        target: step.c_target,
        penalty,
    };
    composite_loss(
        tape,
        logits,
        &targets,
        step.vocab,
        step.c_level,
        Some(&term),
        lc,
        step.curriculum_alpha,
    )
}

fn sample_rngs(
    seed: u64,
    level: ScaleLevel,
    epoch: usize,
    i: usize,
    with_penalty: bool,
) -> ((Rng, Rng, Option<Rng>), Rng) {
    let idx = ((level.index() as u64) << 48) | ((epoch as u64) << 24) | i as u64;
    (
        (
            stream_rng(seed, Stream::Dropout, idx),
            stream_rng(seed, Stream::Corruption, idx),
            with_penalty.then(|| stream_rng(seed, Stream::Penalty, idx)),
        ),
        stream_rng(seed, Stream::Augment, idx),
    )
}

fn level_dir(out: &Path, level: ScaleLevel) -> PathBuf {
    out.join(format!("level{}_{}", level.index(), level.name()))
}

/// Runs every configured level in order: transfer, per-epoch complexity
/// estimate, adaptive batches of corrupted teacher-forced samples, Adam
/// updates and a best-loss checkpoint per level.
pub fn curriculum_train(
    cfg: &RunConfig,
    vocab: &Vocab,
    mut opts: TrainOptions<'_>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let t = &cfg.training;
    let out = &t.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join("train_log.jsonl");
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut prev: Option<ParamStore> = opts.init.cloned();
    let mut last_good: Option<PathBuf> = None;
    let mut global_epoch = 0usize;
    let mut outcomes = Vec::new();
    let mut lr = t.lr;

    for plan in &t.levels {
        let level = plan.level;
        let spec = model_spec(cfg, level, vocab);
        let mut fresh =
            spec.init_params(&mut stream_rng(t.seed, Stream::Init, level.index() as u64));
        fresh.round_to_f32();
        let (mut params, report) = match &prev {
            Some(p) => transfer_weights(p, fresh),
            None => {
                let names = fresh.names().map(str::to_string).collect();
                (
                    fresh,
                    TransferReport {
                        initialized: names,
                        ..TransferReport::default()
                    },
                )
            }
        };
        if let Some(hook) = opts.on_level_start.as_mut() {
            hook(level, &params, &report);
        }
        log::info!(
            "level {level}: {} parameters copied, {} initialized",
            report.copied.len(),
            report.initialized.len()
        );
        let samples = level_samples(cfg, vocab, level, plan.samples, train_seed(t.seed, level))?;
        if samples.is_empty() {
            return Err(Error::Config(format!(
                "level {level} has no training samples"
            )));
        }
        let batch = adaptive_batch_size(t.batch_b0, t.batch_gamma, level.index() - 1, t.batch_min)?;
        let mut opt = Adam::new(lr, t.adam_beta1, t.adam_beta2, t.adam_eps);
        let dir = level_dir(out, level);
        let mut best: Option<(f64, ParamStore, f64, f64)> = None;
        let mut records = Vec::new();

        for epoch in 0..plan.epochs {
            let c_level = level_complexity(&params, &spec, &samples, t.complexity_probe)?;
            let step = StepContext {
                cfg,
                spec: &spec,
                vocab,
                c_level,
                c_target: c_target(plan),
                epoch: global_epoch as f64,
                curriculum_alpha: curriculum_alpha(cfg, epoch, plan.epochs),
            };
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.shuffle(&mut stream_rng(
                t.seed,
                Stream::Shuffle,
                ((level.index() as u64) << 32) | epoch as u64,
            ));
            let mut sum = LossParts::default();
            let diverged = |e: Error| match e {
                Error::Numeric(_) => Error::Divergence {
                    level: level.index(),
                    epoch,
                    last_good: last_good.clone(),
                },
                other => other,
            };
            for chunk in order.chunks(batch) {
                params.zero_grads();
                for (k, &i) in chunk.iter().enumerate() {
                    let tape = Tape::new();
                    let (rngs, mut aug_rng) = sample_rngs(t.seed, level, epoch, i, k == 0);
                    let sample = Sample {
                        image: augment(&samples[i].image, &t.augment, &mut aug_rng),
                        ..samples[i].clone()
                    };
                    let (loss, parts) =
                        sample_loss(&tape, &params, &step, &sample, rngs).map_err(diverged)?;
                    accumulate(&mut sum, &parts);
                    let loss = tape.scale(loss, 1.0 / chunk.len() as f64);
                    tape.backward(loss)
                        .map_err(diverged)?
                        .accumulate_into(&mut params);
                }
                let norm = match t.grad_clip {
                    Some(c) => clip_grad_norm(&mut params, c),
                    None => super::optim::grad_norm(&params),
                };
                if !norm.is_finite() {
                    return Err(diverged(Error::Numeric("gradient is not finite".into())));
                }
                opt.step(&mut params);
                params.round_to_f32();
            }
            let n = samples.len() as f64;
            let rec = EpochRecord {
                level,
                epoch,
                global_epoch,
                loss: sum.total / n,
                layout: sum.layout / n,
                text: sum.text / n,
                complexity: sum.complexity / n,
                penalty: sum.penalty / n,
                c_mean: c_level,
                batch_size: batch,
                curriculum_alpha: step.curriculum_alpha,
                alpha_e: msap::warmup_alpha(&cfg.msap, step.epoch),
                lr: opt.lr,
            };
            writeln!(log, "{}", serde_json::to_string(&rec)?)
                .map_err(|e| Error::io(&log_path, e))?;
            log::info!(
                "level {level} epoch {epoch}: loss {:.4} (C_l {c_level:.3})",
                rec.loss
            );
            // Losses are compared without the ramping curriculum weight.
            let score = rec.loss / rec.curriculum_alpha.max(f64::MIN_POSITIVE);
            if best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, params.clone(), step.epoch, c_level));
                save_level(cfg, vocab, level, &params, step.epoch, c_level, &dir)?;
                last_good = Some(dir.clone());
            }
            records.push(rec);
            opt.lr *= t.lr_decay;
            global_epoch += 1;
        }
        lr = opt.lr;
        let best_loss = match best {
            Some((score, p, _, _)) => {
                prev = Some(p);
                score
            }
            None => {
                save_level(cfg, vocab, level, &params, global_epoch as f64, 0.5, &dir)?;
                last_good = Some(dir.clone());
                prev = Some(params);
                f64::NAN
            }
        };
        let rpath = dir.join("transfer.json");
        std::fs::write(&rpath, serde_json::to_string_pretty(&report)?)
            .map_err(|e| Error::io(&rpath, e))?;
        outcomes.push(LevelOutcome {
            level,
            checkpoint: dir,
            best_loss,
            transfer: report,
            records,
        });
    }
    Ok(TrainSummary {
        levels: outcomes,
        log: log_path,
    })
}

fn accumulate(sum: &mut LossParts, p: &LossParts) {
    sum.layout += p.layout;
    sum.text += p.text;
    sum.complexity += p.complexity;
    sum.penalty += p.penalty;
    sum.total += p.total;
}

#[allow(clippy::too_many_arguments)]
fn save_level(
    cfg: &RunConfig,
    vocab: &Vocab,
    level: ScaleLevel,
    params: &ParamStore,
    epoch: f64,
    c: f64,
    dir: &Path,
) -> Result<()> {
    Checkpoint {
        kind: CheckpointKind::Model,
        level,
        epoch,
        complexity: Some(c),
        config: cfg.clone(),
        vocab: vocab.clone(),
        params: params.clone(),
    }
    .save(dir)
}
