//! Pre-training, curriculum training and their building blocks.

pub mod augment;
pub mod ctc;
pub mod curriculum;
pub mod glyphs;
pub mod loss;
pub mod optim;
pub mod pretrain;
pub mod synth;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::vocab::Vocab;

pub use augment::{augment, AugmentConfig};
pub use ctc::{ctc_greedy, ctc_loss};
pub use curriculum::{curriculum_train, LevelOutcome, TrainSummary};
pub use loss::{composite_loss, LossParts};
pub use optim::Adam;
pub use pretrain::pretrain;
pub use synth::{generate_synthetic, SyntheticSample};

use crate::config::RunConfig;
use crate::dataset::read_manifest;
use crate::encoder::ScaleLevel;
use crate::imageio::{load_gray, to_model_input};
use crate::rng::{derive_seed, Stream};
use crate::tensor::Tensor;

/// Vocabulary of a run: the synthesis alphabet plus the line break.
pub fn vocab_for(cfg: &RunConfig) -> Result<Vocab> {
    let mut alphabet = cfg.synth.alphabet.clone();
    if !alphabet.contains('\n') {
        alphabet.push('\n');
    }
    Vocab::from_alphabet(&alphabet)
}

/// One training example in model form.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[3, H, W]` in [0, 1].
    pub image: Tensor,
    /// Label ids without start or end tokens.
    pub tokens: Vec<usize>,
    pub label: String,
}

impl Sample {
    pub fn new(image: &image::GrayImage, label: &str, vocab: &Vocab) -> Result<Self> {
        let tokens = vocab.encode(label).0;
        if tokens.is_empty() {
            return Err(Error::Contract("empty label".into()));
        }
        Ok(Sample {
            image: to_model_input(image)?,
            tokens,
            label: label.to_string(),
        })
    }
}

/// Synthetic samples for `level` plus matching manifest records.
pub fn level_samples(
    cfg: &RunConfig,
    vocab: &Vocab,
    level: ScaleLevel,
    count: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for s in generate_synthetic(&cfg.synth, level, count, seed)? {
        out.push(Sample::new(&s.image, &s.label, vocab)?);
    }
    if let Some(path) = &cfg.data.manifest {
        for r in read_manifest(path)?
            .into_iter()
            .filter(|r| r.level == level)
        {
            out.push(Sample::new(&load_gray(&r.image)?, &r.label, vocab)?);
        }
    }
    Ok(out)
}

/// Generator seed of a level's training data.
pub fn train_seed(seed: u64, level: ScaleLevel) -> u64 {
    derive_seed(seed, Stream::Synthesis, level.index() as u64)
}

/// Generator seed of a level's held-out data, disjoint from training.
pub fn heldout_seed(seed: u64, level: ScaleLevel) -> u64 {
    derive_seed(seed, Stream::Synthesis, 1000 + level.index() as u64)
}

/// `max(⌊B₀ · γ^l⌋, B_min)`.
pub fn adaptive_batch_size(b0: usize, gamma: f64, l: usize, b_min: usize) -> Result<usize> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Parameter(format!(
            "batch decay {gamma} outside (0, 1)"
        )));
    }
    if b_min == 0 || b0 < b_min {
        return Err(Error::Parameter(format!(
            "need B0 {b0} >= B_min {b_min} >= 1"
        )));
    }
    let b = (b0 as f64 * gamma.powi(l as i32)).floor() as usize;
    Ok(b.max(b_min))
}

/// Replaces each text token with probability `rate` by a different text
/// token drawn uniformly. Specials and layout tags are never touched.
pub fn teacher_force_corrupt(
    targets: &[usize],
    rate: f64,
    vocab: &Vocab,
    rng: &mut Rng,
) -> Vec<usize> {
    let text: Vec<usize> = (0..vocab.len()).filter(|&i| vocab.is_text(i)).collect();
    if rate <= 0.0 || text.len() < 2 {
        return targets.to_vec();
    }
    targets
        .iter()
        .map(|&id| {
            if !vocab.is_text(id) || rng.gen::<f64>() >= rate {
                return id;
            }
            let pos = text.iter().position(|&t| t == id);
            let n = text.len() - usize::from(pos.is_some());
            let mut k = rng.gen_range(0..n);
            if let Some(p) = pos {
                if k >= p {
                    k += 1;
                }
            }
            text[k]
        })
        .collect()
}

/// Which parameters a transfer copied and which it left freshly initialized.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferReport {
    pub copied: Vec<String>,
    pub initialized: Vec<String>,
    /// Source parameters with no shape-compatible destination.
    pub dropped: Vec<String>,
}

/// Copies every parameter of `prev` whose name and shape exist in `fresh`.
pub fn transfer_weights(prev: &ParamStore, fresh: ParamStore) -> (ParamStore, TransferReport) {
    let mut out = fresh;
    let mut report = TransferReport::default();
    let names: Vec<String> = out.names().map(str::to_string).collect();
    for name in names {
        match prev.get(&name) {
            Some(src) if src.shape() == out.get(&name).expect("present").shape() => {
                out.insert(name.clone(), src.clone());
                report.copied.push(name);
            }
            _ => report.initialized.push(name),
        }
    }
    report.dropped = prev
        .names()
        .filter(|n| !report.copied.iter().any(|c| c == n))
        .map(str::to_string)
        .collect();
    (out, report)
}
