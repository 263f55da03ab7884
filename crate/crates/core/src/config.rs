//! Run configuration: one JSON document with `model`, `msap`, `training`,
//! `synth` and `data` sections. Every key has a default and unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::ScaleLevel;
use crate::error::{Error, Result};
use crate::training::AugmentConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub msap: MsapConfig,
    pub training: TrainingConfig,
    pub synth: SynthConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let bad = |msg: String| Err(Error::Config(msg));
        if m.num_heads == 0 || !m.d_model.is_multiple_of(m.num_heads) {
            return bad(format!(
                "model.d_model {} not divisible by model.num_heads {}",
                m.d_model, m.num_heads
            ));
        }
        if !m.d_model.is_multiple_of(4) {
            return bad(format!(
                "model.d_model {} must be divisible by 4",
                m.d_model
            ));
        }
        let low = m.octave_alpha * m.block_channels as f64;
        if !(m.octave_alpha > 0.0 && m.octave_alpha < 1.0) || low.fract() != 0.0 || low == 0.0 {
            return bad(format!(
                "model.octave_alpha {} must split model.block_channels {} into whole channels",
                m.octave_alpha, m.block_channels
            ));
        }
        if !m.block_channels.is_multiple_of(4) {
            return bad("model.block_channels must be divisible by 4".into());
        }
        if m.sparse_window == 0 || m.sparse_stride == 0 {
            return bad("model.sparse_window and model.sparse_stride must be positive".into());
        }
        if m.fusion_levels == 0 {
            return bad("model.fusion_levels must be at least 1".into());
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return bad(format!("model.dropout {} outside [0, 1)", m.dropout));
        }
        if self.synth.alphabet.is_empty() {
            return bad("synth.alphabet is empty".into());
        }
        let t = &self.training;
        if !(t.batch_gamma > 0.0 && t.batch_gamma < 1.0) {
            return bad(format!(
                "training.batch_gamma {} outside (0, 1)",
                t.batch_gamma
            ));
        }
        if t.batch_min == 0 || t.batch_b0 < t.batch_min {
            return bad("training.batch_b0 must be >= training.batch_min >= 1".into());
        }
        if !(0.0..=1.0).contains(&t.corruption_rate) {
            return bad("training.corruption_rate outside [0, 1]".into());
        }
        if t.levels.is_empty() {
            return bad("training.levels is empty".into());
        }
        for w in t.levels.windows(2) {
            if w[1].level.index() <= w[0].level.index() {
                return bad("training.levels must be strictly increasing".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Output channels of the three stride-2 stem stages.
    pub stem_channels: [usize; 3],
    /// Channel width of encoder blocks 1–4.
    pub block_channels: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_hidden: usize,
    /// Memory slots per memory-augmented head; 0 disables memory.
    pub k_mem: usize,
    pub sparse_window: usize,
    /// Every position divisible by this is a global anchor.
    pub sparse_stride: usize,
    pub fusion_levels: usize,
    pub lambda_mem: f64,
    pub lambda_sparse: f64,
    pub dropout: f64,
    pub octave_alpha: f64,
    pub se_reduction: usize,
    pub norm_eps: f64,
    pub max_decode_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            stem_channels: [16, 32, 64],
            block_channels: 64,
            num_layers: 6,
            num_heads: 4,
            ffn_hidden: 256,
            k_mem: 32,
            sparse_window: 64,
            sparse_stride: 16,
            fusion_levels: 2,
            lambda_mem: 0.5,
            lambda_sparse: 0.5,
            dropout: 0.2,
            octave_alpha: 0.5,
            se_reduction: 4,
            norm_eps: 1e-5,
            max_decode_len: 256,
        }
    }
}

/// Parameters of one complexity-dependent factor
/// `base · (1 + gamma·C) / (1 + exp(delta·(C − theta)))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorParams {
    pub base: f64,
    pub gamma: f64,
    pub delta: f64,
    pub theta: f64,
}

impl Default for FactorParams {
    fn default() -> Self {
        FactorParams {
            base: 1.0,
            gamma: 0.5,
            delta: 4.0,
            theta: 0.5,
        }
    }
}

impl FactorParams {
    pub fn eval(&self, c: f64) -> f64 {
        self.base * (1.0 + self.gamma * c) / (1.0 + (self.delta * (c - self.theta)).exp())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsapConfig {
    pub phi_hidden: usize,
    pub phi_dropout: f64,
    pub warmup_alpha0: f64,
    pub warmup_gamma: f64,
    pub warmup_epochs: f64,
    pub alpha: FactorParams,
    pub beta: FactorParams,
    pub omega: FactorParams,
}

impl Default for MsapConfig {
    fn default() -> Self {
        MsapConfig {
            phi_hidden: 128,
            phi_dropout: 0.2,
            warmup_alpha0: 0.1,
            warmup_gamma: 0.5,
            warmup_epochs: 150.0,
            alpha: FactorParams::default(),
            beta: FactorParams::default(),
            omega: FactorParams::default(),
        }
    }
}

/// Epochs and sample count for one curriculum level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelPlan {
    pub level: ScaleLevel,
    pub epochs: usize,
    pub samples: usize,
    /// Complexity target; defaults to (l − 1) / 4.
    #[serde(default)]
    pub c_target: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub layout: FactorParams,
    pub text: FactorParams,
    pub lambda_c: f64,
    pub lambda_reg: f64,
    /// Pixels probed per sample for the finite-difference gradient penalty.
    pub penalty_pixels: usize,
    pub penalty_step: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            layout: FactorParams::default(),
            text: FactorParams::default(),
            lambda_c: 0.1,
            lambda_reg: 0.01,
            penalty_pixels: 64,
            penalty_step: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub seed: u64,
    pub levels: Vec<LevelPlan>,
    pub pretrain_epochs: usize,
    pub pretrain_samples: usize,
    pub pretrain_batch: usize,
    pub lr: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: Option<f64>,
    pub batch_b0: usize,
    pub batch_gamma: f64,
    pub batch_min: usize,
    pub corruption_rate: f64,
    pub curriculum_alpha_start: f64,
    pub curriculum_alpha_end: f64,
    /// Samples used for the per-epoch complexity estimate.
    pub complexity_probe: usize,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub output_dir: PathBuf,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let plan = |level, epochs, samples| LevelPlan {
            level,
            epochs,
            samples,
            c_target: None,
        };
        TrainingConfig {
            seed: 0,
            levels: vec![
                plan(ScaleLevel::Line, 20, 200),
                plan(ScaleLevel::Paragraph, 10, 100),
                plan(ScaleLevel::SinglePage, 10, 50),
                plan(ScaleLevel::DoublePage, 5, 20),
                plan(ScaleLevel::TriplePage, 5, 10),
            ],
            pretrain_epochs: 10,
            pretrain_samples: 200,
            pretrain_batch: 8,
            lr: 1e-3,
            lr_decay: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: Some(5.0),
            batch_b0: 16,
            batch_gamma: 0.5,
            batch_min: 2,
            corruption_rate: 0.2,
            curriculum_alpha_start: 0.5,
            curriculum_alpha_end: 1.0,
            complexity_probe: 8,
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Characters drawn into labels; each must have a built-in glyph.
    pub alphabet: String,
    pub min_chars: usize,
    pub max_chars: usize,
    /// Maximum horizontal shear (fraction of glyph height).
    pub slant: f64,
    pub stroke_min: f64,
    pub stroke_max: f64,
    /// Maximum vertical baseline offset in pixels.
    pub jitter: f64,
    pub spacing_min: f64,
    pub spacing_max: f64,
    /// Probability of flipping a background pixel to ink.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            alphabet: "0123456789".into(),
            min_chars: 3,
            max_chars: 8,
            slant: 0.2,
            stroke_min: 1.2,
            stroke_max: 2.0,
            jitter: 1.5,
            spacing_min: 1.0,
            spacing_max: 3.0,
            noise: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Optional dataset manifest (JSON lines) mixed with synthetic samples.
    pub manifest: Option<PathBuf>,
    /// Held-out samples generated per level for validation.
    pub heldout: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let err = RunConfig::from_json(r#"{"model": {"d_modle": 64}}"#).unwrap_err();
        assert!(err.to_string().contains("d_modle"), "{err}");
    }

    #[test]
    fn factor_midpoint() {
        let f = FactorParams {
            base: 2.0,
            gamma: 0.5,
            delta: 7.0,
            theta: 0.3,
        };
        assert!((f.eval(0.3) - 2.0 * 1.15 / 2.0).abs() < 1e-15);
    }
}
