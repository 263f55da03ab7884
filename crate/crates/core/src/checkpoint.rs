//! Checkpoints: a directory holding `manifest.json` (configuration,
//! vocabulary, tensor index) and `params.bin` (little-endian f32 values).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::encoder::ScaleLevel;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::vocab::Vocab;

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "params.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Encoder plus temporary CTC head.
    Pretrain,
    /// Full recognizer.
    Model,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in values.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub kind: CheckpointKind,
    pub level: ScaleLevel,
    /// Training epochs completed so far (drives the encoding warmup).
    pub epoch: f64,
    /// Last per-epoch complexity estimate, if any.
    pub complexity: Option<f64>,
    pub config: RunConfig,
    pub vocab: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub level: ScaleLevel,
    pub epoch: f64,
    pub complexity: Option<f64>,
    pub config: RunConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            model: self.config.model.clone(),
            msap: self.config.msap.clone(),
            level: self.level,
            vocab_size: self.vocab.len(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blob = Vec::with_capacity(self.params.count() * 4);
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for (name, t) in self.params.iter() {
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            for &v in t.data() {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
            offset += t.numel();
        }
        let manifest = Manifest {
            format: FORMAT_VERSION,
            kind: self.kind,
            level: self.level,
            epoch: self.epoch,
            complexity: self.complexity,
            config: self.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
            tensors,
        };
        write_atomic(&dir.join(BLOB), &blob)?;
        write_atomic(
            &dir.join(MANIFEST),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported checkpoint format {}",
                m.format
            )));
        }
        m.config.validate()?;
        let bpath = dir.join(BLOB);
        let blob = std::fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        if blob.len() % 4 != 0 {
            return Err(Error::Schema(
                "parameter blob length is not a multiple of 4".into(),
            ));
        }
        let values: Vec<f64> = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let mut params = ParamStore::new();
        for e in &m.tensors {
            let n: usize = e.shape.iter().product();
            let data = values.get(e.offset..e.offset + n).ok_or_else(|| {
                Error::Schema(format!("tensor `{}` extends past the blob", e.name))
            })?;
            params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data.to_vec())?);
        }
        Ok(Checkpoint {
            kind: m.kind,
            level: m.level,
            epoch: m.epoch,
            complexity: m.complexity,
            config: m.config,
            vocab: Vocab::from_tokens(m.vocab)?,
            params,
        })
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp: PathBuf = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn save_load_round_trip_is_exact_for_f32_values() {
        let mut cfg = RunConfig::default();
        cfg.model.d_model = 16;
        cfg.model.num_layers = 1;
        let vocab = Vocab::from_alphabet("01\n").unwrap();
        let spec = ModelSpec {
            model: cfg.model.clone(),
            msap: cfg.msap.clone(),
            level: ScaleLevel::Line,
            vocab_size: vocab.len(),
        };
        let mut params = spec.init_params(&mut stream_rng(0, Stream::Init, 0));
        params.round_to_f32();
        let ck = Checkpoint {
            kind: CheckpointKind::Model,
            level: ScaleLevel::Line,
            epoch: 3.0,
            complexity: Some(0.25),
            config: cfg,
            vocab,
            params,
        };
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn missing_checkpoint_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            Checkpoint::load(&dir.path().join("none")),
            Err(Error::Io { .. })
        ));
    }
}
