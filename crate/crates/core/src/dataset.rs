//! Dataset manifests: one JSON object per line with `image`, `label` and
//! `level`. Relative image paths resolve against the manifest's directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::SynthConfig;
use crate::encoder::ScaleLevel;
use crate::error::{Error, Result};
use crate::imageio::save_png;
use crate::training::synth::generate_synthetic;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image: PathBuf,
    pub label: String,
    pub level: ScaleLevel,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut r: ManifestRecord = serde_json::from_str(l)
                .map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), i + 1)))?;
            if r.image.is_relative() {
                r.image = base.join(&r.image);
            }
            Ok(r)
        })
        .collect()
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").expect("write to vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Renders `count` synthetic samples into `dir/images` and writes
/// `dir/manifest.jsonl` with paths relative to `dir`.
pub fn export_synthetic(
    cfg: &SynthConfig,
    level: ScaleLevel,
    count: usize,
    seed: u64,
    dir: &Path,
) -> Result<Vec<ManifestRecord>> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut records = Vec::with_capacity(count);
    for (i, s) in generate_synthetic(cfg, level, count, seed)?
        .into_iter()
        .enumerate()
    {
        let rel = PathBuf::from("images").join(format!("{i:05}.png"));
        save_png(&s.image, &dir.join(&rel))?;
        records.push(ManifestRecord {
            image: rel,
            label: s.label,
            level,
        });
    }
    write_manifest(&dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let recs = vec![ManifestRecord {
            image: "00000.png".into(),
            label: "<D><P><S><B>1\n2</B></S></P></D>".into(),
            level: ScaleLevel::Paragraph,
        }];
        write_manifest(&p, &recs).unwrap();
        let back = read_manifest(&p).unwrap();
        assert_eq!(back[0].image, dir.path().join("00000.png"));
        assert_eq!(back[0].label, recs[0].label);
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(
            &p,
            "{\"image\":\"a\",\"label\":\"x\",\"level\":\"line\"}\n{oops\n",
        )
        .unwrap();
        let err = read_manifest(&p).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }
}
