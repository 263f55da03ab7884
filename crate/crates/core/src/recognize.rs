//! Inference and corpus evaluation with a trained checkpoint.

use image::GrayImage;

use crate::checkpoint::Checkpoint;
use crate::dataset::ManifestRecord;
use crate::error::Result;
use crate::imageio::{load_gray, to_model_input};
use crate::metrics::{evaluate, EvalSample, MetricTotals};
use crate::model::recognize;
use crate::vocab::TokenSequence;

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Decoded tagged string (end token dropped).
    pub text: String,
    pub tokens: TokenSequence,
    pub truncated: bool,
    pub complexity: f64,
}

pub fn predict(ck: &Checkpoint, image: &GrayImage) -> Result<Prediction> {
    let x = to_model_input(image)?;
    let r = recognize(&ck.params, &ck.spec(), &x, ck.epoch)?;
    Ok(Prediction {
        text: ck.vocab.decode(&r.output.tokens),
        tokens: r.output.tokens,
        truncated: r.output.truncated,
        complexity: r.complexity,
    })
}

/// Page-group sizes reported by evaluation.
pub const PAGE_GROUPS: [usize; 3] = [1, 2, 3];

/// Decodes every record and aggregates metric totals.
pub fn evaluate_records(
    ck: &Checkpoint,
    records: &[ManifestRecord],
) -> Result<(MetricTotals, Vec<Prediction>)> {
    let mut preds = Vec::with_capacity(records.len());
    for r in records {
        preds.push(predict(ck, &load_gray(&r.image)?)?);
    }
    let samples: Vec<EvalSample<'_>> = preds
        .iter()
        .zip(records)
        .map(|(p, r)| EvalSample {
            prediction: &p.text,
            reference: &r.label,
        })
        .collect();
    Ok((evaluate(&samples, &PAGE_GROUPS)?, preds))
}
