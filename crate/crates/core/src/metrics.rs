//! Text, page-group and layout metrics.
//!
//! Every rate is micro-averaged: total edit distance over total reference
//! length. Reports keep the raw totals so shards can be merged exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{
    graph_edit_distance, layout_tokens_from_str, DocumentGraph, GedMode, LayoutToken, NodeKind,
};

/// Classic insert/delete/substitute edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = diag + usize::from(x != y);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[b.len()]
}

pub fn levenshtein_str(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein(&a, &b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Char,
    Word,
    Sentence,
    Paragraph,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Char, Level::Word, Level::Sentence, Level::Paragraph];
}

/// Removes layout tags, keeping text in order.
pub fn strip_layout(text: &str) -> String {
    layout_tokens_from_str(text)
        .into_iter()
        .filter_map(|t| match t {
            LayoutToken::Text(s) => Some(s),
            _ => None,
        })
        .collect()
}

/// Units compared at `level`: characters; whitespace-separated words;
/// non-empty lines; blank-line-separated paragraphs.
pub fn tokenize(text: &str, level: Level) -> Vec<String> {
    match level {
        Level::Char => text.chars().map(String::from).collect(),
        Level::Word => text.split_whitespace().map(String::from).collect(),
        Level::Sentence => text
            .split('\n')
            .filter(|l| !l.trim().is_empty())
            .map(String::from)
            .collect(),
        Level::Paragraph => {
            let mut out = Vec::new();
            let mut cur: Vec<&str> = Vec::new();
            for line in text.split('\n') {
                if line.trim().is_empty() {
                    if !cur.is_empty() {
                        out.push(cur.join("\n"));
                        cur.clear();
                    }
                } else {
                    cur.push(line);
                }
            }
            if !cur.is_empty() {
                out.push(cur.join("\n"));
            }
            out
        }
    }
}

/// Summed distances and reference lengths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTotals {
    pub distance: usize,
    pub length: usize,
}

impl ErrorTotals {
    pub fn add(&mut self, other: ErrorTotals) {
        self.distance += other.distance;
        self.length += other.length;
    }

    pub fn rate(&self) -> Result<f64> {
        if self.length == 0 {
            return Err(Error::UndefinedRate(
                "total reference length is zero".into(),
            ));
        }
        Ok(self.distance as f64 / self.length as f64)
    }
}

fn check_paired(preds: usize, refs: usize) -> Result<()> {
    if preds != refs {
        return Err(Error::Contract(format!(
            "{preds} predictions for {refs} references"
        )));
    }
    Ok(())
}

pub fn error_totals<S: AsRef<str>>(preds: &[S], refs: &[S], level: Level) -> Result<ErrorTotals> {
    check_paired(preds.len(), refs.len())?;
    let mut t = ErrorTotals::default();
    for (p, r) in preds.iter().zip(refs) {
        let p = tokenize(&strip_layout(p.as_ref()), level);
        let r = tokenize(&strip_layout(r.as_ref()), level);
        t.add(ErrorTotals {
            distance: levenshtein(&p, &r),
            length: r.len(),
        });
    }
    Ok(t)
}

/// Micro-averaged error rate; may exceed 1.
pub fn error_rate<S: AsRef<str>>(preds: &[S], refs: &[S], level: Level) -> Result<f64> {
    error_totals(preds, refs, level)?.rate()
}

/// Concatenates each run of `n` consecutive pages (non-overlapping).
pub fn page_groups<S: AsRef<str>>(pages: &[S], n: usize) -> Result<Vec<String>> {
    if n == 0 || !pages.len().is_multiple_of(n) {
        return Err(Error::Contract(format!(
            "{} pages cannot be grouped by {n}",
            pages.len()
        )));
    }
    Ok(pages
        .chunks(n)
        .map(|c| c.iter().map(|p| strip_layout(p.as_ref())).collect())
        .collect())
}

pub fn sper_totals<S: AsRef<str>>(preds: &[S], refs: &[S], n: usize) -> Result<ErrorTotals> {
    check_paired(preds.len(), refs.len())?;
    let p = page_groups(preds, n)?;
    let r = page_groups(refs, n)?;
    error_totals(&p, &r, Level::Char)
}

/// Character error rate over groups of `n` consecutive pages.
pub fn sper_n<S: AsRef<str>>(preds: &[S], refs: &[S], n: usize) -> Result<f64> {
    sper_totals(preds, refs, n)?.rate()
}

/// GED total and reference size (nodes plus hierarchy edges).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoerTotals {
    pub ged: usize,
    pub size: usize,
    /// Pairs too large for exact search; their GED is an upper bound.
    pub approximate_pairs: usize,
}

impl LoerTotals {
    pub fn add(&mut self, o: LoerTotals) {
        self.ged += o.ged;
        self.size += o.size;
        self.approximate_pairs += o.approximate_pairs;
    }

    pub fn rate(&self) -> Result<f64> {
        if self.size == 0 {
            return Err(Error::UndefinedRate("empty reference graphs".into()));
        }
        Ok(self.ged as f64 / self.size as f64)
    }
}

pub fn loer_totals(preds: &[DocumentGraph], refs: &[DocumentGraph]) -> Result<LoerTotals> {
    check_paired(preds.len(), refs.len())?;
    let mut t = LoerTotals::default();
    for (p, r) in preds.iter().zip(refs) {
        let g = graph_edit_distance(r, p);
        t.add(LoerTotals {
            ged: g.distance,
            size: r.len() + r.hierarchy_edge_count(),
            approximate_pairs: usize::from(g.mode == GedMode::Greedy),
        });
    }
    Ok(t)
}

/// Summed GED over summed reference node and edge counts.
pub fn loer(preds: &[DocumentGraph], refs: &[DocumentGraph]) -> Result<f64> {
    loer_totals(preds, refs)?.rate()
}

/// CER thresholds swept by the average precision.
pub const CER_THRESHOLDS: [f64; 10] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50];

/// Per-class counts behind the average precision.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    /// True positives at each threshold.
    pub tp: [usize; 10],
    pub predictions: usize,
    pub references: usize,
    pub reference_chars: usize,
}

/// One region: layout class and text.
pub type Region = (NodeKind, String);

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapCerTotals {
    pub classes: BTreeMap<String, ClassCounts>,
}

impl MapCerTotals {
    pub fn add(&mut self, o: &MapCerTotals) {
        for (k, c) in &o.classes {
            let e = self.classes.entry(k.clone()).or_default();
            for (a, b) in e.tp.iter_mut().zip(c.tp) {
                *a += b;
            }
            e.predictions += c.predictions;
            e.references += c.references;
            e.reference_chars += c.reference_chars;
        }
    }

    pub fn score(&self) -> Result<f64> {
        let refs: usize = self.classes.values().map(|c| c.references).sum();
        let weight: usize = self.classes.values().map(|c| c.reference_chars).sum();
        if refs == 0 || weight == 0 {
            return Err(Error::UndefinedRate("no reference regions".into()));
        }
        let mut num = 0.0;
        for c in self.classes.values() {
            num += class_ap(c) * c.reference_chars as f64;
        }
        Ok(num / weight as f64)
    }
}

/// Mean precision over the threshold sweep.
pub fn class_ap(c: &ClassCounts) -> f64 {
    if c.predictions == 0 {
        return 0.0;
    }
    c.tp.iter()
        .map(|&tp| tp as f64 / c.predictions as f64)
        .sum::<f64>()
        / CER_THRESHOLDS.len() as f64
}

fn region_cer(pred: &[char], reference: &[char]) -> f64 {
    let d = levenshtein(pred, reference);
    if reference.is_empty() {
        if d == 0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        d as f64 / reference.len() as f64
    }
}

/// Counts for one document: per class, predictions are matched to
/// references greedily by ascending CER.
pub fn map_cer_document(preds: &[Region], refs: &[Region]) -> MapCerTotals {
    let mut out = MapCerTotals::default();
    let mut kinds: Vec<NodeKind> = preds.iter().chain(refs).map(|r| r.0).collect();
    kinds.sort();
    kinds.dedup();
    for kind in kinds {
        let p: Vec<Vec<char>> = preds
            .iter()
            .filter(|r| r.0 == kind)
            .map(|r| r.1.chars().collect())
            .collect();
        let r: Vec<Vec<char>> = refs
            .iter()
            .filter(|r| r.0 == kind)
            .map(|r| r.1.chars().collect())
            .collect();
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(p.len() * r.len());
        for (i, pi) in p.iter().enumerate() {
            for (j, rj) in r.iter().enumerate() {
                pairs.push((region_cer(pi, rj), i, j));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used_p = vec![false; p.len()];
        let mut used_r = vec![false; r.len()];
        let mut counts = ClassCounts {
            predictions: p.len(),
            references: r.len(),
            reference_chars: r.iter().map(Vec::len).sum(),
            ..ClassCounts::default()
        };
        for (cer, i, j) in pairs {
            if used_p[i] || used_r[j] {
                continue;
            }
            used_p[i] = true;
            used_r[j] = true;
            for (k, &tau) in CER_THRESHOLDS.iter().enumerate() {
                if cer <= tau + 1e-12 {
                    counts.tp[k] += 1;
                }
            }
        }
        out.classes.insert(kind.letter().to_string(), counts);
    }
    out
}

pub fn map_cer_totals(preds: &[Vec<Region>], refs: &[Vec<Region>]) -> Result<MapCerTotals> {
    check_paired(preds.len(), refs.len())?;
    let mut t = MapCerTotals::default();
    for (p, r) in preds.iter().zip(refs) {
        t.add(&map_cer_document(p, r));
    }
    Ok(t)
}

/// Length-weighted mean over classes of the CER-thresholded average precision.
pub fn map_cer(preds: &[Vec<Region>], refs: &[Vec<Region>]) -> Result<f64> {
    map_cer_totals(preds, refs)?.score()
}

/// Raw totals; everything in a report is derived from these.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricTotals {
    pub samples: usize,
    pub levels: BTreeMap<String, ErrorTotals>,
    pub sper: BTreeMap<String, ErrorTotals>,
    pub loer: Option<LoerTotals>,
    pub map_cer: Option<MapCerTotals>,
}

impl MetricTotals {
    /// Page groups survive only when both sides report them, which for
    /// contiguous shards means the group boundaries line up.
    pub fn merge(&mut self, o: &MetricTotals) {
        if self.samples == 0 {
            self.sper = o.sper.clone();
        } else if o.samples > 0 {
            self.sper.retain(|k, _| o.sper.contains_key(k));
            for (k, v) in self.sper.iter_mut() {
                v.add(o.sper[k]);
            }
        }
        self.samples += o.samples;
        for (k, v) in &o.levels {
            self.levels.entry(k.clone()).or_default().add(*v);
        }
        if let Some(l) = &o.loer {
            self.loer.get_or_insert_with(LoerTotals::default).add(*l);
        }
        if let Some(m) = &o.map_cer {
            self.map_cer
                .get_or_insert_with(MapCerTotals::default)
                .add(m);
        }
    }
}

/// Evaluation report; undefined metrics are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cer: Option<f64>,
    pub wer: Option<f64>,
    pub ser: Option<f64>,
    pub per: Option<f64>,
    pub sper_n: BTreeMap<String, Option<f64>>,
    pub loer: Option<f64>,
    pub map_cer: Option<f64>,
    pub counts: MetricTotals,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn from_totals(counts: MetricTotals) -> Self {
        let mut warnings = Vec::new();
        let mut take = |name: &str, r: Option<Result<f64>>| -> Option<f64> {
            match r {
                Some(Ok(v)) => Some(v),
                Some(Err(e)) => {
                    warnings.push(format!("{name}: {e}"));
                    None
                }
                None => None,
            }
        };
        let level = |l: &str| counts.levels.get(l).map(ErrorTotals::rate);
        let cer = take("cer", level("char"));
        let wer = take("wer", level("word"));
        let ser = take("ser", level("sentence"));
        let per = take("per", level("paragraph"));
        let sper_n = counts
            .sper
            .iter()
            .map(|(k, v)| (k.clone(), take(&format!("sper_{k}"), Some(v.rate()))))
            .collect();
        let loer = take("loer", counts.loer.as_ref().map(LoerTotals::rate));
        let map_cer = take("map_cer", counts.map_cer.as_ref().map(MapCerTotals::score));
        if let Some(l) = &counts.loer {
            if l.approximate_pairs > 0 {
                warnings.push(format!(
                    "loer: {} graph pair(s) exceeded exact search; GED is an upper bound",
                    l.approximate_pairs
                ));
            }
        }
        MetricReport {
            cer,
            wer,
            ser,
            per,
            sper_n,
            loer,
            map_cer,
            counts,
            warnings,
        }
    }

    pub fn merge(&self, other: &MetricReport) -> MetricReport {
        let mut t = self.counts.clone();
        t.merge(&other.counts);
        MetricReport::from_totals(t)
    }
}

/// Prediction and reference for one evaluated document, as tagged strings.
pub struct EvalSample<'a> {
    pub prediction: &'a str,
    pub reference: &'a str,
}

/// Totals for a corpus of tagged strings. Page-group rates are computed for
/// each `n` in `page_groups` that divides the corpus size. Layout metrics
/// need parseable graphs; predictions are parsed leniently.
pub fn evaluate(samples: &[EvalSample<'_>], page_group_sizes: &[usize]) -> Result<MetricTotals> {
    use crate::layout::{parse_layout, ParseMode};
    let preds: Vec<&str> = samples.iter().map(|s| s.prediction).collect();
    let refs: Vec<&str> = samples.iter().map(|s| s.reference).collect();
    let mut t = MetricTotals {
        samples: samples.len(),
        ..MetricTotals::default()
    };
    for level in Level::ALL {
        let key = serde_json::to_value(level)?
            .as_str()
            .unwrap_or_default()
            .to_string();
        t.levels.insert(key, error_totals(&preds, &refs, level)?);
    }
    for &n in page_group_sizes {
        if n > 0 && samples.len().is_multiple_of(n) {
            t.sper.insert(n.to_string(), sper_totals(&preds, &refs, n)?);
        }
    }
    let mut pg = Vec::new();
    let mut rg = Vec::new();
    for s in samples {
        let r = parse_layout(&layout_tokens_from_str(s.reference), ParseMode::Lenient)?;
        if !r.graph.children(DocumentGraph::ROOT).is_empty() {
            let p = parse_layout(&layout_tokens_from_str(s.prediction), ParseMode::Lenient)?;
            pg.push(p.graph);
            rg.push(r.graph);
        }
    }
    if !rg.is_empty() {
        t.loer = Some(loer_totals(&pg, &rg)?);
        let pr: Vec<Vec<Region>> = pg.iter().map(DocumentGraph::regions).collect();
        let rr: Vec<Vec<Region>> = rg.iter().map(DocumentGraph::regions).collect();
        t.map_cer = Some(map_cer_totals(&pr, &rr)?);
    }
    Ok(t)
}
