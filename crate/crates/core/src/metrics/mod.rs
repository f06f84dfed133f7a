//! Caption metrics over tokenized text and image metrics over precomputed
//! feature vectors.

mod bleu;
mod cider;
mod clip;
mod fid;
mod inception;
mod rouge;
mod tokenize;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{bleu, bleu_all};
pub use cider::{cider_d, cider_d_per_image, CIDER_SIGMA};
pub use clip::{clip_score, CLIP_SCORE_W};
pub use fid::{feature_stats, fid, FeatureStats};
pub use inception::{inception_score, InceptionScore};
pub use rouge::{rouge_l, rouge_l_pair, ROUGE_BETA};
pub use tokenize::{tokenize, TokenizedCaption};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{cands} candidates but {refs} reference sets")]
    CountMismatch { cands: usize, refs: usize },
    #[error("candidate {0} has no references")]
    NoReferences(usize),
    #[error("n-gram order must be 1..=4, got {0}")]
    Order(usize),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    Dim(usize, usize),
    #[error("row {0} has length {1}, expected {2}")]
    RowLength(usize, usize, usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("row {row} sums to {sum}, not 1")]
    NotDistribution { row: usize, sum: f64 },
    #[error("row {0} has a negative entry")]
    NegativeProbability(usize),
    #[error("cannot split {rows} rows into {splits} splits")]
    Splits { rows: usize, splits: usize },
    #[error("vector {0} has zero norm")]
    ZeroVector(usize),
}

fn check_corpus<C, R>(cands: &[C], refs: &[Vec<R>]) -> Result<(), MetricError> {
    if cands.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if cands.len() != refs.len() {
        return Err(MetricError::CountMismatch {
            cands: cands.len(),
            refs: refs.len(),
        });
    }
    if let Some(i) = refs.iter().position(|r| r.is_empty()) {
        return Err(MetricError::NoReferences(i));
    }
    Ok(())
}

/// N-gram counts of orders `1..=max_n`, ordered so reductions are deterministic.
fn ngram_counts(tokens: &[String], max_n: usize) -> BTreeMap<&[String], u32> {
    let mut counts = BTreeMap::new();
    for n in 1..=max_n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Metric name to value. Inception Score contributes `is` and `is_sd`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricReport {
    pub values: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        self.values.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn all_finite(&self) -> bool {
        self.values.values().all(|v| v.is_finite())
    }
}

/// BLEU-1..4, ROUGE-L and CIDEr-D under the names `bleu1`..`bleu4`, `rouge_l`,
/// `cider`.
pub fn caption_report(
    cands: &[TokenizedCaption],
    refs: &[Vec<TokenizedCaption>],
) -> Result<MetricReport, MetricError> {
    let mut report = MetricReport::default();
    for (i, b) in bleu_all(cands, refs)?.into_iter().enumerate() {
        report.insert(format!("bleu{}", i + 1), b);
    }
    report.insert("rouge_l", rouge_l(cands, refs)?);
    report.insert("cider", cider_d(cands, refs)?);
    Ok(report)
}

/// Compensated (Neumaier) summation.
pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
