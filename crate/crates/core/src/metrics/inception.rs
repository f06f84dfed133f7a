use serde::{Deserialize, Serialize};

use super::{neumaier_sum, MetricError};
use crate::sampling::Sampler;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InceptionScore {
    pub mean: f64,
    /// Population standard deviation over splits.
    pub sd: f64,
}

const ROW_SUM_TOLERANCE: f64 = 1e-6;

fn split_score(probs: &[Vec<f64>], rows: &[usize], classes: usize) -> f64 {
    let marginal: Vec<f64> = (0..classes)
        .map(|j| neumaier_sum(rows.iter().map(|&i| probs[i][j])) / rows.len() as f64)
        .collect();
    let kl = rows.iter().map(|&i| {
        neumaier_sum(probs[i].iter().zip(&marginal).map(|(&p, &q)| {
            if p == 0.0 || p == q {
                0.0
            } else {
                p * (p.ln() - q.ln())
            }
        }))
    });
    (neumaier_sum(kl) / rows.len() as f64).exp()
}

/// Inception Score of a class-probability matrix.
///
/// Rows are partitioned into `splits` groups whose sizes differ by at most
/// one: in input order when `seed` is `None`, after a seeded shuffle
/// otherwise. Each group scores `exp(mean KL(row ‖ group marginal))`; rows are
/// visited in ascending index order inside a group, so one split reproduces
/// the unsplit score exactly.
pub fn inception_score(
    probs: &[Vec<f64>],
    splits: usize,
    seed: Option<u64>,
) -> Result<InceptionScore, MetricError> {
    if probs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if splits == 0 || splits > probs.len() {
        return Err(MetricError::Splits {
            rows: probs.len(),
            splits,
        });
    }
    let classes = probs[0].len();
    for (i, row) in probs.iter().enumerate() {
        if row.len() != classes {
            return Err(MetricError::RowLength(i, row.len(), classes));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite("probabilities"));
        }
        if row.iter().any(|&v| v < 0.0) {
            return Err(MetricError::NegativeProbability(i));
        }
        let sum = neumaier_sum(row.iter().copied());
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(MetricError::NotDistribution { row: i, sum });
        }
    }

    let mut order: Vec<usize> = (0..probs.len()).collect();
    if let Some(seed) = seed {
        Sampler::new(seed).shuffle(&mut order);
    }
    let (base, extra) = (probs.len() / splits, probs.len() % splits);
    let mut scores = Vec::with_capacity(splits);
    let mut start = 0;
    for s in 0..splits {
        let len = base + usize::from(s < extra);
        let mut rows = order[start..start + len].to_vec();
        rows.sort_unstable();
        scores.push(split_score(probs, &rows, classes));
        start += len;
    }
    let mean = neumaier_sum(scores.iter().copied()) / splits as f64;
    let var = neumaier_sum(scores.iter().map(|s| (s - mean) * (s - mean))) / splits as f64;
    Ok(InceptionScore {
        mean,
        sd: var.sqrt(),
    })
}
