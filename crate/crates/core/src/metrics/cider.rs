use std::collections::{BTreeMap, BTreeSet};

use super::{check_corpus, ngram_counts, MetricError, TokenizedCaption};

/// Width of the Gaussian length penalty.
pub const CIDER_SIGMA: f64 = 6.0;

struct Vectors<'a> {
    weights: [BTreeMap<&'a [String], f64>; 4],
    norms: [f64; 4],
    /// Bigram count, the length used by the penalty.
    length: i64,
}

fn vectorize<'a>(
    tokens: &'a [String],
    df: &BTreeMap<&[String], u32>,
    log_images: f64,
) -> Vectors<'a> {
    let mut weights: [BTreeMap<&[String], f64>; 4] = Default::default();
    let mut norms = [0.0; 4];
    let mut length = 0;
    for (gram, tf) in ngram_counts(tokens, 4) {
        let n = gram.len() - 1;
        let d = f64::from(df.get(gram).copied().unwrap_or(0).max(1)).ln();
        let w = f64::from(tf) * (log_images - d);
        weights[n].insert(gram, w);
        norms[n] += w * w;
        if n == 1 {
            length += i64::from(tf);
        }
    }
    for v in &mut norms {
        *v = v.sqrt();
    }
    Vectors {
        weights,
        norms,
        length,
    }
}

fn similarity(hyp: &Vectors, reference: &Vectors) -> [f64; 4] {
    let delta = (hyp.length - reference.length) as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut out = [0.0; 4];
    for n in 0..4 {
        let mut v = 0.0;
        for (gram, &h) in &hyp.weights[n] {
            let r = reference.weights[n].get(gram).copied().unwrap_or(0.0);
            v += h.min(r) * r;
        }
        if hyp.norms[n] != 0.0 && reference.norms[n] != 0.0 {
            v /= hyp.norms[n] * reference.norms[n];
        }
        out[n] = v * penalty;
    }
    out
}

/// CIDEr-D score of every candidate.
///
/// Document frequency of an n-gram is the number of images whose reference set
/// contains it; the idf term is `ln(images) - ln(max(1, df))`. Each candidate
/// scores `10 · mean_n(Σ_refs sim_n) / refs`, with clipped tf-idf cosine
/// similarity and a Gaussian penalty on the bigram-count difference.
pub fn cider_d_per_image(
    cands: &[TokenizedCaption],
    refs: &[Vec<TokenizedCaption>],
) -> Result<Vec<f64>, MetricError> {
    check_corpus(cands, refs)?;
    let mut df: BTreeMap<&[String], u32> = BTreeMap::new();
    for rs in refs {
        let grams: BTreeSet<&[String]> = rs
            .iter()
            .flat_map(|r| ngram_counts(&r.tokens, 4).into_keys())
            .collect();
        for g in grams {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_images = (refs.len() as f64).ln();
    Ok(cands
        .iter()
        .zip(refs)
        .map(|(c, rs)| {
            let hyp = vectorize(&c.tokens, &df, log_images);
            let mut sum = [0.0; 4];
            for r in rs {
                let reference = vectorize(&r.tokens, &df, log_images);
                for (s, v) in sum.iter_mut().zip(similarity(&hyp, &reference)) {
                    *s += v;
                }
            }
            sum.iter().sum::<f64>() / 4.0 / rs.len() as f64 * 10.0
        })
        .collect())
}

/// Mean CIDEr-D over candidates (tables usually report this ×100).
pub fn cider_d(
    cands: &[TokenizedCaption],
    refs: &[Vec<TokenizedCaption>],
) -> Result<f64, MetricError> {
    let per = cider_d_per_image(cands, refs)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}
