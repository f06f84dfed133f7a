use super::{check_corpus, ngram_counts, MetricError, TokenizedCaption};
use std::collections::BTreeMap;

/// Corpus-level BLEU for orders 1 through 4.
///
/// Clipped n-gram matches and candidate n-gram totals are summed over the
/// corpus before the precisions are taken. The brevity penalty compares the
/// total candidate length with the sum of closest reference lengths, where a
/// tie between two references goes to the shorter one. An order with zero
/// matches makes that and every higher BLEU zero; there is no smoothing.
pub fn bleu_all(
    cands: &[TokenizedCaption],
    refs: &[Vec<TokenizedCaption>],
) -> Result<[f64; 4], MetricError> {
    check_corpus(cands, refs)?;
    let mut correct = [0u64; 4];
    let mut guess = [0u64; 4];
    let mut cand_len = 0u64;
    let mut ref_len = 0u64;
    for (cand, rs) in cands.iter().zip(refs) {
        let len = cand.len();
        cand_len += len as u64;
        ref_len += rs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(len), l))
            .unwrap_or(0) as u64;

        let mut max_ref: BTreeMap<&[String], u32> = BTreeMap::new();
        for r in rs {
            for (gram, c) in ngram_counts(&r.tokens, 4) {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(c);
            }
        }
        for (gram, c) in ngram_counts(&cand.tokens, 4) {
            let clip = max_ref.get(gram).copied().unwrap_or(0);
            correct[gram.len() - 1] += u64::from(c.min(clip));
        }
        for (n, g) in guess.iter_mut().enumerate() {
            *g += len.saturating_sub(n) as u64;
        }
    }

    let bp = if cand_len == 0 {
        0.0
    } else if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    let mut out = [0.0; 4];
    let mut log_sum = 0.0;
    for n in 0..4 {
        if correct[n] == 0 {
            break;
        }
        log_sum += (correct[n] as f64 / guess[n] as f64).ln();
        out[n] = (log_sum / (n + 1) as f64).exp() * bp;
    }
    Ok(out)
}

/// Corpus BLEU-`n`, `n` in 1..=4.
pub fn bleu(
    cands: &[TokenizedCaption],
    refs: &[Vec<TokenizedCaption>],
    n: usize,
) -> Result<f64, MetricError> {
    if !(1..=4).contains(&n) {
        return Err(MetricError::Order(n));
    }
    Ok(bleu_all(cands, refs)?[n - 1])
}
