use super::{check_corpus, MetricError, TokenizedCaption};

pub const ROUGE_BETA: f64 = 1.2;

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L of one candidate. Precision and recall are maximised over the
/// references independently, then combined as
/// `(1 + β²)·P·R / (R + β²·P)`.
pub fn rouge_l_pair(cand: &TokenizedCaption, refs: &[TokenizedCaption]) -> f64 {
    let mut p_max: f64 = 0.0;
    let mut r_max: f64 = 0.0;
    for r in refs {
        let l = lcs(&cand.tokens, &r.tokens) as f64;
        if !cand.is_empty() {
            p_max = p_max.max(l / cand.len() as f64);
        }
        if !r.is_empty() {
            r_max = r_max.max(l / r.len() as f64);
        }
    }
    if p_max == 0.0 || r_max == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p_max * r_max / (r_max + b2 * p_max)
}

/// Mean ROUGE-L over candidates.
pub fn rouge_l(
    cands: &[TokenizedCaption],
    refs: &[Vec<TokenizedCaption>],
) -> Result<f64, MetricError> {
    check_corpus(cands, refs)?;
    let sum: f64 = cands.iter().zip(refs).map(|(c, r)| rouge_l_pair(c, r)).sum();
    Ok(sum / cands.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tokenize;

    #[test]
    fn lcs_cases() {
        let a = tokenize("a b c d e").tokens;
        let b = tokenize("a c e f").tokens;
        assert_eq!(lcs(&a, &b), 3);
        assert_eq!(lcs(&a, &[]), 0);
    }

    #[test]
    fn identical_and_disjoint() {
        let c = tokenize("two dogs play in the snow");
        assert!((rouge_l_pair(&c, &[c.clone()]) - 1.0).abs() < 1e-12);
        assert_eq!(rouge_l_pair(&c, &[tokenize("a red bus")]), 0.0);
    }

    #[test]
    fn hand_value() {
        // LCS 2, P = 2/3, R = 2/4
        let got = rouge_l_pair(&tokenize("a b c"), &[tokenize("a x b y")]);
        let (p, r, b2) = (2.0 / 3.0, 0.5, 1.44);
        assert!((got - (1.0 + b2) * p * r / (r + b2 * p)).abs() < 1e-12);
    }
}
