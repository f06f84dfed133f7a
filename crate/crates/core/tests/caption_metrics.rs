use std::collections::HashMap;

use proptest::prelude::*;
use serde::Deserialize;
use unirag_core::metrics::{
    bleu_all, caption_report, cider_d, rouge_l, tokenize, TokenizedCaption,
};

#[derive(Deserialize)]
struct Item {
    candidate: String,
    references: Vec<String>,
}

#[derive(Deserialize)]
struct Fixture {
    items: Vec<Item>,
    scores: HashMap<String, f64>,
}

#[derive(Deserialize)]
struct TokenCase {
    caption: String,
    tokens: Vec<String>,
}

fn fixture() -> Fixture {
    serde_json::from_str(include_str!("fixtures/caption_metrics.json")).unwrap()
}

fn tokenized(f: &Fixture) -> (Vec<TokenizedCaption>, Vec<Vec<TokenizedCaption>>) {
    let cands = f.items.iter().map(|i| tokenize(&i.candidate)).collect();
    let refs = f
        .items
        .iter()
        .map(|i| i.references.iter().map(|r| tokenize(r)).collect())
        .collect();
    (cands, refs)
}

#[test]
fn tokenizer_matches_reference_tokens() {
    let cases: Vec<TokenCase> =
        serde_json::from_str(include_str!("fixtures/tokenizer.json")).unwrap();
    assert_eq!(cases.len(), 20);
    for c in cases {
        assert_eq!(tokenize(&c.caption).tokens, c.tokens, "{}", c.caption);
    }
}

#[test]
fn fixture_scores_match_reference_scorer() {
    let f = fixture();
    let (cands, refs) = tokenized(&f);
    let report = caption_report(&cands, &refs).unwrap();
    for (name, tol) in [
        ("bleu1", 1e-4),
        ("bleu2", 1e-4),
        ("bleu3", 1e-4),
        ("bleu4", 1e-4),
        ("rouge_l", 1e-4),
        ("cider", 1e-3),
    ] {
        let got = report.get(name).unwrap();
        let want = f.scores[name];
        assert!((got - want).abs() <= tol, "{name}: {got} vs {want}");
    }
}

#[test]
fn cider_two_image_hand_value() {
    // ln(2) idf zeroes `a` (present in both images); `b`, `c` and the bigrams
    // each get weight ln 2. The first reference matches exactly (cosine 1 at
    // n = 1, 2), the second shares only the zero-weight `a`.
    let cands = [tokenize("a b"), tokenize("a d")];
    let refs = [
        vec![tokenize("a b"), tokenize("a c")],
        vec![tokenize("a d")],
    ];
    let per = unirag_core::metrics::cider_d_per_image(&cands, &refs).unwrap();
    assert!((per[0] - 2.5).abs() < 1e-12, "{}", per[0]);
    assert!((per[1] - 5.0).abs() < 1e-12, "{}", per[1]);
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<String, f64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            *m.entry(tokens[i..i + n].join(" ")).or_insert(0.0) += 1.0;
        }
    }
    m
}

/// Direct transcription of the CIDEr-D definition with string-keyed maps.
fn cider_oracle(cands: &[TokenizedCaption], refs: &[Vec<TokenizedCaption>]) -> f64 {
    let images = refs.len() as f64;
    let mut total = 0.0;
    for (c, rs) in cands.iter().zip(refs) {
        let mut per_n = 0.0;
        for n in 1..=4 {
            let df = |g: &str| {
                refs.iter()
                    .filter(|rs| rs.iter().any(|r| ngrams(&r.tokens, n).contains_key(g)))
                    .count() as f64
            };
            let vec = |t: &TokenizedCaption| -> HashMap<String, f64> {
                ngrams(&t.tokens, n)
                    .into_iter()
                    .map(|(g, tf)| {
                        let w = tf * (images.ln() - df(&g).max(1.0).ln());
                        (g, w)
                    })
                    .collect()
            };
            let norm = |v: &HashMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
            let h = vec(c);
            let bigrams = |t: &TokenizedCaption| t.len().saturating_sub(1) as f64;
            for r in rs {
                let rv = vec(r);
                let mut s: f64 = h
                    .iter()
                    .map(|(g, &x)| {
                        let y = rv.get(g).copied().unwrap_or(0.0);
                        x.min(y) * y
                    })
                    .sum();
                let (nh, nr) = (norm(&h), norm(&rv));
                if nh != 0.0 && nr != 0.0 {
                    s /= nh * nr;
                }
                let delta = bigrams(c) - bigrams(r);
                per_n += s * (-(delta * delta) / 72.0).exp();
            }
        }
        total += per_n / 4.0 / rs.len() as f64 * 10.0;
    }
    total / cands.len() as f64
}

#[test]
fn cider_matches_direct_oracle_on_fixture_slice() {
    let f = fixture();
    let (cands, refs) = tokenized(&f);
    let (c, r) = (&cands[..25], &refs[..25]);
    let got = cider_d(c, r).unwrap();
    let want = cider_oracle(c, r);
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

#[test]
fn self_reference_can_lower_bleu() {
    // The first candidate is fully matched by its 4-token reference, but the
    // tie between lengths 2 and 4 resolves to 2. Adding the candidate raises
    // the closest length to 3 and with it the corpus brevity penalty.
    let cands = [tokenize("a b c"), tokenize("a")];
    let refs = vec![
        vec![tokenize("x y"), tokenize("a b c d")],
        vec![tokenize("a b c d e f")],
    ];
    let mut boosted = refs.clone();
    boosted[0].push(cands[0].clone());
    let before = bleu_all(&cands, &refs).unwrap()[0];
    let after = bleu_all(&cands, &boosted).unwrap()[0];
    assert!(after < before, "{after} vs {before}");
}

fn caption_strategy() -> impl Strategy<Value = TokenizedCaption> {
    proptest::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]), 1..7)
        .prop_map(TokenizedCaption::from_tokens)
}

fn corpus_strategy() -> impl Strategy<Value = Vec<(TokenizedCaption, Vec<TokenizedCaption>)>> {
    proptest::collection::vec(
        (caption_strategy(), proptest::collection::vec(caption_strategy(), 1..4)),
        2..8,
    )
}

/// References are never shorter than their candidate.
fn long_ref_corpus_strategy() -> impl Strategy<Value = Vec<(TokenizedCaption, Vec<TokenizedCaption>)>> {
    let words = || prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]);
    let item = (1usize..6).prop_flat_map(move |l| {
        (
            proptest::collection::vec(words(), l).prop_map(TokenizedCaption::from_tokens),
            proptest::collection::vec(
                proptest::collection::vec(words(), l..l + 4).prop_map(TokenizedCaption::from_tokens),
                1..4,
            ),
        )
    });
    proptest::collection::vec(item, 2..8)
}

fn split(
    corpus: &[(TokenizedCaption, Vec<TokenizedCaption>)],
) -> (Vec<TokenizedCaption>, Vec<Vec<TokenizedCaption>>) {
    corpus.iter().cloned().unzip()
}

proptest! {
    #[test]
    fn scores_ignore_caption_order(corpus in corpus_strategy(), seed in any::<u64>()) {
        let (c1, r1) = split(&corpus);
        let mut shuffled = corpus.clone();
        unirag_core::sampling::Sampler::new(seed).shuffle(&mut shuffled);
        let (c2, r2) = split(&shuffled);
        prop_assert_eq!(bleu_all(&c1, &r1).unwrap(), bleu_all(&c2, &r2).unwrap());
        let (a, b) = (cider_d(&c1, &r1).unwrap(), cider_d(&c2, &r2).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
        let (a, b) = (rouge_l(&c1, &r1).unwrap(), rouge_l(&c2, &r2).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
    }

    // Holds whenever no candidate is longer than its closest reference;
    // `self_reference_can_lower_bleu` shows the exception.
    #[test]
    fn adding_candidate_to_refs_never_lowers_bleu(corpus in long_ref_corpus_strategy()) {
        let (cands, refs) = split(&corpus);
        let before = bleu_all(&cands, &refs).unwrap();
        let boosted: Vec<Vec<TokenizedCaption>> = cands
            .iter()
            .zip(&refs)
            .map(|(c, r)| {
                let mut r = r.clone();
                r.push(c.clone());
                r
            })
            .collect();
        let after = bleu_all(&cands, &boosted).unwrap();
        for n in 0..4 {
            prop_assert!(after[n] >= before[n] - 1e-12, "n={} {} < {}", n + 1, after[n], before[n]);
        }
    }

    #[test]
    fn cider_matches_oracle(corpus in corpus_strategy()) {
        let (cands, refs) = split(&corpus);
        let got = cider_d(&cands, &refs).unwrap();
        let want = cider_oracle(&cands, &refs);
        prop_assert!((got - want).abs() < 1e-9, "{} vs {}", got, want);
    }
}
