//! Oracles and generators shared by integration tests (also compiled into the
//! runner's acceptance suite).
#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use unirag_core::corpus::{CandidateDoc, CandidatePool, LoadOptions, Modality, QueryRecord};
use unirag_core::pairing::{complete_pair, PairingOptions};
use unirag_core::retriever::{Index, RetrievalHit};
use unirag_core::uemb::EmbeddingStore;

pub fn gaussian(rng: &mut StdRng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

/// `n` random vectors, alternating text/image, ids `d00000`, `d00001`, ...
pub fn synthetic_store(n: usize, dim: usize, seed: u64) -> EmbeddingStore {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut store = EmbeddingStore::new(dim);
    for i in 0..n {
        let m = if i % 2 == 0 { Modality::Text } else { Modality::Image };
        store.push(format!("d{i:05}"), m, gaussian(&mut rng, dim));
    }
    store
}

/// Scores every record with a plain sequential f64 sum, sorts the full list by
/// (score desc, id asc) and keeps `k`.
pub fn exhaustive_top_k(
    store: &EmbeddingStore,
    q: &[f32],
    k: usize,
    filter: Option<Modality>,
) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = store
        .records
        .iter()
        .filter(|r| filter.is_none_or(|m| r.modality == m))
        .map(|r| {
            let mut s = 0.0f64;
            for (a, b) in r.vector.iter().zip(q) {
                s += f64::from(*a) * f64::from(*b);
            }
            (r.did.clone(), s)
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Runs `queries` random queries against a `n`×`dim` pool under several shard
/// counts. Returns the number of (query, shard count) combinations whose id
/// list differs from the exhaustive oracle.
pub fn retrieval_mismatches(n: usize, dim: usize, queries: usize, k: usize, seed: u64) -> usize {
    let store = synthetic_store(n, dim, seed);
    let index = Index::build(store.clone()).unwrap();
    let mut rng = StdRng::seed_from_u64(seed ^ 0x5eed);
    let mut bad = 0;
    for qi in 0..queries {
        let q = gaussian(&mut rng, dim);
        let filter = match qi % 3 {
            0 => None,
            1 => Some(Modality::Text),
            _ => Some(Modality::Image),
        };
        let want: Vec<String> = exhaustive_top_k(&store, &q, k, filter)
            .into_iter()
            .map(|(d, _)| d)
            .collect();
        for shards in [1, 2, 3, 7, 16] {
            let got: Vec<String> = index
                .search_sharded(&q, k, filter, shards)
                .unwrap()
                .into_iter()
                .map(|h| h.did)
                .collect();
            if got != want {
                bad += 1;
            }
        }
    }
    bad
}

/// One pair-completion case in which the original query is the nearest
/// opposite-modality neighbour of the retrieved hit. Returns true when the
/// completed pair leaks the query (by id or by payload).
pub fn pair_case_leaks(seed: u64) -> bool {
    let mut rng = StdRng::seed_from_u64(seed);
    let dim = 8;
    let caption_task = rng.random_bool(0.5);
    // Query side and hit side modalities.
    let (qm, hm) = if caption_task {
        (Modality::Image, Modality::Text)
    } else {
        (Modality::Text, Modality::Image)
    };
    let payload = |m: Modality, i: usize| match m {
        Modality::Image => format!("img/{i}.jpg"),
        Modality::Text => format!("caption number {i}"),
    };
    let doc = |m: Modality, did: String, p: String| match m {
        Modality::Image => CandidateDoc::image(did, p),
        Modality::Text => CandidateDoc::text(did, p),
    };

    let query = QueryRecord::new("q", qm, payload(qm, 0)).with_positives(["h"]);
    let hit_vec = gaussian(&mut rng, dim);
    let near = |rng: &mut StdRng, scale: f32| -> Vec<f32> {
        hit_vec.iter().map(|x| x * 1.5 + scale * rng.sample::<f32, _>(StandardNormal)).collect()
    };

    let mut docs = vec![doc(hm, "h".into(), payload(hm, 1))];
    let mut store = EmbeddingStore::new(dim);
    store.push("h", hm, hit_vec.clone());
    // The query itself, and optionally a duplicate of its payload under
    // another id, sit closest to the hit.
    let how = rng.random_range(0..3);
    if how != 1 {
        docs.push(doc(qm, "q".into(), payload(qm, 0)));
        store.push("q", qm, near(&mut rng, 0.01));
    }
    if how != 0 {
        docs.push(doc(qm, "q-dup".into(), payload(qm, 0)));
        store.push("q-dup", qm, near(&mut rng, 0.01));
    }
    let others = rng.random_range(1..6);
    for i in 0..others {
        let did = format!("o{i}");
        docs.push(doc(qm, did.clone(), payload(qm, 10 + i)));
        store.push(did, qm, gaussian(&mut rng, dim));
    }
    for i in 0..rng.random_range(0..4) {
        let did = format!("x{i}");
        docs.push(doc(hm, did.clone(), payload(hm, 20 + i)));
        store.push(did, hm, gaussian(&mut rng, dim));
    }
    let pool = CandidatePool::from_docs(docs, LoadOptions::default()).unwrap();
    let index = Index::build(store).unwrap();
    let hit = RetrievalHit {
        did: "h".into(),
        score: 1.0,
        rank: 1,
        modality: hm,
        substituted: false,
    };
    let pair = complete_pair(&hit, &index, &pool, &query, PairingOptions::default())
        .expect("an eligible complement always exists");
    let (side_did, side_payload) = match qm {
        Modality::Image => (&pair.image_did, &pair.image_ref),
        Modality::Text => (&pair.caption_did, &pair.caption),
    };
    side_did == &query.qid || side_payload == &query.content
}

/// Expected-versus-observed overlap of two one-caption-per-image selections.
pub fn sampling_overlap(images: usize, captions_per_image: usize, seeds: (u64, u64)) -> usize {
    let queries: Vec<QueryRecord> = (0..images)
        .flat_map(|i| {
            (0..captions_per_image).map(move |c| {
                QueryRecord::new(format!("t{i:05}_{c}"), Modality::Text, format!("caption {i} {c}"))
                    .with_positives([format!("img{i:05}")])
                    .with_group(format!("img{i:05}"))
            })
        })
        .collect();
    let a = unirag_core::corpus::sample_one_caption_per_image(&queries, seeds.0).unwrap();
    let b = unirag_core::corpus::sample_one_caption_per_image(&queries, seeds.1).unwrap();
    assert_eq!(a.selected.len(), images);
    let set: std::collections::HashSet<_> = a.selected.iter().collect();
    b.selected.iter().filter(|s| set.contains(s)).count()
}

/// `n` samples from N(shift·1, I_dim).
pub fn normal_rows(rng: &mut StdRng, n: usize, dim: usize, shift: &[f32]) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|j| shift[j] + rng.sample::<f32, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// FID for 2×2 covariances by scalar expansion: for PSD 2×2 `M`,
/// `tr √M = √(tr M + 2√det M)`, and `M = A^½ B A^½` has `tr M = tr(AB)` and
/// `det M = det A · det B`.
pub fn fid_2x2(mu_a: [f64; 2], a: [[f64; 2]; 2], mu_b: [f64; 2], b: [[f64; 2]; 2]) -> f64 {
    let tr = |m: [[f64; 2]; 2]| m[0][0] + m[1][1];
    let det = |m: [[f64; 2]; 2]| m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let tr_ab = a[0][0] * b[0][0] + a[0][1] * b[1][0] + a[1][0] * b[0][1] + a[1][1] * b[1][1];
    let cross = (tr_ab + 2.0 * (det(a) * det(b)).sqrt()).sqrt();
    let d0 = mu_a[0] - mu_b[0];
    let d1 = mu_a[1] - mu_b[1];
    d0 * d0 + d1 * d1 + tr(a) + tr(b) - 2.0 * cross
}

/// Inception Score with explicit loops over contiguous, near-equal splits.
pub fn inception_loop_oracle(probs: &[Vec<f64>], splits: usize) -> (f64, f64) {
    let n = probs.len();
    let c = probs[0].len();
    let mut scores = Vec::new();
    let mut start = 0;
    for s in 0..splits {
        let len = n / splits + usize::from(s < n % splits);
        let part = &probs[start..start + len];
        start += len;
        let mut marginal = vec![0.0; c];
        for row in part {
            for j in 0..c {
                marginal[j] += row[j];
            }
        }
        for m in &mut marginal {
            *m /= len as f64;
        }
        let mut kl_total = 0.0;
        for row in part {
            let mut kl = 0.0;
            for j in 0..c {
                if row[j] > 0.0 {
                    kl += row[j] * (row[j] / marginal[j]).ln();
                }
            }
            kl_total += kl;
        }
        scores.push((kl_total / len as f64).exp());
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    (mean, var.sqrt())
}

/// Random rows normalised to sum to 1.
pub fn random_probs(rng: &mut StdRng, n: usize, c: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

pub mod fixtures {
    use std::collections::HashMap;

    use image::{Rgb, RgbImage};
    use serde::Deserialize;
    use unirag_core::corpus::{Modality, QueryRecord};
    use unirag_core::metrics::{caption_report, tokenize};
    use unirag_core::pairing::{ExamplePair, Provenance};
    use unirag_core::prompting::{
        encode_png, merge_images, Dialect, GenTask, MemoryLoader, PromptRenderer,
    };

    #[derive(Deserialize)]
    struct Item {
        candidate: String,
        references: Vec<String>,
    }

    #[derive(Deserialize)]
    struct CaptionFixture {
        items: Vec<Item>,
        scores: HashMap<String, f64>,
    }

    #[derive(Deserialize)]
    struct TokenCase {
        caption: String,
        tokens: Vec<String>,
    }

    pub const CAPTION_METRICS_JSON: &str = include_str!("../fixtures/caption_metrics.json");
    pub const TOKENIZER_JSON: &str = include_str!("../fixtures/tokenizer.json");

    /// `(metric, got, want, tolerance)` for every fixture metric.
    pub fn caption_metric_results() -> Vec<(&'static str, f64, f64, f64)> {
        let f: CaptionFixture = serde_json::from_str(CAPTION_METRICS_JSON).unwrap();
        let cands: Vec<_> = f.items.iter().map(|i| tokenize(&i.candidate)).collect();
        let refs: Vec<Vec<_>> = f
            .items
            .iter()
            .map(|i| i.references.iter().map(|r| tokenize(r)).collect())
            .collect();
        let report = caption_report(&cands, &refs).unwrap();
        [
            ("bleu1", 1e-4),
            ("bleu2", 1e-4),
            ("bleu3", 1e-4),
            ("bleu4", 1e-4),
            ("rouge_l", 1e-4),
            ("cider", 1e-3),
        ]
        .into_iter()
        .map(|(name, tol)| (name, report.get(name).unwrap(), f.scores[name], tol))
        .collect()
    }

    /// Captions whose tokens differ from the reference tokenizer.
    pub fn tokenizer_mismatches() -> Vec<String> {
        let cases: Vec<TokenCase> = serde_json::from_str(TOKENIZER_JSON).unwrap();
        assert_eq!(cases.len(), 20);
        cases
            .into_iter()
            .filter(|c| tokenize(&c.caption).tokens != c.tokens)
            .map(|c| c.caption)
            .collect()
    }

    fn golden(dialect: Dialect, k: usize) -> &'static str {
        match (dialect, k) {
            (Dialect::MergedImage, 0) => include_str!("../fixtures/prompts/merged-image_k0.txt"),
            (Dialect::MergedImage, 1) => include_str!("../fixtures/prompts/merged-image_k1.txt"),
            (Dialect::MergedImage, 5) => include_str!("../fixtures/prompts/merged-image_k5.txt"),
            (Dialect::Interleaved, 0) => include_str!("../fixtures/prompts/interleaved_k0.txt"),
            (Dialect::Interleaved, 1) => include_str!("../fixtures/prompts/interleaved_k1.txt"),
            (Dialect::Interleaved, 5) => include_str!("../fixtures/prompts/interleaved_k5.txt"),
            (Dialect::InterleavedWithSystem, 0) => {
                include_str!("../fixtures/prompts/interleaved-system_k0.txt")
            }
            (Dialect::InterleavedWithSystem, 1) => {
                include_str!("../fixtures/prompts/interleaved-system_k1.txt")
            }
            (Dialect::InterleavedWithSystem, 5) => {
                include_str!("../fixtures/prompts/interleaved-system_k5.txt")
            }
            _ => unreachable!(),
        }
    }

    pub fn prompt_loader() -> MemoryLoader {
        let mut l = MemoryLoader::default();
        l.insert("q1.png", encode_png(&RgbImage::from_pixel(8, 6, Rgb([200, 200, 200]))).unwrap());
        for i in 1..=5u8 {
            let img = RgbImage::from_pixel(4 + u32::from(i), 3, Rgb([i * 40, 0, 0]));
            l.insert(format!("e{i}.png"), encode_png(&img).unwrap());
        }
        l
    }

    pub fn prompt_examples(k: usize) -> Vec<ExamplePair> {
        (1..=k)
            .map(|i| ExamplePair {
                image_did: format!("i{i}"),
                caption_did: format!("c{i}"),
                image_ref: format!("e{i}.png"),
                caption: format!("caption number {i}"),
                provenance: Provenance::Rag,
                hop_score: 0.0,
            })
            .collect()
    }

    /// `(dialect, k)` combinations whose transcript differs from its golden.
    pub fn prompt_golden_mismatches() -> Vec<String> {
        let loader = prompt_loader();
        let renderer = PromptRenderer::new(&loader);
        let query = QueryRecord::new("q1", Modality::Image, "q1.png");
        let mut bad = Vec::new();
        for dialect in [
            Dialect::MergedImage,
            Dialect::Interleaved,
            Dialect::InterleavedWithSystem,
        ] {
            for k in [0, 1, 5] {
                let bundle = renderer
                    .render_few_shot(&query, &prompt_examples(k), GenTask::Caption, dialect)
                    .unwrap();
                if bundle.transcript() != golden(dialect, k) {
                    bad.push(format!("{dialect} k={k}"));
                }
            }
        }
        bad
    }

    /// Stacks a 100×50 red image over a 60×30 blue one and checks size,
    /// placement and the background margin.
    pub fn merge_geometry_ok() -> bool {
        let red = Rgb([255, 0, 0]);
        let blue = Rgb([0, 0, 255]);
        let bg = Rgb([0, 0, 0]);
        let m = merge_images(
            &[RgbImage::from_pixel(100, 50, red), RgbImage::from_pixel(60, 30, blue)],
            bg,
        )
        .unwrap();
        m.dimensions() == (100, 80)
            && m.enumerate_pixels().all(|(x, y, p)| {
                let want = if y < 50 {
                    red
                } else if x < 60 {
                    blue
                } else {
                    bg
                };
                *p == want
            })
    }
}
