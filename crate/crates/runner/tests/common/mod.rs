//! Fixtures shared by the runner's integration tests and the acceptance
//! suite.
#![allow(dead_code)]

use std::fs;
use std::path::Path;

use unirag::config::ExperimentConfig;
use unirag::synth::{write_dataset, SynthSpec};
use unirag_core::corpus::{CandidateDoc, Modality, QueryRecord};
use unirag_core::uemb::EmbeddingStore;
use unirag_genclient::mock::{MockConfig, MockServer};

pub fn png(path: &Path, rgb: [u8; 3]) {
    image::RgbImage::from_pixel(4, 4, image::Rgb(rgb))
        .save(path)
        .unwrap();
}

fn jsonl<T: serde::Serialize>(path: &Path, items: &[T]) {
    let text: String = items
        .iter()
        .map(|i| serde_json::to_string(i).unwrap() + "\n")
        .collect();
    fs::write(path, text).unwrap();
}

/// Three images and their captions, linked as complements, and three image
/// queries. Vectors (dim 4):
///
/// ```text
/// i1 [1,0,0,0]   c1 [1,0,0,0.1]   qa [1,0,0, 0.5]  → c1 (1.05) beats i1 (1.0)
/// i2 [0,1,0,0]   c2 [0,1,0,0.1]   qb [0,1,0,-0.5]  → i2 (1.0) beats c2 (0.95): substituted by c2
/// i3 [0,0,1,0]   c3 [0,0,1,0.1]   qc [0,0,1, 0.5]  → c3 (1.05)
/// ```
///
/// Each caption's second hop lands on its own image with score 1.0.
pub const SIX_DOC_CAPTIONS: [&str; 3] = [
    "a red kite over the beach",
    "two dogs playing in the park",
    "a bowl of soup on a table",
];

pub fn six_doc_fixture(dir: &Path, endpoint: &str, k: usize, retriever: &str) -> ExperimentConfig {
    let images = dir.join("images");
    fs::create_dir_all(&images).unwrap();
    let colors = [[200, 0, 0], [0, 200, 0], [0, 0, 200]];
    let mut docs = Vec::new();
    let mut store = EmbeddingStore::new(4);
    for i in 0..3 {
        let n = i + 1;
        png(&images.join(format!("i{n}.png")), colors[i]);
        png(&images.join(format!("q{n}.png")), colors[i]);
        docs.push(CandidateDoc::image(format!("i{n}"), format!("i{n}.png")).with_complement(format!("c{n}")));
        docs.push(CandidateDoc::text(format!("c{n}"), SIX_DOC_CAPTIONS[i]).with_complement(format!("i{n}")));
        let mut v = vec![0.0f32; 4];
        v[i] = 1.0;
        store.push(format!("i{n}"), Modality::Image, v.clone());
        v[3] = 0.1;
        store.push(format!("c{n}"), Modality::Text, v);
    }
    jsonl(&dir.join("pool.jsonl"), &docs);
    store.write_file(dir.join("pool.uemb")).unwrap();

    let mut queries = Vec::new();
    let mut qstore = EmbeddingStore::new(4);
    for (i, (qid, tail)) in [("qa", 0.5f32), ("qb", -0.5), ("qc", 0.5)].into_iter().enumerate() {
        let n = i + 1;
        queries.push(
            QueryRecord::new(qid, Modality::Image, format!("q{n}.png"))
                .with_positives([format!("c{n}")])
                .with_group(format!("q{n}")),
        );
        let mut v = vec![0.0f32; 4];
        v[i] = 1.0;
        v[3] = tail;
        qstore.push(qid, Modality::Image, v);
    }
    jsonl(&dir.join("queries.jsonl"), &queries);
    qstore.write_file(dir.join("queries_image.uemb")).unwrap();

    let seed = if retriever == "random" { "seed = 1\n" } else { "" };
    let text = format!(
        r#"task = "caption"
retriever = "{retriever}"
k = {k}
{seed}parallelism = 2

[profile]
preset = "llava"
endpoint_url = "{endpoint}"
max_attempts = 2
base_delay_ms = 1

[data]
pool = "pool.jsonl"
queries = "queries.jsonl"
embeddings = "pool.uemb"
query_image_embeddings = "queries_image.uemb"
image_root = "images"
"#
    );
    let path = dir.join(format!("{retriever}_k{k}.toml"));
    fs::write(&path, text).unwrap();
    ExperimentConfig::load(path).unwrap()
}

pub fn echo_mock() -> MockServer {
    MockServer::start(MockConfig::default()).unwrap()
}

/// Synthetic dataset with a config for `task` ("caption" or "image_gen").
pub fn synth_config(dir: &Path, endpoint: &str, spec: &SynthSpec, task: &str) -> ExperimentConfig {
    write_dataset(dir, spec, endpoint).unwrap();
    let mut c = ExperimentConfig::load(dir.join(format!("{task}.toml"))).unwrap();
    c.profile.base_delay_ms = Some(1);
    c
}

/// A caption run whose first hop cannot return ground-truth captions, so the
/// scores are not trivially perfect.
pub fn hard_caption_config(dir: &Path, endpoint: &str, queries: usize) -> ExperimentConfig {
    let spec = SynthSpec {
        images: queries * 3,
        query_images: queries,
        ..Default::default()
    };
    let mut c = synth_config(dir, endpoint, &spec, "caption");
    c.first_hop_exclude_positives = true;
    c.parallelism = 4;
    c
}
