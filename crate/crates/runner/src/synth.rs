//! Small synthetic datasets for trying the pipeline without real data.
//!
//! Every image is a solid-colour PNG with a few captions built from a word
//! grammar. Embeddings are a per-image latent plus noise, with two trailing
//! coordinates marking the modality; query embeddings carry the *target*
//! modality's marker, which is what an instruction-conditioned retriever
//! does. Image features for FID are the clean latents.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use unirag_core::corpus::{CandidateDoc, Modality, QueryRecord};
use unirag_core::uemb::EmbeddingStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub images: usize,
    pub captions_per_image: usize,
    /// Images whose image (and captions) become queries.
    pub query_images: usize,
    pub dim: usize,
    pub noise: f32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            images: 200,
            captions_per_image: 5,
            query_images: 50,
            dim: 32,
            noise: 0.15,
            seed: 1,
        }
    }
}

const COLORS: [&str; 8] = ["red", "green", "blue", "yellow", "white", "black", "orange", "purple"];
const RGB: [[u8; 3]; 8] = [
    [200, 30, 30],
    [30, 160, 60],
    [40, 60, 200],
    [230, 210, 40],
    [240, 240, 240],
    [15, 15, 15],
    [240, 140, 20],
    [120, 40, 160],
];
const THINGS: [&str; 8] = ["dog", "cat", "bus", "kite", "horse", "boat", "train", "bird"];
const VERBS: [&str; 6] = ["sitting", "standing", "waiting", "resting", "parked", "moving"];
const PLACES: [&str; 8] = [
    "on a street",
    "in a field",
    "near the water",
    "by a fence",
    "under a tree",
    "in the snow",
    "at the station",
    "on the grass",
];
const ARTICLES: [&str; 3] = ["a", "the", "one"];

pub fn image_did(i: usize) -> String {
    format!("img{i:05}")
}

pub fn image_file(i: usize) -> String {
    format!("img{i:05}.png")
}

pub fn caption_did(i: usize, j: usize) -> String {
    format!("cap{i:05}_{j}")
}

/// Everything generated, in memory.
pub struct SynthData {
    pub docs: Vec<CandidateDoc>,
    pub pool_vectors: EmbeddingStore,
    pub caption_queries: Vec<QueryRecord>,
    pub caption_query_vectors: EmbeddingStore,
    pub image_gen_queries: Vec<QueryRecord>,
    pub image_gen_query_vectors: EmbeddingStore,
    pub features: EmbeddingStore,
    pub colors: Vec<[u8; 3]>,
}

fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn generate(spec: &SynthSpec) -> SynthData {
    assert!(spec.dim >= 4 && spec.captions_per_image >= 1 && spec.query_images <= spec.images);
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let latent_dim = spec.dim - 2;
    let gauss = |rng: &mut StdRng, n: usize, scale: f32| -> Vec<f32> {
        (0..n).map(|_| rng.sample::<f32, _>(StandardNormal) * scale).collect()
    };
    let embed = |latent: &[f32], noise: &[f32], marker: Modality| -> Vec<f32> {
        let mut v: Vec<f32> = latent.iter().zip(noise).map(|(a, b)| a + b).collect();
        normalize(&mut v);
        v.extend(match marker {
            Modality::Text => [0.5, 0.0],
            Modality::Image => [0.0, 0.5],
        });
        v
    };

    let mut data = SynthData {
        docs: Vec::new(),
        pool_vectors: EmbeddingStore::new(spec.dim),
        caption_queries: Vec::new(),
        caption_query_vectors: EmbeddingStore::new(spec.dim),
        image_gen_queries: Vec::new(),
        image_gen_query_vectors: EmbeddingStore::new(spec.dim),
        features: EmbeddingStore::new(latent_dim),
        colors: Vec::new(),
    };
    for i in 0..spec.images {
        let latent = gauss(&mut rng, latent_dim, 1.0);
        let color = rng.random_range(0..COLORS.len());
        let thing = rng.random_range(0..THINGS.len());
        data.colors.push(RGB[color]);
        let img_noise = gauss(&mut rng, latent_dim, spec.noise);
        let img_vec = embed(&latent, &img_noise, Modality::Image);
        data.docs.push(
            CandidateDoc::image(image_did(i), image_file(i))
                .with_complement(caption_did(i, 0))
                .with_source("synth"),
        );
        data.pool_vectors
            .push(image_did(i), Modality::Image, img_vec);
        data.features.push(image_did(i), Modality::Image, latent.clone());

        let mut caps = Vec::new();
        for j in 0..spec.captions_per_image {
            let text = format!(
                "{} {} {} {} {}",
                ARTICLES[rng.random_range(0..ARTICLES.len())],
                COLORS[color],
                THINGS[thing],
                VERBS[rng.random_range(0..VERBS.len())],
                PLACES[rng.random_range(0..PLACES.len())],
            );
            let noise = gauss(&mut rng, latent_dim, spec.noise);
            data.docs.push(
                CandidateDoc::text(caption_did(i, j), text.clone())
                    .with_complement(image_did(i))
                    .with_source("synth"),
            );
            data.pool_vectors
                .push(caption_did(i, j), Modality::Text, embed(&latent, &noise, Modality::Text));
            caps.push((caption_did(i, j), text, noise));
        }

        if i < spec.query_images {
            let qid = format!("q{i:05}");
            data.caption_queries.push(
                QueryRecord::new(&qid, Modality::Image, image_file(i))
                    .with_positives(caps.iter().map(|c| c.0.clone()))
                    .with_group(image_did(i)),
            );
            data.caption_query_vectors
                .push(&qid, Modality::Image, embed(&latent, &img_noise, Modality::Text));
            for (j, (_, text, noise)) in caps.iter().enumerate() {
                let qid = format!("t{i:05}_{j}");
                data.image_gen_queries.push(
                    QueryRecord::new(&qid, Modality::Text, text.clone())
                        .with_positives([image_did(i)])
                        .with_group(image_did(i)),
                );
                data.image_gen_query_vectors
                    .push(&qid, Modality::Text, embed(&latent, noise, Modality::Image));
            }
        }
    }
    data
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn config_text(task: &str, preset: &str, queries: &str, qvec_key: &str, qvec: &str, endpoint: &str) -> String {
    format!(
        r#"task = "{task}"
retriever = "fused"
k = 1
seed = 1

[profile]
preset = "{preset}"
endpoint_url = "{endpoint}"

[data]
pool = "pool.jsonl"
queries = "{queries}"
embeddings = "pool.uemb"
{qvec_key} = "{qvec}"
image_root = "images"

[eval]
reference_features = "features.uemb"
"#
    )
}

/// Writes the dataset plus `caption.toml` and `image_gen.toml` pointing at
/// `endpoint`.
pub fn write_dataset(dir: &Path, spec: &SynthSpec, endpoint: &str) -> io::Result<SynthData> {
    let data = generate(spec);
    let images = dir.join("images");
    fs::create_dir_all(&images)?;
    for (i, rgb) in data.colors.iter().enumerate() {
        let img = image::RgbImage::from_pixel(8, 8, image::Rgb(*rgb));
        img.save(images.join(image_file(i))).map_err(io::Error::other)?;
    }
    write_jsonl(&dir.join("pool.jsonl"), &data.docs)?;
    write_jsonl(&dir.join("queries_caption.jsonl"), &data.caption_queries)?;
    write_jsonl(&dir.join("queries_image_gen.jsonl"), &data.image_gen_queries)?;
    let uemb = |name: &str, s: &EmbeddingStore| {
        s.write_file(dir.join(name)).map_err(io::Error::other)
    };
    uemb("pool.uemb", &data.pool_vectors)?;
    uemb("queries_caption_image.uemb", &data.caption_query_vectors)?;
    uemb("queries_image_gen_text.uemb", &data.image_gen_query_vectors)?;
    uemb("features.uemb", &data.features)?;
    fs::write(
        dir.join("caption.toml"),
        config_text(
            "caption",
            "llava",
            "queries_caption.jsonl",
            "query_image_embeddings",
            "queries_caption_image.uemb",
            endpoint,
        ),
    )?;
    fs::write(
        dir.join("image_gen.toml"),
        config_text(
            "image-gen",
            "emu2",
            "queries_image_gen.jsonl",
            "query_text_embeddings",
            "queries_image_gen_text.uemb",
            endpoint,
        ),
    )?;
    Ok(data)
}
