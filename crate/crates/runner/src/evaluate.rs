//! Scoring a finished run from its manifest.
//!
//! Caption runs are scored against the captions of each query's positives.
//! Image-generation runs are scored from precomputed feature files: FID
//! against ground-truth image features (and optionally against the top-1
//! retrieved image), CLIP score, and Inception Score.
//!
//! The retriever baseline scores the top-1 retrieved item as if it were the
//! generator's output.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unirag_core::corpus::{CandidatePool, Modality};
use unirag_core::metrics::{
    caption_report, clip_score, feature_stats, fid, inception_score, tokenize, MetricReport,
};
use unirag_core::prompting::GenTask;
use unirag_core::uemb::EmbeddingStore;

use crate::config::{ExperimentConfig, RetrieverKind};
use crate::manifest::{ManifestEntry, RunManifest};
use crate::pipeline::RunnerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Generated,
    RetrieverBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mode: EvalMode,
    pub metrics: MetricReport,
    pub evaluated: usize,
    /// Queries without an output (or, for the baseline, without a hit).
    pub dropped: usize,
    /// Metrics not computed, with the reason.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
}

/// What `eval.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub generated: EvalResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<EvalResult>,
}

type Vectors = HashMap<String, Vec<f32>>;

/// Feature stores for image-generation scoring.
#[derive(Debug, Clone, Default)]
pub struct FeatureSources {
    pub generated: Option<Vectors>,
    pub reference: Option<Vectors>,
    pub retrieved: Option<Vectors>,
    pub probabilities: Option<Vectors>,
    pub clip_images: Option<Vectors>,
    pub clip_texts: Option<Vectors>,
    pub is_splits: usize,
    pub clip_w: f64,
    pub seed: Option<u64>,
}

fn read_store(path: &Path) -> Result<Vectors, RunnerError> {
    let store = EmbeddingStore::read_file(path)
        .map_err(|e| RunnerError::Input(format!("{}: {e}", path.display())))?;
    Ok(store
        .records
        .into_iter()
        .map(|r| (r.did, r.vector))
        .collect())
}

impl FeatureSources {
    pub fn load(config: &ExperimentConfig) -> Result<Self, RunnerError> {
        let e = &config.eval;
        let load = |p: &Option<std::path::PathBuf>| -> Result<Option<Vectors>, RunnerError> {
            p.as_ref()
                .map(|p| read_store(&config.resolve(p)))
                .transpose()
        };
        let reference = load(&e.reference_features)?;
        let retrieved = match &e.retrieved_features {
            Some(_) => load(&e.retrieved_features)?,
            None => reference.clone(),
        };
        Ok(Self {
            generated: load(&e.generated_features)?,
            reference,
            retrieved,
            probabilities: load(&e.probabilities)?,
            clip_images: load(&e.clip_images)?,
            clip_texts: load(&e.clip_texts)?,
            is_splits: e.is_splits,
            clip_w: e.clip_w,
            seed: config.seed,
        })
    }
}

/// Scores `manifest` in the given mode.
pub fn evaluate_run(
    manifest: &RunManifest,
    pool: &CandidatePool,
    sources: &FeatureSources,
    mode: EvalMode,
) -> Result<EvalResult, RunnerError> {
    match manifest.config.task {
        GenTask::Caption => evaluate_captions(manifest, pool, mode),
        GenTask::ImageGen => evaluate_images(manifest, sources, mode),
    }
}

/// Generated scores, plus the baseline when the run retrieved anything.
pub fn evaluate_summary(
    manifest: &RunManifest,
    pool: &CandidatePool,
    sources: &FeatureSources,
) -> Result<EvalSummary, RunnerError> {
    let generated = evaluate_run(manifest, pool, sources, EvalMode::Generated)?;
    let baseline = if manifest.config.retriever == RetrieverKind::Fused && manifest.config.k > 0 {
        Some(evaluate_run(manifest, pool, sources, EvalMode::RetrieverBaseline)?)
    } else {
        None
    };
    Ok(EvalSummary {
        generated,
        baseline,
    })
}

fn top1(e: &ManifestEntry, want: Modality) -> Option<&str> {
    e.hits
        .first()
        .filter(|h| h.modality == want)
        .map(|h| h.did.as_str())
}

fn evaluate_captions(
    manifest: &RunManifest,
    pool: &CandidatePool,
    mode: EvalMode,
) -> Result<EvalResult, RunnerError> {
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    let mut dropped = 0;
    for e in &manifest.entries {
        let cand = match mode {
            EvalMode::Generated => e.output.as_ref().and_then(|o| o.text.clone()),
            EvalMode::RetrieverBaseline => top1(e, Modality::Text)
                .and_then(|did| pool.get(did))
                .map(|d| d.payload().to_owned()),
        };
        let r: Vec<_> = e
            .pos_dids
            .iter()
            .filter_map(|d| pool.get(d))
            .filter(|d| d.modality == Modality::Text)
            .map(|d| tokenize(d.payload()))
            .collect();
        match cand {
            Some(c) if !r.is_empty() => {
                cands.push(tokenize(&c));
                refs.push(r);
            }
            _ => dropped += 1,
        }
    }
    let metrics =
        caption_report(&cands, &refs).map_err(|e| RunnerError::Eval(e.to_string()))?;
    Ok(EvalResult {
        mode,
        metrics,
        evaluated: cands.len(),
        dropped,
        skipped: Vec::new(),
    })
}

fn rows<'a>(store: &'a Vectors, keys: &[&str]) -> Option<Vec<&'a [f32]>> {
    keys.iter().map(|k| store.get(*k).map(Vec::as_slice)).collect()
}

fn evaluate_images(
    manifest: &RunManifest,
    s: &FeatureSources,
    mode: EvalMode,
) -> Result<EvalResult, RunnerError> {
    let eval_err = |e: unirag_core::metrics::MetricError| RunnerError::Eval(e.to_string());
    let mut items: Vec<(&str, &ManifestEntry)> = Vec::new();
    let mut dropped = 0;
    for e in &manifest.entries {
        let key = match mode {
            EvalMode::Generated => e.output.as_ref().map(|_| e.qid.as_str()),
            EvalMode::RetrieverBaseline => top1(e, Modality::Image),
        };
        match key {
            Some(k) => items.push((k, e)),
            None => dropped += 1,
        }
    }
    let keys: Vec<&str> = items.iter().map(|(k, _)| *k).collect();
    let qids: Vec<&str> = items.iter().map(|(_, e)| e.qid.as_str()).collect();
    let out_store = match mode {
        EvalMode::Generated => s.generated.as_ref(),
        EvalMode::RetrieverBaseline => s.retrieved.as_ref(),
    };

    let mut metrics = MetricReport::default();
    let mut skipped = Vec::new();
    let out_rows = out_store.and_then(|st| rows(st, &keys));

    match (&out_rows, &s.reference) {
        (Some(gen), Some(reference)) => {
            let gt_keys: Option<Vec<&str>> = items
                .iter()
                .map(|(_, e)| {
                    e.pos_dids
                        .iter()
                        .find(|d| reference.contains_key(d.as_str()))
                        .map(String::as_str)
                })
                .collect();
            match gt_keys.and_then(|k| rows(reference, &k)) {
                Some(gt) => {
                    let a = feature_stats(gen).map_err(eval_err)?;
                    let b = feature_stats(&gt).map_err(eval_err)?;
                    metrics.insert("fid", fid(&a, &b).map_err(eval_err)?);
                }
                None => skipped.push("fid: ground-truth features missing for some queries".into()),
            }
        }
        _ => skipped.push("fid: generated or reference features not available".into()),
    }

    if mode == EvalMode::Generated {
        let top: Option<Vec<&str>> = items.iter().map(|(_, e)| top1(e, Modality::Image)).collect();
        match (&out_rows, &s.retrieved, top) {
            (Some(gen), Some(ret), Some(top)) if !top.is_empty() => match rows(ret, &top) {
                Some(r) => {
                    let a = feature_stats(gen).map_err(eval_err)?;
                    let b = feature_stats(&r).map_err(eval_err)?;
                    metrics.insert("fid_retrieved", fid(&a, &b).map_err(eval_err)?);
                }
                None => skipped.push("fid_retrieved: retrieved features missing".into()),
            },
            _ => skipped.push("fid_retrieved: needs generated features and a top-1 image per query".into()),
        }
    }

    let clip = s
        .clip_images
        .as_ref()
        .and_then(|st| rows(st, &keys))
        .zip(s.clip_texts.as_ref().and_then(|st| rows(st, &qids)));
    match clip {
        Some((imgs, txts)) => {
            let imgs: Vec<Vec<f32>> = imgs.into_iter().map(<[f32]>::to_vec).collect();
            let txts: Vec<Vec<f32>> = txts.into_iter().map(<[f32]>::to_vec).collect();
            metrics.insert("clip_score", clip_score(&imgs, &txts, s.clip_w).map_err(eval_err)?);
        }
        None => skipped.push("clip_score: clip embeddings not available".into()),
    }

    match s.probabilities.as_ref().and_then(|st| rows(st, &keys)) {
        Some(p) => {
            let p: Vec<Vec<f64>> = p
                .into_iter()
                .map(|r| r.iter().map(|&x| x as f64).collect())
                .collect();
            let splits = s.is_splits.min(p.len()).max(1);
            let is = inception_score(&p, splits, s.seed).map_err(eval_err)?;
            metrics.insert("is", is.mean);
            metrics.insert("is_sd", is.sd);
        }
        None => skipped.push("is: class probabilities not available".into()),
    }

    Ok(EvalResult {
        mode,
        metrics,
        evaluated: items.len(),
        dropped,
        skipped,
    })
}
