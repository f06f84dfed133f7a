//! Turning single-modality hits into (image, caption) in-context examples.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CandidateDoc, CandidatePool, Modality, QueryRecord};
use crate::retriever::{Index, RetrievalError, RetrievalHit};
use crate::sampling::Sampler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Rag,
    Random,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub image_did: String,
    pub caption_did: String,
    pub image_ref: String,
    pub caption: String,
    pub provenance: Provenance,
    /// Second-hop score of the complement; 0 when the pair did not come from
    /// a second hop.
    pub hop_score: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum PairingError {
    #[error("hit `{0}` has no vector in the index")]
    MissingVector(String),
    #[error("document `{0}` is not in the pool")]
    MissingDoc(String),
    #[error("no eligible {modality} complement for `{did}`")]
    NoComplement { did: String, modality: Modality },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("need {needed} random examples but only {available} queries are eligible")]
    NotEnoughQueries { needed: usize, available: usize },
    #[error("query `{0}` has no usable ground-truth candidate")]
    NoGroundTruth(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingOptions {
    /// Also refuse the query's other ground-truth positives as complements.
    #[serde(default)]
    pub exclude_positives: bool,
}

/// Decides whether a pool doc would leak the original query into a pair.
#[derive(Debug)]
pub struct QueryExclusion<'a> {
    query: &'a QueryRecord,
    positives: HashSet<&'a str>,
}

impl<'a> QueryExclusion<'a> {
    pub fn new(query: &'a QueryRecord, opts: PairingOptions) -> Self {
        let positives = if opts.exclude_positives {
            query.pos_dids.iter().map(String::as_str).collect()
        } else {
            HashSet::new()
        };
        Self { query, positives }
    }

    /// Matches by id or by identical payload (caption text / image path).
    pub fn excludes(&self, doc: &CandidateDoc) -> bool {
        doc.did == self.query.qid
            || doc.payload() == self.query.content
            || self.positives.contains(doc.did.as_str())
    }

    fn excludes_did(&self, pool: &CandidatePool, did: &str) -> bool {
        match pool.get(did) {
            Some(doc) => self.excludes(doc),
            None => did == self.query.qid || self.positives.contains(did),
        }
    }
}

fn assemble(
    a: &CandidateDoc,
    b: &CandidateDoc,
    provenance: Provenance,
    hop_score: f64,
) -> ExamplePair {
    let (image, caption) = match a.modality {
        Modality::Image => (a, b),
        Modality::Text => (b, a),
    };
    ExamplePair {
        image_did: image.did.clone(),
        caption_did: caption.did.clone(),
        image_ref: image.payload().to_owned(),
        caption: caption.payload().to_owned(),
        provenance,
        hop_score,
    }
}

/// Completes `hit` with its best opposite-modality neighbour.
///
/// The hit's own vector is the second-hop query, searched over the whole
/// index restricted to the opposite modality. Docs matching the original
/// query (by id or payload) are skipped; the first survivor becomes the
/// complement and its score the pair's `hop_score`.
pub fn complete_pair(
    hit: &RetrievalHit,
    index: &Index,
    pool: &CandidatePool,
    query: &QueryRecord,
    opts: PairingOptions,
) -> Result<ExamplePair, PairingError> {
    let vector = index
        .vector(&hit.did)
        .ok_or_else(|| PairingError::MissingVector(hit.did.clone()))?;
    let doc = pool
        .get(&hit.did)
        .ok_or_else(|| PairingError::MissingDoc(hit.did.clone()))?;
    let target = doc.modality.opposite();
    let exclusion = QueryExclusion::new(query, opts);
    let hops = index.search_excluding(vector, 1, Some(target), |did| {
        exclusion.excludes_did(pool, did)
    })?;
    let best = hops.first().ok_or_else(|| PairingError::NoComplement {
        did: hit.did.clone(),
        modality: target,
    })?;
    let complement = pool
        .get(&best.did)
        .ok_or_else(|| PairingError::MissingDoc(best.did.clone()))?;
    Ok(assemble(doc, complement, Provenance::Rag, best.score))
}

/// Completes `hit` through the pool's `complement_did` link instead of a
/// second hop. Used when [`complete_pair`] fails.
pub fn complete_pair_from_link(
    hit: &RetrievalHit,
    pool: &CandidatePool,
    query: &QueryRecord,
    opts: PairingOptions,
) -> Result<ExamplePair, PairingError> {
    let doc = pool
        .get(&hit.did)
        .ok_or_else(|| PairingError::MissingDoc(hit.did.clone()))?;
    let exclusion = QueryExclusion::new(query, opts);
    match pool.complement_of(&hit.did) {
        Some(c) if c.modality != doc.modality && !exclusion.excludes(c) => {
            Ok(assemble(doc, c, Provenance::Rag, 0.0))
        }
        _ => Err(PairingError::NoComplement {
            did: hit.did.clone(),
            modality: doc.modality.opposite(),
        }),
    }
}

/// Draws `k` random example pairs from the query set (uniform, without
/// replacement), skipping `exclude` and every query that shares its
/// `group_key`. Each drawn query is paired with one of its ground-truth
/// positives of the opposite modality, also chosen uniformly.
///
/// The query side of the pair uses the query id as its did and the query
/// content as its payload.
pub fn random_pairs(
    queries: &[QueryRecord],
    pool: &CandidatePool,
    k: usize,
    seed: u64,
    exclude: &str,
) -> Result<Vec<ExamplePair>, PairingError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let banned_group = queries
        .iter()
        .find(|q| q.qid == exclude)
        .map(|q| q.group_key.as_str())
        .filter(|g| !g.is_empty());
    let eligible: Vec<&QueryRecord> = queries
        .iter()
        .filter(|q| q.qid != exclude && banned_group != Some(q.group_key.as_str()))
        .collect();
    if eligible.len() < k {
        return Err(PairingError::NotEnoughQueries {
            needed: k,
            available: eligible.len(),
        });
    }
    let mut sampler = Sampler::new(seed);
    sampler
        .choose_indices(eligible.len(), k)
        .into_iter()
        .map(|i| {
            let q = eligible[i];
            let positives: Vec<&CandidateDoc> = q
                .pos_dids
                .iter()
                .filter_map(|d| pool.get(d))
                .filter(|d| d.modality != q.modality)
                .collect();
            if positives.is_empty() {
                return Err(PairingError::NoGroundTruth(q.qid.clone()));
            }
            let gt = positives[sampler.below(positives.len())];
            let query_side = CandidateDoc {
                did: q.qid.clone(),
                modality: q.modality,
                text: (q.modality == Modality::Text).then(|| q.content.clone()),
                image_ref: (q.modality == Modality::Image).then(|| q.content.clone()),
                complement_did: None,
                src_dataset: String::new(),
            };
            Ok(assemble(&query_side, gt, Provenance::Random, 0.0))
        })
        .collect()
}
