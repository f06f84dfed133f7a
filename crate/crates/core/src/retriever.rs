//! Exact inner-product search over a mixed text/image pool.
//!
//! Scores are computed from the stored `f32` vectors with `f64` accumulation
//! and ranked by `(score desc, did asc)`. That order is total, so a sharded
//! scan merges to exactly the list a single-threaded scan produces.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CandidatePool, Modality};
use crate::uemb::EmbeddingStore;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("embedding store is empty")]
    EmptyStore,
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("vector `{did}` has length {got}, expected {dim}")]
    VectorLength { did: String, got: usize, dim: usize },
    #[error("duplicate id `{0}` in embedding store")]
    DuplicateId(String),
    #[error("query has length {got}, index dimension is {dim}")]
    QueryDim { got: usize, dim: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("fusion needs at least one of text or image vector")]
    NothingToFuse,
    #[error("fusion weights are both zero")]
    ZeroWeights,
    #[error("fusion inputs have different lengths ({0} vs {1})")]
    FusionDim(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub text: f32,
    pub image: f32,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            text: 1.0,
            image: 1.0,
        }
    }
}

impl FusionWeights {
    pub fn new(text: f32, image: f32) -> Result<Self, RetrievalError> {
        let w = Self { text, image };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.text == 0.0 && self.image == 0.0 {
            return Err(RetrievalError::ZeroWeights);
        }
        Ok(())
    }
}

/// Weighted sum of the query's text and image embeddings; an absent side
/// contributes zero.
///
/// Under inner-product similarity this equals fusing the two per-modality
/// scores with the same weights.
pub fn fuse_query(
    text: Option<&[f32]>,
    image: Option<&[f32]>,
    w: FusionWeights,
) -> Result<Vec<f32>, RetrievalError> {
    w.validate()?;
    match (text, image) {
        (None, None) => Err(RetrievalError::NothingToFuse),
        (Some(t), None) => Ok(t.iter().map(|x| w.text * x).collect()),
        (None, Some(i)) => Ok(i.iter().map(|x| w.image * x).collect()),
        (Some(t), Some(i)) => {
            if t.len() != i.len() {
                return Err(RetrievalError::FusionDim(t.len(), i.len()));
            }
            Ok(t.iter()
                .zip(i)
                .map(|(a, b)| w.text * a + w.image * b)
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub did: String,
    pub score: f64,
    pub rank: u32,
    pub modality: Modality,
    /// Set when this hit replaced a wrong-modality hit with its complement.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub substituted: bool,
}

/// Inner product with eight independent `f64` lanes, reduced pairwise.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] as f64 * y[l] as f64;
        }
    }
    let mut tail = 0f64;
    for i in chunks * 8..a.len() {
        tail += a[i] as f64 * b[i] as f64;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Ranking order: higher score first, then smaller did.
fn rank_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Heap entry whose `Ord` puts the worst-ranked entry on top.
struct Entry<'a> {
    score: f64,
    did: &'a str,
    row: usize,
}

impl PartialEq for Entry<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry<'_> {}
impl PartialOrd for Entry<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order((self.score, self.did), (other.score, other.did))
    }
}

/// Packed, immutable search index.
#[derive(Debug, Clone)]
pub struct Index {
    dim: usize,
    ids: Vec<String>,
    modalities: Vec<Modality>,
    matrix: Vec<f32>,
    row_of: HashMap<String, usize>,
    workers: usize,
}

impl Index {
    /// Packs the store into a row-major matrix plus id and modality tables.
    pub fn build(store: EmbeddingStore) -> Result<Self, RetrievalError> {
        if store.dim == 0 {
            return Err(RetrievalError::ZeroDim);
        }
        if store.records.is_empty() {
            return Err(RetrievalError::EmptyStore);
        }
        let dim = store.dim;
        let n = store.records.len();
        let mut ids = Vec::with_capacity(n);
        let mut modalities = Vec::with_capacity(n);
        let mut matrix = Vec::with_capacity(n * dim);
        let mut row_of = HashMap::with_capacity(n);
        for (row, rec) in store.records.into_iter().enumerate() {
            if rec.vector.len() != dim {
                return Err(RetrievalError::VectorLength {
                    did: rec.did,
                    got: rec.vector.len(),
                    dim,
                });
            }
            if row_of.insert(rec.did.clone(), row).is_some() {
                return Err(RetrievalError::DuplicateId(rec.did));
            }
            matrix.extend_from_slice(&rec.vector);
            ids.push(rec.did);
            modalities.push(rec.modality);
        }
        Ok(Self {
            dim,
            ids,
            modalities,
            matrix,
            row_of,
            workers: 1,
        })
    }

    /// Upper bound on scan threads per query.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, did: &str) -> bool {
        self.row_of.contains_key(did)
    }

    pub fn vector(&self, did: &str) -> Option<&[f32]> {
        self.row_of
            .get(did)
            .map(|&r| &self.matrix[r * self.dim..(r + 1) * self.dim])
    }

    pub fn modality(&self, did: &str) -> Option<Modality> {
        self.row_of.get(did).map(|&r| self.modalities[r])
    }

    pub fn count_by_modality(&self, m: Modality) -> usize {
        self.modalities.iter().filter(|&&x| x == m).count()
    }

    /// Bytes held by the vector matrix.
    pub fn matrix_bytes(&self) -> usize {
        self.matrix.len() * std::mem::size_of::<f32>()
    }

    /// The `k` best docs passing `filter`, ordered by `(score desc, did asc)`.
    /// Returns fewer than `k` hits only when fewer docs pass the filter.
    pub fn search(
        &self,
        q: &[f32],
        k: usize,
        filter: Option<Modality>,
    ) -> Result<Vec<RetrievalHit>, RetrievalError> {
        self.search_sharded(q, k, filter, self.workers)
    }

    /// [`Index::search`] with an explicit shard count. Each shard is scanned on
    /// its own thread when `shards > 1`.
    pub fn search_sharded(
        &self,
        q: &[f32],
        k: usize,
        filter: Option<Modality>,
        shards: usize,
    ) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if q.len() != self.dim {
            return Err(RetrievalError::QueryDim {
                got: q.len(),
                dim: self.dim,
            });
        }
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let n = self.len();
        let shards = shards.clamp(1, n);
        let entries = if shards == 1 {
            self.scan(q, k, filter, 0..n)
        } else {
            let step = n.div_ceil(shards);
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..n)
                    .step_by(step)
                    .map(|start| {
                        let end = (start + step).min(n);
                        scope.spawn(move || self.scan(q, k, filter, start..end))
                    })
                    .collect();
                let mut merged: Vec<Entry<'_>> = handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("scan thread panicked"))
                    .collect();
                merged.sort();
                merged.truncate(k);
                merged
            })
        };
        Ok(entries
            .into_iter()
            .enumerate()
            .map(|(i, e)| RetrievalHit {
                did: e.did.to_owned(),
                score: e.score,
                rank: i as u32 + 1,
                modality: self.modalities[e.row],
                substituted: false,
            })
            .collect())
    }

    /// Like [`Index::search`], but skips docs for which `exclude(did)` holds.
    ///
    /// Fetches progressively deeper result lists until `k` docs survive, which
    /// gives the same list as an exhaustive scan with the exclusion applied.
    pub fn search_excluding(
        &self,
        q: &[f32],
        k: usize,
        filter: Option<Modality>,
        exclude: impl Fn(&str) -> bool,
    ) -> Result<Vec<RetrievalHit>, RetrievalError> {
        let available = match filter {
            Some(m) => self.count_by_modality(m),
            None => self.len(),
        };
        let mut depth = k.saturating_add(8);
        loop {
            let raw = self.search(q, depth.min(self.len()), filter)?;
            let exhausted = raw.len() >= available;
            let mut kept: Vec<RetrievalHit> =
                raw.into_iter().filter(|h| !exclude(&h.did)).take(k).collect();
            if kept.len() == k || exhausted {
                for (i, h) in kept.iter_mut().enumerate() {
                    h.rank = i as u32 + 1;
                }
                return Ok(kept);
            }
            depth = depth.saturating_mul(2);
        }
    }

    /// Sorted (best first) top-`k` entries of rows in `range`.
    fn scan(
        &self,
        q: &[f32],
        k: usize,
        filter: Option<Modality>,
        range: std::ops::Range<usize>,
    ) -> Vec<Entry<'_>> {
        let mut heap: BinaryHeap<Entry<'_>> = BinaryHeap::with_capacity(k + 1);
        for row in range {
            if filter.is_some_and(|m| self.modalities[row] != m) {
                continue;
            }
            let score = dot(q, &self.matrix[row * self.dim..(row + 1) * self.dim]);
            let entry = Entry {
                score,
                did: &self.ids[row],
                row,
            };
            if heap.len() < k {
                heap.push(entry);
            } else if let Some(worst) = heap.peek() {
                if entry < *worst {
                    heap.pop();
                    heap.push(entry);
                }
            }
        }
        heap.into_sorted_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnresolvedHit {
    pub did: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Substitution {
    pub hits: Vec<RetrievalHit>,
    pub count: usize,
    pub unresolved: Vec<UnresolvedHit>,
}

/// Replaces each hit of the wrong modality by its pool complement.
///
/// The complement keeps the original score and rank slot and is flagged
/// `substituted`. Hits whose complement is missing, or not of the expected
/// modality, are dropped and reported in `unresolved`; ranks are renumbered
/// to stay contiguous.
pub fn substitute_wrong_modality(
    hits: &[RetrievalHit],
    expected: Modality,
    pool: &CandidatePool,
) -> Substitution {
    let mut out = Substitution::default();
    for hit in hits {
        if hit.modality == expected {
            out.hits.push(hit.clone());
            continue;
        }
        let unresolved = |reason: &str| UnresolvedHit {
            did: hit.did.clone(),
            reason: reason.to_owned(),
        };
        let Some(doc) = pool.get(&hit.did) else {
            out.unresolved.push(unresolved("not in pool"));
            continue;
        };
        let Some(link) = doc.complement_did.as_deref() else {
            out.unresolved.push(unresolved("no complement"));
            continue;
        };
        match pool.get(link) {
            Some(c) if c.modality == expected => {
                out.count += 1;
                out.hits.push(RetrievalHit {
                    did: c.did.clone(),
                    score: hit.score,
                    rank: hit.rank,
                    modality: expected,
                    substituted: true,
                });
            }
            Some(_) => out.unresolved.push(unresolved("complement has the wrong modality")),
            None => out.unresolved.push(unresolved("complement not in pool")),
        }
    }
    for (i, h) in out.hits.iter_mut().enumerate() {
        h.rank = i as u32 + 1;
    }
    out
}

/// Fraction of top-1 hits whose modality differs from `expected`.
pub fn modality_confusion_rate(top1: &[RetrievalHit], expected: Modality) -> Option<f64> {
    if top1.is_empty() {
        return None;
    }
    let wrong = top1.iter().filter(|h| h.modality != expected).count();
    Some(wrong as f64 / top1.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CandidateDoc, LoadOptions};
    use proptest::prelude::*;

    fn basis_index() -> Index {
        let mut s = EmbeddingStore::new(3);
        s.push("e1", Modality::Text, vec![1.0, 0.0, 0.0]);
        s.push("e2", Modality::Image, vec![0.0, 1.0, 0.0]);
        s.push("e3", Modality::Text, vec![0.0, 0.0, 1.0]);
        Index::build(s).unwrap()
    }

    fn hit(did: &str, modality: Modality, rank: u32) -> RetrievalHit {
        RetrievalHit {
            did: did.into(),
            score: 1.0 / rank as f64,
            rank,
            modality,
            substituted: false,
        }
    }

    #[test]
    fn basis_vector_finds_itself() {
        let idx = basis_index();
        assert_eq!(idx.len(), 3);
        let hits = idx.search(&[1.0, 0.0, 0.0], 1, None).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].did, "e1");
        assert_eq!(hits[0].score, 1.0);
        assert_eq!(hits[0].rank, 1);
    }

    #[test]
    fn build_rejects_bad_stores() {
        assert_eq!(
            Index::build(EmbeddingStore::new(3)).unwrap_err(),
            RetrievalError::EmptyStore
        );
        let mut zero = EmbeddingStore::new(0);
        zero.push("a", Modality::Text, vec![]);
        assert_eq!(Index::build(zero).unwrap_err(), RetrievalError::ZeroDim);
        let mut s = EmbeddingStore::new(3);
        s.push("a", Modality::Text, vec![1.0, 2.0]);
        assert!(matches!(
            Index::build(s),
            Err(RetrievalError::VectorLength { .. })
        ));
        let mut dup = EmbeddingStore::new(1);
        dup.push("a", Modality::Text, vec![1.0]);
        dup.push("a", Modality::Image, vec![1.0]);
        assert!(matches!(
            Index::build(dup),
            Err(RetrievalError::DuplicateId(_))
        ));
    }

    #[test]
    fn equal_scores_break_ties_by_did() {
        let mut s = EmbeddingStore::new(2);
        s.push("b", Modality::Text, vec![1.0, 0.0]);
        s.push("a", Modality::Text, vec![1.0, 0.0]);
        s.push("c", Modality::Text, vec![0.5, 0.0]);
        let idx = Index::build(s).unwrap();
        let ids: Vec<_> = idx
            .search(&[1.0, 0.0], 3, None)
            .unwrap()
            .into_iter()
            .map(|h| h.did)
            .collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn filter_returns_all_when_fewer_than_k() {
        let idx = basis_index();
        let hits = idx.search(&[1.0, 1.0, 1.0], 5, Some(Modality::Image)).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].did, "e2");
    }

    #[test]
    fn query_dim_and_zero_k_are_errors() {
        let idx = basis_index();
        assert!(matches!(
            idx.search(&[1.0], 1, None),
            Err(RetrievalError::QueryDim { .. })
        ));
        assert_eq!(
            idx.search(&[1.0, 0.0, 0.0], 0, None).unwrap_err(),
            RetrievalError::ZeroK
        );
    }

    #[test]
    fn exclusion_skips_and_renumbers() {
        let idx = basis_index();
        let hits = idx
            .search_excluding(&[3.0, 2.0, 1.0], 2, None, |d| d == "e1")
            .unwrap();
        let ids: Vec<_> = hits.iter().map(|h| (h.did.as_str(), h.rank)).collect();
        assert_eq!(ids, [("e2", 1), ("e3", 2)]);
        let none = idx
            .search_excluding(&[1.0, 0.0, 0.0], 1, Some(Modality::Image), |_| true)
            .unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn fusion_cases() {
        let t = [1.0f32, 2.0];
        let i = [4.0f32, -2.0];
        assert_eq!(
            fuse_query(Some(&t), None, FusionWeights::default()).unwrap(),
            t
        );
        assert_eq!(
            fuse_query(Some(&t), Some(&i), FusionWeights::new(1.0, 0.0).unwrap()).unwrap(),
            t
        );
        assert_eq!(
            fuse_query(Some(&t), Some(&i), FusionWeights::new(0.5, 0.5).unwrap()).unwrap(),
            [2.5, 0.0]
        );
        assert_eq!(
            fuse_query(None, None, FusionWeights::default()).unwrap_err(),
            RetrievalError::NothingToFuse
        );
        assert!(FusionWeights::new(0.0, 0.0).is_err());
    }

    fn substitution_pool() -> CandidatePool {
        CandidatePool::from_docs(
            [
                CandidateDoc::text("t1", "a dog").with_complement("i1"),
                CandidateDoc::image("i1", "1.png").with_complement("t1"),
                CandidateDoc::text("t2", "a cat"),
                CandidateDoc::image("i2", "2.png"),
            ],
            LoadOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn substitution_leaves_correct_hits_alone() {
        let pool = substitution_pool();
        let hits = vec![hit("t1", Modality::Text, 1), hit("t2", Modality::Text, 2)];
        let out = substitute_wrong_modality(&hits, Modality::Text, &pool);
        assert_eq!(out.hits, hits);
        assert_eq!(out.count, 0);
    }

    #[test]
    fn substitution_swaps_in_complement() {
        let pool = substitution_pool();
        let hits = vec![hit("i1", Modality::Image, 1), hit("t2", Modality::Text, 2)];
        let out = substitute_wrong_modality(&hits, Modality::Text, &pool);
        assert_eq!(out.count, 1);
        assert_eq!(out.hits[0].did, "t1");
        assert!(out.hits[0].substituted);
        assert_eq!(out.hits[0].score, 1.0);
        assert!(out.hits.iter().all(|h| h.modality == Modality::Text));
    }

    #[test]
    fn missing_complement_drops_hit() {
        let pool = substitution_pool();
        let hits = vec![hit("i2", Modality::Image, 1), hit("t2", Modality::Text, 2)];
        let out = substitute_wrong_modality(&hits, Modality::Text, &pool);
        assert_eq!(out.count, 0);
        assert_eq!(out.unresolved.len(), 1);
        assert_eq!(out.unresolved[0].did, "i2");
        assert_eq!(out.hits.len(), 1);
        assert_eq!(out.hits[0].rank, 1);
    }

    #[test]
    fn confusion_rate_arithmetic() {
        let mut top1 = vec![hit("t", Modality::Text, 1); 93];
        top1.extend(vec![hit("i", Modality::Image, 1); 7]);
        assert_eq!(modality_confusion_rate(&top1, Modality::Text), Some(0.07));
        assert_eq!(modality_confusion_rate(&top1[..93], Modality::Text), Some(0.0));
        assert_eq!(modality_confusion_rate(&[], Modality::Text), None);
    }

    fn arb_index() -> impl Strategy<Value = (Index, Vec<f32>)> {
        (1usize..6, 1usize..40).prop_flat_map(|(dim, n)| {
            (
                proptest::collection::vec(
                    (proptest::collection::vec(-4i8..4, dim), any::<bool>()),
                    n,
                ),
                proptest::collection::vec(-4i8..4, dim),
            )
                .prop_map(move |(rows, q)| {
                    let mut s = EmbeddingStore::new(dim);
                    for (i, (v, img)) in rows.into_iter().enumerate() {
                        let m = if img { Modality::Image } else { Modality::Text };
                        s.push(format!("d{i:03}"), m, v.into_iter().map(f32::from).collect());
                    }
                    (Index::build(s).unwrap(), q.into_iter().map(f32::from).collect())
                })
        })
    }

    proptest! {
        #[test]
        fn shorter_search_is_a_prefix((idx, q) in arb_index(), k in 1usize..10) {
            let a = idx.search(&q, k, None).unwrap();
            let b = idx.search(&q, k + 1, None).unwrap();
            prop_assert_eq!(&b[..a.len()], &a[..]);
        }

        #[test]
        fn positive_scaling_keeps_order((idx, q) in arb_index(), k in 1usize..10, p in -3i32..4) {
            let c = 2f32.powi(p);
            let scaled: Vec<f32> = q.iter().map(|x| x * c).collect();
            let ids = |h: Vec<RetrievalHit>| h.into_iter().map(|h| h.did).collect::<Vec<_>>();
            prop_assert_eq!(ids(idx.search(&q, k, None).unwrap()), ids(idx.search(&scaled, k, None).unwrap()));
        }

        #[test]
        fn shard_count_does_not_matter((idx, q) in arb_index(), k in 1usize..10, shards in 1usize..9) {
            prop_assert_eq!(
                idx.search_sharded(&q, k, None, 1).unwrap(),
                idx.search_sharded(&q, k, None, shards).unwrap()
            );
        }

        #[test]
        fn substitution_is_idempotent(mods in proptest::collection::vec(any::<bool>(), 0..6)) {
            let pool = substitution_pool();
            let hits: Vec<_> = mods.iter().enumerate().map(|(i, &img)| {
                if img { hit(if i % 2 == 0 { "i1" } else { "i2" }, Modality::Image, i as u32 + 1) }
                else { hit("t2", Modality::Text, i as u32 + 1) }
            }).collect();
            let once = substitute_wrong_modality(&hits, Modality::Text, &pool);
            let twice = substitute_wrong_modality(&once.hits, Modality::Text, &pool);
            prop_assert_eq!(&twice.hits, &once.hits);
            prop_assert_eq!(twice.count, 0);
        }
    }
}
