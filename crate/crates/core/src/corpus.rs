//! Candidate pools, query sets and seeded query sampling.
//!
//! Pool and query files are JSON Lines. A pool record looks like
//!
//! ```text
//! {"did":"9:1","modality":"text","txt":"A man on a bike.","image_path":null,"complement_did":"9:2","src_dataset":"mscoco"}
//! ```
//!
//! and a query record like
//!
//! ```text
//! {"qid":"9:q1","modality":"image","content":"val2014/1.jpg","instruction":"Find a caption for the image.","pos_dids":["9:1"],"group_key":"1"}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::Sampler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

impl Modality {
    pub fn opposite(self) -> Self {
        match self {
            Modality::Text => Modality::Image,
            Modality::Image => Modality::Text,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Image => "image",
        })
    }
}

/// Direction of a retrieval task, named by query and candidate modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskDirection {
    /// Image queries, caption candidates (caption generation).
    ImageToText,
    /// Caption queries, image candidates (image generation).
    TextToImage,
}

impl TaskDirection {
    pub fn query_modality(self) -> Modality {
        match self {
            TaskDirection::ImageToText => Modality::Image,
            TaskDirection::TextToImage => Modality::Text,
        }
    }

    pub fn candidate_modality(self) -> Modality {
        self.query_modality().opposite()
    }
}

impl FromStr for TaskDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "image-to-text" | "i2t" => Ok(TaskDirection::ImageToText),
            "text-to-image" | "t2i" => Ok(TaskDirection::TextToImage),
            other => Err(format!("unknown task direction `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate document id `{0}`")]
    DuplicateDid(String),
    #[error("duplicate query id `{0}`")]
    DuplicateQid(String),
    #[error("document `{did}`: {reason}")]
    InvalidDoc { did: String, reason: String },
    #[error("document `{did}` links complement `{complement}`: {reason}")]
    BrokenComplement {
        did: String,
        complement: String,
        reason: String,
    },
    #[error("query `{qid}`: {reason}")]
    InvalidQuery { qid: String, reason: String },
}

/// One single-modality entry of the candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDoc {
    pub did: String,
    pub modality: Modality,
    #[serde(rename = "txt")]
    pub text: Option<String>,
    #[serde(rename = "image_path")]
    pub image_ref: Option<String>,
    pub complement_did: Option<String>,
    pub src_dataset: String,
}

impl CandidateDoc {
    pub fn text(did: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            did: did.into(),
            modality: Modality::Text,
            text: Some(text.into()),
            image_ref: None,
            complement_did: None,
            src_dataset: String::new(),
        }
    }

    pub fn image(did: impl Into<String>, image_ref: impl Into<String>) -> Self {
        Self {
            did: did.into(),
            modality: Modality::Image,
            text: None,
            image_ref: Some(image_ref.into()),
            complement_did: None,
            src_dataset: String::new(),
        }
    }

    pub fn with_complement(mut self, did: impl Into<String>) -> Self {
        self.complement_did = Some(did.into());
        self
    }

    pub fn with_source(mut self, src: impl Into<String>) -> Self {
        self.src_dataset = src.into();
        self
    }

    /// Caption text for text docs, image path for image docs.
    pub fn payload(&self) -> &str {
        match self.modality {
            Modality::Text => self.text.as_deref().unwrap_or_default(),
            Modality::Image => self.image_ref.as_deref().unwrap_or_default(),
        }
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: &str| CorpusError::InvalidDoc {
            did: self.did.clone(),
            reason: reason.to_owned(),
        };
        if self.did.is_empty() {
            return Err(invalid("empty id"));
        }
        match (self.modality, &self.text, &self.image_ref) {
            (Modality::Text, Some(_), None) | (Modality::Image, None, Some(_)) => Ok(()),
            (Modality::Text, _, _) => Err(invalid("text doc needs `txt` and no `image_path`")),
            (Modality::Image, _, _) => Err(invalid("image doc needs `image_path` and no `txt`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Require every `complement_did` to resolve to a doc of the opposite modality.
    pub strict_complements: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            strict_complements: true,
        }
    }
}

/// Immutable pool of candidate documents with an id index.
#[derive(Debug, Clone, Default)]
pub struct CandidatePool {
    docs: Vec<CandidateDoc>,
    by_did: HashMap<String, usize>,
}

impl CandidatePool {
    pub fn from_docs(
        docs: impl IntoIterator<Item = CandidateDoc>,
        opts: LoadOptions,
    ) -> Result<Self, CorpusError> {
        let mut pool = CandidatePool::default();
        for doc in docs {
            pool.insert(doc)?;
        }
        if opts.strict_complements {
            pool.check_complements()?;
        }
        Ok(pool)
    }

    fn insert(&mut self, doc: CandidateDoc) -> Result<(), CorpusError> {
        doc.validate()?;
        if self.by_did.contains_key(&doc.did) {
            return Err(CorpusError::DuplicateDid(doc.did));
        }
        self.by_did.insert(doc.did.clone(), self.docs.len());
        self.docs.push(doc);
        Ok(())
    }

    fn check_complements(&self) -> Result<(), CorpusError> {
        for doc in &self.docs {
            let Some(link) = &doc.complement_did else {
                continue;
            };
            let broken = |reason: &str| CorpusError::BrokenComplement {
                did: doc.did.clone(),
                complement: link.clone(),
                reason: reason.to_owned(),
            };
            match self.get(link) {
                None => return Err(broken("not in pool")),
                Some(other) if other.modality == doc.modality => {
                    return Err(broken("same modality"))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, did: &str) -> Option<&CandidateDoc> {
        self.by_did.get(did).map(|&i| &self.docs[i])
    }

    pub fn docs(&self) -> &[CandidateDoc] {
        &self.docs
    }

    /// The linked complement of `did`, when present and resolvable.
    pub fn complement_of(&self, did: &str) -> Option<&CandidateDoc> {
        self.get(did)?.complement_did.as_deref().and_then(|c| self.get(c))
    }

    pub fn count_by_modality(&self, modality: Modality) -> usize {
        self.docs.iter().filter(|d| d.modality == modality).count()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for doc in &self.docs {
            serde_json::to_writer(&mut out, doc)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Streams JSON records, skipping blank lines. Line numbers are 1-based.
fn read_records<T, R, F>(reader: R, path: &Path, mut sink: F) -> Result<(), CorpusError>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
    F: FnMut(T) -> Result<(), CorpusError>,
{
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
            line: i + 1,
            source,
        })?;
        sink(record)?;
    }
    Ok(())
}

pub fn load_pool(path: impl AsRef<Path>, opts: LoadOptions) -> Result<CandidatePool, CorpusError> {
    let path = path.as_ref();
    let mut pool = CandidatePool::default();
    read_records(open(path)?, path, |doc: CandidateDoc| pool.insert(doc))?;
    if opts.strict_complements {
        pool.check_complements()?;
    }
    Ok(pool)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub qid: String,
    pub modality: Modality,
    /// Caption text for text queries, image path for image queries.
    pub content: String,
    #[serde(default)]
    pub instruction: String,
    #[serde(default)]
    pub pos_dids: Vec<String>,
    #[serde(default)]
    pub group_key: String,
}

impl QueryRecord {
    pub fn new(qid: impl Into<String>, modality: Modality, content: impl Into<String>) -> Self {
        Self {
            qid: qid.into(),
            modality,
            content: content.into(),
            instruction: String::new(),
            pos_dids: Vec::new(),
            group_key: String::new(),
        }
    }

    pub fn with_positives<I, S>(mut self, dids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.pos_dids = dids.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_group(mut self, key: impl Into<String>) -> Self {
        self.group_key = key.into();
        self
    }
}

/// Loads queries and checks that every query has the task's query modality
/// and at least one positive.
pub fn load_queries(
    path: impl AsRef<Path>,
    task: TaskDirection,
) -> Result<Vec<QueryRecord>, CorpusError> {
    let path = path.as_ref();
    let mut queries = Vec::new();
    let mut seen = HashSet::new();
    read_records(open(path)?, path, |q: QueryRecord| {
        if !seen.insert(q.qid.clone()) {
            return Err(CorpusError::DuplicateQid(q.qid));
        }
        validate_query(&q, task)?;
        queries.push(q);
        Ok(())
    })?;
    Ok(queries)
}

fn validate_query(q: &QueryRecord, task: TaskDirection) -> Result<(), CorpusError> {
    let invalid = |reason: String| CorpusError::InvalidQuery {
        qid: q.qid.clone(),
        reason,
    };
    if q.modality != task.query_modality() {
        return Err(invalid(format!(
            "{} query in a {:?} query set",
            q.modality, task
        )));
    }
    if q.pos_dids.is_empty() {
        return Err(invalid("no positive candidates".into()));
    }
    if q.modality == Modality::Text && q.group_key.is_empty() {
        return Err(invalid("caption query without group_key".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySample {
    pub seed: u64,
    pub selected: Vec<String>,
}

/// Picks one caption query per image (`group_key`).
///
/// Groups are visited in ascending `group_key` order; within a group the
/// candidates keep their input order and one is chosen with
/// [`Sampler::below`]. The result is a pure function of the input and seed.
pub fn sample_one_caption_per_image(
    queries: &[QueryRecord],
    seed: u64,
) -> Result<QuerySample, CorpusError> {
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for q in queries {
        if q.modality != Modality::Text {
            return Err(CorpusError::InvalidQuery {
                qid: q.qid.clone(),
                reason: "caption sampling needs text queries".into(),
            });
        }
        if q.group_key.is_empty() {
            return Err(CorpusError::InvalidQuery {
                qid: q.qid.clone(),
                reason: "missing group_key".into(),
            });
        }
        groups.entry(&q.group_key).or_default().push(&q.qid);
    }
    let mut sampler = Sampler::new(seed);
    let selected = groups
        .values()
        .map(|members| members[sampler.below(members.len())].to_owned())
        .collect();
    Ok(QuerySample { seed, selected })
}
