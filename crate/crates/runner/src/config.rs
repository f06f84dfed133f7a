//! Experiment configuration.
//!
//! One TOML file describes a run. Relative paths resolve against the
//! directory holding the file. Example:
//!
//! ```toml
//! task = "caption"
//! retriever = "fused"
//! k = 1
//! seed = 7
//!
//! [profile]
//! preset = "llava"
//! endpoint_url = "http://127.0.0.1:8089"
//!
//! [data]
//! pool = "pool.jsonl"
//! queries = "queries.jsonl"
//! embeddings = "pool.uemb"
//! query_image_embeddings = "queries_image.uemb"
//! image_root = "images"
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unirag_core::pairing::PairingOptions;
use unirag_core::prompting::{Dialect, GenTask};
use unirag_core::retriever::FusionWeights;
use unirag_genclient::{FailurePolicy, GeneratorProfile};

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    /// Fused-embedding inner-product index.
    Fused,
    /// Random example pairs drawn from the query set.
    Random,
    /// Zero-shot.
    None,
}

impl RetrieverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrieverKind::Fused => "fused",
            RetrieverKind::Random => "random",
            RetrieverKind::None => "none",
        }
    }
}

impl FromStr for RetrieverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fused" => Ok(RetrieverKind::Fused),
            "random" => Ok(RetrieverKind::Random),
            "none" => Ok(RetrieverKind::None),
            other => Err(format!("unknown retriever `{other}` (fused, random, none)")),
        }
    }
}

/// A built-in preset plus optional overrides, or a full inline profile when
/// `preset` is absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialect: Option<Dialect>,
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_new_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_pairs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_delay_ms: Option<u64>,
}

impl ProfileSpec {
    pub fn resolve(&self) -> Result<GeneratorProfile, ConfigError> {
        if self.endpoint_url.is_empty() {
            return Err(ConfigError::new("profile.endpoint_url is required"));
        }
        let mut p = match &self.preset {
            Some(preset) => GeneratorProfile::preset(preset, &self.endpoint_url).ok_or_else(|| {
                ConfigError::new(format!(
                    "unknown profile preset `{preset}` (llava, gemini-pro, gpt-4o, lavit, emu2)"
                ))
            })?,
            None => {
                let name = self.name.clone().ok_or_else(|| {
                    ConfigError::new("profile needs `preset` or `name` and `dialect`")
                })?;
                let dialect = self
                    .dialect
                    .ok_or_else(|| ConfigError::new("inline profile needs `dialect`"))?;
                GeneratorProfile::new(name, dialect, self.endpoint_url.clone())
            }
        };
        if let Some(n) = &self.name {
            p.name = n.clone();
        }
        if let Some(d) = self.dialect {
            p.dialect = d;
        }
        if self.model.is_some() {
            p.model = self.model.clone();
        }
        if let Some(t) = self.max_new_tokens {
            p.max_new_tokens = t;
        }
        if self.max_pairs.is_some() {
            p.max_pairs = self.max_pairs;
        }
        if self.api_key_env.is_some() {
            p.api_key_env = self.api_key_env.clone();
        }
        if let Some(t) = self.timeout_secs {
            p.timeout_secs = t;
        }
        if let Some(a) = self.max_attempts {
            p.retry.max_attempts = a;
        }
        if let Some(d) = self.base_delay_ms {
            p.retry.base_delay_ms = d;
        }
        p.validate().map_err(ConfigError)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub pool: PathBuf,
    pub queries: PathBuf,
    /// Pool embeddings; required by the fused retriever.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// Query-side embeddings keyed by qid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_text_embeddings: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_image_embeddings: Option<PathBuf>,
    /// Root that image paths in the pool and queries are relative to.
    #[serde(default)]
    pub image_root: PathBuf,
}

/// Feature files for image-generation evaluation. Generated-side stores are
/// keyed by qid (or by did when scoring the retriever baseline); reference
/// and retrieved stores by pool did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_features: Option<PathBuf>,
    /// Defaults to `reference_features`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_texts: Option<PathBuf>,
    #[serde(default = "default_splits")]
    pub is_splits: usize,
    #[serde(default = "default_clip_w")]
    pub clip_w: f64,
}

impl Default for EvalPaths {
    fn default() -> Self {
        Self {
            generated_features: None,
            reference_features: None,
            retrieved_features: None,
            probabilities: None,
            clip_images: None,
            clip_texts: None,
            is_splits: default_splits(),
            clip_w: default_clip_w(),
        }
    }
}

fn default_splits() -> usize {
    10
}

fn default_clip_w() -> f64 {
    unirag_core::metrics::CLIP_SCORE_W
}

fn default_parallelism() -> usize {
    4
}

fn default_cache_dir() -> PathBuf {
    "cache".into()
}

fn default_run_root() -> PathBuf {
    "runs".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: GenTask,
    pub retriever: RetrieverKind,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub profile: ProfileSpec,
    pub data: DataPaths,
    #[serde(default)]
    pub fusion: FusionWeights,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub failure_policy: FailurePolicy,
    /// Second-hop exclusion options.
    #[serde(default)]
    pub pairing: PairingOptions,
    /// Restrict the first hop to the candidate modality instead of relying on
    /// complement substitution.
    #[serde(default)]
    pub first_hop_filter: bool,
    /// Also keep the query's ground-truth positives out of the first hop.
    #[serde(default)]
    pub first_hop_exclude_positives: bool,
    /// Keep one caption query per image, chosen with `seed`.
    #[serde(default)]
    pub sample_captions: bool,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_run_root")]
    pub run_root: PathBuf,
    #[serde(default)]
    pub eval: EvalPaths,
    /// Directory relative paths resolve against; not part of the snapshot.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line overrides; each maps to the config key of the same name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub retriever: Option<RetrieverKind>,
    pub profile: Option<String>,
    pub parallelism: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        let mut c: Self =
            toml::from_str(text).map_err(|e| ConfigError::new(format!("config: {e}")))?;
        c.base_dir = base_dir.into();
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(k) = o.k {
            self.k = k;
        }
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(r) = o.retriever {
            self.retriever = r;
        }
        if let Some(p) = &o.profile {
            self.profile.preset = Some(p.clone());
        }
        if let Some(n) = o.parallelism {
            self.parallelism = n;
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks field invariants and that every referenced input exists.
    pub fn validate(&self) -> Result<GeneratorProfile, ConfigError> {
        if self.retriever == RetrieverKind::None && self.k != 0 {
            return Err(ConfigError::new(format!(
                "retriever `none` needs k = 0 (got k = {})",
                self.k
            )));
        }
        if self.retriever == RetrieverKind::Random && self.seed.is_none() {
            return Err(ConfigError::new("retriever `random` needs a seed"));
        }
        if self.sample_captions {
            if self.task != GenTask::ImageGen {
                return Err(ConfigError::new("sample_captions applies to image-gen only"));
            }
            if self.seed.is_none() {
                return Err(ConfigError::new("sample_captions needs a seed"));
            }
        }
        if self.parallelism == 0 {
            return Err(ConfigError::new("parallelism must be at least 1"));
        }
        self.fusion
            .validate()
            .map_err(|e| ConfigError::new(format!("fusion: {e}")))?;
        if !(self.eval.clip_w.is_finite() && self.eval.clip_w > 0.0) || self.eval.is_splits == 0 {
            return Err(ConfigError::new("eval.clip_w must be positive and eval.is_splits ≥ 1"));
        }

        let must_exist = |label: &str, p: &Path| -> Result<(), ConfigError> {
            let full = self.resolve(p);
            if full.exists() {
                Ok(())
            } else {
                Err(ConfigError::new(format!("{label}: {} does not exist", full.display())))
            }
        };
        must_exist("data.pool", &self.data.pool)?;
        must_exist("data.queries", &self.data.queries)?;
        must_exist("data.image_root", &self.data.image_root)?;
        if self.retriever == RetrieverKind::Fused && self.k > 0 {
            let emb = self.data.embeddings.as_deref().ok_or_else(|| {
                ConfigError::new("retriever `fused` needs data.embeddings")
            })?;
            must_exist("data.embeddings", emb)?;
            if self.data.query_text_embeddings.is_none()
                && self.data.query_image_embeddings.is_none()
            {
                return Err(ConfigError::new(
                    "retriever `fused` needs data.query_text_embeddings or data.query_image_embeddings",
                ));
            }
        }
        for (label, p) in [
            ("data.query_text_embeddings", &self.data.query_text_embeddings),
            ("data.query_image_embeddings", &self.data.query_image_embeddings),
        ] {
            if let Some(p) = p {
                must_exist(label, p)?;
            }
        }
        self.profile.resolve()
    }

    /// SHA-256 over the serialized snapshot.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn task_name(&self) -> &'static str {
        match self.task {
            GenTask::Caption => "caption",
            GenTask::ImageGen => "image-gen",
        }
    }
}
