//! Run manifests and the run directory layout.
//!
//! A run directory holds
//!
//! * `config.toml`: the effective config,
//! * `progress.jsonl`: one line per finished generation, appended as jobs
//!   complete (this is what a rerun resumes from),
//! * `timings.jsonl`: latency and cache status per generation,
//! * `manifest.json`: written once every query has been processed,
//! * `eval.json`: metrics, once evaluated.
//!
//! The manifest carries no timings or cache flags, so it is a pure function
//! of the config, the inputs and the generator outputs.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use unirag_core::corpus::Modality;
use unirag_core::pairing::ExamplePair;
use unirag_core::retriever::{RetrievalHit, UnresolvedHit};
use unirag_genclient::{GeneratorProfile, OutputKind};

use crate::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROGRESS_FILE: &str = "progress.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const EVAL_FILE: &str = "eval.json";
pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub kind: OutputKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// File name under the run's `images/` directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub pairs_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub qid: String,
    pub pos_dids: Vec<String>,
    /// Modality of the raw first-hop top-1, before substitution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_hop_top1: Option<Modality>,
    /// Hits after wrong-modality substitution.
    pub hits: Vec<RetrievalHit>,
    pub substitutions: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unresolved: Vec<UnresolvedHit>,
    pub pairs: Vec<ExamplePair>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pair_errors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub profile: GeneratorProfile,
    pub entries: Vec<ManifestEntry>,
    pub substitution_count: usize,
    /// Fraction of first-hop top-1 hits of the wrong modality.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality_confusion: Option<f64>,
    pub error_count: usize,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.to_json())?;
        fs::rename(tmp, path)
    }

    pub fn read(path: impl AsRef<Path>) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn failed(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.output.is_none())
    }
}

/// One line of `progress.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressLine {
    pub qid: String,
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingLine {
    pub qid: String,
    pub latency_ms: u64,
    pub cached: bool,
}

/// Appends JSON lines from many threads, one whole line per write.
pub struct JsonlAppender {
    file: Mutex<File>,
}

impl JsonlAppender {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Mutex::new(file),
        })
    }

    pub fn append<T: Serialize>(&self, value: &T) -> io::Result<()> {
        let mut line = serde_json::to_vec(value).map_err(io::Error::other)?;
        line.push(b'\n');
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        f.write_all(&line)?;
        f.flush()
    }
}

/// Reads progress lines; a torn last line (from a kill mid-write) is ignored.
pub fn read_progress(path: impl AsRef<Path>) -> io::Result<Vec<ProgressLine>> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if let Ok(p) = serde_json::from_str(&line) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Newest run directory for `config_hash` under `run_root`, if any.
pub fn latest_run_dir(run_root: &Path, config_hash: &str) -> io::Result<Option<PathBuf>> {
    let prefix = format!("{}-", &config_hash[..16]);
    let entries = match fs::read_dir(run_root) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut existing: Vec<(u64, u64, String)> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter_map(|name| {
            let rest = name.strip_prefix(&prefix)?;
            let mut parts = rest.split('.');
            let secs = parts.next()?.parse().ok()?;
            let n = parts.next().map_or(Some(0), |p| p.parse().ok())?;
            Some((secs, n, name))
        })
        .collect();
    existing.sort();
    Ok(existing.pop().map(|(_, _, name)| run_root.join(name)))
}

/// `<run_root>/<hash prefix>-<unix seconds>`. Reuses the newest directory
/// for the same config unless `fresh`; a fresh directory never collides
/// with an existing one.
pub fn run_dir(run_root: &Path, config_hash: &str, fresh: bool) -> io::Result<PathBuf> {
    if !fresh {
        if let Some(dir) = latest_run_dir(run_root, config_hash)? {
            return Ok(dir);
        }
    }
    fs::create_dir_all(run_root)?;
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let prefix = format!("{}-{secs}", &config_hash[..16]);
    let mut dir = run_root.join(&prefix);
    let mut n = 1;
    while dir.exists() {
        dir = run_root.join(format!("{prefix}.{n}"));
        n += 1;
    }
    fs::create_dir_all(&dir)?;
    Ok(dir)
}
