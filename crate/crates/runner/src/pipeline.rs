//! Stages of a run: load → retrieve → substitute → pair → prompt → generate.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unirag_core::corpus::{
    load_pool, load_queries, sample_one_caption_per_image, CandidatePool, LoadOptions, Modality,
    QueryRecord, TaskDirection,
};
use unirag_core::pairing::{
    complete_pair, complete_pair_from_link, random_pairs, ExamplePair, PairingOptions,
    QueryExclusion,
};
use unirag_core::prompting::{DirLoader, GenTask, PromptRenderer};
use unirag_core::retriever::{
    fuse_query, modality_confusion_rate, substitute_wrong_modality, Index, RetrievalHit,
    UnresolvedHit,
};
use unirag_core::sampling::derive_seed;
use unirag_core::uemb::EmbeddingStore;
use unirag_genclient::{
    estimate_cost, run_batch, BatchAborted, GenClient, GenError, GeneratorProfile, PromptJob,
    ResponseCache,
};

use crate::config::{ConfigError, ExperimentConfig, RetrieverKind};
use crate::manifest::{
    read_progress, run_dir, JsonlAppender, ManifestEntry, OutputRecord, ProgressLine, RunManifest,
    TimingLine, CONFIG_FILE, IMAGES_DIR, MANIFEST_FILE, PROGRESS_FILE, TIMINGS_FILE,
};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("input: {0}")]
    Input(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Aborted(#[from] BatchAborted),
    #[error("generator: {0}")]
    Generator(#[from] GenError),
    #[error("evaluation: {0}")]
    Eval(String),
}

impl RunnerError {
    /// Process exit code: 1 for config errors, 3 for anything fatal.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) => 1,
            _ => 3,
        }
    }
}

pub fn task_direction(task: GenTask) -> TaskDirection {
    match task {
        GenTask::Caption => TaskDirection::ImageToText,
        GenTask::ImageGen => TaskDirection::TextToImage,
    }
}

/// Everything a run reads from disk.
pub struct Inputs {
    pub pool: CandidatePool,
    pub queries: Vec<QueryRecord>,
    /// The full query set, before caption sampling; random examples are
    /// drawn from it.
    pub all_queries: Vec<QueryRecord>,
    pub index: Option<Index>,
    pub query_text: HashMap<String, Vec<f32>>,
    pub query_image: HashMap<String, Vec<f32>>,
}

fn input_err(what: &str, e: impl std::fmt::Display) -> RunnerError {
    RunnerError::Input(format!("{what}: {e}"))
}

fn vectors_by_id(store: EmbeddingStore) -> HashMap<String, Vec<f32>> {
    store
        .records
        .into_iter()
        .map(|r| (r.did, r.vector))
        .collect()
}

pub fn load_inputs(config: &ExperimentConfig) -> Result<Inputs, RunnerError> {
    let pool = load_pool(config.resolve(&config.data.pool), LoadOptions::default())
        .map_err(|e| input_err("pool", e))?;
    let all_queries = load_queries(config.resolve(&config.data.queries), task_direction(config.task))
        .map_err(|e| input_err("queries", e))?;
    let queries = if config.sample_captions {
        let sample = sample_one_caption_per_image(&all_queries, config.seed.unwrap_or(0))
            .map_err(|e| input_err("caption sampling", e))?;
        let keep: std::collections::HashSet<&str> =
            sample.selected.iter().map(String::as_str).collect();
        all_queries
            .iter()
            .filter(|q| keep.contains(q.qid.as_str()))
            .cloned()
            .collect()
    } else {
        all_queries.clone()
    };

    let needs_index = config.retriever == RetrieverKind::Fused && config.k > 0;
    let index = match (&config.data.embeddings, needs_index) {
        (Some(p), true) => {
            let store = EmbeddingStore::read_file(config.resolve(p))
                .map_err(|e| input_err("embeddings", e))?;
            Some(Index::build(store).map_err(|e| input_err("index", e))?.with_workers(1))
        }
        _ => None,
    };
    let load_q = |p: &Option<PathBuf>, what: &str| -> Result<HashMap<String, Vec<f32>>, RunnerError> {
        match p {
            Some(p) if needs_index => Ok(vectors_by_id(
                EmbeddingStore::read_file(config.resolve(p)).map_err(|e| input_err(what, e))?,
            )),
            _ => Ok(HashMap::new()),
        }
    };
    let query_text = load_q(&config.data.query_text_embeddings, "query text embeddings")?;
    let query_image = load_q(&config.data.query_image_embeddings, "query image embeddings")?;
    Ok(Inputs {
        pool,
        queries,
        all_queries,
        index,
        query_text,
        query_image,
    })
}

fn thread_pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .expect("thread pool")
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Retrieved {
    pub qid: String,
    pub first_hop_top1: Option<Modality>,
    pub hits: Vec<RetrievalHit>,
    pub substitutions: usize,
    pub unresolved: Vec<UnresolvedHit>,
    pub error: Option<String>,
}

/// First hop over the fused index, then wrong-modality substitution.
///
/// The first hop skips the query itself (same id or payload); the query's
/// ground-truth positives are skipped only with `first_hop_exclude_positives`.
pub fn retrieve_all(config: &ExperimentConfig, inputs: &Inputs) -> Vec<Retrieved> {
    let Some(index) = inputs.index.as_ref().filter(|_| config.k > 0) else {
        return inputs
            .queries
            .iter()
            .map(|q| Retrieved {
                qid: q.qid.clone(),
                ..Default::default()
            })
            .collect();
    };
    let expected = config.task.output_modality();
    let filter = config.first_hop_filter.then_some(expected);
    let opts = PairingOptions {
        exclude_positives: config.first_hop_exclude_positives,
    };
    let one = |q: &QueryRecord| -> Retrieved {
        let mut out = Retrieved {
            qid: q.qid.clone(),
            ..Default::default()
        };
        let fused = fuse_query(
            inputs.query_text.get(&q.qid).map(Vec::as_slice),
            inputs.query_image.get(&q.qid).map(Vec::as_slice),
            config.fusion,
        );
        let raw = fused.and_then(|v| {
            let excl = QueryExclusion::new(q, opts);
            index.search_excluding(&v, config.k, filter, |did| {
                did == q.qid || inputs.pool.get(did).is_some_and(|d| excl.excludes(d))
            })
        });
        match raw {
            Ok(raw) => {
                out.first_hop_top1 = raw.first().map(|h| h.modality);
                let s = substitute_wrong_modality(&raw, expected, &inputs.pool);
                out.hits = s.hits;
                out.substitutions = s.count;
                out.unresolved = s.unresolved;
            }
            Err(e) => out.error = Some(format!("retrieval: {e}")),
        }
        out
    };
    thread_pool(config.parallelism).install(|| inputs.queries.par_iter().map(one).collect())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Paired {
    pub qid: String,
    pub pairs: Vec<ExamplePair>,
    pub pair_errors: Vec<String>,
    /// Set when no prompt should be built for this query.
    pub error: Option<String>,
}

/// Completes every hit into an example pair (second hop, falling back to the
/// pool link), or draws random pairs.
pub fn pair_all(config: &ExperimentConfig, inputs: &Inputs, retrieved: &[Retrieved]) -> Vec<Paired> {
    let one = |(q, r): (&QueryRecord, &Retrieved)| -> Paired {
        let mut out = Paired {
            qid: q.qid.clone(),
            error: r.error.clone(),
            ..Default::default()
        };
        if out.error.is_some() || config.k == 0 {
            return out;
        }
        match config.retriever {
            RetrieverKind::None => {}
            RetrieverKind::Random => {
                let seed = derive_seed(config.seed.unwrap_or(0), &q.qid);
                match random_pairs(&inputs.all_queries, &inputs.pool, config.k, seed, &q.qid) {
                    Ok(p) => out.pairs = p,
                    Err(e) => out.error = Some(format!("random pairs: {e}")),
                }
            }
            RetrieverKind::Fused => {
                let index = inputs.index.as_ref().expect("fused run has an index");
                for hit in &r.hits {
                    let pair = complete_pair(hit, index, &inputs.pool, q, config.pairing).or_else(
                        |first| {
                            complete_pair_from_link(hit, &inputs.pool, q, config.pairing)
                                .map_err(|_| first)
                        },
                    );
                    match pair {
                        Ok(p) => out.pairs.push(p),
                        Err(e) => out.pair_errors.push(format!("{}: {e}", hit.did)),
                    }
                }
            }
        }
        out
    };
    thread_pool(config.parallelism).install(|| {
        inputs
            .queries
            .par_iter()
            .zip(retrieved.par_iter())
            .map(one)
            .collect()
    })
}

pub fn build_jobs(config: &ExperimentConfig, inputs: &Inputs, paired: &[Paired]) -> Vec<PromptJob> {
    inputs
        .queries
        .iter()
        .zip(paired)
        .map(|(q, p)| PromptJob {
            qid: q.qid.clone(),
            query: q.clone(),
            examples: p.pairs.clone(),
            task: config.task,
        })
        .collect()
}

/// Retrieval, pairing and job construction in one go.
pub struct Prepared {
    pub profile: GeneratorProfile,
    pub inputs: Inputs,
    pub retrieved: Vec<Retrieved>,
    pub paired: Vec<Paired>,
    pub jobs: Vec<PromptJob>,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, RunnerError> {
    let profile = config.validate()?;
    let inputs = load_inputs(config)?;
    let retrieved = retrieve_all(config, &inputs);
    let paired = pair_all(config, &inputs, &retrieved);
    let jobs = build_jobs(config, &inputs, &paired);
    Ok(Prepared {
        profile,
        inputs,
        retrieved,
        paired,
        jobs,
    })
}

/// Prompt content hashes, or the render error, per job.
pub fn prompt_hashes(
    config: &ExperimentConfig,
    client: &GenClient,
    renderer: &PromptRenderer,
    jobs: &[PromptJob],
    paired: &[Paired],
) -> Vec<Result<String, String>> {
    thread_pool(config.parallelism).install(|| {
        jobs.par_iter()
            .zip(paired.par_iter())
            .map(|(job, p)| match &p.error {
                Some(e) => Err(e.clone()),
                None => client
                    .render(renderer, job)
                    .map(|b| b.content_hash())
                    .map_err(|e| format!("render: {e}")),
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub bundles: usize,
    pub usd: f64,
}

/// Renders every prompt and prices it with the profile's card. Sends nothing.
pub fn dry_run(config: &ExperimentConfig) -> Result<CostEstimate, RunnerError> {
    let prep = prepare(config)?;
    let loader = DirLoader::new(config.resolve(&config.data.image_root));
    let renderer = PromptRenderer::new(&loader);
    let client = GenClient::new(prep.profile.clone())?;
    let bundles = thread_pool(config.parallelism).install(|| {
        prep.jobs
            .par_iter()
            .zip(prep.paired.par_iter())
            .filter(|(_, p)| p.error.is_none())
            .map(|(j, _)| client.render(&renderer, j))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let usd = estimate_cost(&prep.profile, &bundles)
        .map_err(|e| RunnerError::Config(ConfigError(e.to_string())))?;
    Ok(CostEstimate {
        bundles: bundles.len(),
        usd,
    })
}

/// Knobs for a single invocation that do not belong in the config.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunControl {
    /// Start a new run directory instead of resuming the latest one.
    pub fresh: bool,
    /// Generate at most this many new outputs, then stop without writing the
    /// manifest (simulates an interrupted run).
    pub stop_after: Option<usize>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    /// `None` when the run stopped before every query was processed.
    pub manifest: Option<RunManifest>,
    /// Generations attempted by this invocation.
    pub attempted: usize,
    /// Generations answered from the response cache.
    pub cache_hits: usize,
    /// Queries whose output was taken from an earlier invocation's progress.
    pub resumed: usize,
}

/// Runs (or resumes) an experiment and writes its manifest.
pub fn run_experiment(config: &ExperimentConfig, control: RunControl) -> Result<RunOutcome, RunnerError> {
    let prep = prepare(config)?;
    let hash = config.hash();
    let dir = run_dir(&config.resolve(&config.run_root), &hash, control.fresh)?;
    fs::write(dir.join(CONFIG_FILE), config.to_toml())?;

    let loader = DirLoader::new(config.resolve(&config.data.image_root));
    let renderer = PromptRenderer::new(&loader);
    let cache = ResponseCache::open(config.resolve(&config.cache_dir))?;
    let client = GenClient::new(prep.profile.clone())?
        .with_cache(cache)
        .with_image_dir(dir.join(IMAGES_DIR));
    let hashes = prompt_hashes(config, &client, &renderer, &prep.jobs, &prep.paired);

    let mut done: HashMap<String, ProgressLine> = HashMap::new();
    for line in read_progress(dir.join(PROGRESS_FILE))? {
        if line.output.is_some() {
            done.insert(line.qid.clone(), line);
        }
    }
    let resumable = |i: usize| -> Option<&ProgressLine> {
        let h = hashes[i].as_ref().ok()?;
        done.get(&prep.jobs[i].qid).filter(|l| &l.prompt_hash == h)
    };
    let pending: Vec<usize> = (0..prep.jobs.len())
        .filter(|&i| hashes[i].is_ok() && resumable(i).is_none())
        .collect();
    let resumed = (0..prep.jobs.len()).filter(|&i| resumable(i).is_some()).count();
    let take = control.stop_after.map_or(pending.len(), |n| n.min(pending.len()));
    let stopped = take < pending.len();
    let batch: Vec<PromptJob> = pending[..take].iter().map(|&i| prep.jobs[i].clone()).collect();

    let progress = JsonlAppender::open(dir.join(PROGRESS_FILE))?;
    let timings = JsonlAppender::open(dir.join(TIMINGS_FILE))?;
    let log_err: std::sync::Mutex<Option<io::Error>> = std::sync::Mutex::new(None);
    let results = run_batch(
        &client,
        &renderer,
        &batch,
        config.parallelism,
        config.failure_policy,
        |bi, result| {
            let i = pending[bi];
            let line = ProgressLine {
                qid: prep.jobs[i].qid.clone(),
                prompt_hash: hashes[i].clone().unwrap_or_default(),
                output: result.as_ref().ok().map(output_record),
                error: result.as_ref().err().map(|e| e.to_string()),
            };
            let mut r = progress.append(&line);
            if let Ok(o) = result {
                r = r.and(timings.append(&TimingLine {
                    qid: o.qid.clone(),
                    latency_ms: o.latency_ms,
                    cached: o.cached,
                }));
            }
            if let Err(e) = r {
                log_err.lock().unwrap_or_else(|e| e.into_inner()).get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = log_err.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(e.into());
    }
    let cache_hits = results
        .iter()
        .filter(|r| r.as_ref().is_ok_and(|o| o.cached))
        .count();

    let mut outcome = RunOutcome {
        run_dir: dir.clone(),
        manifest: None,
        attempted: batch.len(),
        cache_hits,
        resumed,
    };
    if stopped {
        return Ok(outcome);
    }

    let mut fresh: HashMap<usize, Result<OutputRecord, String>> = HashMap::new();
    for (bi, r) in results.into_iter().enumerate() {
        fresh.insert(
            pending[bi],
            r.as_ref().map(output_record).map_err(|e| e.to_string()),
        );
    }
    let mut entries = Vec::with_capacity(prep.jobs.len());
    for (i, q) in prep.inputs.queries.iter().enumerate() {
        let r = &prep.retrieved[i];
        let p = &prep.paired[i];
        let (output, error) = match (&hashes[i], fresh.remove(&i)) {
            (Err(e), _) => (None, Some(e.clone())),
            (Ok(_), Some(Ok(o))) => (Some(o), None),
            (Ok(_), Some(Err(e))) => (None, Some(e)),
            (Ok(_), None) => match resumable(i) {
                Some(line) => (line.output.clone(), None),
                None => (None, Some("not generated".into())),
            },
        };
        entries.push(ManifestEntry {
            qid: q.qid.clone(),
            pos_dids: q.pos_dids.clone(),
            first_hop_top1: r.first_hop_top1,
            hits: r.hits.clone(),
            substitutions: r.substitutions,
            unresolved: r.unresolved.clone(),
            pairs: p.pairs.clone(),
            pair_errors: p.pair_errors.clone(),
            prompt_hash: hashes[i].as_ref().ok().cloned(),
            output,
            error,
        });
    }
    let manifest = assemble_manifest(config, &prep.profile, entries);
    manifest.write(dir.join(MANIFEST_FILE))?;
    outcome.manifest = Some(manifest);
    Ok(outcome)
}

fn output_record(o: &unirag_genclient::GenerationOutput) -> OutputRecord {
    OutputRecord {
        kind: o.kind,
        text: o.text.clone(),
        image_ref: o.image_ref.clone(),
        pairs_used: o.pairs_used,
    }
}

pub fn assemble_manifest(
    config: &ExperimentConfig,
    profile: &GeneratorProfile,
    entries: Vec<ManifestEntry>,
) -> RunManifest {
    let top1: Vec<RetrievalHit> = entries
        .iter()
        .filter_map(|e| {
            e.first_hop_top1.map(|m| RetrievalHit {
                did: String::new(),
                score: 0.0,
                rank: 1,
                modality: m,
                substituted: false,
            })
        })
        .collect();
    RunManifest {
        config_hash: config.hash(),
        config: config.clone(),
        profile: profile.clone(),
        substitution_count: entries.iter().map(|e| e.substitutions).sum(),
        modality_confusion: modality_confusion_rate(&top1, config.task.output_modality()),
        error_count: entries.iter().filter(|e| e.output.is_none()).count(),
        entries,
    }
}
