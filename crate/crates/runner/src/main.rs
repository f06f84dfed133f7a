use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use unirag::config::{ConfigError, ExperimentConfig, Overrides, RetrieverKind};
use unirag::evaluate::{evaluate_summary, EvalSummary, FeatureSources};
use unirag::manifest::{latest_run_dir, RunManifest, EVAL_FILE, MANIFEST_FILE};
use unirag::pipeline::{self, dry_run, prepare, run_experiment, RunControl, RunnerError};
use unirag::report::{render_jsonl, render_table, rows_for};
use unirag::synth::{write_dataset, SynthSpec};
use unirag_core::corpus::{load_pool, LoadOptions};
use unirag_core::prompting::{DirLoader, PromptRenderer};
use unirag_core::retriever::Index;
use unirag_core::uemb::EmbeddingStore;
use unirag_core::Modality;
use unirag_genclient::mock::{MockConfig, MockServer};
use unirag_genclient::GenClient;

#[derive(Parser)]
#[command(name = "unirag", version, about = "Retrieval-augmented few-shot captioning and image generation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// fused, random or none.
    #[arg(long)]
    retriever: Option<RetrieverKind>,
    /// Generator preset name.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args, Clone)]
struct Out {
    /// Write JSON lines here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load pool embeddings and print index statistics.
    Index {
        #[arg(long, conflicts_with = "embeddings")]
        config: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// First-hop retrieval with wrong-modality substitution.
    Retrieve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        out: Out,
    },
    /// Retrieval plus example-pair completion.
    Pair {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        out: Out,
    },
    /// Render prompts (transcripts and content hashes), no network.
    Prompt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        out: Out,
        /// Print the cost estimate only.
        #[arg(long)]
        dry_run: bool,
    },
    /// Generate outputs and write the manifest; resumes the latest run.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dry_run: bool,
        /// Start a new run directory.
        #[arg(long)]
        fresh: bool,
    },
    /// Score a finished run.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Run directory; defaults to the latest run of the config.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Tabulate evaluated runs.
    Report {
        /// Run directories holding manifest.json and eval.json.
        runs: Vec<PathBuf>,
        /// Also write the rows as JSON lines here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// All stages: generate, evaluate, report.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        fresh: bool,
    },
    /// Serve the mock generator until killed.
    MockServer {
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: String,
        /// Mock behaviour as JSON.
        #[arg(long)]
        mock_config: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        threads: usize,
    },
    /// Write a small synthetic dataset and two ready-to-run configs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        images: usize,
        #[arg(long, default_value_t = 50)]
        query_images: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "http://127.0.0.1:8089")]
        endpoint: String,
    },
}

/// Process outcome: 0 ok, 1 config error, 2 partial failures, 3 fatal.
enum Status {
    Ok,
    Partial,
}

fn load_config(c: &Common) -> Result<ExperimentConfig, RunnerError> {
    let mut config = ExperimentConfig::load(&c.config)?;
    config.apply(&Overrides {
        k: c.k,
        seed: c.seed,
        retriever: c.retriever,
        profile: c.profile.clone(),
        parallelism: c.parallelism,
    });
    Ok(config)
}

fn emit_jsonl<T: Serialize>(out: &Out, items: &[T]) -> Result<(), RunnerError> {
    let mut text = String::new();
    for it in items {
        text.push_str(&serde_json::to_string(it).map_err(io::Error::other)?);
        text.push('\n');
    }
    match &out.out {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn print_cost(config: &ExperimentConfig) -> Result<Status, RunnerError> {
    let est = dry_run(config)?;
    println!("prompts: {}", est.bundles);
    println!("estimated cost (USD): {:.4}", est.usd);
    Ok(Status::Ok)
}

fn evaluate_dir(config: &ExperimentConfig, dir: &Path) -> Result<EvalSummary, RunnerError> {
    let manifest = RunManifest::read(dir.join(MANIFEST_FILE))
        .map_err(|e| RunnerError::Input(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
    if manifest.config_hash != config.hash() {
        eprintln!("warning: manifest was produced by a different config");
    }
    let pool = load_pool(config.resolve(&config.data.pool), LoadOptions::default())
        .map_err(|e| RunnerError::Input(format!("pool: {e}")))?;
    let sources = FeatureSources::load(config)?;
    let summary = evaluate_summary(&manifest, &pool, &sources)?;
    let json = serde_json::to_string_pretty(&summary).map_err(io::Error::other)? + "\n";
    fs::write(dir.join(EVAL_FILE), &json)?;
    print!("{}", render_table(&rows_for(&manifest, &summary)));
    for s in &summary.generated.skipped {
        eprintln!("skipped {s}");
    }
    Ok(summary)
}

fn generate(config: &ExperimentConfig, fresh: bool) -> Result<(PathBuf, RunManifest), RunnerError> {
    let outcome = run_experiment(config, RunControl { fresh, stop_after: None })?;
    let manifest = outcome.manifest.expect("unbounded run completes");
    eprintln!(
        "run dir: {}\nqueries: {}  generated: {}  cached: {}  resumed: {}  failed: {}  substitutions: {}",
        outcome.run_dir.display(),
        manifest.entries.len(),
        outcome.attempted,
        outcome.cache_hits,
        outcome.resumed,
        manifest.error_count,
        manifest.substitution_count,
    );
    if let Some(c) = manifest.modality_confusion {
        eprintln!("first-hop modality confusion: {c:.4}");
    }
    Ok((outcome.run_dir, manifest))
}

fn partial_if(errors: usize) -> Status {
    if errors > 0 {
        Status::Partial
    } else {
        Status::Ok
    }
}

fn dispatch(cmd: Cmd) -> Result<Status, RunnerError> {
    match cmd {
        Cmd::Index { config, embeddings } => {
            let path = match (config, embeddings) {
                (_, Some(e)) => e,
                (Some(c), None) => {
                    let c = ExperimentConfig::load(c)?;
                    let e = c.data.embeddings.as_ref().ok_or_else(|| {
                        ConfigError("config has no data.embeddings".into())
                    })?;
                    c.resolve(e)
                }
                (None, None) => {
                    return Err(ConfigError("give --config or --embeddings".into()).into())
                }
            };
            let store = EmbeddingStore::read_file(&path)
                .map_err(|e| RunnerError::Input(format!("{}: {e}", path.display())))?;
            let index = Index::build(store).map_err(|e| RunnerError::Input(e.to_string()))?;
            println!("documents: {}", index.len());
            println!("dim: {}", index.dim());
            println!("text: {}", index.count_by_modality(Modality::Text));
            println!("image: {}", index.count_by_modality(Modality::Image));
            println!("matrix bytes: {}", index.matrix_bytes());
            Ok(Status::Ok)
        }
        Cmd::Retrieve { common, out } => {
            let config = load_config(&common)?;
            config.validate()?;
            let inputs = pipeline::load_inputs(&config)?;
            let retrieved = pipeline::retrieve_all(&config, &inputs);
            emit_jsonl(&out, &retrieved)?;
            let total: usize = retrieved.iter().map(|r| r.substitutions).sum();
            eprintln!("substitutions: {total}");
            Ok(partial_if(retrieved.iter().filter(|r| r.error.is_some()).count()))
        }
        Cmd::Pair { common, out } => {
            let config = load_config(&common)?;
            let prep = prepare(&config)?;
            emit_jsonl(&out, &prep.paired)?;
            Ok(partial_if(prep.paired.iter().filter(|p| p.error.is_some()).count()))
        }
        Cmd::Prompt {
            common,
            out,
            dry_run,
        } => {
            let config = load_config(&common)?;
            if dry_run {
                return print_cost(&config);
            }
            let prep = prepare(&config)?;
            let loader = DirLoader::new(config.resolve(&config.data.image_root));
            let renderer = PromptRenderer::new(&loader);
            let client = GenClient::new(prep.profile.clone())?;
            #[derive(Serialize)]
            struct PromptLine {
                qid: String,
                #[serde(skip_serializing_if = "Option::is_none")]
                prompt_hash: Option<String>,
                #[serde(skip_serializing_if = "Option::is_none")]
                transcript: Option<String>,
                #[serde(skip_serializing_if = "Option::is_none")]
                error: Option<String>,
            }
            let mut lines = Vec::new();
            for (job, p) in prep.jobs.iter().zip(&prep.paired) {
                let rendered = match &p.error {
                    Some(e) => Err(e.clone()),
                    None => client.render(&renderer, job).map_err(|e| e.to_string()),
                };
                lines.push(match rendered {
                    Ok(b) => PromptLine {
                        qid: job.qid.clone(),
                        prompt_hash: Some(b.content_hash()),
                        transcript: Some(b.transcript()),
                        error: None,
                    },
                    Err(e) => PromptLine {
                        qid: job.qid.clone(),
                        prompt_hash: None,
                        transcript: None,
                        error: Some(e),
                    },
                });
            }
            emit_jsonl(&out, &lines)?;
            Ok(partial_if(lines.iter().filter(|l| l.error.is_some()).count()))
        }
        Cmd::Generate {
            common,
            dry_run,
            fresh,
        } => {
            let config = load_config(&common)?;
            if dry_run {
                return print_cost(&config);
            }
            let (_, manifest) = generate(&config, fresh)?;
            Ok(partial_if(manifest.error_count))
        }
        Cmd::Evaluate { common, run_dir } => {
            let config = load_config(&common)?;
            config.validate()?;
            let dir = match run_dir {
                Some(d) => d,
                None => latest_run_dir(&config.resolve(&config.run_root), &config.hash())?
                    .ok_or_else(|| RunnerError::Input("no run found for this config".into()))?,
            };
            let s = evaluate_dir(&config, &dir)?;
            Ok(partial_if(s.generated.dropped))
        }
        Cmd::Report { runs, out } => {
            let mut rows = Vec::new();
            for dir in &runs {
                let manifest = RunManifest::read(dir.join(MANIFEST_FILE)).map_err(|e| {
                    RunnerError::Input(format!("{}: {e}", dir.join(MANIFEST_FILE).display()))
                })?;
                let text = fs::read_to_string(dir.join(EVAL_FILE)).map_err(|e| {
                    RunnerError::Input(format!(
                        "{}: {e} (run `unirag evaluate` first)",
                        dir.join(EVAL_FILE).display()
                    ))
                })?;
                let summary: EvalSummary = serde_json::from_str(&text)
                    .map_err(|e| RunnerError::Input(format!("{}: {e}", dir.display())))?;
                rows.extend(rows_for(&manifest, &summary));
            }
            print!("{}", render_table(&rows));
            if let Some(p) = out {
                fs::write(p, render_jsonl(&rows))?;
            }
            Ok(Status::Ok)
        }
        Cmd::Run {
            common,
            dry_run,
            fresh,
        } => {
            let config = load_config(&common)?;
            if dry_run {
                return print_cost(&config);
            }
            let (dir, manifest) = generate(&config, fresh)?;
            evaluate_dir(&config, &dir)?;
            Ok(partial_if(manifest.error_count))
        }
        Cmd::MockServer {
            addr,
            mock_config,
            threads,
        } => {
            let config: MockConfig = match mock_config {
                Some(p) => {
                    let text = fs::read_to_string(&p)?;
                    serde_json::from_str(&text)
                        .map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
                }
                None => MockConfig::default(),
            };
            let server = MockServer::bind(&addr, config, threads)?;
            println!("mock generator listening on {}", server.url());
            server.serve_forever();
            Ok(Status::Ok)
        }
        Cmd::Synth {
            out,
            images,
            query_images,
            seed,
            endpoint,
        } => {
            if query_images > images {
                return Err(ConfigError("--query-images exceeds --images".into()).into());
            }
            let spec = SynthSpec {
                images,
                query_images,
                seed,
                ..Default::default()
            };
            let data = write_dataset(&out, &spec, &endpoint)?;
            println!(
                "wrote {} pool docs, {} caption queries, {} image-generation queries to {}",
                data.docs.len(),
                data.caption_queries.len(),
                data.image_gen_queries.len(),
                out.display()
            );
            Ok(Status::Ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
