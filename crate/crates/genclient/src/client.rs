use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unirag_core::corpus::QueryRecord;
use unirag_core::pairing::ExamplePair;
use unirag_core::prompting::{truncate_examples, GenTask, PromptBundle, PromptRenderer, RenderError};

use crate::cache::{cache_key, CachedResponse, ResponseCache};
use crate::profile::GeneratorProfile;
use crate::wire::{chat_request, image_request, ChatResponse, ImageResponse, CHAT_ROUTE, IMAGE_ROUTE};

const RETRYABLE: [u16; 5] = [429, 500, 502, 503, 504];
const MAX_RESPONSE_BYTES: u64 = 256 << 20;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("prompt with {pairs} example(s) rejected as too large: {body}")]
    PromptTooLarge { pairs: usize, body: String },
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("cache or output i/o: {0}")]
    Io(#[from] io::Error),
}

/// Everything needed to render and send one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptJob {
    pub qid: String,
    pub query: QueryRecord,
    pub examples: Vec<ExamplePair>,
    pub task: GenTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    Text,
    Image,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub qid: String,
    pub kind: OutputKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub latency_ms: u64,
    pub cached: bool,
    /// Examples in the prompt that produced this output.
    pub pairs_used: usize,
}

/// Blocking, thread-safe generator client.
pub struct GenClient {
    profile: GeneratorProfile,
    agent: ureq::Agent,
    cache: Option<ResponseCache>,
    image_dir: Option<PathBuf>,
    requests: AtomicU64,
}

impl GenClient {
    pub fn new(profile: GeneratorProfile) -> Result<Self, GenError> {
        profile.validate().map_err(GenError::Profile)?;
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(profile.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            profile,
            agent,
            cache: None,
            image_dir: None,
            requests: AtomicU64::new(0),
        })
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Where generated images are written, as `<dir>/<qid>.<ext>`.
    pub fn with_image_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.image_dir = Some(dir.into());
        self
    }

    pub fn profile(&self) -> &GeneratorProfile {
        &self.profile
    }

    /// HTTP requests sent so far, retries included.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn render(&self, renderer: &PromptRenderer, job: &PromptJob) -> Result<PromptBundle, GenError> {
        Ok(renderer.render_few_shot(&job.query, &job.examples, job.task, self.profile.dialect)?)
    }

    /// Renders, sends (or serves from cache) and decodes one job.
    ///
    /// When the endpoint answers 413 and the profile sets `max_pairs` below
    /// the job's example count, the prompt is re-rendered with the first
    /// `max_pairs` examples and sent once more. The response is cached under
    /// the original bundle's key as well, so reruns skip the rejected call.
    pub fn generate(&self, renderer: &PromptRenderer, job: &PromptJob) -> Result<GenerationOutput, GenError> {
        let started = Instant::now();
        let bundle = self.render(renderer, job)?;
        let key = cache_key(&self.profile.name, &bundle.content_hash());
        if let Some(hit) = self.cache_get(&key) {
            return self.finish(job, hit, started, true);
        }
        let response = match self.send(&bundle, job.task) {
            Ok(r) => r,
            Err(GenError::PromptTooLarge { .. })
                if self.profile.max_pairs.is_some_and(|m| m < job.examples.len()) =>
            {
                let max = self.profile.max_pairs.unwrap_or(0);
                let cut = PromptJob {
                    examples: truncate_examples(&job.examples, max),
                    ..job.clone()
                };
                let small = self.render(renderer, &cut)?;
                let small_key = cache_key(&self.profile.name, &small.content_hash());
                let r = match self.cache_get(&small_key) {
                    Some(r) => r,
                    None => {
                        let r = self.send(&small, job.task)?;
                        self.cache_put(&small_key, &r)?;
                        r
                    }
                };
                r
            }
            Err(e) => return Err(e),
        };
        self.cache_put(&key, &response)?;
        self.finish(job, response, started, false)
    }

    fn cache_get(&self, key: &str) -> Option<CachedResponse> {
        self.cache.as_ref().and_then(|c| c.get(key))
    }

    fn cache_put(&self, key: &str, value: &CachedResponse) -> Result<(), GenError> {
        if let Some(c) = &self.cache {
            c.put(key, value)?;
        }
        Ok(())
    }

    fn finish(
        &self,
        job: &PromptJob,
        response: CachedResponse,
        started: Instant,
        cached: bool,
    ) -> Result<GenerationOutput, GenError> {
        let (kind, text, image_ref) = match job.task {
            GenTask::Caption => {
                let text = response
                    .text
                    .ok_or_else(|| GenError::Decode("caption response without text".into()))?;
                (OutputKind::Text, Some(text), None)
            }
            GenTask::ImageGen => {
                let b64 = response
                    .image_b64
                    .ok_or_else(|| GenError::Decode("image response without image".into()))?;
                let bytes = STANDARD
                    .decode(b64)
                    .map_err(|e| GenError::Decode(format!("image_b64: {e}")))?;
                let dir = self.image_dir.as_deref().ok_or_else(|| {
                    GenError::Profile("image generation needs an output directory".into())
                })?;
                (OutputKind::Image, None, Some(write_image(dir, &job.qid, &bytes)?))
            }
        };
        Ok(GenerationOutput {
            qid: job.qid.clone(),
            kind,
            text,
            image_ref,
            latency_ms: started.elapsed().as_millis() as u64,
            cached,
            pairs_used: response.pairs_used,
        })
    }

    fn send(&self, bundle: &PromptBundle, task: GenTask) -> Result<CachedResponse, GenError> {
        let base = self.profile.endpoint_url.trim_end_matches('/');
        let (url, body) = match task {
            GenTask::Caption => (
                format!("{base}{CHAT_ROUTE}"),
                serde_json::to_vec(&chat_request(&self.profile, bundle)),
            ),
            GenTask::ImageGen => (
                format!("{base}{IMAGE_ROUTE}"),
                serde_json::to_vec(&image_request(&self.profile, bundle)),
            ),
        };
        let body = body.map_err(|e| GenError::Decode(e.to_string()))?;
        let api_key = self
            .profile
            .api_key_env
            .as_deref()
            .and_then(|v| std::env::var(v).ok());

        let attempts = self.profile.retry.max_attempts;
        let mut last = GenError::Transport {
            attempts: 0,
            message: "no attempt made".into(),
        };
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.profile.retry.delay_ms(attempt - 1)));
            }
            self.requests.fetch_add(1, Ordering::Relaxed);
            let mut req = self.agent.post(&url).header("Content-Type", "application/json");
            if let Some(key) = &api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = match req.send(&body[..]) {
                Ok(r) => r,
                Err(e) => {
                    last = GenError::Transport {
                        attempts: attempt + 1,
                        message: e.to_string(),
                    };
                    continue;
                }
            };
            let status = resp.status().as_u16();
            let text = match resp.body_mut().with_config().limit(MAX_RESPONSE_BYTES).read_to_string() {
                Ok(t) => t,
                Err(e) => {
                    last = GenError::Transport {
                        attempts: attempt + 1,
                        message: e.to_string(),
                    };
                    continue;
                }
            };
            match status {
                200..=299 => return decode(task, &text, bundle.k),
                413 => {
                    return Err(GenError::PromptTooLarge {
                        pairs: bundle.k,
                        body: text,
                    })
                }
                s if RETRYABLE.contains(&s) => last = GenError::Provider { status: s, body: text },
                s => return Err(GenError::Provider { status: s, body: text }),
            }
        }
        Err(last)
    }
}

fn decode(task: GenTask, body: &str, pairs_used: usize) -> Result<CachedResponse, GenError> {
    match task {
        GenTask::Caption => {
            let r: ChatResponse =
                serde_json::from_str(body).map_err(|e| GenError::Decode(e.to_string()))?;
            let choice = r
                .choices
                .into_iter()
                .next()
                .ok_or_else(|| GenError::Decode("no choices".into()))?;
            Ok(CachedResponse {
                text: Some(choice.message.content.trim().to_owned()),
                image_b64: None,
                pairs_used,
            })
        }
        GenTask::ImageGen => {
            let r: ImageResponse =
                serde_json::from_str(body).map_err(|e| GenError::Decode(e.to_string()))?;
            STANDARD
                .decode(&r.image_b64)
                .map_err(|e| GenError::Decode(format!("image_b64: {e}")))?;
            Ok(CachedResponse {
                text: None,
                image_b64: Some(r.image_b64),
                pairs_used,
            })
        }
    }
}

/// File-system-safe rendering of a query id.
fn file_stem(qid: &str) -> String {
    qid.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn write_image(dir: &Path, qid: &str, bytes: &[u8]) -> io::Result<String> {
    std::fs::create_dir_all(dir)?;
    let ext = match bytes {
        [0x89, b'P', b'N', b'G', ..] => "png",
        [0xff, 0xd8, ..] => "jpg",
        _ => "bin",
    };
    let name = format!("{}.{ext}", file_stem(qid));
    std::fs::write(dir.join(&name), bytes)?;
    Ok(name)
}
