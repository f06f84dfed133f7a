//! Loopback mock of both generation routes, with fault injection.
//!
//! Control routes: `GET /_mock/stats`, `POST /_mock/reset` (zero counters),
//! `POST /_mock/config` (replace the [`MockConfig`] with the JSON body).
//!
//! In echo mode a caption request is answered with the first in-context
//! caption: the text after `[1] ` on a numbered caption line if there is one,
//! otherwise the first text part that directly follows an image when the
//! prompt holds at least two images, otherwise `zero_shot_reply`. An image
//! request is answered with its first image part, or a 1×1 PNG.

use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tiny_http::{Header, Method, Response, Server};

use crate::wire::{
    image_count, ChatRequest, ChatResponse, Choice, ContentPart, ImageRequest, ImageResponse,
    ResponseMessage, CHAT_ROUTE, IMAGE_ROUTE,
};

/// 1×1 black PNG.
pub const PLACEHOLDER_PNG_B64: &str =
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAIAAACQd1PeAAAADElEQVR4nGNgYGAAAAAEAAH2FzhVAAAAAElFTkSuQmCC";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MockMode {
    Echo,
    Fixed { text: String },
}

/// Requests whose text contains `needle` are answered with `status`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailRule {
    pub needle: String,
    pub status: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub mode: MockMode,
    pub zero_shot_reply: String,
    /// Prompts with more images get 413.
    pub max_images: Option<usize>,
    /// Every n-th generation request (1-based, retries included) gets 429.
    pub rate_limit_every: Option<u64>,
    /// Every generation request gets this status.
    pub fail_status: Option<u16>,
    pub fail_rules: Vec<FailRule>,
    /// Each response is delayed by `hash(body) mod jitter_ms` milliseconds.
    pub jitter_ms: u64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            mode: MockMode::Echo,
            zero_shot_reply: "a photo".into(),
            max_images: None,
            rate_limit_every: None,
            fail_status: None,
            fail_rules: Vec::new(),
            jitter_ms: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockStats {
    /// Requests to either generation route, faulted ones included.
    pub requests: u64,
    pub chat_requests: u64,
    pub image_requests: u64,
    /// Requests answered with an injected error status.
    pub faults: u64,
    pub max_tokens_seen: u32,
    pub max_images_seen: usize,
}

struct State {
    config: Mutex<MockConfig>,
    stats: Mutex<MockStats>,
}

pub struct MockServer {
    addr: SocketAddr,
    server: Arc<Server>,
    state: Arc<State>,
    workers: Vec<JoinHandle<()>>,
    stopping: Arc<AtomicBool>,
}

impl MockServer {
    /// Binds `127.0.0.1` on an ephemeral port.
    pub fn start(config: MockConfig) -> io::Result<Self> {
        Self::bind("127.0.0.1:0", config, 8)
    }

    pub fn bind(addr: &str, config: MockConfig, threads: usize) -> io::Result<Self> {
        let server = Server::http(addr).map_err(io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("mock server is not on an IP socket"))?;
        let server = Arc::new(server);
        let state = Arc::new(State {
            config: Mutex::new(config),
            stats: Mutex::new(MockStats::default()),
        });
        let stopping = Arc::new(AtomicBool::new(false));
        let workers = (0..threads.max(1))
            .map(|_| {
                let (server, state, stopping) = (server.clone(), state.clone(), stopping.clone());
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        if stopping.load(Ordering::SeqCst) {
                            break;
                        }
                        handle(&state, req);
                    }
                })
            })
            .collect();
        Ok(Self {
            addr,
            server,
            state,
            workers,
            stopping,
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> MockStats {
        *lock(&self.state.stats)
    }

    pub fn reset(&self) {
        *lock(&self.state.stats) = MockStats::default();
    }

    pub fn set_config(&self, config: MockConfig) {
        *lock(&self.state.config) = config;
    }

    /// Blocks the calling thread until the process exits.
    pub fn serve_forever(mut self) {
        for w in std::mem::take(&mut self.workers) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stopping.store(true, Ordering::SeqCst);
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn json_response(status: u16, body: String) -> Response<io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    Response::from_string(body)
        .with_status_code(status)
        .with_header(header)
}

fn error_body(message: &str) -> String {
    serde_json::json!({ "error": { "message": message } }).to_string()
}

fn handle(state: &State, mut req: tiny_http::Request) {
    let mut body = String::new();
    let (status, out) = if req.as_reader().read_to_string(&mut body).is_err() {
        (400, error_body("unreadable body"))
    } else {
        route(state, req.method(), req.url(), &body)
    };
    let _ = req.respond(json_response(status, out));
}

fn route(state: &State, method: &Method, url: &str, body: &str) -> (u16, String) {
    match (method, url) {
        (Method::Get, "/_mock/stats") => (200, serde_json::to_string(&*lock(&state.stats)).unwrap_or_default()),
        (Method::Post, "/_mock/reset") => {
            *lock(&state.stats) = MockStats::default();
            (200, "{}".into())
        }
        (Method::Post, "/_mock/config") => match serde_json::from_str::<MockConfig>(body) {
            Ok(c) => {
                *lock(&state.config) = c;
                (200, "{}".into())
            }
            Err(e) => (400, error_body(&e.to_string())),
        },
        (Method::Post, CHAT_ROUTE) => match serde_json::from_str::<ChatRequest>(body) {
            Ok(r) => {
                let parts: Vec<ContentPart> =
                    r.messages.iter().flat_map(|m| m.content.iter().cloned()).collect();
                generation(state, body, &parts, Some(r.max_tokens), |config| {
                    let content = match &config.mode {
                        MockMode::Fixed { text } => text.clone(),
                        MockMode::Echo => echo_caption(&parts, &config.zero_shot_reply),
                    };
                    serde_json::to_string(&ChatResponse {
                        choices: vec![Choice {
                            message: ResponseMessage {
                                role: "assistant".into(),
                                content,
                            },
                        }],
                    })
                    .unwrap_or_default()
                })
            }
            Err(e) => (400, error_body(&e.to_string())),
        },
        (Method::Post, IMAGE_ROUTE) => match serde_json::from_str::<ImageRequest>(body) {
            Ok(r) => generation(state, body, &r.prompt_parts, None, |_| {
                let image_b64 = r
                    .prompt_parts
                    .iter()
                    .find_map(|p| match p {
                        ContentPart::Image { data, .. } => Some(data.clone()),
                        ContentPart::Text { .. } => None,
                    })
                    .unwrap_or_else(|| PLACEHOLDER_PNG_B64.to_owned());
                serde_json::to_string(&ImageResponse { image_b64 }).unwrap_or_default()
            }),
            Err(e) => (400, error_body(&e.to_string())),
        },
        _ => (404, error_body("no such route")),
    }
}

fn generation(
    state: &State,
    body: &str,
    parts: &[ContentPart],
    max_tokens: Option<u32>,
    reply: impl FnOnce(&MockConfig) -> String,
) -> (u16, String) {
    let config = lock(&state.config).clone();
    let images = image_count(parts);
    let n = {
        let mut s = lock(&state.stats);
        s.requests += 1;
        if max_tokens.is_some() {
            s.chat_requests += 1;
        } else {
            s.image_requests += 1;
        }
        s.max_tokens_seen = s.max_tokens_seen.max(max_tokens.unwrap_or(0));
        s.max_images_seen = s.max_images_seen.max(images);
        s.requests
    };
    if config.jitter_ms > 0 {
        let h = Sha256::digest(body.as_bytes());
        let v = u64::from_le_bytes(h[..8].try_into().expect("8 bytes"));
        std::thread::sleep(Duration::from_millis(v % config.jitter_ms));
    }

    let text_has = |needle: &str| {
        parts.iter().any(|p| matches!(p, ContentPart::Text { text } if text.contains(needle)))
    };
    let fault = if config.rate_limit_every.is_some_and(|e| e > 0 && n % e == 0) {
        Some((429, "rate limited"))
    } else if let Some(s) = config.fail_status {
        Some((s, "injected failure"))
    } else if let Some(rule) = config.fail_rules.iter().find(|r| text_has(&r.needle)) {
        Some((rule.status, "injected failure"))
    } else if config.max_images.is_some_and(|m| images > m) {
        Some((413, "too many images"))
    } else {
        None
    };
    if let Some((status, message)) = fault {
        lock(&state.stats).faults += 1;
        return (status, error_body(message));
    }
    (200, reply(&config))
}

fn echo_caption(parts: &[ContentPart], zero_shot_reply: &str) -> String {
    for p in parts {
        if let ContentPart::Text { text } = p {
            if let Some(rest) = text.lines().find_map(|l| l.strip_prefix("[1] ")) {
                return rest.to_owned();
            }
        }
    }
    if image_count(parts) >= 2 {
        for w in parts.windows(2) {
            if let [ContentPart::Image { .. }, ContentPart::Text { text }] = w {
                return text.clone();
            }
        }
    }
    zero_shot_reply.to_owned()
}
