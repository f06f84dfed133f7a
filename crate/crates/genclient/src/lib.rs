//! Client for remote caption and image generators.
//!
//! [`GenClient::generate`] renders a [`PromptJob`] with the profile's dialect,
//! sends it over the wire format in [`wire`], retries transient failures with
//! exponential backoff and stores responses in a content-addressed
//! [`ResponseCache`]. [`run_batch`] fans jobs out over a bounded worker pool.
//! [`mock::MockServer`] implements both routes for tests and dry runs.

pub mod batch;
pub mod cache;
pub mod client;
pub mod cost;
pub mod mock;
pub mod profile;
pub mod wire;

pub use batch::{run_batch, BatchAborted, FailurePolicy, JobResult};
pub use cache::{cache_key, CachedResponse, ResponseCache};
pub use client::{GenClient, GenError, GenerationOutput, OutputKind, PromptJob};
pub use cost::{bundle_cost, estimate_cost, CostError};
pub use profile::{GeneratorProfile, ImageRate, PriceCard, RetryPolicy, DEFAULT_MAX_NEW_TOKENS};
