//! Retrieval-augmented few-shot prompting for image captioning and
//! text-to-image generation.
//!
//! * [`corpus`]: candidate pools and query sets (JSONL).
//! * [`uemb`]: the binary embedding container.
//! * [`retriever`]: exact inner-product search over a fused embedding index.
//! * [`pairing`]: turning retrieved items into image–caption example pairs.
//! * [`prompting`]: rendering examples and a query into generator prompts.
//! * [`metrics`]: caption and image-feature metrics.
//! * [`sampling`]: the seeded generator shared by every random choice.

pub mod corpus;
pub mod metrics;
pub mod pairing;
pub mod prompting;
pub mod retriever;
pub mod sampling;
pub mod uemb;

pub use corpus::{CandidateDoc, CandidatePool, Modality, QueryRecord, TaskDirection};
pub use pairing::{ExamplePair, Provenance};
pub use prompting::{Dialect, GenTask, PromptBundle, PromptRenderer};
pub use retriever::{FusionWeights, Index, RetrievalHit};
pub use uemb::EmbeddingStore;
