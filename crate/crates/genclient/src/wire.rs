//! Request and response bodies.
//!
//! Captioning posts to `{endpoint}/v1/chat/completions`:
//!
//! ```json
//! {"model": "...", "max_tokens": 400,
//!  "messages": [{"role": "system", "content": [{"type": "text", "text": "..."}]},
//!               {"role": "user", "content": [{"type": "image", "data": "<base64>", "media_type": "image/png"},
//!                                            {"type": "text", "text": "..."}]}]}
//! ```
//!
//! and reads `choices[0].message.content`. Image generation posts
//! `{"model": "...", "prompt_parts": [...]}` to `{endpoint}/v1/images/generations`
//! and reads `image_b64`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use unirag_core::prompting::{Part, PromptBundle};

use crate::profile::GeneratorProfile;

pub const CHAT_ROUTE: &str = "/v1/chat/completions";
pub const IMAGE_ROUTE: &str = "/v1/images/generations";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ContentPart {
    Text { text: String },
    Image { data: String, media_type: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: Vec<ContentPart>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub max_tokens: u32,
    pub messages: Vec<Message>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub model: String,
    pub prompt_parts: Vec<ContentPart>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<Choice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub message: ResponseMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMessage {
    #[serde(default = "assistant")]
    pub role: String,
    pub content: String,
}

fn assistant() -> String {
    "assistant".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResponse {
    pub image_b64: String,
}

pub fn content_parts(bundle: &PromptBundle) -> Vec<ContentPart> {
    bundle
        .parts
        .iter()
        .map(|p| match p {
            Part::Text { text, .. } => ContentPart::Text { text: text.clone() },
            Part::Image(img) => ContentPart::Image {
                data: STANDARD.encode(&img.data),
                media_type: img.media_type.clone(),
            },
        })
        .collect()
}

pub fn chat_request(profile: &GeneratorProfile, bundle: &PromptBundle) -> ChatRequest {
    let mut messages = Vec::new();
    if let Some(system) = &bundle.system {
        messages.push(Message {
            role: "system".into(),
            content: vec![ContentPart::Text {
                text: system.clone(),
            }],
        });
    }
    messages.push(Message {
        role: "user".into(),
        content: content_parts(bundle),
    });
    ChatRequest {
        model: profile.model_name().to_owned(),
        max_tokens: profile.max_new_tokens,
        messages,
    }
}

pub fn image_request(profile: &GeneratorProfile, bundle: &PromptBundle) -> ImageRequest {
    let mut prompt_parts = Vec::new();
    if let Some(system) = &bundle.system {
        prompt_parts.push(ContentPart::Text {
            text: system.clone(),
        });
    }
    prompt_parts.extend(content_parts(bundle));
    ImageRequest {
        model: profile.model_name().to_owned(),
        prompt_parts,
    }
}

pub fn image_count(parts: &[ContentPart]) -> usize {
    parts
        .iter()
        .filter(|p| matches!(p, ContentPart::Image { .. }))
        .count()
}
