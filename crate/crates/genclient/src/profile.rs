use serde::{Deserialize, Serialize};
use unirag_core::prompting::Dialect;

/// How image inputs are billed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "unit", rename_all = "kebab-case")]
pub enum ImageRate {
    /// Flat price per image.
    PerImage { price: f64 },
    /// Price per 1k tokens, each image counted as `tokens_per_image` tokens.
    Per1kTokens { price: f64, tokens_per_image: u32 },
}

/// API prices in USD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceCard {
    pub input_text_per_1k: f64,
    pub input_image: ImageRate,
    pub output_text_per_1k: f64,
    /// Characters per token used to approximate text token counts.
    #[serde(default = "default_chars_per_token")]
    pub chars_per_token: f64,
}

fn default_chars_per_token() -> f64 {
    4.0
}

impl PriceCard {
    /// 512×512 high-detail image: 85 base tokens plus one 170-token tile.
    pub const GPT4O_IMAGE_TOKENS: u32 = 255;

    pub fn gpt_4o() -> Self {
        Self {
            input_text_per_1k: 0.005,
            input_image: ImageRate::Per1kTokens {
                price: 0.015,
                tokens_per_image: Self::GPT4O_IMAGE_TOKENS,
            },
            output_text_per_1k: 0.005,
            chars_per_token: 4.0,
        }
    }

    pub fn gemini_pro() -> Self {
        Self {
            input_text_per_1k: 0.000125,
            input_image: ImageRate::PerImage { price: 0.0025 },
            output_text_per_1k: 0.000375,
            chars_per_token: 4.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        let image = match self.input_image {
            ImageRate::PerImage { price } => price,
            ImageRate::Per1kTokens { price, .. } => price,
        };
        [self.input_text_per_1k, image, self.output_text_per_1k]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && self.chars_per_token > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, first one included.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 6,
            base_delay_ms: 250,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): `base · 2^retry`, capped.
    pub fn delay_ms(&self, retry: u32) -> u64 {
        self.base_delay_ms
            .saturating_mul(1u64 << retry.min(32))
            .min(self.max_delay_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorProfile {
    pub name: String,
    pub dialect: Dialect,
    /// Base URL; routes `/v1/chat/completions` and `/v1/images/generations`
    /// are appended.
    pub endpoint_url: String,
    /// Model name sent in the request body; defaults to `name`.
    #[serde(default)]
    pub model: Option<String>,
    pub max_new_tokens: u32,
    /// Example count to fall back to when the endpoint rejects a prompt as too
    /// large.
    #[serde(default)]
    pub max_pairs: Option<usize>,
    /// Environment variable holding a bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub pricing: Option<PriceCard>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

pub const DEFAULT_MAX_NEW_TOKENS: u32 = 400;

impl GeneratorProfile {
    pub fn new(name: impl Into<String>, dialect: Dialect, endpoint_url: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            dialect,
            endpoint_url: endpoint_url.into(),
            model: None,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            max_pairs: None,
            api_key_env: None,
            pricing: None,
            retry: RetryPolicy::default(),
            timeout_secs: default_timeout(),
        }
    }

    /// Built-in profiles: `llava`, `gemini-pro`, `gpt-4o` (captioning) and
    /// `lavit`, `emu2` (image generation).
    pub fn preset(name: &str, endpoint_url: &str) -> Option<Self> {
        let p = match name {
            "llava" => Self::new(name, Dialect::MergedImage, endpoint_url),
            "gemini-pro" => Self {
                pricing: Some(PriceCard::gemini_pro()),
                api_key_env: Some("GEMINI_API_KEY".into()),
                ..Self::new(name, Dialect::Interleaved, endpoint_url)
            },
            "gpt-4o" => Self {
                pricing: Some(PriceCard::gpt_4o()),
                api_key_env: Some("OPENAI_API_KEY".into()),
                ..Self::new(name, Dialect::InterleavedWithSystem, endpoint_url)
            },
            "lavit" => Self::new(name, Dialect::MergedImage, endpoint_url),
            "emu2" => Self {
                max_pairs: Some(4),
                ..Self::new(name, Dialect::Interleaved, endpoint_url)
            },
            _ => return None,
        };
        Some(p)
    }

    pub fn model_name(&self) -> &str {
        self.model.as_deref().unwrap_or(&self.name)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_new_tokens == 0 {
            return Err("max_new_tokens must be positive".into());
        }
        if self.retry.max_attempts == 0 {
            return Err("retry.max_attempts must be positive".into());
        }
        if let Some(card) = &self.pricing {
            if !card.is_valid() {
                return Err("price card has negative or non-finite entries".into());
            }
        }
        if self.name.is_empty() {
            return Err("profile name is empty".into());
        }
        Ok(())
    }
}
