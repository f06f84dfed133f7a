use thiserror::Error;
use unirag_core::prompting::PromptBundle;

use crate::profile::{GeneratorProfile, ImageRate, PriceCard};

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("profile `{0}` has no price card")]
    MissingPricing(String),
}

/// Estimated USD cost of one request.
///
/// Text tokens are approximated as characters / `chars_per_token` over every
/// text part and the system message; output is charged at the full
/// `max_new_tokens`, so the estimate is an upper bound on output spend.
pub fn bundle_cost(card: &PriceCard, max_new_tokens: u32, bundle: &PromptBundle) -> f64 {
    let chars: usize = bundle.texts().map(|t| t.chars().count()).sum();
    let text_tokens = chars as f64 / card.chars_per_token;
    let images = bundle.image_count() as f64;
    let image_cost = match card.input_image {
        ImageRate::PerImage { price } => images * price,
        ImageRate::Per1kTokens {
            price,
            tokens_per_image,
        } => images * f64::from(tokens_per_image) / 1000.0 * price,
    };
    text_tokens / 1000.0 * card.input_text_per_1k
        + image_cost
        + f64::from(max_new_tokens) / 1000.0 * card.output_text_per_1k
}

pub fn estimate_cost(profile: &GeneratorProfile, bundles: &[PromptBundle]) -> Result<f64, CostError> {
    let card = profile
        .pricing
        .as_ref()
        .ok_or_else(|| CostError::MissingPricing(profile.name.clone()))?;
    Ok(bundles
        .iter()
        .map(|b| bundle_cost(card, profile.max_new_tokens, b))
        .sum())
}
