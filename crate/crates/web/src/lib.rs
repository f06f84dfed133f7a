//! In-browser demos built on `unirag-core`.
//!
//! Each demo is a plain Rust function (tested natively) with a thin
//! `wasm_bindgen` wrapper that exchanges bytes or JSON strings with the page
//! in `www/index.html`.

use image::{Rgb, RgbImage};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::Serialize;
use unirag_core::metrics::{caption_report, feature_stats, fid, tokenize};
use unirag_core::prompting::{encode_png, merge_images};
use wasm_bindgen::prelude::*;

/// Tiles drawn inside each demo image so the stacking is visible.
fn swatch(w: u32, h: u32, rgb: u32) -> RgbImage {
    let base = [(rgb >> 16) as u8, (rgb >> 8) as u8, rgb as u8];
    let dark = base.map(|c| c / 2);
    RgbImage::from_fn(w, h, |x, y| {
        if (x / 8 + y / 8) % 2 == 0 {
            Rgb(base)
        } else {
            Rgb(dark)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Merged {
    pub width: u32,
    pub height: u32,
    /// Top row of each input in the merged image.
    pub offsets: Vec<u32>,
    pub png: Vec<u8>,
}

/// Stacks checkered swatches of the given sizes and `0xRRGGBB` colours the
/// way the merged-image prompt dialect does.
pub fn merge_demo(widths: &[u32], heights: &[u32], colors: &[u32]) -> Result<Merged, String> {
    if widths.len() != heights.len() || widths.len() != colors.len() {
        return Err("widths, heights and colors need the same length".into());
    }
    if widths.iter().chain(heights).any(|&d| d == 0 || d > 2048) {
        return Err("sides must be between 1 and 2048".into());
    }
    let tiles: Vec<RgbImage> = widths
        .iter()
        .zip(heights)
        .zip(colors)
        .map(|((&w, &h), &c)| swatch(w, h, c))
        .collect();
    let merged = merge_images(&tiles, Rgb([255, 255, 255])).map_err(|e| e.to_string())?;
    let mut offsets = Vec::with_capacity(heights.len());
    let mut top = 0;
    for &h in heights {
        offsets.push(top);
        top += h;
    }
    Ok(Merged {
        width: merged.width(),
        height: merged.height(),
        offsets,
        png: encode_png(&merged).map_err(|e| e.to_string())?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidComparison {
    /// Closed form for two diagonal Gaussians.
    pub analytic: f64,
    /// FID of the empirical statistics of `samples` draws from each.
    pub empirical: f64,
    pub mean_term: f64,
    pub cov_term: f64,
    pub samples: usize,
}

/// Compares the closed-form Fréchet distance of `N(mu_a, diag(sd_a²))` and
/// `N(mu_b, diag(sd_b²))` with the estimate from samples.
pub fn fid_explorer(
    mu_a: &[f64],
    sd_a: &[f64],
    mu_b: &[f64],
    sd_b: &[f64],
    samples: usize,
    seed: u64,
) -> Result<FidComparison, String> {
    let d = mu_a.len();
    if d == 0 || [sd_a.len(), mu_b.len(), sd_b.len()].iter().any(|&l| l != d) {
        return Err("all four vectors need the same, non-zero length".into());
    }
    if sd_a.iter().chain(sd_b).any(|&s| !(s >= 0.0 && s.is_finite())) {
        return Err("standard deviations must be finite and non-negative".into());
    }
    if samples < 2 || samples > 200_000 {
        return Err("samples must be between 2 and 200000".into());
    }
    let mean_term: f64 = mu_a.iter().zip(mu_b).map(|(a, b)| (a - b) * (a - b)).sum();
    let cov_term: f64 = sd_a.iter().zip(sd_b).map(|(a, b)| (a - b) * (a - b)).sum();

    let mut rng = StdRng::seed_from_u64(seed);
    let mut draw = |mu: &[f64], sd: &[f64]| -> Vec<Vec<f32>> {
        (0..samples)
            .map(|_| {
                mu.iter()
                    .zip(sd)
                    .map(|(m, s)| (m + s * rng.sample::<f64, _>(StandardNormal)) as f32)
                    .collect()
            })
            .collect()
    };
    let a = draw(mu_a, sd_a);
    let b = draw(mu_b, sd_b);
    let sa = feature_stats(&a).map_err(|e| e.to_string())?;
    let sb = feature_stats(&b).map_err(|e| e.to_string())?;
    Ok(FidComparison {
        analytic: mean_term + cov_term,
        empirical: fid(&sa, &sb).map_err(|e| e.to_string())?,
        mean_term,
        cov_term,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptionScores {
    pub images: usize,
    pub metrics: std::collections::BTreeMap<String, f64>,
    /// Tokens of every candidate, in input order.
    pub candidate_tokens: Vec<Vec<String>>,
}

/// Scores blocks separated by blank lines: the first line of a block is the
/// candidate caption, the remaining lines its references.
pub fn caption_metrics(text: &str) -> Result<CaptionScores, String> {
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    for block in text.split("\n\n").map(str::trim).filter(|b| !b.is_empty()) {
        let mut lines = block.lines().map(str::trim).filter(|l| !l.is_empty());
        let cand = lines.next().unwrap_or_default();
        let r: Vec<_> = lines.map(tokenize).collect();
        if r.is_empty() {
            return Err(format!("`{cand}` has no reference lines"));
        }
        cands.push(tokenize(cand));
        refs.push(r);
    }
    let report = caption_report(&cands, &refs).map_err(|e| e.to_string())?;
    Ok(CaptionScores {
        images: cands.len(),
        metrics: report.values,
        candidate_tokens: cands.into_iter().map(|c| c.tokens).collect(),
    })
}

fn js_err(e: String) -> JsError {
    JsError::new(&e)
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

/// PNG bytes of the merged image.
#[wasm_bindgen(js_name = mergePng)]
pub fn merge_png(widths: &[u32], heights: &[u32], colors: &[u32]) -> Result<Vec<u8>, JsError> {
    merge_demo(widths, heights, colors).map(|m| m.png).map_err(js_err)
}

/// JSON `{width, height, offsets}` of the merged layout.
#[wasm_bindgen(js_name = mergeLayout)]
pub fn merge_layout(widths: &[u32], heights: &[u32], colors: &[u32]) -> Result<String, JsError> {
    let m = merge_demo(widths, heights, colors).map_err(js_err)?;
    to_json(&serde_json::json!({"width": m.width, "height": m.height, "offsets": m.offsets}))
}

#[wasm_bindgen(js_name = fidExplorer)]
pub fn fid_explorer_js(
    mu_a: &[f64],
    sd_a: &[f64],
    mu_b: &[f64],
    sd_b: &[f64],
    samples: u32,
    seed: u32,
) -> Result<String, JsError> {
    let r = fid_explorer(mu_a, sd_a, mu_b, sd_b, samples as usize, seed as u64).map_err(js_err)?;
    to_json(&r)
}

#[wasm_bindgen(js_name = captionMetrics)]
pub fn caption_metrics_js(text: &str) -> Result<String, JsError> {
    to_json(&caption_metrics(text).map_err(js_err)?)
}
