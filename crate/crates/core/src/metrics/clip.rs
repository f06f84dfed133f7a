use super::MetricError;

/// Default scale applied to the clamped cosine.
pub const CLIP_SCORE_W: f64 = 2.5;

/// Mean of `w · max(cos(image, text), 0)` over aligned pairs.
pub fn clip_score(image_vecs: &[Vec<f32>], text_vecs: &[Vec<f32>], w: f64) -> Result<f64, MetricError> {
    if image_vecs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if image_vecs.len() != text_vecs.len() {
        return Err(MetricError::CountMismatch {
            cands: image_vecs.len(),
            refs: text_vecs.len(),
        });
    }
    let mut total = 0.0;
    for (i, (a, b)) in image_vecs.iter().zip(text_vecs).enumerate() {
        if a.len() != b.len() {
            return Err(MetricError::Dim(a.len(), b.len()));
        }
        let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
        for (&x, &y) in a.iter().zip(b) {
            let (x, y) = (f64::from(x), f64::from(y));
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        if !(dot.is_finite() && na.is_finite() && nb.is_finite()) {
            return Err(MetricError::NonFinite("clip vectors"));
        }
        if na == 0.0 || nb == 0.0 {
            return Err(MetricError::ZeroVector(i));
        }
        total += w * (dot / (na.sqrt() * nb.sqrt())).max(0.0);
    }
    Ok(total / image_vecs.len() as f64)
}
