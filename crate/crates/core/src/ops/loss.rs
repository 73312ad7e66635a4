use crate::error::{DsnError, Result};
use crate::tensor::Tensor;

fn log_sum_exp(logits: &[f32]) -> f32 {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let s: f32 = logits.iter().map(|&z| (z - max).exp()).sum();
    max + s.ln()
}

/// Cross-entropy of a single instance.
pub fn cross_entropy(logits: &[f32], label: usize) -> Result<f32> {
    if label >= logits.len() {
        return Err(DsnError::Shape(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(log_sum_exp(logits) - logits[label])
}

/// Mean cross-entropy over a `[B, classes]` batch and its gradient.
pub fn cross_entropy_batch(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    logits.expect_rank(2, "cross_entropy logits")?;
    let (batch, classes) = (logits.dim(0), logits.dim(1));
    if labels.len() != batch {
        return Err(DsnError::Shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let mut total = 0.0f32;
    let mut grad = vec![0.0f32; batch * classes];
    for (b, &label) in labels.iter().enumerate() {
        let z = logits.row(b);
        let loss = cross_entropy(z, label)?;
        total += loss;
        let lse = log_sum_exp(z);
        for c in 0..classes {
            let p = (z[c] - lse).exp();
            grad[b * classes + c] = (p - if c == label { 1.0 } else { 0.0 }) / batch as f32;
        }
    }
    Ok((total / batch as f32, Tensor::new(vec![batch, classes], grad)?))
}
