use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{exp, ln};

/// Mean cross-entropy of `[B, K]` logits with max-subtraction; returns the loss and the softmax.
pub fn cross_entropy_forward(shape: &[usize], logits: &[f64], labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let [b, k] = *shape else {
        return Err(Error::InvalidShape {
            op: "cross_entropy",
            detail: alloc::format!("logits must be [batch, classes], got {shape:?}"),
        });
    };
    if labels.len() != b {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let mut probs = Vec::with_capacity(b * k);
    let mut total = 0.0;
    for (row, &y) in logits.chunks_exact(k).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| exp(v - m)).sum();
        let log_z = ln(z);
        total += log_z - (row[y] - m);
        probs.extend(row.iter().map(|v| exp(v - m) / z));
    }
    Ok((total / b as f64, probs))
}

pub fn cross_entropy_backward(labels: &[usize], probs: &[f64], upstream: f64, dlogits: &mut [f64]) {
    let b = labels.len();
    let k = probs.len() / b;
    let scale = upstream / b as f64;
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..k {
            let onehot = if j == y { 1.0 } else { 0.0 };
            dlogits[i * k + j] += scale * (probs[i * k + j] - onehot);
        }
    }
}
