use ndarray::Array2;

use crate::error::{Error, Result};

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_xent(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (b, c) = logits.dim();
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!("label {bad} >= {c} classes")));
    }
    let mut grad = Array2::zeros((b, c));
    let mut loss = 0.0;
    for (i, row) in logits.outer_iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[labels[i]];
        for j in 0..c {
            let p = (row[j] - lse).exp();
            grad[[i, j]] = (p - f64::from(u8::from(j == labels[i]))) / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}
