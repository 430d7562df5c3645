use super::model::Logits;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::OutOfRange { what: "class label", value: bad as i64, max: k as i64 - 1 });
    }
    let mut grad = softmax_rows(logits);
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
        grad.data_mut()[i * k + label] -= 1.0;
    }
    let inv_n = 1.0 / n as f64;
    for g in grad.data_mut() {
        *g *= inv_n;
    }
    Ok((total * inv_n, grad))
}

/// Sum of both heads' mean cross-entropies, plus per-head logit gradients.
pub fn two_head_loss(
    logits: &Logits,
    angle_labels: &[usize],
    pos_labels: &[usize],
) -> Result<(f64, Tensor, Tensor)> {
    let (la, ga) = cross_entropy(&logits.angle, angle_labels)?;
    let (lp, gp) = cross_entropy(&logits.position, pos_labels)?;
    Ok((la + lp, ga, gp))
}

pub fn loss(logits: &Logits, angle_labels: &[usize], pos_labels: &[usize]) -> Result<f64> {
    two_head_loss(logits, angle_labels, pos_labels).map(|(l, _, _)| l)
}
