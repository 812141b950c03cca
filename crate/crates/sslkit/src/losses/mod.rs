//! Training objectives with hand-derived gradients.

mod supcon;
mod swav;

pub use supcon::{supcon_loss, SupconOutput};
pub use swav::{
    sinkhorn_assign, swav_codes, swav_loss, AssignmentQueue, AssignmentResult, PrototypeBank,
    SwavOutput, CODE_TEMPERATURE,
};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Weighted cross-entropy over probability rows.
#[derive(Debug, Clone)]
pub struct CrossEntropyOutput {
    pub value: f64,
    /// Gradient with respect to the logits that produced `probs`.
    pub grad_logits: Matrix,
    /// Number of probability entries clamped at the log floor.
    pub clamped: usize,
}

/// Inverse-class-frequency weights normalized to mean 1.
pub fn inverse_frequency_weights(class_counts: &[usize]) -> Vec<f64> {
    let raw: Vec<f64> = class_counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
        .collect();
    let present = raw.iter().filter(|&&w| w > 0.0).count().max(1);
    let mean = raw.iter().sum::<f64>() / present as f64;
    raw.iter()
        .map(|&w| if w > 0.0 { w / mean } else { 1.0 })
        .collect()
}

/// L = -(1/N) sum_i weight(y_i) sum_j y_ij ln p_ij, with row weight
/// sum_j y_ij w_j for soft (mixup) targets. Gradient with respect to
/// logits is weight * (p - y) / N.
pub fn cross_entropy(
    probs: &Matrix,
    targets: &Matrix,
    class_weights: &[f64],
) -> Result<CrossEntropyOutput> {
    let (n, c) = (probs.rows(), probs.cols());
    if targets.rows() != n || targets.cols() != c || class_weights.len() != c {
        return Err(Error::Shape {
            expected: format!("{n}x{c} targets and {c} weights"),
            actual: format!(
                "{}x{} targets, {} weights",
                targets.rows(),
                targets.cols(),
                class_weights.len()
            ),
        });
    }
    if n == 0 {
        return Err(Error::data("empty batch"));
    }
    if class_weights.iter().any(|&w| w <= 0.0) {
        return Err(Error::config("class weights must be positive"));
    }
    let mut value = 0.0;
    let mut clamped = 0usize;
    let mut grad = Matrix::zeros(n, c);
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let p = probs.row(i);
        let y = targets.row(i);
        let weight: f64 = y.iter().zip(class_weights).map(|(&yj, &wj)| yj * wj).sum();
        let mut row_loss = 0.0;
        for j in 0..c {
            if y[j] != 0.0 {
                let pj = if p[j] < LOG_FLOOR {
                    clamped += 1;
                    LOG_FLOOR
                } else {
                    p[j]
                };
                row_loss -= y[j] * pj.ln();
            }
        }
        value += weight * row_loss * inv_n;
        let g = grad.row_mut(i);
        for j in 0..c {
            g[j] = weight * (p[j] - y[j]) * inv_n;
        }
    }
    if !value.is_finite() {
        return Err(Error::numerical("cross-entropy value is not finite"));
    }
    Ok(CrossEntropyOutput {
        value,
        grad_logits: grad,
        clamped,
    })
}
