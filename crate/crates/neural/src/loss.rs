//! Class-weighted cross-entropy over a batch of logits.
//!
//! With per-class weights `w`, the batch loss is
//! `Σ_n w_{y_n} · (−log softmax(z_n)_{y_n}) / Σ_n w_{y_n}`, so uniform
//! weights give the ordinary mean cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{shape, NeuralError, Result};

/// How per-class loss weights are chosen from the training labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    #[default]
    Uniform,
    /// `w_c = N / (C · n_c)`.
    InverseFrequency,
}

pub fn class_weights(labels: &[usize], n_classes: usize, scheme: ClassWeighting) -> Result<Vec<f64>> {
    if n_classes == 0 {
        return Err(NeuralError::InvalidConfig("zero classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(shape("label", format!("< {n_classes}"), bad));
    }
    match scheme {
        ClassWeighting::Uniform => Ok(vec![1.0; n_classes]),
        ClassWeighting::InverseFrequency => {
            let mut counts = vec![0usize; n_classes];
            for &y in labels {
                counts[y] += 1;
            }
            if counts.contains(&0) {
                return Err(NeuralError::Empty(format!("a class has no examples: counts {counts:?}")));
            }
            let n = labels.len() as f64;
            Ok(counts.iter().map(|&c| n / (n_classes as f64 * c as f64)).collect())
        }
    }
}

/// Stable `log Σ exp(z)`.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|&v| (v - lse).exp()).collect()
}

/// Loss and its gradient with respect to `logits` (row-major
/// `N × n_classes`).
pub fn weighted_cross_entropy(
    logits: &[f64],
    n_classes: usize,
    targets: &[usize],
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = targets.len();
    if n == 0 {
        return Err(NeuralError::Empty("cross-entropy batch".into()));
    }
    if logits.len() != n * n_classes {
        return Err(shape("logits", n * n_classes, logits.len()));
    }
    if weights.len() != n_classes {
        return Err(shape("class weights", n_classes, weights.len()));
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(NeuralError::InvalidConfig(format!("class weights must be positive: {weights:?}")));
    }
    if let Some(&bad) = targets.iter().find(|&&y| y >= n_classes) {
        return Err(shape("target", format!("< {n_classes}"), bad));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NeuralError::NonFinite("logits".into()));
    }
    let total_w: f64 = targets.iter().map(|&y| weights[y]).sum();
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (i, &y) in targets.iter().enumerate() {
        let z = &logits[i * n_classes..(i + 1) * n_classes];
        let lse = log_sum_exp(z);
        let w = weights[y];
        loss += w * (lse - z[y]);
        for (c, g) in grad[i * n_classes..(i + 1) * n_classes].iter_mut().enumerate() {
            let p = (z[c] - lse).exp();
            *g = w * (p - if c == y { 1.0 } else { 0.0 }) / total_w;
        }
    }
    Ok((loss / total_w, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_weights_give_mean_cross_entropy() {
        let z = [2.0, 0.0, 0.0, 1.0];
        let (l, _) = weighted_cross_entropy(&z, 2, &[0, 1], &[1.0, 1.0]).unwrap();
        let want = ((1.0 + (-2f64).exp()).ln() + (1.0 + (-1f64).exp()).ln()) / 2.0;
        assert!((l - want).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let z = vec![0.3, -1.2, 2.0, 0.5, 0.0, -0.7];
        let w = [0.4, 2.5];
        let y = [1, 0, 1];
        let (_, g) = weighted_cross_entropy(&z, 2, &y, &w).unwrap();
        let h = 1e-6;
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let fd = (weighted_cross_entropy(&zp, 2, &y, &w).unwrap().0
                - weighted_cross_entropy(&zm, 2, &y, &w).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn inverse_frequency_weights() {
        let w = class_weights(&[0, 0, 0, 1], 2, ClassWeighting::InverseFrequency).unwrap();
        assert!((w[0] - 4.0 / 6.0).abs() < 1e-15 && (w[1] - 2.0).abs() < 1e-15);
        assert!(class_weights(&[0, 0], 2, ClassWeighting::InverseFrequency).is_err());
        assert!(weighted_cross_entropy(&[0.0, 0.0], 2, &[0], &[0.0, 1.0]).is_err());
        assert!(weighted_cross_entropy(&[f64::NAN, 0.0], 2, &[0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let (l, g) = weighted_cross_entropy(&[1000.0, -1000.0], 2, &[1], &[1.0, 1.0]).unwrap();
        assert!((l - 2000.0).abs() < 1e-9);
        assert!(g.iter().all(|v| v.is_finite()));
    }
}
