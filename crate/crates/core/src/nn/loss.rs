//! Task loss: weighted sum of classifier cross-entropy and reconstruction MSE.

use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::error::{Error, Result};

/// Per-sample task loss and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub mse: f64,
    pub combined: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl LossBreakdown {
    pub fn new(ce: f64, mse: f64, lambda: f64, gamma: f64) -> Self {
        LossBreakdown {
            ce,
            mse,
            combined: combine(ce, mse, lambda, gamma),
            lambda,
            gamma,
        }
    }
}

/// `(1 - lambda) * ce + gamma * lambda * mse`
pub fn combine(ce: f64, mse: f64, lambda: f64, gamma: f64) -> f64 {
    (1.0 - lambda) * ce + gamma * lambda * mse
}

/// Weights of the task loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub fn new(lambda: f64, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Validation(format!("lambda must lie in [0,1], got {lambda}")));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Validation(format!("gamma must be positive, got {gamma}")));
        }
        Ok(LossWeights { lambda, gamma })
    }

    /// `lambda = 1 - compression rate`, where the rate is transmitted reals
    /// (two per complex symbol) over source reals.
    pub fn from_compression(symbols: usize, source_len: usize, gamma: f64) -> Result<Self> {
        let rate = (2 * symbols) as f64 / source_len as f64;
        if rate > 1.0 {
            return Err(Error::Config(format!(
                "compression rate {rate:.4} exceeds 1 ({symbols} symbols for {source_len} source values)"
            )));
        }
        LossWeights::new(1.0 - rate, gamma)
    }
}

pub fn one_hot(class: usize, classes: usize) -> Vec<f64> {
    let mut z = vec![0.0; classes];
    z[class] = 1.0;
    z
}

/// Class index of a one-hot vector, or a validation error.
pub fn class_of(z: &[f64]) -> Result<usize> {
    let mut hot = None;
    for (i, &v) in z.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return Err(Error::Validation("label has more than one hot entry".into()));
            }
            hot = Some(i);
        } else if v != 0.0 {
            return Err(Error::Validation(format!("label entry {i} is {v}, not 0 or 1")));
        }
    }
    hot.ok_or_else(|| Error::Validation("label has no hot entry".into()))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(logits)` against class `target`, with the
/// logit cotangent `p - z`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[target];
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    (loss, grad)
}

/// Mean squared error and its cotangent with respect to `pred`.
pub fn mse(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (loss / n, grad)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Task loss of a reconstruction `recon` of `source` with label `z`.
pub fn pragmatic_loss(
    classifier: &Network,
    recon: &[f64],
    source: &[f64],
    z: &[f64],
    weights: LossWeights,
) -> Result<LossBreakdown> {
    let class = class_of(z)?;
    Ok(pragmatic_loss_grad(classifier, recon, source, class, weights)?.0)
}

/// Task loss plus its cotangent with respect to the reconstruction.
pub fn pragmatic_loss_grad(
    classifier: &Network,
    recon: &[f64],
    source: &[f64],
    class: usize,
    weights: LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if recon.len() != source.len() {
        return Err(Error::Config(format!(
            "reconstruction has {} values, source has {}",
            recon.len(),
            source.len()
        )));
    }
    if class >= classifier.output_size() {
        return Err(Error::Validation(format!(
            "class {class} out of range for {} classes",
            classifier.output_size()
        )));
    }
    let trace = classifier.forward(recon)?;
    let (ce, dlogits) = softmax_cross_entropy(trace.output(), class);
    let (m, dmse) = mse(recon, source);
    let ce_scale = 1.0 - weights.lambda;
    let mse_scale = weights.gamma * weights.lambda;
    let dce = classifier.backward_input(&trace, &dlogits.iter().map(|g| g * ce_scale).collect::<Vec<_>>())?;
    let grad = dce.iter().zip(&dmse).map(|(a, b)| a + mse_scale * b).collect();
    Ok((LossBreakdown::new(ce, m, weights.lambda, weights.gamma), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_two_class_cross_entropy_is_ln2() {
        for t in 0..2 {
            let (ce, _) = softmax_cross_entropy(&[0.3, 0.3], t);
            assert!((ce - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn lambda_zero_is_pure_cross_entropy() {
        let b = LossBreakdown::new(1.25, 7.0, 0.0, 10.0);
        assert_eq!(b.combined, 1.25);
    }

    #[test]
    fn one_hot_validation() {
        assert_eq!(class_of(&[0.0, 1.0, 0.0]).unwrap(), 1);
        assert!(class_of(&[0.0, 0.0]).is_err());
        assert!(class_of(&[1.0, 1.0]).is_err());
        assert!(class_of(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn compression_rate_sets_lambda() {
        let w = LossWeights::from_compression(16, 256, 10.0).unwrap();
        assert!((w.lambda - 0.875).abs() < 1e-15);
        assert!(LossWeights::from_compression(200, 256, 10.0).is_err());
        assert!(LossWeights::new(0.5, 0.0).is_err());
    }
}
