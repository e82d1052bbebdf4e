use super::{NnError, Tensor};

/// Probabilities are clamped to `[ε, 1 − ε]` before taking logs.
pub const BCE_EPSILON: f64 = 1e-7;

/// Binary cross-entropy `−[y ln p + (1 − y) ln(1 − p)]` and its derivative
/// with respect to `p`.
pub fn binary_cross_entropy(p: f64, y: bool) -> (f64, f64) {
    let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    if y {
        (-p.ln(), -1.0 / p)
    } else {
        (-(1.0 - p).ln(), 1.0 / (1.0 - p))
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// Cross-entropy target: a class index or a full distribution.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Class(usize),
    Distribution(&'a [f64]),
}

/// `H(target, softmax(logits))` with its gradient `softmax − target`.
pub fn cross_entropy(logits: &Tensor, target: Target<'_>) -> Result<(f64, Tensor), NnError> {
    let k = logits.len();
    if k < 2 {
        return Err(NnError::InvalidTarget { index: 0, classes: k });
    }
    let logp = log_softmax(logits.data());
    let probs: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
    match target {
        Target::Class(c) => {
            if c >= k {
                return Err(NnError::InvalidTarget { index: c, classes: k });
            }
            let mut grad = probs;
            grad[c] -= 1.0;
            Ok((-logp[c], Tensor::from_parts(logits.shape().to_vec(), grad)))
        }
        Target::Distribution(t) => {
            if t.len() != k {
                return Err(super::shape_err("cross-entropy target", &[k], &[t.len()]));
            }
            let loss = -t.iter().zip(&logp).map(|(a, b)| a * b).sum::<f64>();
            let mass: f64 = t.iter().sum();
            let grad = probs.iter().zip(t).map(|(p, q)| mass * p - q).collect();
            Ok((loss, Tensor::from_parts(logits.shape().to_vec(), grad)))
        }
    }
}
