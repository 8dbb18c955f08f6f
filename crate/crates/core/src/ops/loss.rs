use crate::error::{Error, Result};
use crate::real::Real;

/// Softmax cross-entropy of `logits` against class `target`.
///
/// Returns `-ln softmax(logits)[target]` and its gradient
/// `softmax(logits) - onehot(target)`. `pixel` only labels errors.
pub fn softmax_xent<T: Real>(logits: &[T], target: usize, pixel: usize) -> Result<(T, Vec<T>)> {
    if target >= logits.len() {
        return Err(Error::TargetOutOfRange {
            pixel,
            target,
            max: logits.len().saturating_sub(1),
        });
    }
    let max = logits.iter().copied().fold(logits[0], T::max);
    let mut grad: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: T = grad.iter().copied().sum();
    let loss = z.ln() - (logits[target] - max);
    for g in grad.iter_mut() {
        *g = *g / z;
    }
    grad[target] -= T::ONE;
    Ok((loss, grad))
}

/// [`softmax_xent`] restricted to the first `support` classes; the remaining
/// classes are excluded from the softmax and receive zero gradient.
pub fn softmax_xent_masked<T: Real>(logits: &[T], support: usize, target: usize, pixel: usize) -> Result<(T, Vec<T>)> {
    let support = support.min(logits.len());
    if target >= support {
        return Err(Error::TargetOutOfRange {
            pixel,
            target,
            max: support.saturating_sub(1),
        });
    }
    let (loss, mut grad) = softmax_xent(&logits[..support], target, pixel)?;
    grad.resize(logits.len(), T::ZERO);
    Ok((loss, grad))
}
