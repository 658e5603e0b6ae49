//! Margin loss: L = max(0, log C(x)_y − max_{c≠y} log C(x)_c).
//! Always non-negative; zero exactly when y is not the strict argmax, i.e.
//! the classifier decision has moved (or tied) away from the true class.

use crate::error::{Error, Result};

pub fn cw_loss(logprobs: &[f32], y: usize) -> Result<f32> {
    if y >= logprobs.len() {
        return Err(Error::Domain(format!(
            "class index {y} out of range for {} classes",
            logprobs.len()
        )));
    }
    let best_other = logprobs
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != y)
        .map(|(_, &v)| v)
        .fold(f32::NEG_INFINITY, f32::max);
    Ok((logprobs[y] - best_other).max(0.0))
}
