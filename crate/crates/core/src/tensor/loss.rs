use super::Tensor;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]` before the log.
pub const CLAMP_EPS: f64 = 1e-7;

/// Foreground weight of the class-balanced cross-entropy used for training.
pub const ALPHA_S: f64 = 0.528;

/// Class-weighted binary cross-entropy, averaged over every element:
///
/// `L = -mean[α·Y·ln P + (1-α)·(1-Y)·ln(1-P)]`
///
/// Returns the loss and its gradient w.r.t. `P`. The gradient is evaluated
/// at the clamped probability and passed straight through the clamp.
pub fn weighted_bce_loss(p: &Tensor, y: &Tensor, alpha: f64) -> Result<(f64, Tensor)> {
    p.check_same_shape(y)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::dim(format!("alpha_s {alpha} outside [0, 1]")));
    }
    let n = p.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &yi) in p.data().iter().zip(y.data()) {
        let pc = pi.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
        loss -= alpha * yi * pc.ln() + (1.0 - alpha) * (1.0 - yi) * (1.0 - pc).ln();
        grad.push(-(alpha * yi / pc - (1.0 - alpha) * (1.0 - yi) / (1.0 - pc)) / n);
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss}")));
    }
    Ok((loss, Tensor::new(p.shape().to_vec(), grad)?))
}
