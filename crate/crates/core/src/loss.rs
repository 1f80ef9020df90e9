//! Binary cross-entropy on probabilities.

use crate::{Error, Real, Result};

pub const PROB_CLAMP: f64 = 1e-7;

/// Loss `-[y ln p + (1-y) ln(1-p)]` with `p` clamped to
/// `[1e-7, 1 - 1e-7]`, and its derivative with respect to `p` evaluated at
/// the clamped probability.
pub fn bce_loss<T: Real>(p: T, y: T) -> Result<(T, T)> {
    if y != T::zero() && y != T::one() {
        return Err(Error::InvalidTarget(y.f64()));
    }
    let lo = T::c(PROB_CLAMP);
    let pc = p.max(lo).min(T::one() - lo);
    let loss = -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln());
    let grad = -y / pc + (T::one() - y) / (T::one() - pc);
    Ok((loss, grad))
}
