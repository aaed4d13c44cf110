//! Standard normal distribution helpers.

use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};

/// Standard normal CDF.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile for `p` in (0, 1).
pub fn quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::QuantileDomain(p));
    }
    Ok(-std::f64::consts::SQRT_2 * erfc_inv(2.0 * p))
}
