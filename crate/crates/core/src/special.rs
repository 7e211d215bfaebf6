//! Standard normal density, distribution function and the inverse Mills
//! ratio `N(z)/Φ(z)`, evaluated stably over the whole real line.

use core::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Below this point `N(z)/Φ(z)` switches from the direct ratio to the
/// continued fraction.
pub const MILLS_SWITCH: f64 = -6.0;

/// Number of partial denominators in the Laplace continued fraction. At
/// `|z| = 6` the truncation error is far below `1e-15` relative.
const CF_TERMS: usize = 64;

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    libm::exp(-0.5 * z * z) / libm::sqrt(2.0 * PI)
}

#[inline]
pub fn log_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Standard normal distribution function `Φ(z)`.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `log Φ(z)`, finite for every finite `z`.
pub fn log_normal_cdf(z: f64) -> f64 {
    if z >= MILLS_SWITCH {
        if z > 0.0 {
            // Φ(z) = 1 - Φ(-z); keep the tail in the argument of ln_1p.
            libm::log1p(-0.5 * libm::erfc(z * FRAC_1_SQRT_2))
        } else {
            libm::log(normal_cdf(z))
        }
    } else {
        log_normal_pdf(z) - libm::log(laplace_fraction(-z))
    }
}

/// `x + 1/(x + 2/(x + 3/(x + ...)))`, which equals `N(x)/Φ(-x)` for `x > 0`.
fn laplace_fraction(x: f64) -> f64 {
    let mut tail = x;
    for k in (1..=CF_TERMS).rev() {
        tail = x + k as f64 / tail;
    }
    tail
}

/// Inverse Mills ratio `N(z)/Φ(z)`.
///
/// The direct ratio is used for `z >= -6`; below that the denominator loses
/// precision and eventually underflows, so the Laplace continued fraction for
/// the complementary tail takes over. For large positive `z` the value
/// underflows gracefully to zero.
pub fn mills_ratio(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::NonFinite(alloc::format!("mills_ratio argument {z}")));
    }
    Ok(mills_ratio_finite(z))
}

/// [`mills_ratio`] for arguments already known to be finite.
#[inline]
pub(crate) fn mills_ratio_finite(z: f64) -> f64 {
    if z >= MILLS_SWITCH {
        normal_pdf(z) / normal_cdf(z)
    } else {
        laplace_fraction(-z)
    }
}

/// `(log Φ(z), N(z)/Φ(z))` sharing a single tail evaluation.
#[inline]
pub(crate) fn log_cdf_and_mills(z: f64) -> (f64, f64) {
    if z < MILLS_SWITCH {
        let r = laplace_fraction(-z);
        return (log_normal_pdf(z) - libm::log(r), r);
    }
    let tail = 0.5 * libm::erfc(z.abs() * FRAC_1_SQRT_2);
    let (cdf, log_cdf) = if z > 0.0 {
        (1.0 - tail, libm::log1p(-tail))
    } else {
        (tail, libm::log(tail))
    };
    (log_cdf, normal_pdf(z) / cdf)
}

/// `R(z)·(z + R(z))` with `R` the inverse Mills ratio. This is the variance
/// reduction factor of a probit update and always lies in `(0, 1)`.
#[inline]
pub(crate) fn probit_shrink_factor(z: f64) -> f64 {
    let r = mills_ratio_finite(z);
    let f = if z >= MILLS_SWITCH {
        r * (z + r)
    } else {
        // z + R = 1/(x + 2/(x + ...)) with x = -z; avoids the cancellation.
        let x = -z;
        let mut tail = x;
        for k in (2..=CF_TERMS).rev() {
            tail = x + k as f64 / tail;
        }
        r / tail
    };
    f.clamp(0.0, 1.0)
}
