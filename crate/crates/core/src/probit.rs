//! Gaussian moment matching for a single probit-linked binary grade.
//!
//! Given a Gaussian belief `N(m, V)` on the knowledge state and a response
//! `y` with likelihood `Φ((2y−1)(wᵀc − μ))`, the exact posterior is not
//! Gaussian, but its first two moments and its normaliser have closed forms.
//! With `s = 1 + wᵀVw` and `z = (2y−1)(wᵀm − μ)/√s`:
//!
//! ```text
//! mean = m + (2y−1) · Vw/√s · R(z)
//! cov  = V − VwwᵀV/s · R(z)(z + R(z))
//! p(y) = Φ(z)
//! ```
//!
//! where `R(z) = N(z)/Φ(z)` is the inverse Mills ratio.

use crate::linalg::symmetrize;
use crate::model::{GaussianBelief, QuestionParams};
use crate::special::{log_normal_cdf, mills_ratio_finite, normal_cdf, probit_shrink_factor};
use crate::Vector;

/// Smallest evidence value ever reported; the log-evidence is exact.
pub const EVIDENCE_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatchResult {
    pub posterior: GaussianBelief,
    /// `p(y)` under the prior belief, floored at [`EVIDENCE_FLOOR`].
    pub evidence: f64,
    /// `log p(y)`, accurate even where `p(y)` underflows.
    pub log_evidence: f64,
    /// The standardised margin `z`.
    pub z: f64,
    /// `Vw/s`, the rank-one correction direction.
    pub gain: Vector,
}

/// Moment-matched Gaussian posterior after observing one grade.
pub fn moment_match(prior: &GaussianBelief, q: &QuestionParams, correct: bool) -> MomentMatchResult {
    let w = &q.loadings;
    let vw = &prior.cov * w;
    let s = (1.0 + w.dot(&vw)).max(1.0);
    let sqrt_s = libm::sqrt(s);
    let sign = if correct { 1.0 } else { -1.0 };
    let z = sign * (w.dot(&prior.mean) - q.difficulty) / sqrt_s;

    let r = mills_ratio_finite(z);
    let mean = &prior.mean + &vw * (sign * r / sqrt_s);
    let shrink = probit_shrink_factor(z);
    let mut cov = &prior.cov - (&vw * vw.transpose()) * (shrink / s);
    symmetrize(&mut cov);

    MomentMatchResult {
        posterior: GaussianBelief { mean, cov },
        evidence: normal_cdf(z).max(EVIDENCE_FLOOR),
        log_evidence: log_normal_cdf(z),
        z,
        gain: vw / s,
    }
}
