//! Transition-parameter estimation from smoothed trajectories.
//!
//! For resource `m` the M-step works with the augmented previous state
//! `c̃ = [c; 1]` and the combined parameter `A = [D d]`, so that the expected
//! increment is `E[c(t) − c(t−1)] = A c̃(t−1)`. Everything needed is a set of
//! second-moment sums over the pairs that used the resource.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fista::{fista, FistaOptions, ProxProblem};
use crate::kalman::{cross_moment, SmoothedTrajectory};
use crate::linalg::{spectral_norm_psd, symmetrize};
use crate::model::{Dataset, HyperParams, LearnerPrior, TransitionParams};
use crate::{Matrix, Vector};

/// Floor applied to every re-estimated noise variance.
pub const NOISE_FLOOR: f64 = 1e-8;

/// Second-moment sums for one resource.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceSufficientStats {
    /// Number of `(t, j)` pairs that used the resource.
    pub count: usize,
    /// `Σ E[c̃(t−1) c̃(t−1)ᵀ]`, `(K+1) × (K+1)`.
    pub prev: Matrix,
    /// `Σ E[c(t) c̃(t−1)ᵀ]`, `K × (K+1)`.
    pub cross: Matrix,
    /// `Σ E[c(t) c(t)ᵀ]`, `K × K`.
    pub cur: Matrix,
}

impl ResourceSufficientStats {
    pub fn zeros(k: usize) -> Self {
        ResourceSufficientStats {
            count: 0,
            prev: Matrix::zeros(k + 1, k + 1),
            cross: Matrix::zeros(k, k + 1),
            cur: Matrix::zeros(k, k),
        }
    }

    pub fn concepts(&self) -> usize {
        self.cur.nrows()
    }

    /// `Σ E[(c(t) − c(t−1)) c̃(t−1)ᵀ]`.
    pub fn delta_cross(&self) -> Matrix {
        let k = self.concepts();
        &self.cross - self.prev.rows(0, k)
    }

    /// `Σ E[(c(t) − c(t−1))(c(t) − c(t−1))ᵀ]`.
    pub fn delta_second(&self) -> Matrix {
        let k = self.concepts();
        let c = self.cross.columns(0, k);
        let mut out = &self.cur - c - c.transpose() + self.prev.view((0, 0), (k, k));
        symmetrize(&mut out);
        out
    }

    /// Adds one transition pair.
    pub fn add_pair(
        &mut self,
        prev_mean: &Vector,
        prev_cov: &Matrix,
        cur_mean: &Vector,
        cur_cov: &Matrix,
        cross: &Matrix,
    ) {
        let k = self.concepts();
        let mut pp = self.prev.view_mut((0, 0), (k, k));
        pp += prev_cov + prev_mean * prev_mean.transpose();
        for i in 0..k {
            self.prev[(i, k)] += prev_mean[i];
            self.prev[(k, i)] += prev_mean[i];
        }
        self.prev[(k, k)] += 1.0;
        let mut cc = self.cross.columns_mut(0, k);
        cc += cross;
        for i in 0..k {
            self.cross[(i, k)] += cur_mean[i];
        }
        self.cur += cur_cov + cur_mean * cur_mean.transpose();
        self.count += 1;
    }

    pub fn merge(&mut self, other: &ResourceSufficientStats) {
        self.count += other.count;
        self.prev += &other.prev;
        self.cross += &other.cross;
        self.cur += &other.cur;
    }
}

/// Sufficient statistics for every resource in one pass over the data.
/// Pairs are visited in time-major, then learner, order.
pub fn accumulate_all_stats(
    trajectories: &[SmoothedTrajectory],
    ds: &Dataset,
) -> Result<Vec<ResourceSufficientStats>> {
    let dims = ds.dims();
    if trajectories.len() != dims.learners {
        return Err(Error::Dimension(format!(
            "{} trajectories for {} learners",
            trajectories.len(),
            dims.learners
        )));
    }
    let k = dims.concepts;
    let mut stats: Vec<_> = (0..dims.resources).map(|_| ResourceSufficientStats::zeros(k)).collect();
    for t in 1..dims.timesteps {
        for (j, st) in trajectories.iter().enumerate() {
            let m = ds.resource(t, j);
            let cross = cross_moment(st, t)?;
            let (prev, cur) = (&st.smoothed[t - 1], &st.smoothed[t]);
            stats[m].add_pair(&prev.mean, &prev.cov, &cur.mean, &cur.cov, &cross);
        }
    }
    Ok(stats)
}

/// Sufficient statistics for resource `m` alone.
pub fn accumulate_resource_stats(
    trajectories: &[SmoothedTrajectory],
    ds: &Dataset,
    m: usize,
) -> Result<ResourceSufficientStats> {
    let dims = ds.dims();
    if m >= dims.resources {
        return Err(Error::OutOfRange(format!("resource {} of {}", m + 1, dims.resources)));
    }
    if trajectories.len() != dims.learners {
        return Err(Error::Dimension(format!(
            "{} trajectories for {} learners",
            trajectories.len(),
            dims.learners
        )));
    }
    let mut stats = ResourceSufficientStats::zeros(dims.concepts);
    for t in 1..dims.timesteps {
        for (j, st) in trajectories.iter().enumerate() {
            if ds.resource(t, j) != m {
                continue;
            }
            let cross = cross_moment(st, t)?;
            let (prev, cur) = (&st.smoothed[t - 1], &st.smoothed[t]);
            stats.add_pair(&prev.mean, &prev.cov, &cur.mean, &cur.cov, &cross);
        }
    }
    Ok(stats)
}

/// Learner priors re-estimated from the smoothed first-time beliefs.
pub fn estimate_priors(trajectories: &[SmoothedTrajectory]) -> Vec<LearnerPrior> {
    trajectories
        .iter()
        .map(|st| {
            let b = &st.smoothed[0];
            LearnerPrior { mean: b.mean.clone(), cov: b.cov.clone() }
        })
        .collect()
}

/// Smooth part of the transition M-step,
/// `½ tr(Γ⁻¹ E[(Δ − A c̃)(Δ − A c̃)ᵀ])` summed over pairs, with its gradient
/// `Γ⁻¹(A S_prev − S_Δ)`.
#[derive(Debug, Clone)]
pub struct TransitionProblem {
    k: usize,
    prev: Matrix,
    delta_cross: Matrix,
    delta_second_diag: Vector,
    inv_noise: Vector,
    coupling_l1: f64,
}

impl TransitionProblem {
    pub fn new(stats: &ResourceSufficientStats, noise_var: &Vector, coupling_l1: f64) -> Self {
        TransitionProblem {
            k: stats.concepts(),
            prev: stats.prev.clone(),
            delta_cross: stats.delta_cross(),
            delta_second_diag: stats.delta_second().diagonal(),
            inv_noise: noise_var.map(|g| 1.0 / g),
            coupling_l1,
        }
    }

    /// `σ_max(S_prev) · max Γ⁻¹`, a valid Lipschitz constant of the gradient.
    pub fn lipschitz(&self) -> f64 {
        spectral_norm_psd(&self.prev) * self.inv_noise.max()
    }

    fn as_matrix(&self, x: &Vector) -> Matrix {
        Matrix::from_column_slice(self.k, self.k + 1, x.as_slice())
    }

    /// Objective and gradient as matrices in `A = [D d]` layout.
    pub fn value_and_grad(&self, a: &Matrix) -> (f64, Matrix) {
        let a_prev = a * &self.prev;
        let mut value = 0.0;
        for r in 0..self.k {
            let lin = a.row(r).dot(&self.delta_cross.row(r));
            let quad = a_prev.row(r).dot(&a.row(r));
            value += self.inv_noise[r] * (self.delta_second_diag[r] - 2.0 * lin + quad);
        }
        let mut grad = a_prev - &self.delta_cross;
        for r in 0..self.k {
            let s = self.inv_noise[r];
            grad.row_mut(r).scale_mut(s);
        }
        (0.5 * value, grad)
    }
}

impl ProxProblem for TransitionProblem {
    fn smooth(&self, x: &Vector) -> (f64, Vector) {
        let (v, g) = self.value_and_grad(&self.as_matrix(x));
        (v, Vector::from_column_slice(g.as_slice()))
    }

    fn penalty(&self, x: &Vector) -> f64 {
        // Column-major: the first K² entries are D.
        self.coupling_l1 * x.rows(0, self.k * self.k).iter().map(|v| v.abs()).sum::<f64>()
    }

    fn prox(&self, x: &mut Vector, step: f64) {
        let k = self.k;
        let shrink = self.coupling_l1 * step;
        for c in 0..k {
            for r in 0..k {
                let v = &mut x[c * k + r];
                *v = if c > r { 0.0 } else { (*v - shrink).max(0.0) };
            }
        }
    }
}

/// Projection used by the transition prox: entries above the diagonal and
/// negative entries become zero.
pub fn project_coupling(d: &mut Matrix) {
    let k = d.nrows();
    for c in 0..d.ncols() {
        for r in 0..k {
            if c > r || d[(r, c)] < 0.0 {
                d[(r, c)] = 0.0;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    /// No data for this parameter; the input was returned unchanged.
    NoData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSolve {
    pub coupling: Matrix,
    pub gain: Vector,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
}

/// Minimises the expected transition negative log-likelihood plus
/// `γ‖D‖₁` over lower-triangular nonnegative `D` and free `d`, holding `Γ`
/// fixed.
pub fn fista_transition(
    stats: &ResourceSufficientStats,
    noise_var: &Vector,
    hp: &HyperParams,
    init: &TransitionParams,
) -> Result<TransitionSolve> {
    let k = stats.concepts();
    init.validate(k)?;
    if stats.count == 0 {
        return Ok(TransitionSolve {
            coupling: init.coupling.clone(),
            gain: init.gain.clone(),
            status: SolveStatus::NoData,
            iterations: 0,
            objective: 0.0,
        });
    }
    let problem = TransitionProblem::new(stats, noise_var, hp.coupling_l1);
    let mut a0 = Matrix::zeros(k, k + 1);
    a0.columns_mut(0, k).copy_from(&init.coupling);
    a0.column_mut(k).copy_from(&init.gain);
    let out = fista(
        &problem,
        Vector::from_column_slice(a0.as_slice()),
        FistaOptions {
            max_iters: hp.fista_max_iters,
            tol: hp.fista_tol,
            lipschitz: problem.lipschitz(),
        },
    );
    if out.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("transition estimate".into()));
    }
    let a = problem.as_matrix(&out.x);
    Ok(TransitionSolve {
        coupling: a.columns(0, k).into_owned(),
        gain: a.column(k).into_owned(),
        status: if out.converged { SolveStatus::Converged } else { SolveStatus::MaxIters },
        iterations: out.iterations,
        objective: out.objective,
    })
}

/// Closed-form noise variances given `D` and `d`:
/// `diag(E[(Δ − A c̃)(Δ − A c̃)ᵀ]) / count`, floored at [`NOISE_FLOOR`].
pub fn update_gamma(
    stats: &ResourceSufficientStats,
    coupling: &Matrix,
    gain: &Vector,
) -> Result<Vector> {
    if stats.count == 0 {
        return Err(Error::NoData("no transition pairs for this resource".into()));
    }
    let k = stats.concepts();
    let mut a = Matrix::zeros(k, k + 1);
    a.columns_mut(0, k).copy_from(coupling);
    a.column_mut(k).copy_from(gain);
    let sd = stats.delta_cross();
    let ee = stats.delta_second();
    let a_prev = &a * &stats.prev;
    let n = stats.count as f64;
    Ok(Vector::from_fn(k, |r, _| {
        let v = ee[(r, r)] - 2.0 * a.row(r).dot(&sd.row(r)) + a_prev.row(r).dot(&a.row(r));
        (v / n).max(NOISE_FLOOR)
    }))
}
