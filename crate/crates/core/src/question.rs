//! Question-parameter estimation.
//!
//! The expected probit log-likelihood under a smoothed Gaussian belief has no
//! closed form, so it is replaced by an unscented-transform average over
//! `2K + 1` sigma points of each belief. The resulting objective in the
//! augmented parameter `w̃ = [w; μ]` is smooth and convex, and is minimised
//! together with `λ‖w‖₁` over `w >= 0`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fista::{fista, FistaOptions, ProxProblem};
use crate::linalg::{psd_factor, spectral_norm_psd};
use crate::model::{GaussianBelief, HyperParams, QuestionParams};
use crate::special::{log_cdf_and_mills, log_normal_cdf};
use crate::transition::SolveStatus;
use crate::{Matrix, Vector};

/// Sigma points with their weights; the weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSet {
    pub points: Vec<Vector>,
    pub weights: Vec<f64>,
}

/// `m`, then `m ± √(K+κ) L(:,i)` for each column of a factor `L Lᵀ = V`.
/// The centre gets weight `κ/(K+κ)`, every other point `1/(2(K+κ))`.
pub fn sigma_points(belief: &GaussianBelief, spread: f64) -> Result<SigmaSet> {
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::InvalidParam(format!("ut_spread = {spread} must be positive")));
    }
    let k = belief.dim();
    let l = psd_factor(&belief.cov, "belief covariance")?;
    let scale = libm::sqrt(k as f64 + spread);
    let mut points = Vec::with_capacity(2 * k + 1);
    let mut weights = Vec::with_capacity(2 * k + 1);
    points.push(belief.mean.clone());
    weights.push(spread / (k as f64 + spread));
    let side = 0.5 / (k as f64 + spread);
    for i in 0..k {
        let step = l.column(i) * scale;
        points.push(&belief.mean + &step);
        points.push(&belief.mean - &step);
        weights.push(side);
        weights.push(side);
    }
    Ok(SigmaSet { points, weights })
}

/// Responses to one question, flattened for fast objective evaluation.
/// Each sigma point is stored as `x̃ = [x; −1]`, so `w̃ᵀx̃ = wᵀx − μ`.
#[derive(Debug, Clone, Default)]
pub struct QuestionData {
    k: usize,
    /// `K + 1` values per sigma point.
    points: Vec<f64>,
    weights: Vec<f64>,
    /// `2y − 1` per sigma point.
    signs: Vec<f64>,
    responses: usize,
}

impl QuestionData {
    pub fn new(k: usize) -> Self {
        QuestionData { k, ..Default::default() }
    }

    pub fn from_responses(k: usize, responses: &[(bool, SigmaSet)]) -> Result<Self> {
        let mut d = Self::new(k);
        for (y, s) in responses {
            d.push(*y, s)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, correct: bool, set: &SigmaSet) -> Result<()> {
        if set.points.len() != set.weights.len() {
            return Err(Error::Dimension("sigma points and weights differ in length".into()));
        }
        let sign = if correct { 1.0 } else { -1.0 };
        for (p, &u) in set.points.iter().zip(&set.weights) {
            if p.len() != self.k {
                return Err(Error::Dimension(format!(
                    "sigma point has {} entries, expected {}",
                    p.len(),
                    self.k
                )));
            }
            self.points.extend(p.iter());
            self.points.push(-1.0);
            self.weights.push(u);
            self.signs.push(sign);
        }
        self.responses += 1;
        Ok(())
    }

    pub fn responses(&self) -> usize {
        self.responses
    }

    fn rows(&self) -> impl Iterator<Item = (&[f64], f64, f64)> {
        self.points
            .chunks_exact(self.k + 1)
            .zip(self.weights.iter().zip(&self.signs))
            .map(|(x, (&u, &s))| (x, u, s))
    }

    /// `Σ u (−log Φ((2y−1) w̃ᵀx̃))` and its gradient
    /// `Σ u (−(2y−1) R((2y−1) w̃ᵀx̃)) x̃`.
    pub fn objective_and_grad(&self, w_aug: &Vector) -> (f64, Vector) {
        let w = w_aug.as_slice();
        let mut value = 0.0;
        let mut grad = Vector::zeros(self.k + 1);
        let g = grad.as_mut_slice();
        for (x, u, s) in self.rows() {
            let z: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
            let (log_cdf, mills) = log_cdf_and_mills(s * z);
            value -= u * log_cdf;
            let coef = -u * s * mills;
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += coef * xi;
            }
        }
        (value, grad)
    }

    pub fn objective(&self, w_aug: &Vector) -> f64 {
        let w = w_aug.as_slice();
        self.rows()
            .map(|(x, u, s)| {
                let z: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
                -u * log_normal_cdf(s * z)
            })
            .sum()
    }

    /// `σ_max(X̃) · σ_max(X̃ diag(u))`, with `X̃` holding every augmented
    /// sigma point as a column. Bounds the gradient's Lipschitz constant
    /// because the second derivative of `−log Φ` lies in `(0, 1)`.
    pub fn lipschitz(&self) -> f64 {
        let n = self.k + 1;
        let mut plain = Matrix::zeros(n, n);
        let mut weighted = Matrix::zeros(n, n);
        for (x, u, _) in self.rows() {
            for r in 0..n {
                for c in 0..=r {
                    let v = x[r] * x[c];
                    plain[(r, c)] += v;
                    weighted[(r, c)] += u * u * v;
                }
            }
        }
        for r in 0..n {
            for c in 0..r {
                plain[(c, r)] = plain[(r, c)];
                weighted[(c, r)] = weighted[(r, c)];
            }
        }
        libm::sqrt(spectral_norm_psd(&plain)) * libm::sqrt(spectral_norm_psd(&weighted))
    }
}

/// Free-function form of [`QuestionData::objective_and_grad`].
pub fn question_objective_and_grad(
    w_aug: &Vector,
    responses: &[(bool, SigmaSet)],
) -> Result<(f64, Vector)> {
    if w_aug.is_empty() {
        return Err(Error::Dimension("augmented loading vector is empty".into()));
    }
    let data = QuestionData::from_responses(w_aug.len() - 1, responses)?;
    Ok(data.objective_and_grad(w_aug))
}

/// The question M-step as a composite problem in `w̃ = [w; μ]`.
pub struct QuestionProblem<'a> {
    pub data: &'a QuestionData,
    pub loading_l1: f64,
}

impl ProxProblem for QuestionProblem<'_> {
    fn smooth(&self, x: &Vector) -> (f64, Vector) {
        self.data.objective_and_grad(x)
    }

    fn smooth_value(&self, x: &Vector) -> f64 {
        self.data.objective(x)
    }

    fn penalty(&self, x: &Vector) -> f64 {
        let k = self.data.k;
        self.loading_l1 * x.rows(0, k).iter().map(|v| v.abs()).sum::<f64>()
    }

    fn prox(&self, x: &mut Vector, step: f64) {
        let k = self.data.k;
        let shrink = self.loading_l1 * step;
        for v in x.rows_mut(0, k).iter_mut() {
            *v = (*v - shrink).max(0.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionSolve {
    pub params: QuestionParams,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
}

/// Minimises the unscented negative log-likelihood plus `λ‖w‖₁` over
/// `w >= 0` and free `μ`.
pub fn fista_question(
    data: &QuestionData,
    hp: &HyperParams,
    init: &QuestionParams,
) -> Result<QuestionSolve> {
    let k = data.k;
    init.validate(k)?;
    if data.responses == 0 {
        return Ok(QuestionSolve {
            params: init.clone(),
            status: SolveStatus::NoData,
            iterations: 0,
            objective: 0.0,
        });
    }
    let mut x0 = Vector::zeros(k + 1);
    x0.rows_mut(0, k).copy_from(&init.loadings);
    x0[k] = init.difficulty;
    let problem = QuestionProblem { data, loading_l1: hp.loading_l1 };
    let out = fista(
        &problem,
        x0,
        FistaOptions { max_iters: hp.fista_max_iters, tol: hp.fista_tol, lipschitz: data.lipschitz() },
    );
    if out.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("question estimate".into()));
    }
    Ok(QuestionSolve {
        params: QuestionParams::new(out.x.rows(0, k).into_owned(), out.x[k]),
        status: if out.converged { SolveStatus::Converged } else { SolveStatus::MaxIters },
        iterations: out.iterations,
        objective: out.objective,
    })
}
