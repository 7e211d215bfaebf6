//! Expectation-maximisation over all model parameters.
//!
//! Each iteration filters and smooths every learner under the current
//! parameters, then re-estimates priors (optionally), per-resource
//! transitions and per-question parameters from the smoothed beliefs.

use alloc::format;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::kalman::{filter_unchecked, smooth_backward, SmoothedTrajectory};
use crate::linalg::{cholesky_jittered, log_det_spd};
use crate::model::{
    CellMask, Dataset, HyperParams, LearnerPrior, ModelParams, QuestionParams, TransitionParams,
};
use crate::par::map_range;
use crate::question::{fista_question, sigma_points, QuestionData, SigmaSet};
use crate::rng::substream;
use crate::special::log_normal_cdf;
use crate::transition::{
    accumulate_all_stats, estimate_priors, fista_transition, update_gamma, ResourceSufficientStats,
};
use crate::{Matrix, Vector};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub hp: HyperParams,
    /// Re-estimate learner priors each iteration. Off by default, since
    /// fixed priors pin the scale of the latent space.
    pub estimate_priors: bool,
    /// `Q × K` 0/1 matrix used as the initial loadings.
    pub anchor_init: Option<Matrix>,
    pub seed: u64,
    /// Observed cells withheld from training.
    pub holdout_mask: Option<CellMask>,
    /// Resources held at the identity transition and never re-estimated.
    pub noop_resources: Vec<usize>,
    /// Fixed learner priors; `N(0, σ₀² I)` when absent.
    pub priors: Option<Vec<LearnerPrior>>,
}

impl FitConfig {
    pub fn new(hp: HyperParams) -> Self {
        FitConfig {
            hp,
            estimate_priors: false,
            anchor_init: None,
            seed: 0,
            holdout_mask: None,
            noop_resources: Vec::new(),
            priors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub priors: Vec<LearnerPrior>,
    pub transitions: Vec<TransitionParams>,
    pub questions: Vec<QuestionParams>,
    /// Smoothed beliefs under the returned parameters.
    pub trajectories: Vec<SmoothedTrajectory>,
    /// Surrogate objective after each iteration's M-step.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn params(&self) -> ModelParams {
        ModelParams {
            priors: self.priors.clone(),
            transitions: self.transitions.clone(),
            questions: self.questions.clone(),
        }
    }
}

/// Smoothed trajectories for every learner.
pub fn e_step(ds: &Dataset, params: &ModelParams) -> Result<Vec<SmoothedTrajectory>> {
    let n = ds.dims().learners;
    let out = map_range(n, |j| {
        let ft = filter_unchecked(ds, j, &params.priors[j], &params.transitions, &params.questions);
        smooth_backward(&ft, ds, j, &params.transitions)
    });
    out.into_iter().collect()
}

/// Sigma points of the smoothed belief at each observed cell, in the order
/// of [`Dataset::observation_set`].
fn observed_sigma_sets(
    ds: &Dataset,
    trajectories: &[SmoothedTrajectory],
    spread: f64,
) -> Result<Vec<(usize, bool, SigmaSet)>> {
    ds.observation_set()
        .into_iter()
        .map(|o| {
            let s = sigma_points(&trajectories[o.j].smoothed[o.t], spread)?;
            Ok((o.question, o.correct, s))
        })
        .collect()
}

/// Posterior summaries shared by the objective and the next M-step.
struct Summary {
    stats: Vec<ResourceSufficientStats>,
    sigma: Vec<(usize, bool, SigmaSet)>,
}

fn summarise(ds: &Dataset, trajectories: &[SmoothedTrajectory], spread: f64) -> Result<Summary> {
    Ok(Summary {
        stats: accumulate_all_stats(trajectories, ds)?,
        sigma: observed_sigma_sets(ds, trajectories, spread)?,
    })
}

/// Expected complete-data log-likelihood under the smoothed beliefs:
/// prior term, transition term and (unscented) observation term. Larger is
/// better.
pub fn surrogate_objective(
    params: &ModelParams,
    trajectories: &[SmoothedTrajectory],
    ds: &Dataset,
    ut_spread: f64,
) -> Result<f64> {
    params.validate(ds.dims())?;
    if trajectories.len() != ds.dims().learners {
        return Err(Error::Dimension(format!(
            "{} trajectories for {} learners",
            trajectories.len(),
            ds.dims().learners
        )));
    }
    let summary = summarise(ds, trajectories, ut_spread)?;
    objective_from(params, trajectories, &summary)
}

fn objective_from(
    params: &ModelParams,
    trajectories: &[SmoothedTrajectory],
    summary: &Summary,
) -> Result<f64> {
    let k = params.concepts() as f64;

    let mut prior_term = 0.0;
    for (p, st) in params.priors.iter().zip(trajectories) {
        let b = &st.smoothed[0];
        let chol = cholesky_jittered(&p.cov, "prior covariance")?;
        let diff = &b.mean - &p.mean;
        let second = &b.cov + &diff * diff.transpose();
        let trace = chol.solve(&second).trace();
        let logdet = log_det_spd(&p.cov, "prior covariance")?;
        prior_term += -0.5 * (k * LN_2PI + logdet + trace);
    }

    let mut trans_term = 0.0;
    for (s, tp) in summary.stats.iter().zip(&params.transitions) {
        if s.count == 0 {
            continue;
        }
        let kk = s.concepts();
        let mut a = Matrix::zeros(kk, kk + 1);
        a.columns_mut(0, kk).copy_from(&tp.coupling);
        a.column_mut(kk).copy_from(&tp.gain);
        let sd = s.delta_cross();
        let ee = s.delta_second();
        let a_prev = &a * &s.prev;
        let mut quad = 0.0;
        for r in 0..kk {
            let v = ee[(r, r)] - 2.0 * a.row(r).dot(&sd.row(r)) + a_prev.row(r).dot(&a.row(r));
            quad += v / tp.noise_var[r];
        }
        let logdet: f64 = tp.noise_var.iter().map(|g| libm::log(*g)).sum();
        trans_term += -0.5 * (s.count as f64 * (k * LN_2PI + logdet) + quad);
    }

    let mut obs_term = 0.0;
    for (qi, correct, set) in &summary.sigma {
        let q = &params.questions[*qi];
        let sign = if *correct { 1.0 } else { -1.0 };
        for (x, u) in set.points.iter().zip(&set.weights) {
            obs_term += u * log_normal_cdf(sign * (q.loadings.dot(x) - q.difficulty));
        }
    }
    Ok(prior_term + trans_term + obs_term)
}

/// Initial parameters: `D = 0`, `d = 0`, `Γ = I`, `μ = 0`, and loadings from
/// the anchor matrix or drawn uniformly from `[0, 1]`.
pub fn initial_params(ds: &Dataset, cfg: &FitConfig) -> Result<ModelParams> {
    let dims = ds.dims();
    let k = dims.concepts;
    let priors = match &cfg.priors {
        Some(p) => p.clone(),
        None => (0..dims.learners).map(|_| LearnerPrior::isotropic(k, cfg.hp.prior_var)).collect(),
    };
    let transitions = (0..dims.resources)
        .map(|m| {
            if cfg.noop_resources.contains(&m) {
                TransitionParams::noop(k)
            } else {
                TransitionParams::initial(k)
            }
        })
        .collect();
    let questions = match &cfg.anchor_init {
        Some(anchor) => {
            if anchor.nrows() != dims.questions || anchor.ncols() != k {
                return Err(Error::Dimension(format!(
                    "anchor matrix is {}x{}, expected {}x{k}",
                    anchor.nrows(),
                    anchor.ncols(),
                    dims.questions
                )));
            }
            if anchor.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidParam("anchor matrix must be 0/1".into()));
            }
            (0..dims.questions)
                .map(|i| QuestionParams::new(anchor.row(i).transpose(), 0.0))
                .collect()
        }
        None => {
            let mut rng = substream(cfg.seed, "init", 0);
            (0..dims.questions)
                .map(|_| {
                    let w = Vector::from_fn(k, |_, _| rng.random::<f64>());
                    QuestionParams::new(w, 0.0)
                })
                .collect()
        }
    };
    let params = ModelParams { priors, transitions, questions };
    params.validate(dims)?;
    Ok(params)
}

/// Fits every parameter by EM. `init`, when given, replaces the default
/// initialisation entirely.
pub fn em_fit(ds: &Dataset, cfg: &FitConfig, init: Option<&ModelParams>) -> Result<FitResult> {
    let dims = ds.dims();
    let hp = &cfg.hp;
    hp.validate()?;
    if let Some(&m) = cfg.noop_resources.iter().find(|&&m| m >= dims.resources) {
        return Err(Error::OutOfRange(format!("no-op resource {} of {}", m + 1, dims.resources)));
    }
    let train = match &cfg.holdout_mask {
        Some(mask) => {
            if mask.timesteps() != dims.timesteps || mask.learners() != dims.learners {
                return Err(Error::Dimension("holdout mask shape".into()));
            }
            if !mask.is_subset_of(&ds.observed_mask()) {
                return Err(Error::InvalidParam("holdout mask covers unobserved cells".into()));
            }
            ds.hide(mask)
        }
        None => ds.clone(),
    };
    let mut params = match init {
        Some(p) => {
            p.validate(dims)?;
            p.clone()
        }
        None => initial_params(ds, cfg)?,
    };
    let mut trajectories = e_step(&train, &params)?;
    let mut summary = summarise(&train, &trajectories, hp.ut_spread)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < hp.em_max_iters {
        iterations += 1;
        let next = m_step_from(&train, cfg, &params, &trajectories, &summary)?;
        let change = max_abs_change(&params, &next, cfg.estimate_priors);
        params = next;
        trajectories = e_step(&train, &params)?;
        summary = summarise(&train, &trajectories, hp.ut_spread)?;
        trace.push(objective_from(&params, &trajectories, &summary)?);
        if change < hp.em_tol {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        priors: params.priors,
        transitions: params.transitions,
        questions: params.questions,
        trajectories,
        objective_trace: trace,
        converged,
        iterations,
    })
}

/// One M-step given freshly smoothed trajectories.
pub fn m_step(
    train: &Dataset,
    cfg: &FitConfig,
    params: &ModelParams,
    trajectories: &[SmoothedTrajectory],
) -> Result<ModelParams> {
    let summary = summarise(train, trajectories, cfg.hp.ut_spread)?;
    m_step_from(train, cfg, params, trajectories, &summary)
}

fn m_step_from(
    train: &Dataset,
    cfg: &FitConfig,
    params: &ModelParams,
    trajectories: &[SmoothedTrajectory],
    summary: &Summary,
) -> Result<ModelParams> {
    let hp = &cfg.hp;
    let k = train.dims().concepts;
    let priors = if cfg.estimate_priors {
        estimate_priors(trajectories)
    } else {
        params.priors.clone()
    };

    let stats = &summary.stats;
    let transitions: Vec<TransitionParams> = map_range(stats.len(), |m| {
        let current = &params.transitions[m];
        if cfg.noop_resources.contains(&m) || stats[m].count == 0 {
            return Ok(current.clone());
        }
        let solve = fista_transition(&stats[m], &current.noise_var, hp, current)
            .map_err(|e| Error::Resource { id: m + 1, source: e.into() })?;
        let noise_var = update_gamma(&stats[m], &solve.coupling, &solve.gain)
            .map_err(|e| Error::Resource { id: m + 1, source: e.into() })?;
        Ok(TransitionParams { coupling: solve.coupling, gain: solve.gain, noise_var })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut per_question: Vec<QuestionData> =
        (0..params.questions.len()).map(|_| QuestionData::new(k)).collect();
    for (qi, correct, set) in &summary.sigma {
        per_question[*qi].push(*correct, set)?;
    }
    let questions: Vec<QuestionParams> = map_range(per_question.len(), |i| {
        fista_question(&per_question[i], hp, &params.questions[i])
            .map(|s| s.params)
            .map_err(|e| Error::Question { id: i + 1, source: e.into() })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    Ok(ModelParams { priors, transitions, questions })
}

fn max_abs_change(a: &ModelParams, b: &ModelParams, with_priors: bool) -> f64 {
    let mut m = 0.0f64;
    let mut upd = |x: f64| m = m.max(x.abs());
    for (p, q) in a.transitions.iter().zip(&b.transitions) {
        upd((&p.coupling - &q.coupling).amax());
        upd((&p.gain - &q.gain).amax());
        upd((&p.noise_var - &q.noise_var).amax());
    }
    for (p, q) in a.questions.iter().zip(&b.questions) {
        upd((&p.loadings - &q.loadings).amax());
        upd(p.difficulty - q.difficulty);
    }
    if with_priors {
        for (p, q) in a.priors.iter().zip(&b.priors) {
            upd((&p.mean - &q.mean).amax());
            upd((&p.cov - &q.cov).amax());
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Each fold holds out whole learners.
    ByLearner,
    /// Each fold holds out individual observed cells.
    ByCell,
}

/// `(train, test)` masks over observed cells for each fold. Test masks are
/// pairwise disjoint and together cover every observed cell.
pub fn kfold_split(
    ds: &Dataset,
    folds: usize,
    mode: SplitMode,
    seed: u64,
) -> Result<Vec<(CellMask, CellMask)>> {
    if folds < 2 {
        return Err(Error::InvalidParam(format!("need at least 2 folds, got {folds}")));
    }
    let dims = ds.dims();
    let observed = ds.observed_mask();
    let mut rng = substream(seed, "split", folds as u64);
    let mut tests: Vec<CellMask> = (0..folds).map(|_| CellMask::for_dims(dims)).collect();
    match mode {
        SplitMode::ByLearner => {
            if folds > dims.learners {
                return Err(Error::InvalidParam(format!(
                    "{folds} folds for {} learners",
                    dims.learners
                )));
            }
            let mut order: Vec<usize> = (0..dims.learners).collect();
            order.shuffle(&mut rng);
            for (pos, &j) in order.iter().enumerate() {
                let f = pos % folds;
                for t in 0..dims.timesteps {
                    if observed.get(t, j) {
                        tests[f].set(t, j, true);
                    }
                }
            }
        }
        SplitMode::ByCell => {
            let mut cells: Vec<(usize, usize)> = observed.cells().collect();
            cells.shuffle(&mut rng);
            for (pos, &(t, j)) in cells.iter().enumerate() {
                tests[pos % folds].set(t, j, true);
            }
        }
    }
    Ok(tests.into_iter().map(|test| (observed.difference(&test), test)).collect())
}

/// A uniformly random `fraction` of the observed cells, rounded to the
/// nearest cell count.
pub fn holdout_split(ds: &Dataset, fraction: f64, seed: u64) -> Result<CellMask> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidParam(format!("holdout fraction {fraction} must lie in [0, 1)")));
    }
    let mut cells: Vec<(usize, usize)> = ds.observed_mask().cells().collect();
    cells.shuffle(&mut substream(seed, "split", 0));
    let take = libm::round(fraction * cells.len() as f64) as usize;
    let mut mask = CellMask::for_dims(ds.dims());
    for &(t, j) in &cells[..take] {
        mask.set(t, j, true);
    }
    Ok(mask)
}

/// Learners that have at least one cell in `mask`.
pub fn learners_in(mask: &CellMask) -> Vec<usize> {
    let mut seen = alloc::vec![false; mask.learners()];
    for (_, j) in mask.cells() {
        seen[j] = true;
    }
    (0..mask.learners()).filter(|&j| seen[j]).collect()
}
