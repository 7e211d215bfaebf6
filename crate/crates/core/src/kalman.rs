//! Per-learner approximate Kalman filter and RTS smoother.
//!
//! The forward pass propagates the belief through the resource-specific
//! affine transition and, where a grade is observed, replaces the exact
//! (non-Gaussian) posterior with its moment-matched Gaussian. The backward
//! pass is the ordinary Rauch–Tung–Striebel recursion on top of those
//! Gaussian filtered beliefs.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, symmetrize};
use crate::model::{Dataset, GaussianBelief, LearnerPrior, QuestionParams, TransitionParams};
use crate::probit::moment_match;
use crate::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredTrajectory {
    /// `m(t), V(t)`: beliefs given grades up to and including `t`.
    pub filtered: Vec<GaussianBelief>,
    /// `m̃(t), Ṽ(t)`: beliefs given grades strictly before `t`. At the first
    /// time instance this is the prior; afterwards `Ṽ(t)` is the predictive
    /// covariance used by the smoother.
    pub predictive: Vec<GaussianBelief>,
    /// `log b(t)` at observed cells.
    pub log_evidence: Vec<Option<f64>>,
    /// `Ṽw/(1 + wᵀṼw)` at observed cells.
    pub gains: Vec<Option<Vector>>,
}

impl FilteredTrajectory {
    pub fn total_log_evidence(&self) -> f64 {
        self.log_evidence.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTrajectory {
    /// `m̂(t), V̂(t)`: beliefs given every grade of the learner.
    pub smoothed: Vec<GaussianBelief>,
    /// `J(t)` linking time `t` to `t + 1`; one fewer than time instances.
    pub smoother_gain: Vec<Matrix>,
}

/// Propagates a belief through one transition:
/// `(I + D) m + d` and `(I + D) V (I + D)ᵀ + diag(Γ)`.
pub fn predict_step(prev: &GaussianBelief, tp: &TransitionParams) -> GaussianBelief {
    let a = tp.state_matrix();
    let mean = &a * &prev.mean + &tp.gain;
    let mut cov = &a * &prev.cov * a.transpose();
    for (i, g) in tp.noise_var.iter().enumerate() {
        cov[(i, i)] += g;
    }
    symmetrize(&mut cov);
    GaussianBelief { mean, cov }
}

/// Resumable position of a forward pass: the filtered belief at `t - 1` and
/// the log-evidence accumulated so far.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    /// Next time instance to process.
    pub t: usize,
    /// Filtered belief at `t - 1`; unused when `t == 0`.
    pub belief: GaussianBelief,
    pub log_evidence: f64,
}

/// Forward pass over one learner that can be stopped and resumed.
#[derive(Debug, Clone)]
pub struct ForwardFilter<'a> {
    ds: &'a Dataset,
    learner: usize,
    prior: &'a LearnerPrior,
    transitions: &'a [TransitionParams],
    questions: &'a [QuestionParams],
    state: FilterState,
}

impl<'a> ForwardFilter<'a> {
    pub fn new(
        ds: &'a Dataset,
        learner: usize,
        prior: &'a LearnerPrior,
        transitions: &'a [TransitionParams],
        questions: &'a [QuestionParams],
    ) -> Self {
        let state = FilterState { t: 0, belief: prior.as_belief(), log_evidence: 0.0 };
        Self::resume(ds, learner, prior, transitions, questions, state)
    }

    pub fn resume(
        ds: &'a Dataset,
        learner: usize,
        prior: &'a LearnerPrior,
        transitions: &'a [TransitionParams],
        questions: &'a [QuestionParams],
        state: FilterState,
    ) -> Self {
        ForwardFilter { ds, learner, prior, transitions, questions, state }
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.t >= self.ds.dims().timesteps
    }

    /// Processes one time instance and returns `(predictive, filtered,
    /// log b, gain)` for it.
    pub fn step(&mut self) -> (GaussianBelief, GaussianBelief, Option<f64>, Option<Vector>) {
        let t = self.state.t;
        let j = self.learner;
        let predictive = if t == 0 {
            self.prior.as_belief()
        } else {
            predict_step(&self.state.belief, &self.transitions[self.ds.resource(t, j)])
        };
        let (filtered, log_b, gain) = match self.ds.grade(t, j) {
            Some(correct) => {
                let q = &self.questions[self.ds.question(t, j)];
                let r = moment_match(&predictive, q, correct);
                (r.posterior, Some(r.log_evidence), Some(r.gain))
            }
            None => (predictive.clone(), None, None),
        };
        if let Some(lb) = log_b {
            self.state.log_evidence += lb;
        }
        self.state.belief = filtered.clone();
        self.state.t += 1;
        (predictive, filtered, log_b, gain)
    }
}

/// Full forward pass for learner `j`.
pub fn filter_forward(
    ds: &Dataset,
    j: usize,
    prior: &LearnerPrior,
    transitions: &[TransitionParams],
    questions: &[QuestionParams],
) -> Result<FilteredTrajectory> {
    let dims = ds.dims();
    if j >= dims.learners {
        return Err(Error::OutOfRange(format!("learner {} of {}", j + 1, dims.learners)));
    }
    if transitions.len() != dims.resources || questions.len() != dims.questions {
        return Err(Error::Dimension(format!(
            "{} transitions and {} questions for a dataset with M={} Q={}",
            transitions.len(),
            questions.len(),
            dims.resources,
            dims.questions
        )));
    }
    let k = dims.concepts;
    prior.validate(k)?;
    for (m, tp) in transitions.iter().enumerate() {
        tp.validate(k).map_err(|e| Error::Resource { id: m + 1, source: e.into() })?;
    }
    for (i, q) in questions.iter().enumerate() {
        q.validate(k).map_err(|e| Error::Question { id: i + 1, source: e.into() })?;
    }
    Ok(filter_unchecked(ds, j, prior, transitions, questions))
}

pub(crate) fn filter_unchecked(
    ds: &Dataset,
    j: usize,
    prior: &LearnerPrior,
    transitions: &[TransitionParams],
    questions: &[QuestionParams],
) -> FilteredTrajectory {
    let t_len = ds.dims().timesteps;
    let mut out = FilteredTrajectory {
        filtered: Vec::with_capacity(t_len),
        predictive: Vec::with_capacity(t_len),
        log_evidence: Vec::with_capacity(t_len),
        gains: Vec::with_capacity(t_len),
    };
    let mut f = ForwardFilter::new(ds, j, prior, transitions, questions);
    while !f.is_done() {
        let (pred, filt, lb, gain) = f.step();
        out.predictive.push(pred);
        out.filtered.push(filt);
        out.log_evidence.push(lb);
        out.gains.push(gain);
    }
    out
}

/// RTS backward pass for learner `j` over the output of [`filter_forward`].
pub fn smooth_backward(
    ft: &FilteredTrajectory,
    ds: &Dataset,
    j: usize,
    transitions: &[TransitionParams],
) -> Result<SmoothedTrajectory> {
    let t_len = ft.filtered.len();
    if t_len == 0 || t_len != ds.dims().timesteps {
        return Err(Error::Dimension(format!(
            "trajectory has {t_len} steps, dataset has {}",
            ds.dims().timesteps
        )));
    }
    let mut smoothed = ft.filtered.clone();
    let mut gains = Vec::with_capacity(t_len - 1);
    for t in (1..t_len).rev() {
        let a = transitions[ds.resource(t, j)].state_matrix();
        let filt = &ft.filtered[t - 1];
        let pred = &ft.predictive[t];
        // J = V Aᵀ P⁻¹, i.e. Jᵀ = P⁻¹ A V with P symmetric.
        let chol = cholesky_jittered(&pred.cov, "predictive covariance")
            .map_err(|e| singular_context(e, t, j))?;
        let gain = chol.solve(&(&a * &filt.cov)).transpose();

        let next = &smoothed[t];
        let mean = &filt.mean + &gain * (&next.mean - &pred.mean);
        let mut cov = &filt.cov + &gain * (&next.cov - &pred.cov) * gain.transpose();
        symmetrize(&mut cov);
        smoothed[t - 1] = GaussianBelief { mean, cov };
        gains.push(gain);
    }
    gains.reverse();
    Ok(SmoothedTrajectory { smoothed, smoother_gain: gains })
}

fn singular_context(e: Error, t: usize, j: usize) -> Error {
    match e {
        Error::NotPositiveDefinite(s) => Error::NotPositiveDefinite(format!(
            "{s} at time {} for learner {}; transition noise too small or degenerate",
            t + 1,
            j + 1
        )),
        other => other,
    }
}

/// `E[c(t) c(t−1)ᵀ] = V̂(t) J(t−1)ᵀ + m̂(t) m̂(t−1)ᵀ` for `1 <= t < T`.
pub fn cross_moment(st: &SmoothedTrajectory, t: usize) -> Result<Matrix> {
    if t == 0 || t >= st.smoothed.len() {
        return Err(Error::OutOfRange(format!(
            "cross moment needs 2 <= t <= {}, got {}",
            st.smoothed.len(),
            t + 1
        )));
    }
    let cur = &st.smoothed[t];
    let prev = &st.smoothed[t - 1];
    Ok(&cur.cov * st.smoother_gain[t - 1].transpose() + &cur.mean * prev.mean.transpose())
}

/// Filter and smooth one learner.
pub fn trace_learner(
    ds: &Dataset,
    j: usize,
    prior: &LearnerPrior,
    transitions: &[TransitionParams],
    questions: &[QuestionParams],
) -> Result<(FilteredTrajectory, SmoothedTrajectory)> {
    let ft = filter_forward(ds, j, prior, transitions, questions)?;
    let st = smooth_backward(&ft, ds, j, transitions)?;
    Ok((ft, st))
}
