//! Synthetic data with known ground truth.
//!
//! Learners work through consecutive assignment blocks. Inside a block
//! every step uses a designated no-op resource (identity transition with
//! negligible noise); a randomly chosen real resource is studied between
//! blocks. Grades are drawn from the probit model and then masked uniformly
//! at random.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{
    Dataset, Dimensions, LearnerPrior, ModelParams, QuestionParams, RawDataset, TransitionParams,
    NOOP_NOISE,
};
use crate::rng::{substream, Rng};
use crate::special::normal_cdf;
use crate::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub learners: usize,
    pub questions: usize,
    /// Real resources; the no-op resource comes on top and takes the last id.
    pub resources: usize,
    pub concepts: usize,
    pub timesteps: usize,
    /// Steps per assignment block.
    pub assignment_size: usize,
    /// Fraction of cells whose grade is kept, in `(0, 1]`.
    pub obs_fraction: f64,
    pub seed: u64,
    /// Expected nonzeros per loading vector.
    pub sparsity_w: f64,
    /// Expected nonzeros in the lower triangle of each coupling matrix.
    pub sparsity_d: f64,
    /// Multiplier on the transition noise variances.
    pub noise_scale: f64,
    /// Multiplier on the intrinsic gains.
    pub gain_scale: f64,
    /// Spread of the per-learner prior means.
    pub prior_mean_sd: f64,
    /// Prior variance of each concept around the learner's prior mean.
    pub prior_var: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            learners: 50,
            questions: 100,
            resources: 9,
            concepts: 5,
            timesteps: 100,
            assignment_size: 10,
            obs_fraction: 1.0,
            seed: 0,
            sparsity_w: 2.0,
            sparsity_d: 2.0,
            noise_scale: 1.0,
            gain_scale: 1.0,
            prior_mean_sd: 0.5,
            prior_var: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn dims(&self) -> Result<Dimensions> {
        Dimensions::new(self.learners, self.questions, self.resources + 1, self.concepts, self.timesteps)
    }

    pub fn noop_resource(&self) -> usize {
        self.resources
    }

    pub fn validate(&self) -> Result<()> {
        self.dims()?;
        if self.assignment_size == 0 || self.timesteps % self.assignment_size != 0 {
            return Err(Error::InvalidParam(format!(
                "assignment size {} does not divide T = {}",
                self.assignment_size, self.timesteps
            )));
        }
        if !(self.obs_fraction > 0.0 && self.obs_fraction <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "obs_fraction = {} must lie in (0, 1]",
                self.obs_fraction
            )));
        }
        let k = self.concepts as f64;
        let checks = [
            ("sparsity_w", self.sparsity_w, k),
            ("sparsity_d", self.sparsity_d, k * (k + 1.0) / 2.0),
        ];
        for (name, v, max) in checks {
            if !(0.0..=max).contains(&v) {
                return Err(Error::InvalidParam(format!("{name} = {v} must lie in [0, {max}]")));
            }
        }
        for (name, v) in [
            ("noise_scale", self.noise_scale),
            ("gain_scale", self.gain_scale),
            ("prior_mean_sd", self.prior_mean_sd),
            ("prior_var", self.prior_var),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParam(format!("{name} = {v} must be nonnegative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub truth: ModelParams,
    /// True knowledge states, `[learner][time]`.
    pub states: Vec<Vec<Vector>>,
    /// Every grade before masking, time-major.
    pub full_grades: Vec<bool>,
    pub noop_resource: usize,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let dims = cfg.dims()?;
    let k = cfg.concepts;
    let noop = cfg.noop_resource();

    let mut rng = substream(cfg.seed, "params", 0);
    let questions: Vec<QuestionParams> = (0..cfg.questions).map(|_| draw_question(&mut rng, cfg)).collect();
    let mut transitions: Vec<TransitionParams> =
        (0..cfg.resources).map(|_| draw_transition(&mut rng, cfg)).collect();
    transitions.push(TransitionParams::noop(k));

    let mut rng = substream(cfg.seed, "priors", 0);
    let priors: Vec<LearnerPrior> = (0..cfg.learners)
        .map(|_| LearnerPrior {
            mean: Vector::from_fn(k, |_, _| cfg.prior_mean_sd * rng.sample::<f64, _>(StandardNormal)),
            cov: Matrix::identity(k, k) * cfg.prior_var.max(NOOP_NOISE),
        })
        .collect();

    // Resource schedule: the no-op inside blocks, a random real one between.
    let mut rng = substream(cfg.seed, "schedule", 0);
    let mut raw = RawDataset::empty(dims);
    for t in 1..cfg.timesteps {
        for j in 0..cfg.learners {
            let m = if t % cfg.assignment_size == 0 { rng.random_range(0..cfg.resources) } else { noop };
            raw.resources[(t - 1) * cfg.learners + j] = Some(m);
        }
    }

    let mut states = Vec::with_capacity(cfg.learners);
    let mut full_grades = alloc::vec![false; cfg.timesteps * cfg.learners];
    for j in 0..cfg.learners {
        let mut rng = substream(cfg.seed, "learner", j as u64);
        let prior = &priors[j];
        let mut c = Vector::from_fn(k, |i, _| {
            prior.mean[i] + libm::sqrt(prior.cov[(i, i)]) * rng.sample::<f64, _>(StandardNormal)
        });
        let mut traj = Vec::with_capacity(cfg.timesteps);
        for t in 0..cfg.timesteps {
            if t > 0 {
                let m = raw.resources[(t - 1) * cfg.learners + j].unwrap_or(noop);
                c = if m == noop {
                    c
                } else {
                    let tp = &transitions[m];
                    let noise = Vector::from_fn(k, |i, _| {
                        let z: f64 = rng.sample(StandardNormal);
                        if cfg.noise_scale == 0.0 { 0.0 } else { libm::sqrt(tp.noise_var[i]) * z }
                    });
                    tp.state_matrix() * &c + &tp.gain + noise
                };
            }
            let qi = t % cfg.questions;
            let q = &questions[qi];
            let p = normal_cdf(q.loadings.dot(&c) - q.difficulty);
            let idx = t * cfg.learners + j;
            full_grades[idx] = rng.random::<f64>() < p;
            raw.questions[idx] = Some(qi);
            traj.push(c.clone());
        }
        states.push(traj);
    }

    // A fixed permutation per seed, so a larger fraction keeps a superset of
    // the cells kept by a smaller one.
    let mut rng = substream(cfg.seed, "mask", 0);
    let cells = cfg.timesteps * cfg.learners;
    let mut order: Vec<usize> = (0..cells).collect();
    order.shuffle(&mut rng);
    let keep = ((cfg.obs_fraction * cells as f64).round() as usize).clamp(1, cells);
    for &idx in &order[..keep] {
        raw.grades[idx] = Some(u8::from(full_grades[idx]));
    }

    let truth = ModelParams { priors, transitions, questions };
    truth.validate(dims)?;
    Ok(SynthOutput { dataset: Dataset::from_raw(raw)?, truth, states, full_grades, noop_resource: noop })
}

fn draw_question(rng: &mut Rng, cfg: &SynthConfig) -> QuestionParams {
    let k = cfg.concepts;
    let p = cfg.sparsity_w / k as f64;
    let mut w = Vector::from_fn(k, |_, _| {
        if rng.random::<f64>() < p {
            Exp1.sample(rng)
        } else {
            0.0
        }
    });
    if cfg.sparsity_w > 0.0 && w.iter().all(|&v| v == 0.0) {
        let i = rng.random_range(0..k);
        w[i] = Exp1.sample(rng);
    }
    let mu: f64 = rng.sample(StandardNormal);
    QuestionParams::new(w, mu)
}

fn draw_transition(rng: &mut Rng, cfg: &SynthConfig) -> TransitionParams {
    let k = cfg.concepts;
    let lower = (k * (k + 1) / 2) as f64;
    let p = cfg.sparsity_d / lower;
    let mut coupling = Matrix::zeros(k, k);
    for r in 0..k {
        for c in 0..=r {
            if rng.random::<f64>() < p {
                coupling[(r, c)] = rng.random_range(0.0..0.3);
            }
        }
    }
    let gain_dist = Normal::new(0.2, 0.1).expect("valid normal");
    let gain = Vector::from_fn(k, |_, _| cfg.gain_scale * gain_dist.sample(rng));
    // Stored variances never drop below the no-op floor; a zero noise scale
    // still simulates noise-free transitions.
    let noise_var =
        Vector::from_fn(k, |_, _| (cfg.noise_scale * rng.random_range(0.01..0.1)).max(NOOP_NOISE));
    TransitionParams { coupling, gain, noise_var }
}
