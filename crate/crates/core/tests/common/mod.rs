#![allow(dead_code)]

use rand::Rng as _;
use rand_distr::{Exp1, StandardNormal};
use tracefa_core::rng::Rng;
use tracefa_core::{
    Dataset, Dimensions, LearnerPrior, Matrix, ModelParams, QuestionParams, RawDataset, TransitionParams, Vector,
};

pub fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_spd(rng: &mut Rng, k: usize, scale: f64, ridge: f64) -> Matrix {
    let l = Matrix::from_fn(k, k, |_, _| scale * normal(rng));
    &l * l.transpose() + Matrix::identity(k, k) * ridge
}

pub fn random_params(rng: &mut Rng, dims: Dimensions) -> ModelParams {
    let k = dims.concepts;
    let priors = (0..dims.learners)
        .map(|_| LearnerPrior { mean: Vector::from_fn(k, |_, _| normal(rng)), cov: random_spd(rng, k, 0.5, 0.1) })
        .collect();
    let transitions = (0..dims.resources)
        .map(|_| TransitionParams {
            coupling: Matrix::from_fn(k, k, |r, c| if c <= r { 0.2 * rng.random::<f64>() } else { 0.0 }),
            gain: Vector::from_fn(k, |_, _| 0.2 + 0.1 * normal(rng)),
            noise_var: Vector::from_fn(k, |_, _| 0.01 + 0.1 * rng.random::<f64>()),
        })
        .collect();
    let questions = (0..dims.questions)
        .map(|_| {
            let w = Vector::from_fn(k, |_, _| if rng.random::<bool>() { rng.sample::<f64, _>(Exp1) } else { 0.0 });
            QuestionParams::new(w, normal(rng))
        })
        .collect();
    ModelParams { priors, transitions, questions }
}

/// Random dataset where each cell is observed with probability `observed`.
pub fn random_dataset(rng: &mut Rng, dims: Dimensions, observed: f64) -> Dataset {
    let mut raw = RawDataset::empty(dims);
    for cell in 0..dims.timesteps * dims.learners {
        raw.questions[cell] = Some(rng.random_range(0..dims.questions));
        if rng.random::<f64>() < observed {
            raw.grades[cell] = Some(u8::from(rng.random::<bool>()));
        }
    }
    for r in raw.resources.iter_mut() {
        *r = Some(rng.random_range(0..dims.resources));
    }
    Dataset::from_raw(raw).unwrap()
}

pub fn random_case(rng: &mut Rng, learners: usize, k: usize, observed: f64) -> (Dataset, ModelParams) {
    let t = rng.random_range(2..=12);
    let dims = Dimensions::new(learners, 6, 3, k, t).unwrap();
    (random_dataset(rng, dims, observed), random_params(rng, dims))
}
