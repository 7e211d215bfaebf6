use rand::Rng as _;
use rand_distr::Exp1;
use tracefa_core::kalman::cross_moment;
use tracefa_core::probit::moment_match;
use tracefa_core::rng::substream;
use tracefa_core::trainer::e_step;
use tracefa_core::{
    Dataset, Dimensions, GaussianBelief, LearnerPrior, Matrix, ModelParams, QuestionParams, RawDataset,
    TransitionParams, Vector,
};

use crate::oracles::{normal, probit_posterior, random_spd, scalar_smoother, ScalarModel};
use crate::Outcome;

pub fn moment_matching() -> Outcome {
    let mut rng = substream(1, "acceptance-moments", 0);
    let (mut mean_err, mut cov_err, mut ev_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let k = rng.random_range(1..=4);
        let mean = Vector::from_fn(k, |_, _| normal(&mut rng));
        let cov = random_spd(&mut rng, k, 0.7, 0.05);
        let mut w = Vector::from_fn(k, |_, _| if rng.random::<f64>() < 0.6 { rng.sample(Exp1) } else { 0.0 });
        if w.iter().all(|&v| v == 0.0) {
            let i = rng.random_range(0..k);
            w[i] = 0.5 + rng.random::<f64>();
        }
        let mu = normal(&mut rng);
        let y = rng.random::<bool>();
        let prior = GaussianBelief { mean, cov };
        let got = moment_match(&prior, &QuestionParams::new(w.clone(), mu), y);
        let (m_ref, v_ref, z_ref) = probit_posterior(&prior, &w, mu, y);
        let scale = m_ref.norm() + prior.cov.trace().sqrt();
        mean_err = mean_err.max((&got.posterior.mean - &m_ref).norm() / scale);
        cov_err = cov_err.max((&got.posterior.cov - &v_ref).norm() / v_ref.norm());
        ev_err = ev_err.max((got.evidence - z_ref).abs() / z_ref);
    }
    let worst = mean_err.max(cov_err).max(ev_err);
    Outcome::new(
        worst < 1e-6,
        format!("200 instances, max relative error mean {mean_err:.1e} cov {cov_err:.1e} evidence {ev_err:.1e}"),
    )
}

const T_LEN: usize = 5;
const MODELS: u64 = 12;

fn random_scalar_case(seed: u64) -> (Dataset, ModelParams, ScalarModel) {
    let mut rng = substream(2, "acceptance-grid", seed);
    let dims = Dimensions::new(1, T_LEN, 2, 1, T_LEN).unwrap();
    let mut raw = RawDataset::empty(dims);
    let mut obs = Vec::new();
    let questions: Vec<QuestionParams> = (0..T_LEN)
        .map(|_| QuestionParams::new(Vector::from_element(1, 0.3 + 1.7 * rng.random::<f64>()), normal(&mut rng)))
        .collect();
    for (t, q) in questions.iter().enumerate() {
        raw.questions[t] = Some(t);
        if rng.random::<f64>() < 0.8 {
            let y = rng.random::<bool>();
            raw.grades[t] = Some(u8::from(y));
            obs.push(Some((q.loadings[0], q.difficulty, y)));
        } else {
            obs.push(None);
        }
    }
    let transitions: Vec<TransitionParams> = (0..2)
        .map(|_| TransitionParams {
            coupling: Matrix::from_element(1, 1, 0.3 * rng.random::<f64>()),
            gain: Vector::from_element(1, 0.2 + 0.3 * normal(&mut rng)),
            noise_var: Vector::from_element(1, 0.05 + 0.35 * rng.random::<f64>()),
        })
        .collect();
    let mut trans = Vec::new();
    for t in 1..T_LEN {
        let m = rng.random_range(0..2);
        raw.resources[t - 1] = Some(m);
        let tp = &transitions[m];
        trans.push((1.0 + tp.coupling[(0, 0)], tp.gain[0], tp.noise_var[0]));
    }
    let prior_mean = normal(&mut rng);
    let prior_var = 0.3 + 1.2 * rng.random::<f64>();
    let prior = LearnerPrior { mean: Vector::from_element(1, prior_mean), cov: Matrix::from_element(1, 1, prior_var) };
    let params = ModelParams { priors: vec![prior], transitions, questions };
    let ds = Dataset::from_raw(raw).unwrap();
    (ds, params, ScalarModel { prior_mean, prior_var, obs, trans })
}

pub fn smoother_grid() -> Outcome {
    let (mut mean_err, mut var_err, mut cross_err) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..MODELS {
        let (ds, params, model) = random_scalar_case(seed);
        let st = &e_step(&ds, &params).unwrap()[0];
        let oracle = scalar_smoother(&model);
        for t in 0..T_LEN {
            mean_err = mean_err.max((st.smoothed[t].mean[0] - oracle.mean[t]).abs());
            var_err = var_err.max((st.smoothed[t].cov[(0, 0)] - oracle.var[t]).abs());
            if t > 0 {
                let x = cross_moment(st, t).unwrap()[(0, 0)];
                cross_err = cross_err.max((x - oracle.cross[t - 1]).abs());
            }
        }
    }
    let worst = mean_err.max(var_err).max(cross_err);
    Outcome::new(
        worst < 1e-4,
        format!(
            "{MODELS} models, max abs error mean {mean_err:.1e} variance {var_err:.1e} cross moment {cross_err:.1e}"
        ),
    )
}
