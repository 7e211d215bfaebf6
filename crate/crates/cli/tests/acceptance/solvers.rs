use rand::Rng as _;
use tracefa_core::fista::{fista, FistaOptions};
use tracefa_core::model::default_ut_spread;
use tracefa_core::question::{question_objective_and_grad, sigma_points, QuestionData, QuestionProblem, SigmaSet};
use tracefa_core::rng::{substream, Rng};
use tracefa_core::transition::{ResourceSufficientStats, TransitionProblem};
use tracefa_core::{GaussianBelief, Matrix, Vector};

use crate::oracles::{normal, random_spd, QuestionOracle, TransitionOracle};
use crate::Outcome;

fn random_stats(rng: &mut Rng, k: usize, pairs: usize) -> ResourceSufficientStats {
    let mut s = ResourceSufficientStats::zeros(k);
    for _ in 0..pairs {
        let prev_mean = Vector::from_fn(k, |_, _| normal(rng));
        let prev_cov = random_spd(rng, k, 0.4, 0.05);
        let cur_mean = &prev_mean + Vector::from_fn(k, |_, _| 0.3 + 0.5 * normal(rng));
        let cur_cov = random_spd(rng, k, 0.4, 0.05);
        let cross = &prev_cov * 0.8 + Matrix::from_fn(k, k, |_, _| 0.05 * normal(rng)) + &cur_mean * prev_mean.transpose();
        s.add_pair(&prev_mean, &prev_cov, &cur_mean, &cur_cov, &cross);
    }
    s
}

fn random_noise(rng: &mut Rng, k: usize) -> Vector {
    Vector::from_fn(k, |_, _| 0.1 + rng.random::<f64>())
}

fn random_responses(rng: &mut Rng, k: usize, count: usize) -> Vec<(bool, SigmaSet)> {
    (0..count)
        .map(|_| {
            let belief = GaussianBelief {
                mean: Vector::from_fn(k, |_, _| normal(rng)),
                cov: random_spd(rng, k, 0.4, 0.05),
            };
            (rng.random::<bool>(), sigma_points(&belief, default_ut_spread(k)).unwrap())
        })
        .collect()
}

/// Central differences of `f` at `x`, one coordinate at a time.
fn finite_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-5 * x[i].abs().max(1.0);
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale
}

pub fn gradients() -> Outcome {
    let mut rng = substream(3, "acceptance-gradients", 0);
    let (mut trans_err, mut quest_err) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let k = rng.random_range(1..=4);
        let stats = random_stats(&mut rng, k, 3 * k + 5);
        let problem = TransitionProblem::new(&stats, &random_noise(&mut rng, k), 0.0);
        let a = Matrix::from_fn(k, k + 1, |_, _| normal(&mut rng));
        let (_, grad) = problem.value_and_grad(&a);
        let f = |x: &[f64]| problem.value_and_grad(&Matrix::from_column_slice(k, k + 1, x)).0;
        let fd = finite_difference(&f, a.as_slice());
        trans_err = trans_err.max(relative_error(grad.as_slice(), &fd));
    }
    for _ in 0..20 {
        let k = rng.random_range(1..=4);
        let responses = random_responses(&mut rng, k, 15);
        let w = Vector::from_fn(k + 1, |_, _| normal(&mut rng));
        let (_, grad) = question_objective_and_grad(&w, &responses).unwrap();
        let f = |x: &[f64]| question_objective_and_grad(&Vector::from_column_slice(x), &responses).unwrap().0;
        let fd = finite_difference(&f, w.as_slice());
        quest_err = quest_err.max(relative_error(grad.as_slice(), &fd));
    }
    Outcome::new(
        trans_err < 1e-5 && quest_err < 1e-5,
        format!("20 points each, max relative error transition {trans_err:.1e} question {quest_err:.1e}"),
    )
}

fn monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + 1e-9)
}

const PENALTIES: [f64; 4] = [0.0, 0.01, 0.1, 1.0];

pub fn fista_checks() -> Outcome {
    let mut rng = substream(4, "acceptance-fista", 0);
    let mut runs = 0;
    let mut rises = 0;
    for _ in 0..40 {
        let k = rng.random_range(1..=4);
        let gamma = PENALTIES[rng.random_range(0..4)];
        let stats = random_stats(&mut rng, k, 3 * k + 5);
        let problem = TransitionProblem::new(&stats, &random_noise(&mut rng, k), gamma);
        let x0 = Vector::from_fn(k * (k + 1), |_, _| normal(&mut rng));
        let opts = FistaOptions { max_iters: 500, tol: 1e-10, lipschitz: problem.lipschitz() };
        rises += usize::from(!monotone(&fista(&problem, x0, opts).trace));

        let data = QuestionData::from_responses(k, &random_responses(&mut rng, k, 20)).unwrap();
        let problem = QuestionProblem { data: &data, loading_l1: gamma };
        let x0 = Vector::from_fn(k + 1, |_, _| normal(&mut rng));
        let opts = FistaOptions { max_iters: 500, tol: 1e-10, lipschitz: data.lipschitz() };
        rises += usize::from(!monotone(&fista(&problem, x0, opts).trace));
        runs += 2;
    }

    let k = 2;
    let mut gap = 0.0f64;
    for _ in 0..10 {
        let gamma = PENALTIES[rng.random_range(0..4)];
        let stats = random_stats(&mut rng, k, 12);
        let noise = random_noise(&mut rng, k);
        let problem = TransitionProblem::new(&stats, &noise, gamma);
        let a0 = Matrix::from_fn(k, k + 1, |_, _| normal(&mut rng));
        let opts = FistaOptions { max_iters: 100_000, tol: 1e-13, lipschitz: problem.lipschitz() };
        let fast = fista(&problem, Vector::from_column_slice(a0.as_slice()), opts);
        let oracle = TransitionOracle::new(&stats, &noise, gamma);
        let slow = oracle.projected_gradient(a0, 100_000);
        let fast_a = Matrix::from_column_slice(k, k + 1, fast.x.as_slice());
        gap = gap.max((oracle.objective(&fast_a) - oracle.objective(&slow)).abs());

        let responses = random_responses(&mut rng, k, 30);
        let data = QuestionData::from_responses(k, &responses).unwrap();
        let lambda = PENALTIES[rng.random_range(0..4)];
        let problem = QuestionProblem { data: &data, loading_l1: lambda };
        let w0 = Vector::from_fn(k + 1, |_, _| normal(&mut rng));
        let opts = FistaOptions { max_iters: 100_000, tol: 1e-13, lipschitz: data.lipschitz() };
        let fast = fista(&problem, w0.clone(), opts);
        let oracle = QuestionOracle::new(&responses, lambda);
        let slow = oracle.projected_gradient(w0, 100_000);
        gap = gap.max((oracle.objective(&fast.x) - oracle.objective(&slow)).abs());
    }
    Outcome::new(
        rises == 0 && gap <= 1e-5,
        format!("{runs} runs with {rises} objective rises; K=2 worst gap to projected gradient {gap:.1e}"),
    )
}
