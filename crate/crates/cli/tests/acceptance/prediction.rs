use std::sync::OnceLock;

use rand::Rng as _;
use tracefa_core::metrics::{auc, evaluate, predict_cells, Evaluation, PredictionRecord};
use tracefa_core::rng::substream;
use tracefa_core::synth::{generate, SynthConfig};
use tracefa_core::trainer::{e_step, em_fit, holdout_split, initial_params, surrogate_objective, FitConfig};
use tracefa_core::HyperParams;

use crate::oracles::pairwise_auc;
use crate::Outcome;

const SEEDS: u64 = 25;

/// One synthetic dataset fitted on an 80/20 by-cell split.
struct SplitRun {
    held_out: Evaluation,
    initial_held_out: Evaluation,
    /// Objective at the initial parameters, then after each iteration.
    objective: Vec<f64>,
}

fn split_run(seed: u64) -> SplitRun {
    let cfg = SynthConfig { seed: 300 + seed, ..Default::default() };
    let out = generate(&cfg).unwrap();
    let ds = &out.dataset;
    let mask = holdout_split(ds, 0.2, seed).unwrap();
    let mut fc = FitConfig::new(HyperParams::defaults_for(cfg.concepts));
    fc.seed = seed;
    fc.hp.fista_max_iters = 10;
    fc.noop_resources = vec![out.noop_resource];
    fc.holdout_mask = Some(mask.clone());

    let train = ds.hide(&mask);
    let init = initial_params(ds, &fc).unwrap();
    let trajs0 = e_step(&train, &init).unwrap();
    let obj0 = surrogate_objective(&init, &trajs0, &train, fc.hp.ut_spread).unwrap();
    let initial_held_out = evaluate(&predict_cells(&trajs0, ds, &mask, &init.questions)).unwrap();

    let fit = em_fit(ds, &fc, None).unwrap();
    let held_out = evaluate(&predict_cells(&fit.trajectories, ds, &mask, &fit.questions)).unwrap();
    let mut objective = vec![obj0];
    objective.extend(&fit.objective_trace);
    SplitRun { held_out, initial_held_out, objective }
}

fn split_runs() -> &'static [SplitRun] {
    static RUNS: OnceLock<Vec<SplitRun>> = OnceLock::new();
    RUNS.get_or_init(|| (0..SEEDS).map(split_run).collect())
}

pub fn sanity() -> Outcome {
    let runs = split_runs();
    let good = runs
        .iter()
        .filter(|r| {
            let e = &r.held_out;
            e.accuracy >= e.majority_rate + 0.03 && e.likelihood > 0.55 && e.auc.is_some_and(|a| a > 0.65)
        })
        .count();
    let n = runs.len() as f64;
    let mean = |f: fn(&Evaluation) -> f64| runs.iter().map(|r| f(&r.held_out)).sum::<f64>() / n;
    Outcome::new(
        good >= 20,
        format!(
            "{good}/{SEEDS} seeds pass; mean accuracy {:.3} vs majority {:.3}, likelihood {:.3}, AUC {:.3}",
            mean(|e| e.accuracy),
            mean(|e| e.majority_rate),
            mean(|e| e.likelihood),
            mean(|e| e.auc.unwrap_or(f64::NAN)),
        ),
    )
}

pub fn em_behaviour() -> Outcome {
    let runs = split_runs();
    let mut worst_drop = f64::NEG_INFINITY;
    let mut monotone = 0;
    let mut improved = 0;
    for r in runs {
        let head = &r.objective[..r.objective.len().min(11)];
        let drop = head.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
        worst_drop = worst_drop.max(drop);
        monotone += usize::from(drop <= 1e-3);
        improved += usize::from(r.held_out.likelihood > r.initial_held_out.likelihood);
    }
    let n = runs.len();
    Outcome::new(
        monotone == n && improved >= 20,
        format!(
            "objective non-decreasing over 10 iterations in {monotone}/{n} runs (smallest step up {:.1e}); held-out likelihood improved in {improved}/{n}",
            -worst_drop
        ),
    )
}

pub fn auc_exact() -> Outcome {
    let mut rng = substream(9, "acceptance-auc", 0);
    let mut mismatches = 0;
    for i in 0..100 {
        let n = rng.random_range(1..=1000);
        let ties = i % 2 == 0;
        let bias = rng.random::<f64>();
        let preds: Vec<PredictionRecord> = (0..n)
            .map(|j| {
                let actual = rng.random::<f64>() < bias;
                let raw = rng.random::<f64>();
                let prob_correct = if ties { (raw * 10.0).round() / 10.0 } else { raw };
                PredictionRecord { t: 0, j, question: 0, prob_correct, actual }
            })
            .collect();
        let scores: Vec<f64> = preds.iter().map(|p| p.prob_correct).collect();
        let labels: Vec<bool> = preds.iter().map(|p| p.actual).collect();
        let got = auc(&preds);
        let want = pairwise_auc(&scores, &labels);
        if got.map(f64::to_bits) != want.map(f64::to_bits) {
            mismatches += 1;
        }
    }
    Outcome::new(mismatches == 0, format!("{mismatches}/100 instances differ from the pairwise count"))
}
