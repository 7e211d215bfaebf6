use tracefa_core::metrics::{knowledge_error, knowledge_error_range, param_error, smoothed_means};
use tracefa_core::synth::{generate, SynthConfig, SynthOutput};
use tracefa_core::trainer::{e_step, em_fit, FitConfig};
use tracefa_core::{HyperParams, Matrix};

use crate::Outcome;

const TRIALS: u64 = 25;
const FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

pub fn trajectories() -> Outcome {
    let mut held = 0;
    let mut early_late = [0.0; 2];
    let mut by_fraction = [0.0; 4];
    for trial in 0..TRIALS {
        let mut errs = [0.0; 4];
        let mut trend = true;
        for (f, &fraction) in FRACTIONS.iter().enumerate() {
            let cfg = SynthConfig { obs_fraction: fraction, seed: 500 + trial, ..Default::default() };
            let out = generate(&cfg).unwrap();
            let means = smoothed_means(&e_step(&out.dataset, &out.truth).unwrap());
            let t_len = cfg.timesteps;
            let early = knowledge_error_range(&means, &out.states, 0..25).unwrap().value;
            let late = knowledge_error_range(&means, &out.states, t_len - 25..t_len).unwrap().value;
            trend &= late < early;
            errs[f] = knowledge_error(&means, &out.states).unwrap().value;
            if fraction == 1.0 {
                early_late[0] += early / TRIALS as f64;
                early_late[1] += late / TRIALS as f64;
            }
            by_fraction[f] += errs[f] / TRIALS as f64;
        }
        let monotone = errs.windows(2).all(|w| w[1] <= w[0]);
        held += usize::from(trend && monotone);
    }
    let fr: Vec<String> = by_fraction.iter().map(|e| format!("{e:.3}")).collect();
    Outcome::new(
        held >= 20,
        format!(
            "{held}/{TRIALS} trials hold; full observation first/last 25 steps {:.3}/{:.3}; by fraction {}",
            early_late[0],
            early_late[1],
            fr.join(" > ")
        ),
    )
}

/// Loadings support of the true model as a 0/1 anchor.
fn true_support(out: &SynthOutput) -> Matrix {
    let k = out.truth.concepts();
    let mut anchor = Matrix::zeros(out.truth.questions.len(), k);
    for (i, q) in out.truth.questions.iter().enumerate() {
        for c in 0..k {
            if q.loadings[c] > 0.0 {
                anchor[(i, c)] = 1.0;
            }
        }
    }
    anchor
}

pub const SIZES: [usize; 3] = [50, 100, 200];
const FAMILIES: [&str; 5] = ["D", "d", "Gamma", "w", "mu"];

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn parameters() -> Outcome {
    // errors[size][family][trial]
    let mut errors = vec![vec![Vec::new(); FAMILIES.len()]; SIZES.len()];
    for trial in 0..TRIALS {
        for (s, &n) in SIZES.iter().enumerate() {
            let cfg = SynthConfig { learners: n, seed: 900 + trial, ..Default::default() };
            let out = generate(&cfg).unwrap();
            let mut fc = FitConfig::new(HyperParams::defaults_for(cfg.concepts));
            fc.seed = trial;
            fc.hp.fista_max_iters = 10;
            fc.noop_resources = vec![out.noop_resource];
            fc.priors = Some(out.truth.priors.clone());
            fc.anchor_init = Some(true_support(&out));
            let fit = em_fit(&out.dataset, &fc, None).unwrap();
            let pe = param_error(&fit.params(), &out.truth, &[out.noop_resource]).unwrap();
            for (f, v) in [pe.coupling, pe.gain, pe.noise_var, pe.loadings, pe.difficulty].into_iter().enumerate() {
                errors[s][f].push(v);
            }
        }
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for (f, name) in FAMILIES.iter().enumerate() {
        let med: Vec<f64> = (0..SIZES.len()).map(|s| median(&mut errors[s][f])).collect();
        pass &= med.windows(2).all(|w| w[1] < w[0]);
        parts.push(format!("{name} {:.3}/{:.3}/{:.3}", med[0], med[1], med[2]));
    }
    Outcome::new(pass, format!("median errors at N=50/100/200: {}", parts.join(", ")))
}
