//! Recovery errors and response-prediction metrics.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::kalman::{ForwardFilter, SmoothedTrajectory};
use crate::model::{CellMask, Dataset, GaussianBelief, LearnerPrior, ModelParams, QuestionParams, TransitionParams};
use crate::special::normal_cdf;
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnowledgeError {
    /// Mean of `‖m − c‖² / ‖c‖²` over included cells.
    pub value: f64,
    pub included: usize,
    /// Cells skipped because the true state is exactly zero.
    pub excluded: usize,
}

/// Normalised knowledge-state error over all cells. Both arguments are
/// indexed `[learner][time]`.
pub fn knowledge_error(est: &[Vec<Vector>], truth: &[Vec<Vector>]) -> Result<KnowledgeError> {
    let t_len = truth.first().map_or(0, Vec::len);
    knowledge_error_range(est, truth, 0..t_len)
}

/// [`knowledge_error`] restricted to the time instances in `times`.
pub fn knowledge_error_range(
    est: &[Vec<Vector>],
    truth: &[Vec<Vector>],
    times: Range<usize>,
) -> Result<KnowledgeError> {
    if est.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} estimated and {} true trajectories",
            est.len(),
            truth.len()
        )));
    }
    let (mut sum, mut included, mut excluded) = (0.0, 0usize, 0usize);
    for (e, c) in est.iter().zip(truth) {
        if e.len() != c.len() || times.end > c.len() {
            return Err(Error::Dimension("trajectory lengths differ".into()));
        }
        for t in times.clone() {
            if e[t].len() != c[t].len() {
                return Err(Error::Dimension("state dimensions differ".into()));
            }
            let denom = c[t].norm_squared();
            if denom == 0.0 {
                excluded += 1;
                continue;
            }
            sum += (&e[t] - &c[t]).norm_squared() / denom;
            included += 1;
        }
    }
    if included == 0 {
        return Err(Error::NoData("every true state is zero".into()));
    }
    Ok(KnowledgeError { value: sum / included as f64, included, excluded })
}

/// Smoothed means as `[learner][time]`.
pub fn smoothed_means(trajectories: &[SmoothedTrajectory]) -> Vec<Vec<Vector>> {
    trajectories
        .iter()
        .map(|st| st.smoothed.iter().map(|b| b.mean.clone()).collect())
        .collect()
}

/// Normalised squared error per parameter family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamErrors {
    pub coupling: f64,
    pub gain: f64,
    pub noise_var: f64,
    pub loadings: f64,
    pub difficulty: f64,
}

/// `Σ‖θ̂ − θ‖² / Σ‖θ‖²` within each family, pooled over resources or
/// questions. Resources listed in `skip_resources` are left out.
pub fn param_error(
    est: &ModelParams,
    truth: &ModelParams,
    skip_resources: &[usize],
) -> Result<ParamErrors> {
    if est.transitions.len() != truth.transitions.len()
        || est.questions.len() != truth.questions.len()
    {
        return Err(Error::Dimension("parameter sets differ in size".into()));
    }
    let mut acc = [[0.0f64; 2]; 5];
    let mut add = |slot: usize, e: &[f64], t: &[f64]| -> Result<()> {
        if e.len() != t.len() {
            return Err(Error::Dimension("parameter shapes differ".into()));
        }
        for (a, b) in e.iter().zip(t) {
            acc[slot][0] += (a - b) * (a - b);
            acc[slot][1] += b * b;
        }
        Ok(())
    };
    for (m, (e, t)) in est.transitions.iter().zip(&truth.transitions).enumerate() {
        if skip_resources.contains(&m) {
            continue;
        }
        add(0, e.coupling.as_slice(), t.coupling.as_slice())?;
        add(1, e.gain.as_slice(), t.gain.as_slice())?;
        add(2, e.noise_var.as_slice(), t.noise_var.as_slice())?;
    }
    for (e, t) in est.questions.iter().zip(&truth.questions) {
        add(3, e.loadings.as_slice(), t.loadings.as_slice())?;
        add(4, &[e.difficulty], &[t.difficulty])?;
    }
    let names = ["D", "d", "Gamma", "w", "mu"];
    let mut out = [0.0; 5];
    for i in 0..5 {
        if acc[i][1] == 0.0 {
            return Err(Error::NoData(format!("true {} is identically zero", names[i])));
        }
        out[i] = acc[i][0] / acc[i][1];
    }
    Ok(ParamErrors {
        coupling: out[0],
        gain: out[1],
        noise_var: out[2],
        loadings: out[3],
        difficulty: out[4],
    })
}

/// `P(correct) = Φ((wᵀm − μ)/√(1 + wᵀVw))` under a Gaussian belief.
pub fn predict_prob(belief: &GaussianBelief, q: &QuestionParams) -> f64 {
    let w = &q.loadings;
    let s = 1.0 + w.dot(&(&belief.cov * w));
    normal_cdf((w.dot(&belief.mean) - q.difficulty) / libm::sqrt(s.max(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRecord {
    pub t: usize,
    pub j: usize,
    pub question: usize,
    pub prob_correct: f64,
    pub actual: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub count: usize,
    /// Fraction with `prob > 0.5` matching the grade; `0.5` counts as a miss.
    pub accuracy: f64,
    /// Mean probability assigned to the actual grade.
    pub likelihood: f64,
    /// Undefined when only one class is present.
    pub auc: Option<f64>,
    /// Fraction of the more frequent grade.
    pub majority_rate: f64,
}

pub fn evaluate(preds: &[PredictionRecord]) -> Result<Evaluation> {
    if preds.is_empty() {
        return Err(Error::NoData("no predictions to evaluate".into()));
    }
    let n = preds.len() as f64;
    let mut hits = 0usize;
    let mut lik = 0.0;
    let mut positives = 0usize;
    for p in preds {
        if !(0.0..=1.0).contains(&p.prob_correct) {
            return Err(Error::OutOfRange(format!("probability {}", p.prob_correct)));
        }
        let predicted_correct = p.prob_correct > 0.5;
        let predicted_wrong = p.prob_correct < 0.5;
        if (p.actual && predicted_correct) || (!p.actual && predicted_wrong) {
            hits += 1;
        }
        lik += if p.actual { p.prob_correct } else { 1.0 - p.prob_correct };
        positives += usize::from(p.actual);
    }
    let majority = positives.max(preds.len() - positives) as f64 / n;
    Ok(Evaluation {
        count: preds.len(),
        accuracy: hits as f64 / n,
        likelihood: lik / n,
        auc: auc(preds),
        majority_rate: majority,
    })
}

/// Area under the ROC curve via the rank-sum statistic with midranks for
/// ties. Returns `None` when either class is absent.
pub fn auc(preds: &[PredictionRecord]) -> Option<f64> {
    let pos = preds.iter().filter(|p| p.actual).count();
    let neg = preds.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[a].prob_correct.total_cmp(&preds[b].prob_correct));
    // Twice the rank sum keeps midranks integral, so the result is exact.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut end = i + 1;
        while end < order.len()
            && preds[order[end]].prob_correct == preds[order[i]].prob_correct
        {
            end += 1;
        }
        // Ranks i+1 ..= end share the midrank (i + 1 + end)/2.
        let twice_mid = (i + 1 + end) as u128;
        let tied_pos = order[i..end].iter().filter(|&&k| preds[k].actual).count() as u128;
        twice_rank_sum += twice_mid * tied_pos;
        i = end;
    }
    let (p, q) = (pos as u128, neg as u128);
    // U = R − P(P+1)/2, doubled.
    let twice_u = twice_rank_sum - p * (p + 1);
    Some(twice_u as f64 / (2 * p * q) as f64)
}

/// Predictions at every observed cell of `ds` selected by `mask`, from the
/// smoothed beliefs.
pub fn predict_cells(
    trajectories: &[SmoothedTrajectory],
    ds: &Dataset,
    mask: &CellMask,
    questions: &[QuestionParams],
) -> Vec<PredictionRecord> {
    mask.cells()
        .filter_map(|(t, j)| {
            let actual = ds.grade(t, j)?;
            let question = ds.question(t, j);
            let prob_correct = predict_prob(&trajectories[j].smoothed[t], &questions[question]);
            Some(PredictionRecord { t, j, question, prob_correct, actual })
        })
        .collect()
}

/// Sequential prediction for a learner not used in training: each observed
/// grade is predicted from the belief given only that learner's earlier
/// grades, then folded into the filter.
pub fn predict_new_learner(
    ds: &Dataset,
    j: usize,
    prior: &LearnerPrior,
    transitions: &[TransitionParams],
    questions: &[QuestionParams],
) -> Vec<PredictionRecord> {
    let mut out = Vec::new();
    let mut f = ForwardFilter::new(ds, j, prior, transitions, questions);
    while !f.is_done() {
        let t = f.state().t;
        let (pred, _, _, _) = f.step();
        if let Some(actual) = ds.grade(t, j) {
            let question = ds.question(t, j);
            let prob_correct = predict_prob(&pred, &questions[question]);
            out.push(PredictionRecord { t, j, question, prob_correct, actual });
        }
    }
    out
}
