//! Versioned JSON parameter files.
//!
//! Matrices are stored row-major as nested arrays; ids are 1-based. Floats
//! are written in shortest round-trip form, so save then load is bitwise
//! lossless.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tracefa_core::{Dimensions, LearnerPrior, Matrix, ModelParams, QuestionParams, TransitionParams, Vector};

pub const FORMAT_VERSION: u32 = 1;

/// Parameters plus the context needed to use them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamsDoc {
    pub dims: Dimensions,
    pub params: ModelParams,
    /// 0-based.
    pub noop_resources: Vec<usize>,
    /// Digest of the dataset the parameters were fit on.
    pub dataset_sha256: Option<String>,
    /// Run id of the manifest that produced the file.
    pub manifest: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DimsRecord {
    learners: usize,
    questions: usize,
    resources: usize,
    concepts: usize,
    timesteps: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorRecord {
    learner: usize,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionRecord {
    resource: usize,
    #[serde(rename = "D")]
    coupling: Vec<Vec<f64>>,
    #[serde(rename = "d")]
    gain: Vec<f64>,
    #[serde(rename = "Gamma")]
    noise_var: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionRecord {
    question: usize,
    w: Vec<f64>,
    mu: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    manifest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dataset_sha256: Option<String>,
    dims: DimsRecord,
    #[serde(default)]
    noop_resources: Vec<usize>,
    priors: Vec<PriorRecord>,
    transitions: Vec<TransitionRecord>,
    questions: Vec<QuestionRecord>,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], k: usize, what: &str) -> Result<Matrix> {
    if rows.len() != k {
        bail!("dimension mismatch: {what} has {} rows, expected {k}", rows.len());
    }
    for (r, row) in rows.iter().enumerate() {
        if row.len() != k {
            bail!("dimension mismatch: {what} row {} has {} entries, expected {k}", r + 1, row.len());
        }
    }
    Ok(Matrix::from_fn(k, k, |r, c| rows[r][c]))
}

fn vector(v: &[f64], k: usize, what: &str) -> Result<Vector> {
    if v.len() != k {
        bail!("dimension mismatch: {what} has {} entries, expected {k}", v.len());
    }
    Ok(Vector::from_column_slice(v))
}

fn check_id(found: usize, expected: usize, what: &str) -> Result<()> {
    if found != expected + 1 {
        bail!("{what} entry {} carries id {found}; entries must be listed in id order", expected + 1);
    }
    Ok(())
}

impl ParamsDoc {
    pub fn to_json(&self) -> Result<String> {
        let d = self.dims;
        let file = ParamsFile {
            format_version: FORMAT_VERSION,
            manifest: self.manifest.clone(),
            dataset_sha256: self.dataset_sha256.clone(),
            dims: DimsRecord {
                learners: d.learners,
                questions: d.questions,
                resources: d.resources,
                concepts: d.concepts,
                timesteps: d.timesteps,
            },
            noop_resources: self.noop_resources.iter().map(|m| m + 1).collect(),
            priors: (self.params.priors.iter().enumerate())
                .map(|(j, p)| PriorRecord { learner: j + 1, mean: p.mean.iter().copied().collect(), cov: rows(&p.cov) })
                .collect(),
            transitions: (self.params.transitions.iter().enumerate())
                .map(|(m, tp)| TransitionRecord {
                    resource: m + 1,
                    coupling: rows(&tp.coupling),
                    gain: tp.gain.iter().copied().collect(),
                    noise_var: tp.noise_var.iter().copied().collect(),
                })
                .collect(),
            questions: (self.params.questions.iter().enumerate())
                .map(|(i, q)| QuestionRecord {
                    question: i + 1,
                    w: q.loadings.iter().copied().collect(),
                    mu: q.difficulty,
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).context("cannot serialise parameters")?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value = serde_json::from_str(text).context("malformed JSON")?;
        match probe.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => bail!("format version {v} is not supported (expected {FORMAT_VERSION})"),
            None => bail!("missing format_version"),
        }
        let file: ParamsFile = serde_json::from_str(text).context("malformed parameter file")?;
        let d = &file.dims;
        let dims = Dimensions::new(d.learners, d.questions, d.resources, d.concepts, d.timesteps)?;
        let k = dims.concepts;

        let mut priors = Vec::with_capacity(file.priors.len());
        for (j, p) in file.priors.iter().enumerate() {
            check_id(p.learner, j, "prior")?;
            let ctx = format!("learner {}", j + 1);
            priors.push(LearnerPrior {
                mean: vector(&p.mean, k, &format!("{ctx} prior mean"))?,
                cov: matrix(&p.cov, k, &format!("{ctx} prior cov"))?,
            });
        }
        let mut transitions = Vec::with_capacity(file.transitions.len());
        for (m, t) in file.transitions.iter().enumerate() {
            check_id(t.resource, m, "transition")?;
            let ctx = format!("resource {}", m + 1);
            transitions.push(TransitionParams {
                coupling: matrix(&t.coupling, k, &format!("{ctx} D"))?,
                gain: vector(&t.gain, k, &format!("{ctx} d"))?,
                noise_var: vector(&t.noise_var, k, &format!("{ctx} Gamma"))?,
            });
        }
        let mut questions = Vec::with_capacity(file.questions.len());
        for (i, q) in file.questions.iter().enumerate() {
            check_id(q.question, i, "question")?;
            let w = vector(&q.w, k, &format!("question {} w", i + 1))?;
            questions.push(QuestionParams::new(w, q.mu));
        }
        let params = ModelParams { priors, transitions, questions };
        params.validate(dims)?;

        let mut noop_resources = Vec::with_capacity(file.noop_resources.len());
        for &m in &file.noop_resources {
            if m == 0 || m > dims.resources {
                bail!("no-op resource {m} is outside 1..={}", dims.resources);
            }
            noop_resources.push(m - 1);
        }
        Ok(ParamsDoc {
            dims,
            params,
            noop_resources,
            dataset_sha256: file.dataset_sha256,
            manifest: file.manifest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = crate::data::create(path)?;
        w.write_all(self.to_json()?.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot open parameter file `{}`", path.display()))?;
        Self::from_json(&text).with_context(|| format!("invalid parameter file `{}`", path.display()))
    }
}
