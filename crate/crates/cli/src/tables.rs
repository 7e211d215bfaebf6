//! Tabular outputs: trajectories, true states, predictions, key-value
//! metrics and anchor matrices.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Result};
use tracefa_core::kalman::SmoothedTrajectory;
use tracefa_core::metrics::PredictionRecord;
use tracefa_core::{Matrix, Vector};

use crate::data::{check_header, create, csv_reader, index_field, open, records, write_manifest_comment};

pub const TRAJECTORY_HEADER: [&str; 5] = ["learner", "t", "concept", "mean", "variance"];
pub const STATES_HEADER: [&str; 4] = ["learner", "t", "concept", "value"];
pub const PREDICTION_HEADER: [&str; 5] = ["t", "learner", "question", "prob_correct", "grade"];
pub const ANCHOR_HEADER: [&str; 2] = ["question", "concept"];

pub fn write_trajectories<W: Write>(trajs: &[SmoothedTrajectory], w: &mut W, run_id: Option<&str>) -> Result<()> {
    write_manifest_comment(w, run_id)?;
    writeln!(w, "{}", TRAJECTORY_HEADER.join(","))?;
    for (j, st) in trajs.iter().enumerate() {
        for (t, b) in st.smoothed.iter().enumerate() {
            for k in 0..b.mean.len() {
                writeln!(w, "{},{},{},{},{}", j + 1, t + 1, k + 1, b.mean[k], b.cov[(k, k)])?;
            }
        }
    }
    Ok(())
}

pub fn save_trajectories(trajs: &[SmoothedTrajectory], path: &Path, run_id: Option<&str>) -> Result<()> {
    let mut w = create(path)?;
    write_trajectories(trajs, &mut w, run_id)?;
    w.flush()?;
    Ok(())
}

pub fn write_states<W: Write>(states: &[Vec<Vector>], w: &mut W, run_id: Option<&str>) -> Result<()> {
    write_manifest_comment(w, run_id)?;
    writeln!(w, "{}", STATES_HEADER.join(","))?;
    for (j, traj) in states.iter().enumerate() {
        for (t, c) in traj.iter().enumerate() {
            for (k, v) in c.iter().enumerate() {
                writeln!(w, "{},{},{},{v}", j + 1, t + 1, k + 1)?;
            }
        }
    }
    Ok(())
}

/// Reads `[learner][time]` vectors from a trajectory or state table; the
/// value column is the fourth one in both layouts.
pub fn parse_state_table<R: Read>(r: R, name: &str) -> Result<Vec<Vec<Vector>>> {
    let mut rdr = csv_reader(r, name)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header == TRAJECTORY_HEADER {
        check_header(&mut rdr, name, &TRAJECTORY_HEADER)?;
    } else {
        check_header(&mut rdr, name, &STATES_HEADER)?;
    }
    let mut cells: Vec<(usize, usize, usize, f64, u64)> = Vec::new();
    let (mut n, mut t_len, mut k_len) = (0, 0, 0);
    for item in records(&mut rdr, name) {
        let (line, rec) = item?;
        let j = index_field(&rec, 0, "learner", name, line)?;
        let t = index_field(&rec, 1, "t", name, line)?;
        let k = index_field(&rec, 2, "concept", name, line)?;
        let v: f64 = rec[3]
            .parse()
            .map_err(|_| anyhow!("{name} line {line}: value `{}` is not a number", &rec[3]))?;
        n = n.max(j + 1);
        t_len = t_len.max(t + 1);
        k_len = k_len.max(k + 1);
        cells.push((j, t, k, v, line));
    }
    let mut out = vec![vec![Vector::from_element(k_len, f64::NAN); t_len]; n];
    for &(j, t, k, v, line) in &cells {
        if !out[j][t][k].is_nan() {
            bail!("{name} line {line}: duplicate entry for learner {}, t={}, concept {}", j + 1, t + 1, k + 1);
        }
        out[j][t][k] = v;
    }
    for (j, traj) in out.iter().enumerate() {
        for (t, c) in traj.iter().enumerate() {
            if let Some(k) = c.iter().position(|v| v.is_nan()) {
                bail!("{name}: no entry for learner {}, t={}, concept {}", j + 1, t + 1, k + 1);
            }
        }
    }
    Ok(out)
}

pub fn read_state_table(path: &Path) -> Result<Vec<Vec<Vector>>> {
    parse_state_table(open(path, "trajectory")?, &path.display().to_string())
}

pub fn write_predictions<W: Write>(preds: &[PredictionRecord], w: &mut W, run_id: Option<&str>) -> Result<()> {
    write_manifest_comment(w, run_id)?;
    writeln!(w, "{}", PREDICTION_HEADER.join(","))?;
    for p in preds {
        writeln!(w, "{},{},{},{},{}", p.t + 1, p.j + 1, p.question + 1, p.prob_correct, u8::from(p.actual))?;
    }
    Ok(())
}

/// Ordered `key=value` report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report(pub Vec<(String, String)>);

impl Report {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write<W: Write>(&self, w: &mut W, run_id: Option<&str>) -> Result<()> {
        if let Some(id) = run_id {
            writeln!(w, "manifest={id}")?;
        }
        for (k, v) in &self.0 {
            writeln!(w, "{k}={v}")?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Report::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value", n + 1))?;
            out.push(k.trim(), v.trim());
        }
        Ok(out)
    }
}

/// Reads the nonzero support of the loadings as `question,concept` pairs
/// into a `Q × K` 0/1 matrix.
pub fn parse_anchor<R: Read>(r: R, name: &str, questions: usize, concepts: usize) -> Result<Matrix> {
    let mut rdr = csv_reader(r, name)?;
    check_header(&mut rdr, name, &ANCHOR_HEADER)?;
    let mut m = Matrix::zeros(questions, concepts);
    for item in records(&mut rdr, name) {
        let (line, rec) = item?;
        let i = index_field(&rec, 0, "question", name, line)?;
        let k = index_field(&rec, 1, "concept", name, line)?;
        if i >= questions || k >= concepts {
            bail!("{name} line {line}: entry ({}, {}) lies outside {questions}x{concepts}", i + 1, k + 1);
        }
        m[(i, k)] = 1.0;
    }
    Ok(m)
}

pub fn read_anchor(path: &Path, questions: usize, concepts: usize) -> Result<Matrix> {
    parse_anchor(open(path, "anchor")?, &path.display().to_string(), questions, concepts)
}

pub fn write_anchor<W: Write>(loadings: &[Vector], w: &mut W, run_id: Option<&str>) -> Result<()> {
    write_manifest_comment(w, run_id)?;
    writeln!(w, "{}", ANCHOR_HEADER.join(","))?;
    for (i, wi) in loadings.iter().enumerate() {
        for (k, &v) in wi.iter().enumerate() {
            if v != 0.0 {
                writeln!(w, "{},{}", i + 1, k + 1)?;
            }
        }
    }
    Ok(())
}
