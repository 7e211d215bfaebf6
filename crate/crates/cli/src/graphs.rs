//! Graphviz DOT exports of fitted parameters.
//!
//! * The question–concept graph joins question `i` to concept `k` when
//!   `w[i][k]` exceeds the threshold. Question nodes show the first time the
//!   question was assigned and its difficulty.
//! * Each resource graph has one box node for the resource and one circle
//!   per concept. Solid edges from the resource carry the intrinsic gain `d`
//!   (red when positive, blue when negative). Dotted edges `l -> k` carry the
//!   prerequisite influence `D[k][l]`.
//! * Learner tables list smoothed means over time, one column per concept.

use std::fmt::Write as _;
use std::io::Write;

use anyhow::Result;
use tracefa_core::kalman::SmoothedTrajectory;
use tracefa_core::{Dataset, QuestionParams, TransitionParams};

fn header(out: &mut String, run_id: Option<&str>) {
    if let Some(id) = run_id {
        let _ = writeln!(out, "// manifest {id}");
    }
}

fn concept_nodes(out: &mut String, k: usize) {
    let _ = writeln!(out, "  node [shape=circle];");
    for c in 1..=k {
        let _ = writeln!(out, "  c{c} [label=\"{c}\"];");
    }
}

/// First time instance (0-based) each question was assigned to anyone.
pub fn first_assignment(ds: &Dataset) -> Vec<Option<usize>> {
    let d = ds.dims();
    let mut first = vec![None; d.questions];
    for t in 0..d.timesteps {
        for j in 0..d.learners {
            let q = ds.question(t, j);
            first[q].get_or_insert(t);
        }
    }
    first
}

pub fn question_concept_dot(
    questions: &[QuestionParams],
    first_time: Option<&[Option<usize>]>,
    threshold: f64,
    run_id: Option<&str>,
) -> String {
    let mut out = String::new();
    header(&mut out, run_id);
    let _ = writeln!(out, "graph question_concept {{");
    let _ = writeln!(out, "  rankdir=LR;");
    concept_nodes(&mut out, questions.first().map_or(0, |q| q.loadings.len()));
    let _ = writeln!(out, "  node [shape=box];");
    for (i, q) in questions.iter().enumerate() {
        let when = match first_time.and_then(|f| f.get(i).copied().flatten()) {
            Some(t) => format!("t={}", t + 1),
            None => "t=?".to_owned(),
        };
        let _ = writeln!(out, "  q{} [label=\"Q{}\\n{when}\\nmu={:.3}\"];", i + 1, i + 1, q.difficulty);
    }
    for (i, q) in questions.iter().enumerate() {
        for (k, &w) in q.loadings.iter().enumerate() {
            if w > threshold {
                let _ = writeln!(out, "  q{} -- c{} [label=\"{w:.3}\"];", i + 1, k + 1);
            }
        }
    }
    out.push_str("}\n");
    out
}

/// DOT graph for resource `m` (0-based).
pub fn resource_dot(m: usize, tp: &TransitionParams, threshold: f64, run_id: Option<&str>) -> String {
    let k = tp.dim();
    let mut out = String::new();
    header(&mut out, run_id);
    let _ = writeln!(out, "digraph resource_{} {{", m + 1);
    let _ = writeln!(out, "  r [shape=box, label=\"resource {}\"];", m + 1);
    concept_nodes(&mut out, k);
    for (c, &d) in tp.gain.iter().enumerate() {
        if d.abs() > threshold {
            let color = if d > 0.0 { "red" } else { "blue" };
            let _ = writeln!(out, "  r -> c{} [color={color}, label=\"{d:.3}\"];", c + 1);
        }
    }
    for row in 0..k {
        for col in 0..=row {
            let v = tp.coupling[(row, col)];
            if v > threshold {
                let _ = writeln!(out, "  c{} -> c{} [style=dotted, label=\"{v:.3}\"];", col + 1, row + 1);
            }
        }
    }
    out.push_str("}\n");
    out
}

/// Smoothed means of one learner as `t,c1,...,cK`.
pub fn write_learner_table<W: Write>(st: &SmoothedTrajectory, w: &mut W, run_id: Option<&str>) -> Result<()> {
    crate::data::write_manifest_comment(w, run_id)?;
    let k = st.smoothed.first().map_or(0, |b| b.mean.len());
    let cols: Vec<String> = (1..=k).map(|c| format!("c{c}")).collect();
    writeln!(w, "t,{}", cols.join(","))?;
    for (t, b) in st.smoothed.iter().enumerate() {
        let vals: Vec<String> = b.mean.iter().map(f64::to_string).collect();
        writeln!(w, "{},{}", t + 1, vals.join(","))?;
    }
    Ok(())
}

/// Number of edges in a DOT string.
pub fn edge_count(dot: &str) -> usize {
    dot.lines().filter(|l| l.contains(" -- ") || l.contains(" -> ")).count()
}
