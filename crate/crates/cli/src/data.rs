//! Grade, activity and mask files.
//!
//! All files are comma-separated with a header row and 1-based indices.
//! Lines starting with `#` are comments.
//!
//! * grades: `t,learner,question,grade`. Every `(t, learner)` cell needs a
//!   row naming its question; an empty grade marks the cell unobserved.
//! * activity: `t,learner,resource`, the resource studied between `t - 1`
//!   and `t`, so `t` starts at 2.
//! * masks: `t,learner`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use tracefa_core::{CellMask, Dataset, Dimensions, RawDataset};

pub const GRADES_HEADER: [&str; 4] = ["t", "learner", "question", "grade"];
pub const ACTIVITY_HEADER: [&str; 3] = ["t", "learner", "resource"];
pub const MASK_HEADER: [&str; 2] = ["t", "learner"];

struct GradeRow {
    t: usize,
    j: usize,
    question: usize,
    grade: Option<u8>,
}

struct ActivityRow {
    t: usize,
    j: usize,
    resource: usize,
}

pub(crate) type Table = csv::Reader<std::io::Cursor<Vec<u8>>>;

/// Buffers `r` into a CSV reader that skips `#` comment lines.
pub(crate) fn csv_reader<R: Read>(mut r: R, name: &str) -> Result<Table> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).with_context(|| format!("cannot read {name}"))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(std::io::Cursor::new(bytes)))
}

/// Maps reader byte offsets to 1-based file lines. The reader reports a
/// record at the start of any comment or blank lines preceding it.
struct Lines {
    starts: Vec<u64>,
    skippable: Vec<bool>,
}

impl Lines {
    fn new(rdr: &Table) -> Self {
        let bytes = rdr.get_ref().get_ref();
        let mut starts = Vec::new();
        let mut skippable = Vec::new();
        let mut pos = 0u64;
        for line in bytes.split_inclusive(|&b| b == b'\n') {
            starts.push(pos);
            let text = line.strip_suffix(b"\n").unwrap_or(line);
            let text = text.strip_suffix(b"\r").unwrap_or(text);
            skippable.push(text.is_empty() || text.first() == Some(&b'#'));
            pos += line.len() as u64;
        }
        Lines { starts, skippable }
    }

    fn line_of(&self, byte: u64) -> u64 {
        let mut idx = self.starts.partition_point(|&s| s <= byte).saturating_sub(1);
        while idx + 1 < self.skippable.len() && self.skippable[idx] {
            idx += 1;
        }
        idx as u64 + 1
    }
}

pub(crate) fn check_header(rdr: &mut Table, name: &str, expected: &[&str]) -> Result<()> {
    let lines = Lines::new(rdr);
    let found = rdr.headers().with_context(|| format!("{name}: cannot read header"))?;
    if found.iter().ne(expected.iter().copied()) {
        let line = found.position().map_or(1, |p| lines.line_of(p.byte()));
        bail!(
            "{name} line {line}: header is `{}`, expected `{}`",
            found.iter().collect::<Vec<_>>().join(","),
            expected.join(",")
        );
    }
    Ok(())
}

/// Iterates records as `(line, record)`, attaching line numbers to errors.
pub(crate) fn records<'a>(
    rdr: &'a mut Table,
    name: &str,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + 'a {
    let name = name.to_owned();
    let lines = Lines::new(rdr);
    rdr.records().map(move |rec| {
        let rec = rec.map_err(|e| match e.position() {
            Some(p) => anyhow!("{name} line {}: {e}", lines.line_of(p.byte())),
            None => anyhow!("{name}: {e}"),
        })?;
        let line = rec.position().map_or(0, |p| lines.line_of(p.byte()));
        Ok((line, rec))
    })
}

/// Parses a 1-based index field into a 0-based one.
pub(crate) fn index_field(rec: &csv::StringRecord, col: usize, what: &str, name: &str, line: u64) -> Result<usize> {
    let raw = &rec[col];
    let v: usize = raw
        .parse()
        .map_err(|_| anyhow!("{name} line {line}: {what} `{raw}` is not a positive integer"))?;
    if v == 0 {
        bail!("{name} line {line}: {what} ids start at 1");
    }
    Ok(v - 1)
}

fn parse_grades<R: Read>(r: R, name: &str) -> Result<Vec<GradeRow>> {
    let mut rdr = csv_reader(r, name)?;
    check_header(&mut rdr, name, &GRADES_HEADER)?;
    let mut seen: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows = Vec::new();
    for item in records(&mut rdr, name) {
        let (line, rec) = item?;
        let t = index_field(&rec, 0, "t", name, line)?;
        let j = index_field(&rec, 1, "learner", name, line)?;
        let question = index_field(&rec, 2, "question", name, line)?;
        let grade = match &rec[3] {
            "" => None,
            g => Some(g.parse::<u8>().map_err(|_| anyhow!("{name} line {line}: grade `{g}` is not 0 or 1"))?),
        };
        if let Some(first) = seen.insert((t, j), line) {
            bail!(
                "{name} line {line}: duplicate row for t={}, learner={} (first on line {first})",
                t + 1,
                j + 1
            );
        }
        rows.push(GradeRow { t, j, question, grade });
    }
    Ok(rows)
}

fn parse_activity<R: Read>(r: R, name: &str) -> Result<Vec<ActivityRow>> {
    let mut rdr = csv_reader(r, name)?;
    check_header(&mut rdr, name, &ACTIVITY_HEADER)?;
    let mut seen: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows = Vec::new();
    for item in records(&mut rdr, name) {
        let (line, rec) = item?;
        let t = index_field(&rec, 0, "t", name, line)?;
        let j = index_field(&rec, 1, "learner", name, line)?;
        let resource = index_field(&rec, 2, "resource", name, line)?;
        if t == 0 {
            bail!("{name} line {line}: t must be at least 2; a resource leads into time t");
        }
        if let Some(first) = seen.insert((t, j), line) {
            bail!(
                "{name} line {line}: duplicate row for t={}, learner={} (first on line {first})",
                t + 1,
                j + 1
            );
        }
        rows.push(ActivityRow { t, j, resource });
    }
    Ok(rows)
}

/// Builds a dataset from grade and activity readers. Sizes are inferred
/// from the largest ids present, raised to `floor` where given; `concepts`
/// comes from `floor` or defaults to 1.
pub fn parse_dataset<G: Read, A: Read>(
    grades: G,
    grades_name: &str,
    activity: A,
    activity_name: &str,
    floor: Option<Dimensions>,
) -> Result<Dataset> {
    let g = parse_grades(grades, grades_name)?;
    let a = parse_activity(activity, activity_name)?;
    if g.is_empty() {
        bail!("{grades_name}: no grade rows");
    }
    let mut dims = floor.unwrap_or(Dimensions { learners: 0, questions: 0, resources: 0, concepts: 1, timesteps: 0 });
    for r in &g {
        dims.timesteps = dims.timesteps.max(r.t + 1);
        dims.learners = dims.learners.max(r.j + 1);
        dims.questions = dims.questions.max(r.question + 1);
    }
    for r in &a {
        dims.timesteps = dims.timesteps.max(r.t + 1);
        dims.learners = dims.learners.max(r.j + 1);
        dims.resources = dims.resources.max(r.resource + 1);
    }
    dims.resources = dims.resources.max(1);
    let mut raw = RawDataset::empty(dims);
    let n = dims.learners;
    for r in &g {
        let idx = r.t * n + r.j;
        raw.grades[idx] = r.grade;
        raw.questions[idx] = Some(r.question);
    }
    for r in &a {
        raw.resources[(r.t - 1) * n + r.j] = Some(r.resource);
    }
    Dataset::from_raw(raw).with_context(|| format!("{grades_name} + {activity_name} do not form a valid dataset"))
}

pub fn read_dataset(grades: &Path, activity: &Path, floor: Option<Dimensions>) -> Result<Dataset> {
    let g = open(grades, "grades")?;
    let a = open(activity, "activity")?;
    parse_dataset(g, &grades.display().to_string(), a, &activity.display().to_string(), floor)
}

pub(crate) fn open(path: &Path, role: &str) -> Result<File> {
    File::open(path).with_context(|| format!("cannot open {role} file `{}`", path.display()))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create `{}`", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Writes `# manifest <id>` when a run id is given.
pub(crate) fn write_manifest_comment<W: Write>(w: &mut W, run_id: Option<&str>) -> Result<()> {
    if let Some(id) = run_id {
        writeln!(w, "# manifest {id}")?;
    }
    Ok(())
}

pub fn write_grades<W: Write>(ds: &Dataset, w: &mut W, run_id: Option<&str>) -> Result<()> {
    let d = ds.dims();
    write_manifest_comment(w, run_id)?;
    writeln!(w, "{}", GRADES_HEADER.join(","))?;
    for t in 0..d.timesteps {
        for j in 0..d.learners {
            let grade = ds.grade(t, j).map_or(String::new(), |g| u8::from(g).to_string());
            writeln!(w, "{},{},{},{grade}", t + 1, j + 1, ds.question(t, j) + 1)?;
        }
    }
    Ok(())
}

pub fn write_activity<W: Write>(ds: &Dataset, w: &mut W, run_id: Option<&str>) -> Result<()> {
    let d = ds.dims();
    write_manifest_comment(w, run_id)?;
    writeln!(w, "{}", ACTIVITY_HEADER.join(","))?;
    for t in 1..d.timesteps {
        for j in 0..d.learners {
            writeln!(w, "{},{},{}", t + 1, j + 1, ds.resource(t, j) + 1)?;
        }
    }
    Ok(())
}

pub fn write_dataset(ds: &Dataset, grades: &Path, activity: &Path, run_id: Option<&str>) -> Result<()> {
    let mut g = create(grades)?;
    write_grades(ds, &mut g, run_id)?;
    g.flush()?;
    let mut a = create(activity)?;
    write_activity(ds, &mut a, run_id)?;
    a.flush()?;
    Ok(())
}

pub fn parse_mask<R: Read>(r: R, name: &str, timesteps: usize, learners: usize) -> Result<CellMask> {
    let mut rdr = csv_reader(r, name)?;
    check_header(&mut rdr, name, &MASK_HEADER)?;
    let mut mask = CellMask::new(timesteps, learners);
    for item in records(&mut rdr, name) {
        let (line, rec) = item?;
        let t = index_field(&rec, 0, "t", name, line)?;
        let j = index_field(&rec, 1, "learner", name, line)?;
        if t >= timesteps || j >= learners {
            bail!(
                "{name} line {line}: cell t={}, learner={} lies outside the {timesteps}x{learners} grid",
                t + 1,
                j + 1
            );
        }
        if mask.get(t, j) {
            bail!("{name} line {line}: duplicate cell t={}, learner={}", t + 1, j + 1);
        }
        mask.set(t, j, true);
    }
    Ok(mask)
}

pub fn read_mask(path: &Path, timesteps: usize, learners: usize) -> Result<CellMask> {
    parse_mask(open(path, "mask")?, &path.display().to_string(), timesteps, learners)
}

pub fn write_mask<W: Write>(mask: &CellMask, w: &mut W, run_id: Option<&str>) -> Result<()> {
    write_manifest_comment(w, run_id)?;
    writeln!(w, "{}", MASK_HEADER.join(","))?;
    for (t, j) in mask.cells() {
        writeln!(w, "{},{}", t + 1, j + 1)?;
    }
    Ok(())
}

pub fn save_mask(mask: &CellMask, path: &Path, run_id: Option<&str>) -> Result<()> {
    let mut w = create(path)?;
    write_mask(mask, &mut w, run_id)?;
    w.flush()?;
    Ok(())
}
