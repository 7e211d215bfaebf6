//! Domain types shared by every stage: dimensions, the response dataset,
//! Gaussian beliefs, and the transition, question and prior parameters.
//!
//! Time, learner, question and resource indices are 0-based here. File
//! formats and user-facing messages use 1-based indices; the conversion
//! happens only at the IO boundary and in `Display` impls.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};
use core::fmt;

use crate::error::{Error, Result};
use crate::linalg::is_symmetric_psd;
use crate::{Matrix, Vector};

/// Symmetry and eigenvalue tolerance for covariance invariants.
pub const COV_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dimensions {
    /// `N`
    pub learners: usize,
    /// `Q`
    pub questions: usize,
    /// `M`
    pub resources: usize,
    /// `K`
    pub concepts: usize,
    /// `T`
    pub timesteps: usize,
}

impl Dimensions {
    pub fn new(
        learners: usize,
        questions: usize,
        resources: usize,
        concepts: usize,
        timesteps: usize,
    ) -> Result<Self> {
        let dims = Dimensions { learners, questions, resources, concepts, timesteps };
        dims.check()?;
        Ok(dims)
    }

    pub fn check(&self) -> Result<()> {
        let fields = [
            ("learners", self.learners),
            ("questions", self.questions),
            ("resources", self.resources),
            ("concepts", self.concepts),
            ("timesteps", self.timesteps),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidParam(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// The low-dimensional model wants far fewer concepts than questions and
    /// learners. Violations are not fatal; callers decide how to report them.
    pub fn low_rank_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.concepts > self.questions {
            out.push(format!(
                "{} concepts exceed {} questions; the model is not low-dimensional",
                self.concepts, self.questions
            ));
        }
        if self.concepts > self.learners {
            out.push(format!(
                "{} concepts exceed {} learners; the model is not low-dimensional",
                self.concepts, self.learners
            ));
        }
        out
    }
}

/// One problem found by [`validate_dataset`]. Coordinates print 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Shape { field: &'static str, expected: usize, found: usize },
    GradeOutOfRange { t: usize, j: usize, value: u8 },
    MissingQuestion { t: usize, j: usize },
    QuestionOutOfRange { t: usize, j: usize, id: usize },
    /// `t` is the later time of the pair, i.e. the resource studied between
    /// `t - 1` and `t`.
    MissingResource { t: usize, j: usize },
    ResourceOutOfRange { t: usize, j: usize, id: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::Shape { field, expected, found } => {
                write!(f, "{field} has {found} entries, expected {expected}")
            }
            Violation::GradeOutOfRange { t, j, value } => {
                write!(f, "grade outside {{0,1}} at ({},{}): {value}", t + 1, j + 1)
            }
            Violation::MissingQuestion { t, j } => {
                write!(f, "missing question_index for ({},{})", t + 1, j + 1)
            }
            Violation::QuestionOutOfRange { t, j, id } => {
                write!(f, "question id {} out of range at ({},{})", id + 1, t + 1, j + 1)
            }
            Violation::MissingResource { t, j } => {
                write!(f, "missing resource_index for ({},{})", t + 1, j + 1)
            }
            Violation::ResourceOutOfRange { t, j, id } => {
                write!(f, "resource id {} out of range at ({},{})", id + 1, t + 1, j + 1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetReport(pub Vec<Violation>);

impl fmt::Display for DatasetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, v) in self.0.iter().enumerate() {
            if n > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Unvalidated dataset as read from files. All grids are time-major:
/// cell `(t, j)` lives at `t * N + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub dims: Dimensions,
    /// `T × N` grades; `None` means unobserved.
    pub grades: Vec<Option<u8>>,
    /// `T × N` question ids.
    pub questions: Vec<Option<usize>>,
    /// `(T-1) × N` resource ids; row `t - 1` holds the resource studied
    /// between `t - 1` and `t`.
    pub resources: Vec<Option<usize>>,
}

impl RawDataset {
    /// Empty raw dataset with every cell missing.
    pub fn empty(dims: Dimensions) -> Self {
        let cells = dims.timesteps * dims.learners;
        RawDataset {
            dims,
            grades: vec![None; cells],
            questions: vec![None; cells],
            resources: vec![None; (dims.timesteps - 1) * dims.learners],
        }
    }
}

/// Validated response dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dims: Dimensions,
    grades: Vec<Option<bool>>,
    questions: Vec<usize>,
    resources: Vec<usize>,
}

/// One observed response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub t: usize,
    pub j: usize,
    pub question: usize,
    pub correct: bool,
}

/// Checks every [`Dataset`] invariant and reports all violations at once.
pub fn validate_dataset(raw: RawDataset) -> core::result::Result<Dataset, DatasetReport> {
    let mut report = Vec::new();
    let d = raw.dims;
    if d.check().is_err() {
        report.push(Violation::Shape { field: "dims", expected: 1, found: 0 });
        return Err(DatasetReport(report));
    }
    let cells = d.timesteps * d.learners;
    let pairs = (d.timesteps - 1) * d.learners;
    for (field, expected, found) in [
        ("grades", cells, raw.grades.len()),
        ("questions", cells, raw.questions.len()),
        ("resources", pairs, raw.resources.len()),
    ] {
        if expected != found {
            report.push(Violation::Shape { field, expected, found });
        }
    }
    if !report.is_empty() {
        return Err(DatasetReport(report));
    }

    let mut grades = Vec::with_capacity(cells);
    let mut questions = Vec::with_capacity(cells);
    for idx in 0..cells {
        let (t, j) = (idx / d.learners, idx % d.learners);
        grades.push(match raw.grades[idx] {
            None => None,
            Some(0) => Some(false),
            Some(1) => Some(true),
            Some(value) => {
                report.push(Violation::GradeOutOfRange { t, j, value });
                None
            }
        });
        match raw.questions[idx] {
            None => report.push(Violation::MissingQuestion { t, j }),
            Some(id) if id >= d.questions => {
                report.push(Violation::QuestionOutOfRange { t, j, id })
            }
            Some(id) => questions.push(id),
        }
    }
    let mut resources = Vec::with_capacity(pairs);
    for idx in 0..pairs {
        let (t, j) = (idx / d.learners + 1, idx % d.learners);
        match raw.resources[idx] {
            None => report.push(Violation::MissingResource { t, j }),
            Some(id) if id >= d.resources => {
                report.push(Violation::ResourceOutOfRange { t, j, id })
            }
            Some(id) => resources.push(id),
        }
    }
    if report.is_empty() {
        Ok(Dataset { dims: d, grades, questions, resources })
    } else {
        Err(DatasetReport(report))
    }
}

impl Dataset {
    pub fn from_raw(raw: RawDataset) -> Result<Self> {
        validate_dataset(raw).map_err(Error::from)
    }

    pub fn to_raw(&self) -> RawDataset {
        RawDataset {
            dims: self.dims,
            grades: self.grades.iter().map(|g| g.map(u8::from)).collect(),
            questions: self.questions.iter().map(|&q| Some(q)).collect(),
            resources: self.resources.iter().map(|&m| Some(m)).collect(),
        }
    }

    #[inline]
    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    #[inline]
    pub fn grade(&self, t: usize, j: usize) -> Option<bool> {
        self.grades[t * self.dims.learners + j]
    }

    #[inline]
    pub fn question(&self, t: usize, j: usize) -> usize {
        self.questions[t * self.dims.learners + j]
    }

    /// Resource studied by learner `j` between `t - 1` and `t`; `t >= 1`.
    #[inline]
    pub fn resource(&self, t: usize, j: usize) -> usize {
        debug_assert!(t >= 1, "no transition into the first time instance");
        self.resources[(t - 1) * self.dims.learners + j]
    }

    /// Observed cells in time-major, then learner, order.
    pub fn observation_set(&self) -> Vec<Observation> {
        let n = self.dims.learners;
        self.grades
            .iter()
            .enumerate()
            .filter_map(|(idx, g)| {
                g.map(|correct| {
                    let (t, j) = (idx / n, idx % n);
                    Observation { t, j, question: self.questions[idx], correct }
                })
            })
            .collect()
    }

    pub fn num_observed(&self) -> usize {
        self.grades.iter().filter(|g| g.is_some()).count()
    }

    /// Mask of observed cells (Ω_obs).
    pub fn observed_mask(&self) -> CellMask {
        CellMask {
            timesteps: self.dims.timesteps,
            learners: self.dims.learners,
            cells: self.grades.iter().map(Option::is_some).collect(),
        }
    }

    /// Copy of the dataset with the masked cells turned unobserved.
    pub fn hide(&self, mask: &CellMask) -> Dataset {
        let mut out = self.clone();
        for (g, &h) in out.grades.iter_mut().zip(mask.cells.iter()) {
            if h {
                *g = None;
            }
        }
        out
    }

    /// Sub-dataset with the listed learners, renumbered in the given order.
    pub fn select_learners(&self, learners: &[usize]) -> Result<Dataset> {
        let d = self.dims;
        if learners.is_empty() {
            return Err(Error::NoData("no learners selected".into()));
        }
        if let Some(&j) = learners.iter().find(|&&j| j >= d.learners) {
            return Err(Error::OutOfRange(format!("learner {j} of {}", d.learners)));
        }
        let dims = Dimensions { learners: learners.len(), ..d };
        fn pick<T: Copy>(grid: &[T], rows: usize, width: usize, learners: &[usize]) -> Vec<T> {
            let mut out = Vec::with_capacity(rows * learners.len());
            for r in 0..rows {
                out.extend(learners.iter().map(|&j| grid[r * width + j]));
            }
            out
        }
        let (w, t) = (d.learners, d.timesteps);
        Ok(Dataset {
            dims,
            grades: pick(&self.grades, t, w, learners),
            questions: pick(&self.questions, t, w, learners),
            resources: pick(&self.resources, t - 1, w, learners),
        })
    }

    /// Copy keeping only the grades of the masked cells.
    pub fn keep_only(&self, mask: &CellMask) -> Dataset {
        let mut out = self.clone();
        for (g, &keep) in out.grades.iter_mut().zip(mask.cells.iter()) {
            if !keep {
                *g = None;
            }
        }
        out
    }
}

/// Boolean `T × N` grid over time/learner cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellMask {
    timesteps: usize,
    learners: usize,
    cells: Vec<bool>,
}

impl CellMask {
    pub fn new(timesteps: usize, learners: usize) -> Self {
        CellMask { timesteps, learners, cells: vec![false; timesteps * learners] }
    }

    pub fn for_dims(dims: Dimensions) -> Self {
        Self::new(dims.timesteps, dims.learners)
    }

    #[inline]
    pub fn get(&self, t: usize, j: usize) -> bool {
        self.cells[t * self.learners + j]
    }

    #[inline]
    pub fn set(&mut self, t: usize, j: usize, value: bool) {
        self.cells[t * self.learners + j] = value;
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn learners(&self) -> usize {
        self.learners
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Set cells in time-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.learners;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(move |(idx, _)| (idx / n, idx % n))
    }

    pub fn is_subset_of(&self, other: &CellMask) -> bool {
        self.cells.len() == other.cells.len()
            && self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b)
    }

    pub fn intersects(&self, other: &CellMask) -> bool {
        self.cells.iter().zip(&other.cells).any(|(&a, &b)| a && b)
    }

    pub fn union(&self, other: &CellMask) -> CellMask {
        let mut out = self.clone();
        for (a, &b) in out.cells.iter_mut().zip(&other.cells) {
            *a |= b;
        }
        out
    }

    pub fn difference(&self, other: &CellMask) -> CellMask {
        let mut out = self.clone();
        for (a, &b) in out.cells.iter_mut().zip(&other.cells) {
            *a &= !b;
        }
        out
    }
}

/// Gaussian belief over a learner's concept knowledge at one time instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vector,
    pub cov: Matrix,
}

impl GaussianBelief {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        let b = GaussianBelief { mean, cov };
        b.validate("belief")?;
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        let k = self.mean.len();
        if self.cov.nrows() != k || self.cov.ncols() != k {
            return Err(Error::Dimension(format!(
                "{what}: mean has length {k} but covariance is {}x{}",
                self.cov.nrows(),
                self.cov.ncols()
            )));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{what} mean")));
        }
        if !is_symmetric_psd(&self.cov, COV_TOL) {
            return Err(Error::InvalidParam(format!(
                "{what} covariance is not symmetric positive semidefinite"
            )));
        }
        Ok(())
    }
}

/// Affine transition `c(t) = (I + D) c(t-1) + d + ε`, `ε ~ N(0, diag(Γ))`,
/// induced by one learning resource.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionParams {
    /// `D`: lower triangular with nonnegative entries.
    pub coupling: Matrix,
    /// `d`: intrinsic knowledge gain, unconstrained.
    pub gain: Vector,
    /// Diagonal of `Γ`, all positive.
    pub noise_var: Vector,
}

/// Transition noise used for the designated no-op resource.
pub const NOOP_NOISE: f64 = 1e-8;

impl TransitionParams {
    /// `D = 0`, `d = 0`, `Γ = I`.
    pub fn initial(k: usize) -> Self {
        TransitionParams {
            coupling: Matrix::zeros(k, k),
            gain: Vector::zeros(k),
            noise_var: Vector::from_element(k, 1.0),
        }
    }

    /// Identity transition with negligible noise.
    pub fn noop(k: usize) -> Self {
        TransitionParams {
            coupling: Matrix::zeros(k, k),
            gain: Vector::zeros(k),
            noise_var: Vector::from_element(k, NOOP_NOISE),
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }

    /// `I + D`.
    pub fn state_matrix(&self) -> Matrix {
        let k = self.dim();
        &self.coupling + Matrix::identity(k, k)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.coupling.nrows() != k || self.coupling.ncols() != k {
            return Err(Error::Dimension(format!(
                "D is {}x{}, expected {k}x{k}",
                self.coupling.nrows(),
                self.coupling.ncols()
            )));
        }
        if self.gain.len() != k || self.noise_var.len() != k {
            return Err(Error::Dimension(format!(
                "d has {} and Gamma has {} entries, expected {k}",
                self.gain.len(),
                self.noise_var.len()
            )));
        }
        for r in 0..k {
            for c in 0..k {
                let v = self.coupling[(r, c)];
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("D[{},{}]", r + 1, c + 1)));
                }
                if c > r && v != 0.0 {
                    return Err(Error::InvalidParam(format!(
                        "D[{},{}] = {v} lies above the diagonal",
                        r + 1,
                        c + 1
                    )));
                }
                if v < 0.0 {
                    return Err(Error::InvalidParam(format!(
                        "D[{},{}] = {v} is negative",
                        r + 1,
                        c + 1
                    )));
                }
            }
        }
        if let Some(i) = self.gain.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("d[{}]", i + 1)));
        }
        for (i, &g) in self.noise_var.iter().enumerate() {
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::InvalidParam(format!("Gamma[{}] = {g} is not positive", i + 1)));
            }
        }
        Ok(())
    }
}

/// Question parameters: `P(correct | c) = Φ(wᵀc − μ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionParams {
    /// `w`: nonnegative, ideally sparse, concept loadings.
    pub loadings: Vector,
    /// `μ`: intrinsic difficulty; positive means hard.
    pub difficulty: f64,
}

impl QuestionParams {
    pub fn new(loadings: Vector, difficulty: f64) -> Self {
        QuestionParams { loadings, difficulty }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.loadings.len() != k {
            return Err(Error::Dimension(format!(
                "w has {} entries, expected {k}",
                self.loadings.len()
            )));
        }
        for (i, &w) in self.loadings.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFinite(format!("w[{}]", i + 1)));
            }
            if w < 0.0 {
                return Err(Error::InvalidParam(format!("w[{}] = {w} is negative", i + 1)));
            }
        }
        if !self.difficulty.is_finite() {
            return Err(Error::NonFinite("mu".into()));
        }
        Ok(())
    }
}

/// Gaussian prior on a learner's knowledge at the first time instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerPrior {
    pub mean: Vector,
    pub cov: Matrix,
}

impl LearnerPrior {
    /// `N(0, σ₀² I)`.
    pub fn isotropic(k: usize, variance: f64) -> Self {
        LearnerPrior { mean: Vector::zeros(k), cov: Matrix::identity(k, k) * variance }
    }

    pub fn as_belief(&self) -> GaussianBelief {
        GaussianBelief { mean: self.mean.clone(), cov: self.cov.clone() }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.mean.len() != k {
            return Err(Error::Dimension(format!(
                "prior mean has {} entries, expected {k}",
                self.mean.len()
            )));
        }
        self.as_belief().validate("prior")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// `λ`: L1 weight on question loadings.
    pub loading_l1: f64,
    /// `γ`: L1 weight on transition coupling matrices.
    pub coupling_l1: f64,
    /// `σ₀²`: default prior variance.
    pub prior_var: f64,
    pub em_max_iters: usize,
    pub em_tol: f64,
    /// `ℓ_max` for both FISTA solvers.
    pub fista_max_iters: usize,
    pub fista_tol: f64,
    /// Unscented-transform spread `κ`.
    pub ut_spread: f64,
}

impl HyperParams {
    /// Defaults for `k` concepts; `κ = max(3 − K, 0.5)`.
    pub fn defaults_for(k: usize) -> Self {
        HyperParams {
            loading_l1: 0.01,
            coupling_l1: 0.01,
            prior_var: 1.0,
            em_max_iters: 50,
            em_tol: 1e-4,
            fista_max_iters: 50,
            fista_tol: 1e-6,
            ut_spread: default_ut_spread(k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda", self.loading_l1),
            ("gamma", self.coupling_l1),
            ("em_tol", self.em_tol),
            ("fista_tol", self.fista_tol),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParam(format!("{name} = {v} must be nonnegative")));
            }
        }
        if !(self.prior_var > 0.0) || !self.prior_var.is_finite() {
            return Err(Error::InvalidParam(format!(
                "sigma0_sq = {} must be positive",
                self.prior_var
            )));
        }
        if !(self.ut_spread > 0.0) || !self.ut_spread.is_finite() {
            return Err(Error::InvalidParam(format!(
                "ut_spread = {} must be positive",
                self.ut_spread
            )));
        }
        Ok(())
    }
}

pub fn default_ut_spread(k: usize) -> f64 {
    (3.0 - k as f64).max(0.5)
}

/// Every estimated parameter of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub priors: Vec<LearnerPrior>,
    pub transitions: Vec<TransitionParams>,
    pub questions: Vec<QuestionParams>,
}

impl ModelParams {
    pub fn concepts(&self) -> usize {
        self.questions.first().map(|q| q.loadings.len()).unwrap_or(0)
    }

    /// Checks shapes against `dims` and every parameter invariant.
    pub fn validate(&self, dims: Dimensions) -> Result<()> {
        let k = dims.concepts;
        for (name, found, expected) in [
            ("priors", self.priors.len(), dims.learners),
            ("transitions", self.transitions.len(), dims.resources),
            ("questions", self.questions.len(), dims.questions),
        ] {
            if found != expected {
                return Err(Error::Dimension(format!(
                    "{found} {name}, expected {expected}"
                )));
            }
        }
        for (j, p) in self.priors.iter().enumerate() {
            p.validate(k).map_err(|e| wrap(e, format!("learner {}", j + 1)))?;
        }
        for (m, tp) in self.transitions.iter().enumerate() {
            tp.validate(k).map_err(|e| Error::Resource { id: m + 1, source: e.into() })?;
        }
        for (i, q) in self.questions.iter().enumerate() {
            q.validate(k).map_err(|e| Error::Question { id: i + 1, source: e.into() })?;
        }
        Ok(())
    }
}

fn wrap(e: Error, ctx: String) -> Error {
    match e {
        Error::Dimension(s) => Error::Dimension(format!("{ctx}: {s}")),
        Error::InvalidParam(s) => Error::InvalidParam(format!("{ctx}: {s}")),
        Error::NonFinite(s) => Error::NonFinite(format!("{ctx}: {s}")),
        other => other,
    }
}
