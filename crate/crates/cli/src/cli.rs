//! Command-line interface.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use tracefa_core::kalman::SmoothedTrajectory;
use tracefa_core::metrics::{
    evaluate, knowledge_error, param_error, predict_cells, predict_new_learner, PredictionRecord,
};
use tracefa_core::synth::{generate, SynthConfig};
use tracefa_core::trainer::{e_step, em_fit, holdout_split, kfold_split, learners_in, FitConfig, SplitMode};
use tracefa_core::{CellMask, Dataset, Dimensions, HyperParams, LearnerPrior};

use crate::data::{create, read_dataset, read_mask, save_mask, write_dataset};
use crate::graphs::{first_assignment, question_concept_dot, resource_dot, write_learner_table};
use crate::manifest::{dataset_digest, Manifest};
use crate::params::ParamsDoc;
use crate::tables::{read_anchor, read_state_table, save_trajectories, write_anchor, write_predictions, write_states, Report};

#[derive(Debug, Parser)]
#[command(name = "tracefa", version, about = "Sparse factor analysis of time-varying learner responses")]
pub struct Cli {
    /// Worker threads for the parallel stages; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Seed for every random stage; overrides a seed in a config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known parameters.
    Synth(SynthArgs),
    /// Fit every parameter by EM.
    Fit(FitArgs),
    /// Smoothed knowledge trajectories under given parameters.
    Trace(TraceArgs),
    /// Predict grades at masked cells and score the predictions.
    Predict(PredictArgs),
    /// Compare estimated parameters and trajectories with the truth.
    Eval(EvalArgs),
    /// Write graph descriptions of fitted parameters.
    Export(ExportArgs),
    /// K-fold cross-validation of prediction quality.
    Xval(XvalArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Grades file (`t,learner,question,grade`).
    #[arg(long)]
    pub grades: PathBuf,
    /// Activity file (`t,learner,resource`).
    #[arg(long)]
    pub activity: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with any of the options below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub learners: Option<usize>,
    #[arg(long)]
    pub questions: Option<usize>,
    /// Real resources; a no-op resource is added with the next id.
    #[arg(long)]
    pub resources: Option<usize>,
    #[arg(long)]
    pub concepts: Option<usize>,
    #[arg(long)]
    pub timesteps: Option<usize>,
    #[arg(long)]
    pub assignment_size: Option<usize>,
    #[arg(long)]
    pub obs_fraction: Option<f64>,
    #[arg(long)]
    pub sparsity_w: Option<f64>,
    #[arg(long)]
    pub sparsity_d: Option<f64>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long)]
    pub gain_scale: Option<f64>,
    #[arg(long)]
    pub prior_mean_sd: Option<f64>,
    #[arg(long)]
    pub prior_var: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthFile {
    seed: Option<u64>,
    learners: Option<usize>,
    questions: Option<usize>,
    resources: Option<usize>,
    concepts: Option<usize>,
    timesteps: Option<usize>,
    assignment_size: Option<usize>,
    obs_fraction: Option<f64>,
    sparsity_w: Option<f64>,
    sparsity_d: Option<f64>,
    noise_scale: Option<f64>,
    gain_scale: Option<f64>,
    prior_mean_sd: Option<f64>,
    prior_var: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitOptions {
    /// JSON file with any of the options below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of latent concepts K.
    #[arg(long)]
    pub concepts: Option<usize>,
    /// L1 weight on question loadings.
    #[arg(long)]
    pub loading_l1: Option<f64>,
    /// L1 weight on transition coupling matrices.
    #[arg(long)]
    pub coupling_l1: Option<f64>,
    /// Variance of the default isotropic learner prior.
    #[arg(long)]
    pub prior_var: Option<f64>,
    #[arg(long)]
    pub em_max_iters: Option<usize>,
    #[arg(long)]
    pub em_tol: Option<f64>,
    #[arg(long)]
    pub fista_max_iters: Option<usize>,
    #[arg(long)]
    pub fista_tol: Option<f64>,
    /// Unscented-transform spread.
    #[arg(long)]
    pub ut_spread: Option<f64>,
    /// Re-estimate learner priors during EM.
    #[arg(long)]
    pub estimate_priors: bool,
    /// Resource held at the identity transition (1-based, repeatable).
    #[arg(long = "noop-resource")]
    pub noop_resources: Vec<usize>,
    /// `question,concept` pairs giving the initial loading support.
    #[arg(long)]
    pub anchor: Option<PathBuf>,
    /// Parameter file whose learner priors are used as fixed priors.
    #[arg(long)]
    pub priors: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitFile {
    seed: Option<u64>,
    concepts: Option<usize>,
    loading_l1: Option<f64>,
    coupling_l1: Option<f64>,
    prior_var: Option<f64>,
    em_max_iters: Option<usize>,
    em_tol: Option<f64>,
    fista_max_iters: Option<usize>,
    fista_tol: Option<f64>,
    ut_spread: Option<f64>,
    estimate_priors: Option<bool>,
    noop_resources: Option<Vec<usize>>,
    /// Relative paths resolve against the config file's directory.
    anchor: Option<PathBuf>,
    priors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub fit: FitOptions,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Withhold this random fraction of observed cells from training.
    #[arg(long, conflicts_with = "holdout")]
    pub holdout_fraction: Option<f64>,
    /// Withhold the cells listed in this mask file from training.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub params: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Smoothed beliefs given every unmasked grade.
    Smoothed,
    /// Masked learners are new: filter on their own earlier grades only.
    NewLearner,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub params: PathBuf,
    /// Cells to predict; every observed cell when absent.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Protocol::Smoothed)]
    pub protocol: Protocol,
    /// Predict even if the parameters were fit on a different dataset.
    #[arg(long)]
    pub force: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// True parameters.
    #[arg(long)]
    pub truth: PathBuf,
    /// Estimated parameters.
    #[arg(long)]
    pub estimate: PathBuf,
    /// True states (`learner,t,concept,value`).
    #[arg(long, requires = "trajectories")]
    pub truth_states: Option<PathBuf>,
    /// Estimated trajectories (`learner,t,concept,mean,variance`).
    #[arg(long, requires = "truth_states")]
    pub trajectories: Option<PathBuf>,
    /// Output directory; the report goes to stdout as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub params: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Edges need a magnitude strictly above this.
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,
    /// Grades file; enables first-assignment labels and learner tables.
    #[arg(long, requires = "activity")]
    pub grades: Option<PathBuf>,
    #[arg(long, requires = "grades")]
    pub activity: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    ByLearner,
    ByCell,
}

#[derive(Debug, Args)]
pub struct XvalArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub fit: FitOptions,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_enum, default_value_t = Mode::ByCell)]
    pub mode: Mode,
    /// Comma-separated loading penalties to compare.
    #[arg(long, value_delimiter = ',')]
    pub loading_l1_grid: Vec<f64>,
    /// Comma-separated coupling penalties to compare.
    #[arg(long, value_delimiter = ',')]
    pub coupling_l1_grid: Vec<f64>,
    /// Compare both penalties over 0.001, 0.01, 0.1 and 1 unless a grid is given.
    #[arg(long)]
    pub grid: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    // A pool can only be installed once per process; later calls keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    match cli.command {
        Command::Synth(a) => synth(a, cli.seed),
        Command::Fit(a) => fit(a, cli.seed),
        Command::Trace(a) => trace(a, cli.seed),
        Command::Predict(a) => predict(a, cli.seed),
        Command::Eval(a) => eval(a, cli.seed),
        Command::Export(a) => export(a, cli.seed),
        Command::Xval(a) => xval(a, cli.seed),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot open config file `{}`", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config file `{}`", path.display()))
}

fn make_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create directory `{}`", dir.display()))
}

fn synth(a: SynthArgs, seed: Option<u64>) -> Result<()> {
    let file: SynthFile = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthFile::default(),
    };
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        learners: a.learners.or(file.learners).unwrap_or(d.learners),
        questions: a.questions.or(file.questions).unwrap_or(d.questions),
        resources: a.resources.or(file.resources).unwrap_or(d.resources),
        concepts: a.concepts.or(file.concepts).unwrap_or(d.concepts),
        timesteps: a.timesteps.or(file.timesteps).unwrap_or(d.timesteps),
        assignment_size: a.assignment_size.or(file.assignment_size).unwrap_or(d.assignment_size),
        obs_fraction: a.obs_fraction.or(file.obs_fraction).unwrap_or(d.obs_fraction),
        seed: seed.or(file.seed).unwrap_or(d.seed),
        sparsity_w: a.sparsity_w.or(file.sparsity_w).unwrap_or(d.sparsity_w),
        sparsity_d: a.sparsity_d.or(file.sparsity_d).unwrap_or(d.sparsity_d),
        noise_scale: a.noise_scale.or(file.noise_scale).unwrap_or(d.noise_scale),
        gain_scale: a.gain_scale.or(file.gain_scale).unwrap_or(d.gain_scale),
        prior_mean_sd: a.prior_mean_sd.or(file.prior_mean_sd).unwrap_or(d.prior_mean_sd),
        prior_var: a.prior_var.or(file.prior_var).unwrap_or(d.prior_var),
    };
    let snapshot = SynthFile {
        seed: Some(cfg.seed),
        learners: Some(cfg.learners),
        questions: Some(cfg.questions),
        resources: Some(cfg.resources),
        concepts: Some(cfg.concepts),
        timesteps: Some(cfg.timesteps),
        assignment_size: Some(cfg.assignment_size),
        obs_fraction: Some(cfg.obs_fraction),
        sparsity_w: Some(cfg.sparsity_w),
        sparsity_d: Some(cfg.sparsity_d),
        noise_scale: Some(cfg.noise_scale),
        gain_scale: Some(cfg.gain_scale),
        prior_mean_sd: Some(cfg.prior_mean_sd),
        prior_var: Some(cfg.prior_var),
    };
    let mut man = Manifest::new("synth", cfg.seed, serde_json::to_value(&snapshot)?);
    man.seal();
    let id = man.run_id().map(str::to_owned);
    let id = id.as_deref();

    let out = man.time("generate", || generate(&cfg))?;
    make_dir(&a.out)?;
    man.time("write", || -> Result<()> {
        let (g, act) = (a.out.join("grades.csv"), a.out.join("activity.csv"));
        write_dataset(&out.dataset, &g, &act, id)?;
        let digest = dataset_digest(&crate::manifest::file_digest(&g)?, &crate::manifest::file_digest(&act)?);
        ParamsDoc {
            dims: out.dataset.dims(),
            params: out.truth.clone(),
            noop_resources: vec![out.noop_resource],
            dataset_sha256: Some(digest),
            manifest: id.map(str::to_owned),
        }
        .save(&a.out.join("truth.json"))?;
        let mut w = create(&a.out.join("states.csv"))?;
        write_states(&out.states, &mut w, id)?;
        w.flush()?;
        let loadings: Vec<_> = out.truth.questions.iter().map(|q| q.loadings.clone()).collect();
        let mut w = create(&a.out.join("anchor.csv"))?;
        write_anchor(&loadings, &mut w, id)?;
        w.flush()?;
        let hint = serde_json::json!({
            "concepts": cfg.concepts,
            "noop_resources": [out.noop_resource + 1],
        });
        let mut w = create(&a.out.join("fit_config.json"))?;
        serde_json::to_writer_pretty(&mut w, &hint)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    })?;
    man.outputs = ["grades.csv", "activity.csv", "truth.json", "states.csv", "anchor.csv", "fit_config.json"]
        .map(str::to_owned)
        .to_vec();
    man.save(&a.out)
}

/// Fit options after merging flags over the config file.
#[derive(Debug, Clone, Serialize)]
struct ResolvedFit {
    seed: u64,
    concepts: usize,
    loading_l1: f64,
    coupling_l1: f64,
    prior_var: f64,
    em_max_iters: usize,
    em_tol: f64,
    fista_max_iters: usize,
    fista_tol: f64,
    ut_spread: f64,
    estimate_priors: bool,
    /// 1-based.
    noop_resources: Vec<usize>,
    #[serde(skip)]
    anchor: Option<PathBuf>,
    #[serde(skip)]
    priors: Option<PathBuf>,
}

impl ResolvedFit {
    fn hyper(&self) -> HyperParams {
        HyperParams {
            loading_l1: self.loading_l1,
            coupling_l1: self.coupling_l1,
            prior_var: self.prior_var,
            em_max_iters: self.em_max_iters,
            em_tol: self.em_tol,
            fista_max_iters: self.fista_max_iters,
            fista_tol: self.fista_tol,
            ut_spread: self.ut_spread,
        }
    }
}

fn resolve_fit(o: &FitOptions, seed: Option<u64>) -> Result<ResolvedFit> {
    let (file, base): (FitFile, PathBuf) = match &o.config {
        Some(p) => (read_json(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (FitFile::default(), PathBuf::new()),
    };
    let concepts = o.concepts.or(file.concepts).unwrap_or(1);
    if concepts == 0 {
        bail!("--concepts must be at least 1");
    }
    let d = HyperParams::defaults_for(concepts);
    let noop = if o.noop_resources.is_empty() { file.noop_resources.unwrap_or_default() } else { o.noop_resources.clone() };
    if noop.contains(&0) {
        bail!("no-op resource ids start at 1");
    }
    let r = ResolvedFit {
        seed: seed.or(file.seed).unwrap_or(0),
        concepts,
        loading_l1: o.loading_l1.or(file.loading_l1).unwrap_or(d.loading_l1),
        coupling_l1: o.coupling_l1.or(file.coupling_l1).unwrap_or(d.coupling_l1),
        prior_var: o.prior_var.or(file.prior_var).unwrap_or(d.prior_var),
        em_max_iters: o.em_max_iters.or(file.em_max_iters).unwrap_or(d.em_max_iters),
        em_tol: o.em_tol.or(file.em_tol).unwrap_or(d.em_tol),
        fista_max_iters: o.fista_max_iters.or(file.fista_max_iters).unwrap_or(d.fista_max_iters),
        fista_tol: o.fista_tol.or(file.fista_tol).unwrap_or(d.fista_tol),
        ut_spread: o.ut_spread.or(file.ut_spread).unwrap_or(d.ut_spread),
        estimate_priors: o.estimate_priors || file.estimate_priors.unwrap_or(false),
        noop_resources: noop,
        anchor: o.anchor.clone().or_else(|| file.anchor.map(|p| base.join(p))),
        priors: o.priors.clone().or_else(|| file.priors.map(|p| base.join(p))),
    };
    r.hyper().validate()?;
    Ok(r)
}

/// Reads the dataset and records its files in the manifest. Returns the
/// dataset and its digest.
fn load_data(man: &mut Manifest, data: &DatasetArgs, floor: Option<Dimensions>) -> Result<(Dataset, String)> {
    let g = man.add_input("grades", &data.grades)?;
    let a = man.add_input("activity", &data.activity)?;
    let ds = man.time("load", || read_dataset(&data.grades, &data.activity, floor))?;
    Ok((ds, dataset_digest(&g, &a)))
}

/// Dataset, fit configuration and fixed priors for `fit` and `xval`.
struct FitSetup {
    ds: Dataset,
    digest: String,
    cfg: FitConfig,
}

fn fit_setup(man: &mut Manifest, data: &DatasetArgs, r: &ResolvedFit) -> Result<FitSetup> {
    let prior_doc = match &r.priors {
        Some(p) => {
            man.add_input("priors", p)?;
            Some(ParamsDoc::load(p)?)
        }
        None => None,
    };
    let mut floor = Dimensions { learners: 0, questions: 0, resources: 0, concepts: r.concepts, timesteps: 0 };
    if let Some(doc) = &prior_doc {
        if doc.dims.concepts != r.concepts {
            bail!("prior file has {} concepts but the fit uses {}", doc.dims.concepts, r.concepts);
        }
        floor.learners = doc.dims.learners;
    }
    let (ds, digest) = load_data(man, data, Some(floor))?;
    let dims = ds.dims();
    for w in dims.low_rank_warnings() {
        eprintln!("warning: {w}");
    }
    let mut cfg = FitConfig::new(r.hyper());
    cfg.seed = r.seed;
    cfg.estimate_priors = r.estimate_priors;
    cfg.noop_resources = r.noop_resources.iter().map(|m| m - 1).collect();
    if let Some(&m) = r.noop_resources.iter().find(|&&m| m > dims.resources) {
        bail!("no-op resource {m} exceeds the {} resources in the dataset", dims.resources);
    }
    if let Some(p) = &r.anchor {
        man.add_input("anchor", p)?;
        cfg.anchor_init = Some(read_anchor(p, dims.questions, dims.concepts)?);
    }
    if let Some(doc) = prior_doc {
        if doc.params.priors.len() != dims.learners {
            bail!("prior file has {} learners, the dataset {}", doc.params.priors.len(), dims.learners);
        }
        cfg.priors = Some(doc.params.priors);
    }
    Ok(FitSetup { ds, digest, cfg })
}

fn fit(a: FitArgs, seed: Option<u64>) -> Result<()> {
    let r = resolve_fit(&a.fit, seed)?;
    let mut man = Manifest::new("fit", r.seed, serde_json::to_value(&r)?);
    let mut setup = fit_setup(&mut man, &a.data, &r)?;
    let dims = setup.ds.dims();
    let holdout = match (&a.holdout, a.holdout_fraction) {
        (Some(p), _) => {
            man.add_input("holdout", p)?;
            Some(read_mask(p, dims.timesteps, dims.learners)?)
        }
        (None, Some(f)) => Some(holdout_split(&setup.ds, f, r.seed)?),
        (None, None) => None,
    };
    if let Some(f) = a.holdout_fraction {
        man.config["holdout_fraction"] = serde_json::json!(f);
    }
    setup.cfg.holdout_mask = holdout.clone();
    man.seal();
    let id = man.run_id().map(str::to_owned);
    let id = id.as_deref();

    let result = man.time("em", || em_fit(&setup.ds, &setup.cfg, None))?;
    make_dir(&a.out)?;
    let doc = ParamsDoc {
        dims,
        params: result.params(),
        noop_resources: setup.cfg.noop_resources.clone(),
        dataset_sha256: Some(setup.digest.clone()),
        manifest: id.map(str::to_owned),
    };
    man.time("write", || -> Result<()> {
        doc.save(&a.out.join("params.json"))?;
        save_trajectories(&result.trajectories, &a.out.join("trajectories.csv"), id)?;
        let mut w = create(&a.out.join("objective.csv"))?;
        crate::data::write_manifest_comment(&mut w, id)?;
        writeln!(w, "iteration,objective")?;
        for (i, v) in result.objective_trace.iter().enumerate() {
            writeln!(w, "{},{v}", i + 1)?;
        }
        w.flush()?;
        if let Some(mask) = &holdout {
            save_mask(mask, &a.out.join("holdout.csv"), id)?;
        }
        Ok(())
    })?;
    man.outputs = vec!["params.json".into(), "trajectories.csv".into(), "objective.csv".into()];
    if holdout.is_some() {
        man.outputs.push("holdout.csv".into());
    }
    man.results.insert("iterations".into(), result.iterations.into());
    man.results.insert("converged".into(), result.converged.into());
    if let Some(&last) = result.objective_trace.last() {
        man.results.insert("objective".into(), last.into());
    }
    man.save(&a.out)
}

/// Loads a parameter file and records it as an input.
fn load_params(man: &mut Manifest, path: &Path) -> Result<ParamsDoc> {
    man.add_input("params", path)?;
    ParamsDoc::load(path)
}

/// Dataset read with the parameter dimensions as a floor, checked to match.
fn load_data_for(man: &mut Manifest, data: &DatasetArgs, doc: &ParamsDoc) -> Result<(Dataset, String)> {
    let (ds, digest) = load_data(man, data, Some(doc.dims))?;
    let (d, p) = (ds.dims(), doc.dims);
    if (d.learners, d.questions, d.resources, d.timesteps) != (p.learners, p.questions, p.resources, p.timesteps) {
        bail!(
            "dataset has N={}, Q={}, M={}, T={} but the parameters expect N={}, Q={}, M={}, T={}",
            d.learners, d.questions, d.resources, d.timesteps, p.learners, p.questions, p.resources, p.timesteps
        );
    }
    Ok((ds, digest))
}

fn trace(a: TraceArgs, seed: Option<u64>) -> Result<()> {
    let mut man = Manifest::new("trace", seed.unwrap_or(0), serde_json::json!({}));
    let doc = load_params(&mut man, &a.params)?;
    let (ds, _) = load_data_for(&mut man, &a.data, &doc)?;
    man.seal();
    let id = man.run_id().map(str::to_owned);
    let trajs = man.time("smooth", || e_step(&ds, &doc.params))?;
    make_dir(&a.out)?;
    man.time("write", || save_trajectories(&trajs, &a.out.join("trajectories.csv"), id.as_deref()))?;
    man.outputs = vec!["trajectories.csv".into()];
    man.save(&a.out)
}

fn push_evaluation(report: &mut Report, preds: &[PredictionRecord]) -> Result<()> {
    let e = evaluate(preds)?;
    report.push("predictions", e.count);
    report.push("accuracy", e.accuracy);
    report.push("likelihood", e.likelihood);
    report.push("auc", e.auc.map_or_else(|| "undefined".to_owned(), |v| v.to_string()));
    report.push("majority_rate", e.majority_rate);
    Ok(())
}

fn predict(a: PredictArgs, seed: Option<u64>) -> Result<()> {
    let config = serde_json::json!({ "protocol": a.protocol, "force": a.force });
    let mut man = Manifest::new("predict", seed.unwrap_or(0), config);
    let doc = load_params(&mut man, &a.params)?;
    let (ds, digest) = load_data_for(&mut man, &a.data, &doc)?;
    if let Some(fit_digest) = &doc.dataset_sha256 {
        if *fit_digest != digest && !a.force {
            bail!(
                "parameters in `{}` were fit on a different dataset (digest {fit_digest}, this one {digest}); \
                 pass --force to predict anyway",
                a.params.display()
            );
        }
    }
    let dims = ds.dims();
    let mask = match &a.mask {
        Some(p) => {
            man.add_input("mask", p)?;
            read_mask(p, dims.timesteps, dims.learners)?
        }
        None => ds.observed_mask(),
    };
    man.seal();
    let id = man.run_id().map(str::to_owned);
    let id = id.as_deref();

    let preds = man.time("predict", || -> Result<Vec<PredictionRecord>> {
        Ok(match a.protocol {
            Protocol::Smoothed => {
                let train = ds.hide(&mask);
                let trajs = e_step(&train, &doc.params)?;
                predict_cells(&trajs, &ds, &mask, &doc.params.questions)
            }
            Protocol::NewLearner => {
                let mut out = Vec::new();
                for j in learners_in(&mask) {
                    let recs = predict_new_learner(
                        &ds,
                        j,
                        &doc.params.priors[j],
                        &doc.params.transitions,
                        &doc.params.questions,
                    );
                    out.extend(recs.into_iter().filter(|p| mask.get(p.t, p.j)));
                }
                out.sort_by_key(|p| (p.t, p.j));
                out
            }
        })
    })?;
    let mut report = Report::default();
    push_evaluation(&mut report, &preds)?;
    make_dir(&a.out)?;
    let mut w = create(&a.out.join("predictions.csv"))?;
    write_predictions(&preds, &mut w, id)?;
    w.flush()?;
    let mut w = create(&a.out.join("metrics.txt"))?;
    report.write(&mut w, id)?;
    w.flush()?;
    report.write(&mut std::io::stdout().lock(), None)?;
    man.outputs = vec!["predictions.csv".into(), "metrics.txt".into()];
    man.save(&a.out)
}

fn eval(a: EvalArgs, seed: Option<u64>) -> Result<()> {
    let mut man = Manifest::new("eval", seed.unwrap_or(0), serde_json::json!({}));
    man.add_input("truth", &a.truth)?;
    man.add_input("estimate", &a.estimate)?;
    let truth = ParamsDoc::load(&a.truth)?;
    let est = ParamsDoc::load(&a.estimate)?;
    let mut report = Report::default();
    let e = param_error(&est.params, &truth.params, &truth.noop_resources)?;
    report.push("error_D", e.coupling);
    report.push("error_d", e.gain);
    report.push("error_Gamma", e.noise_var);
    report.push("error_w", e.loadings);
    report.push("error_mu", e.difficulty);
    if let (Some(ts), Some(tr)) = (&a.truth_states, &a.trajectories) {
        man.add_input("truth_states", ts)?;
        man.add_input("trajectories", tr)?;
        let k = knowledge_error(&read_state_table(tr)?, &read_state_table(ts)?)?;
        report.push("knowledge_error", k.value);
        report.push("knowledge_cells", k.included);
        report.push("knowledge_excluded", k.excluded);
    }
    man.seal();
    report.write(&mut std::io::stdout().lock(), None)?;
    if let Some(out) = &a.out {
        make_dir(out)?;
        let mut w = create(&out.join("metrics.txt"))?;
        report.write(&mut w, man.run_id())?;
        w.flush()?;
        man.outputs = vec!["metrics.txt".into()];
        man.save(out)?;
    }
    Ok(())
}

fn export(a: ExportArgs, seed: Option<u64>) -> Result<()> {
    let config = serde_json::json!({ "threshold": a.threshold });
    let mut man = Manifest::new("export", seed.unwrap_or(0), config);
    let doc = load_params(&mut man, &a.params)?;
    let ds = match (&a.grades, &a.activity) {
        (Some(g), Some(act)) => {
            let data = DatasetArgs { grades: g.clone(), activity: act.clone() };
            Some(load_data_for(&mut man, &data, &doc)?.0)
        }
        _ => None,
    };
    man.seal();
    let id = man.run_id().map(str::to_owned);
    let id = id.as_deref();
    make_dir(&a.out)?;

    let first = ds.as_ref().map(first_assignment);
    let qdot = question_concept_dot(&doc.params.questions, first.as_deref(), a.threshold, id);
    std::fs::write(a.out.join("questions.dot"), qdot)?;
    man.outputs.push("questions.dot".into());
    for (m, tp) in doc.params.transitions.iter().enumerate() {
        if doc.noop_resources.contains(&m) {
            continue;
        }
        let name = format!("resource_{}.dot", m + 1);
        std::fs::write(a.out.join(&name), resource_dot(m, tp, a.threshold, id))?;
        man.outputs.push(name);
    }
    if let Some(ds) = &ds {
        let trajs: Vec<SmoothedTrajectory> = man.time("smooth", || e_step(ds, &doc.params))?;
        let dir = a.out.join("learners");
        make_dir(&dir)?;
        for (j, st) in trajs.iter().enumerate() {
            let name = format!("learner_{}.csv", j + 1);
            let mut w = create(&dir.join(&name))?;
            write_learner_table(st, &mut w, id)?;
            w.flush()?;
            man.outputs.push(format!("learners/{name}"));
        }
    }
    man.save(&a.out)
}

pub const DEFAULT_PENALTY_GRID: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];

fn penalty_grid(given: &[f64], use_default: bool, fallback: f64, flag: &str) -> Result<Vec<f64>> {
    let grid = if !given.is_empty() {
        given.to_vec()
    } else if use_default {
        DEFAULT_PENALTY_GRID.to_vec()
    } else {
        vec![fallback]
    };
    if let Some(v) = grid.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        bail!("--{flag} value {v} must be nonnegative");
    }
    Ok(grid)
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn xval(a: XvalArgs, seed: Option<u64>) -> Result<()> {
    let r = resolve_fit(&a.fit, seed)?;
    let lambdas = penalty_grid(&a.loading_l1_grid, a.grid, r.loading_l1, "loading-l1-grid")?;
    let gammas = penalty_grid(&a.coupling_l1_grid, a.grid, r.coupling_l1, "coupling-l1-grid")?;
    let mut config = serde_json::to_value(&r)?;
    config["folds"] = serde_json::json!(a.folds);
    config["mode"] = serde_json::to_value(a.mode)?;
    config["loading_l1_grid"] = serde_json::json!(lambdas);
    config["coupling_l1_grid"] = serde_json::json!(gammas);
    let mut man = Manifest::new("xval", r.seed, config);
    let setup = fit_setup(&mut man, &a.data, &r)?;
    man.seal();
    let id = man.run_id().map(str::to_owned);
    let id = id.as_deref();
    let ds = &setup.ds;
    let mode = match a.mode {
        Mode::ByLearner => SplitMode::ByLearner,
        Mode::ByCell => SplitMode::ByCell,
    };
    let splits = kfold_split(ds, a.folds, mode, r.seed)?;
    make_dir(&a.out)?;
    for (f, (_, test)) in splits.iter().enumerate() {
        let name = format!("fold_{}_test.csv", f + 1);
        save_mask(test, &a.out.join(&name), id)?;
        man.outputs.push(name);
    }

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &lambda in &lambdas {
        for &gamma in &gammas {
            let mut cfg = setup.cfg.clone();
            cfg.hp.loading_l1 = lambda;
            cfg.hp.coupling_l1 = gamma;
            let mut evals = Vec::new();
            for (f, (train, test)) in splits.iter().enumerate() {
                let preds = man
                    .time("folds", || fold_predictions(ds, &cfg, mode, train, test))
                    .with_context(|| format!("fold {} with loading_l1={lambda}, coupling_l1={gamma}", f + 1))?;
                let mut report = Report::default();
                report.push("loading_l1", lambda);
                report.push("coupling_l1", gamma);
                report.push("fold", f + 1);
                report.push("train_cells", train.count());
                report.push("test_cells", test.count());
                push_evaluation(&mut report, &preds)?;
                rows.push(report);
                evals.push(evaluate(&preds)?);
            }
            let mut report = Report::default();
            report.push("loading_l1", lambda);
            report.push("coupling_l1", gamma);
            let accuracy = mean_of(evals.iter().map(|e| e.accuracy)).unwrap_or(f64::NAN);
            let likelihood = mean_of(evals.iter().map(|e| e.likelihood)).unwrap_or(f64::NAN);
            report.push("accuracy", accuracy);
            report.push("likelihood", likelihood);
            report.push(
                "auc",
                mean_of(evals.iter().filter_map(|e| e.auc)).map_or_else(|| "undefined".to_owned(), |v| v.to_string()),
            );
            summary.push((lambda, gamma, likelihood, report));
        }
    }
    write_rows(&a.out.join("folds.csv"), &rows, id)?;
    let reports: Vec<Report> = summary.iter().map(|(_, _, _, r)| r.clone()).collect();
    write_rows(&a.out.join("grid.csv"), &reports, id)?;
    let best = summary
        .iter()
        .fold(None::<&(f64, f64, f64, Report)>, |b, s| match b {
            Some(b) if b.2 >= s.2 => Some(b),
            _ => Some(s),
        })
        .context("empty penalty grid")?;
    println!("best loading_l1={} coupling_l1={} likelihood={}", best.0, best.1, best.2);
    man.results.insert("best_loading_l1".into(), serde_json::json!(best.0));
    man.results.insert("best_coupling_l1".into(), serde_json::json!(best.1));
    man.results.insert("best_likelihood".into(), serde_json::json!(best.2));
    man.outputs.splice(0..0, ["folds.csv".to_owned(), "grid.csv".to_owned()]);
    man.save(&a.out)
}

/// Reports sharing one key order, written as a CSV table.
fn write_rows(path: &Path, rows: &[Report], run_id: Option<&str>) -> Result<()> {
    let mut w = create(path)?;
    crate::data::write_manifest_comment(&mut w, run_id)?;
    if let Some(first) = rows.first() {
        let keys: Vec<&str> = first.0.iter().map(|(k, _)| k.as_str()).collect();
        writeln!(w, "{}", keys.join(","))?;
    }
    for row in rows {
        let vals: Vec<&str> = row.0.iter().map(|(_, v)| v.as_str()).collect();
        writeln!(w, "{}", vals.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn fold_predictions(
    ds: &Dataset,
    base: &FitConfig,
    mode: SplitMode,
    train: &CellMask,
    test: &CellMask,
) -> Result<Vec<PredictionRecord>> {
    match mode {
        SplitMode::ByCell => {
            let mut cfg = base.clone();
            cfg.holdout_mask = Some(test.clone());
            let fit = em_fit(ds, &cfg, None)?;
            Ok(predict_cells(&fit.trajectories, ds, test, &fit.questions))
        }
        SplitMode::ByLearner => {
            let held = learners_in(test);
            let kept: Vec<usize> = (0..ds.dims().learners).filter(|j| !held.contains(j)).collect();
            let sub = ds.select_learners(&kept)?;
            let mut cfg = base.clone();
            cfg.priors = base.priors.as_ref().map(|p| kept.iter().map(|&j| p[j].clone()).collect());
            let fit = em_fit(&sub, &cfg, None)?;
            debug_assert!(train.cells().all(|(_, j)| kept.contains(&j)));
            let mut out = Vec::new();
            for j in held {
                let prior = match &base.priors {
                    Some(p) => p[j].clone(),
                    None => LearnerPrior::isotropic(ds.dims().concepts, base.hp.prior_var),
                };
                out.extend(predict_new_learner(ds, j, &prior, &fit.transitions, &fit.questions));
            }
            out.sort_by_key(|p| (p.t, p.j));
            Ok(out)
        }
    }
}
