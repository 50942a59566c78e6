//! Command-line front end: `fit`, `tune`, `simulate` and `bench`.
//!
//! Every subcommand writes a JSON report with the top-level fields
//! `config`, `results`, `diagnostics` and `warnings`. Knobs may also come
//! from a JSON file passed with `--config`; flags take precedence and the
//! resolved configuration is echoed into the report.
//!
//! Exit codes: 0 success, 1 usage, 2 input data, 3 numerical degeneracy,
//! 4 infeasible diagnostics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::{run_experiment_with, theory_diagnostics, write_rows_csv, Method, TheoryDiagnostics};
use crate::error::{AftError, Result};
use crate::io::{parse_dataset_csv, write_dataset_csv};
use crate::sdar::{sdar_fit, SdarConfig, SdarFit, Termination, DEFAULT_MAX_ITER};
use crate::simgen::{gen_instance, CoefKind, DesignKind, ScenarioSpec};
use crate::survival_data::{prepare_design, StandardizedDesign, SurvivalDataset};
use crate::tuner::{asdar_tune, default_max_support, Criterion, CvResult, TuningConfig};

pub const EXIT_USAGE: i32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "aftsdar",
    version,
    about = "Sparse accelerated failure time regression by support detection and root finding"
)]
pub struct Cli {
    /// JSON file with default knob values (flags override it)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a fixed support size on a dataset CSV
    Fit(FitArgs),
    /// Select the support size along a warm-started path
    Tune(TuneArgs),
    /// Generate a synthetic dataset CSV plus a ground-truth sidecar JSON
    Simulate(SimulateArgs),
    /// Replicated simulation benchmark
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Support size T
    #[arg(long = "support-size", short = 't')]
    pub support_size: Option<usize>,
    /// Step size tau in (0, 1]
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// Disable detection of repeated active sets
    #[arg(long = "no-cycle-guard")]
    pub no_cycle_guard: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, short = 'i')]
    pub input: PathBuf,
    /// Report path (stdout when omitted)
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Also report coefficients on the normalized scale
    #[arg(long)]
    pub eta: bool,
    /// Brute-force step-size and identifiability diagnostics
    #[arg(long)]
    pub diagnostics: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionName {
    Hbic,
    Cv,
    Residual,
    Change,
}

#[derive(Debug, Args)]
pub struct TunerArgs {
    #[arg(long, value_enum)]
    pub criterion: Option<CriterionName>,
    /// Grid increment
    #[arg(long)]
    pub step: Option<usize>,
    /// Largest support size Q (overrides --alpha)
    #[arg(long = "max-support")]
    pub max_support: Option<usize>,
    /// Q = ceil(alpha n / ln n)
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Tolerance for the residual / change stopping rules
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long, short = 'i')]
    pub input: PathBuf,
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub tuner: TunerArgs,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eta: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignName {
    Neighbor,
    Ar1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefName {
    Log,
    Ratio,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Number of nonzero coefficients K
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long = "censor-rate")]
    pub censor_rate: Option<f64>,
    #[arg(long, value_enum)]
    pub design: Option<DesignName>,
    #[arg(long, value_enum)]
    pub coef: Option<CoefName>,
    /// R = max/min nonzero magnitude for --coef ratio
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long = "random-signs")]
    pub random_signs: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Dataset CSV path
    #[arg(long, short = 'o')]
    pub output: PathBuf,
    /// Ground-truth JSON path (defaults to the CSV path with a .json extension)
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Large-scale defaults (n=500, p=10000, K=20)
    #[arg(long)]
    pub full: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Sdar,
    Asdar,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// JSON report path (stdout when omitted)
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
    /// Per-replication CSV path
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Methods to run (repeatable)
    #[arg(long = "method", value_enum)]
    pub methods: Vec<MethodName>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub tuner: TunerArgs,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Large-scale defaults: 100 replications, n=500, p=10000, K=20
    #[arg(long)]
    pub full: bool,
    /// Include wall-clock times in the JSON report (breaks byte-identical output)
    #[arg(long)]
    pub timing: bool,
}

/// Knob defaults read from `--config`. Field names mirror the long flags.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub support_size: Option<usize>,
    pub tau: Option<f64>,
    pub max_iter: Option<usize>,
    pub cycle_guard: Option<bool>,
    pub criterion: Option<CriterionName>,
    pub step: Option<usize>,
    pub max_support: Option<usize>,
    pub alpha: Option<f64>,
    pub folds: Option<usize>,
    pub epsilon: Option<f64>,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub k: Option<usize>,
    pub rho: Option<f64>,
    pub sigma: Option<f64>,
    pub censor_rate: Option<f64>,
    pub design: Option<DesignName>,
    pub coef: Option<CoefName>,
    pub ratio: Option<f64>,
    pub random_signs: Option<bool>,
    pub methods: Option<Vec<MethodName>>,
    pub replications: Option<usize>,
    pub seed: Option<u64>,
    pub full: Option<bool>,
    pub eta: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| AftError::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Fit,
    Tune,
    Simulate,
    Bench,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverKnobs {
    /// `None` means: derived from the data (fit) or from K (bench).
    pub support_size: Option<usize>,
    pub tau: f64,
    pub max_iter: usize,
    pub cycle_guard: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TunerKnobs {
    pub criterion: CriterionName,
    pub step: usize,
    pub max_support: Option<usize>,
    pub alpha: f64,
    pub folds: usize,
    pub epsilon: Option<f64>,
}

/// Fully resolved invocation, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub subcommand: CommandKind,
    pub input_path: Option<String>,
    pub output_path: Option<String>,
    pub secondary_output_path: Option<String>,
    pub solver: Option<SolverKnobs>,
    pub tuner: Option<TunerKnobs>,
    pub scenario: Option<ScenarioSpec>,
    pub methods: Vec<MethodName>,
    pub replications: Option<usize>,
    pub seed: u64,
    pub full_scale: bool,
    pub eta_scale: bool,
    pub diagnostics: bool,
    pub timing: bool,
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn resolve_solver(a: &SolverArgs, f: &FileConfig) -> SolverKnobs {
    SolverKnobs {
        support_size: a.support_size.or(f.support_size),
        tau: a.tau.or(f.tau).unwrap_or(1.0),
        max_iter: a.max_iter.or(f.max_iter).unwrap_or(DEFAULT_MAX_ITER),
        cycle_guard: !a.no_cycle_guard && f.cycle_guard.unwrap_or(true),
    }
}

fn resolve_tuner(a: &TunerArgs, f: &FileConfig) -> TunerKnobs {
    TunerKnobs {
        criterion: a.criterion.or(f.criterion).unwrap_or(CriterionName::Hbic),
        step: a.step.or(f.step).unwrap_or(1),
        max_support: a.max_support.or(f.max_support),
        alpha: a.alpha.or(f.alpha).unwrap_or(1.0),
        folds: a.folds.or(f.folds).unwrap_or(5),
        epsilon: a.epsilon.or(f.epsilon),
    }
}

fn resolve_scenario(a: &ScenarioArgs, f: &FileConfig, full: bool, seed: u64) -> ScenarioSpec {
    let (n, p, k) = if full { (500, 10_000, 20) } else { (200, 1000, 10) };
    let coef = match a.coef.or(f.coef).unwrap_or(CoefName::Log) {
        CoefName::Log => CoefKind::LogScaled,
        CoefName::Ratio => CoefKind::RatioScaled {
            ratio: a.ratio.or(f.ratio).unwrap_or(10.0),
        },
    };
    ScenarioSpec {
        n: a.n.or(f.n).unwrap_or(n),
        p: a.p.or(f.p).unwrap_or(p),
        k: a.k.or(f.k).unwrap_or(k),
        rho: a.rho.or(f.rho).unwrap_or(0.3),
        sigma: a.sigma.or(f.sigma).unwrap_or(1.0),
        censor_rate: a.censor_rate.or(f.censor_rate).unwrap_or(0.3),
        design: match a.design.or(f.design).unwrap_or(DesignName::Neighbor) {
            DesignName::Neighbor => DesignKind::NeighborCorrelated,
            DesignName::Ar1 => DesignKind::Ar1,
        },
        coef,
        random_signs: a.random_signs || f.random_signs.unwrap_or(false),
        seed,
    }
}

/// Merge parsed flags with the optional config file.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed_of = |s: Option<u64>| s.or(file.seed).unwrap_or(0);
    let base = |sub| RunConfig {
        subcommand: sub,
        input_path: None,
        output_path: None,
        secondary_output_path: None,
        solver: None,
        tuner: None,
        scenario: None,
        methods: vec![],
        replications: None,
        seed: 0,
        full_scale: false,
        eta_scale: false,
        diagnostics: false,
        timing: false,
    };
    let cfg = match &cli.command {
        Command::Fit(a) => RunConfig {
            input_path: Some(path_str(&a.input)),
            output_path: a.output.as_deref().map(path_str),
            solver: Some(resolve_solver(&a.solver, &file)),
            eta_scale: a.eta || file.eta.unwrap_or(false),
            diagnostics: a.diagnostics,
            ..base(CommandKind::Fit)
        },
        Command::Tune(a) => RunConfig {
            input_path: Some(path_str(&a.input)),
            output_path: a.output.as_deref().map(path_str),
            solver: Some(SolverKnobs {
                support_size: None,
                tau: a.tau.or(file.tau).unwrap_or(1.0),
                max_iter: a.max_iter.or(file.max_iter).unwrap_or(DEFAULT_MAX_ITER),
                cycle_guard: true,
            }),
            tuner: Some(resolve_tuner(&a.tuner, &file)),
            seed: seed_of(a.seed),
            eta_scale: a.eta || file.eta.unwrap_or(false),
            ..base(CommandKind::Tune)
        },
        Command::Simulate(a) => {
            let full = a.full || file.full.unwrap_or(false);
            let seed = seed_of(a.seed);
            let sidecar = a
                .sidecar
                .clone()
                .unwrap_or_else(|| a.output.with_extension("json"));
            RunConfig {
                output_path: Some(path_str(&a.output)),
                secondary_output_path: Some(path_str(&sidecar)),
                scenario: Some(resolve_scenario(&a.scenario, &file, full, seed)),
                seed,
                full_scale: full,
                ..base(CommandKind::Simulate)
            }
        }
        Command::Bench(a) => {
            let full = a.full || file.full.unwrap_or(false);
            let seed = seed_of(a.seed);
            let methods = if !a.methods.is_empty() {
                a.methods.clone()
            } else {
                file.methods.clone().unwrap_or_else(|| vec![MethodName::Sdar])
            };
            RunConfig {
                output_path: a.output.as_deref().map(path_str),
                secondary_output_path: a.csv.as_deref().map(path_str),
                solver: Some(resolve_solver(&a.solver, &file)),
                tuner: Some(resolve_tuner(&a.tuner, &file)),
                scenario: Some(resolve_scenario(&a.scenario, &file, full, seed)),
                methods,
                replications: Some(
                    a.replications
                        .or(file.replications)
                        .unwrap_or(if full { 100 } else { 20 }),
                ),
                seed,
                full_scale: full,
                timing: a.timing,
                ..base(CommandKind::Bench)
            }
        }
    };
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct Report<'a, R: Serialize> {
    config: &'a RunConfig,
    results: R,
    diagnostics: Option<TheoryDiagnostics>,
    warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct CoefficientEntry {
    pub name: String,
    pub index: usize,
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct FitResults {
    pub n: usize,
    pub p: usize,
    pub support_size: usize,
    pub coefficients: Vec<CoefficientEntry>,
    /// Original column indices, ascending.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub termination: Termination,
    pub kkt_gap: f64,
    pub loss_trace: Vec<f64>,
    pub dropped_columns: Vec<usize>,
}

fn fit_results(
    dataset: &SurvivalDataset,
    design: &StandardizedDesign,
    fit: &SdarFit,
    support_size: usize,
    eta_scale: bool,
) -> FitResults {
    let coefficients = fit
        .active_set
        .iter()
        .map(|&j| {
            let index = design.retained[j];
            CoefficientEntry {
                name: dataset.feature_name(index),
                index,
                beta: fit.beta[index],
                eta: eta_scale.then(|| fit.eta[j]),
            }
        })
        .collect();
    FitResults {
        n: dataset.n(),
        p: dataset.p(),
        support_size,
        coefficients,
        active_set: fit.original_active_set(design),
        iterations: fit.iterations,
        termination: fit.termination,
        kkt_gap: fit.kkt_gap,
        loss_trace: fit.loss_trace.clone(),
        dropped_columns: design.dropped_columns.clone(),
    }
}

fn fit_warnings(design: &StandardizedDesign, fit: &SdarFit, warnings: &mut Vec<String>) {
    if !design.dropped_columns.is_empty() {
        warnings.push(format!(
            "{} covariate column(s) have zero Kaplan-Meier weighted norm and were dropped: {:?}",
            design.dropped_columns.len(),
            design.dropped_columns
        ));
    }
    if fit.termination != Termination::ActiveSetRepeat {
        warnings.push(format!(
            "solver stopped with {} after {} iterations",
            fit.termination.as_str(),
            fit.iterations
        ));
    }
}

#[derive(Debug, Serialize)]
struct PathRow {
    support_size: usize,
    score: f64,
    residual_norm: f64,
    iterations: usize,
    termination: Termination,
    model_size: usize,
}

#[derive(Debug, Serialize)]
struct TuneResults {
    criterion: Criterion,
    selected_support_size: usize,
    stopped_early: bool,
    path: Vec<PathRow>,
    fit: FitResults,
    cv: Option<CvResult>,
}

#[derive(Debug, Serialize)]
struct SimulateResults<'a> {
    dataset_path: String,
    n: usize,
    p: usize,
    beta_star: &'a [f64],
    true_support: &'a [usize],
    eta_c: Option<f64>,
    log_eta_c: Option<f64>,
    realized_censor_rate: f64,
    scenario: &'a ScenarioSpec,
    seed: u64,
}

fn write_json<T: Serialize>(value: &T, path: Option<&str>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn support_cap(design: &StandardizedDesign) -> usize {
    (design.n() - 1).min(design.p())
}

fn run_fit(cfg: &RunConfig) -> Result<()> {
    let knobs = cfg.solver.as_ref().expect("fit has solver knobs");
    let dataset = parse_dataset_csv(cfg.input_path.as_deref().unwrap())?;
    let design = prepare_design(&dataset)?;
    let mut warnings = Vec::new();
    let t = match knobs.support_size {
        Some(t) => t,
        None => {
            let t = default_max_support(dataset.n(), 0.5).min(support_cap(&design));
            warnings.push(format!("support size not given; using ceil(0.5 n / ln n) = {t}"));
            t
        }
    };
    let sdar_cfg = SdarConfig {
        support_size: t,
        tau: knobs.tau,
        max_iter: knobs.max_iter,
        ls_rank_tol: crate::sdar::DEFAULT_RANK_TOL,
        cycle_guard: knobs.cycle_guard,
    };
    let diagnostics = if cfg.diagnostics {
        Some(theory_diagnostics(&design, t, knobs.tau, t, None)?)
    } else {
        None
    };
    let fit = sdar_fit(&design, &sdar_cfg, None)?;
    fit_warnings(&design, &fit, &mut warnings);
    let report = Report {
        config: cfg,
        results: fit_results(&dataset, &design, &fit, t, cfg.eta_scale),
        diagnostics,
        warnings,
    };
    write_json(&report, cfg.output_path.as_deref())
}

fn run_tune(cfg: &RunConfig) -> Result<()> {
    let solver = cfg.solver.as_ref().unwrap();
    let knobs = cfg.tuner.as_ref().unwrap();
    let dataset = parse_dataset_csv(cfg.input_path.as_deref().unwrap())?;
    let need_eps = || {
        knobs.epsilon.ok_or_else(|| {
            AftError::InvalidConfig("--epsilon is required for the residual and change rules".into())
        })
    };
    let criterion = match knobs.criterion {
        CriterionName::Hbic => Criterion::Hbic,
        CriterionName::Cv => Criterion::CrossValidation { folds: knobs.folds },
        CriterionName::Residual => Criterion::ResidualStop { epsilon: need_eps()? },
        CriterionName::Change => Criterion::SolutionChange { epsilon: need_eps()? },
    };
    let tconf = TuningConfig {
        step: knobs.step,
        max_support: knobs
            .max_support
            .unwrap_or_else(|| default_max_support(dataset.n(), knobs.alpha)),
        tau: solver.tau,
        criterion,
        seed: cfg.seed,
        max_iter: solver.max_iter,
    };
    let model = asdar_tune(&dataset, &tconf)?;
    let entry = model.path.selected_entry();
    let mut warnings = Vec::new();
    fit_warnings(&model.design, &entry.fit, &mut warnings);
    if let Some(msg) = &model.path.aborted {
        warnings.push(format!("path aborted early: {msg}"));
    }
    if matches!(criterion, Criterion::ResidualStop { .. } | Criterion::SolutionChange { .. })
        && !model.path.stopped_early
    {
        warnings.push("stopping rule never fired; reporting the largest support visited".into());
    }
    if model.path.entries.iter().any(|e| e.score_floored) {
        warnings.push("residual sum of squares floored at 1e-300 while scoring".into());
    }
    let results = TuneResults {
        criterion,
        selected_support_size: entry.support_size,
        stopped_early: model.path.stopped_early,
        path: model
            .path
            .entries
            .iter()
            .map(|e| PathRow {
                support_size: e.support_size,
                score: e.score,
                residual_norm: e.residual_norm,
                iterations: e.fit.iterations,
                termination: e.fit.termination,
                model_size: e.fit.support_len(),
            })
            .collect(),
        fit: fit_results(&dataset, &model.design, &entry.fit, entry.support_size, cfg.eta_scale),
        cv: model.cv.clone(),
    };
    let report = Report {
        config: cfg,
        results,
        diagnostics: None,
        warnings,
    };
    write_json(&report, cfg.output_path.as_deref())
}

fn run_simulate(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.scenario.as_ref().unwrap();
    let inst = gen_instance(spec)?;
    let csv_path = cfg.output_path.as_deref().unwrap();
    let file = File::create(csv_path)?;
    write_dataset_csv(&inst.dataset, BufWriter::new(file))?;
    let report = Report {
        config: cfg,
        results: SimulateResults {
            dataset_path: csv_path.to_string(),
            n: spec.n,
            p: spec.p,
            beta_star: &inst.beta_star,
            true_support: &inst.true_support,
            eta_c: inst.eta_c.filter(|v| v.is_finite()),
            log_eta_c: inst.log_eta_c,
            realized_censor_rate: inst.realized_censor_rate,
            scenario: spec,
            seed: cfg.seed,
        },
        diagnostics: None,
        warnings: vec![],
    };
    write_json(&report, cfg.secondary_output_path.as_deref())
}

fn run_bench(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.scenario.as_ref().unwrap();
    let solver = cfg.solver.as_ref().unwrap();
    let knobs = cfg.tuner.as_ref().unwrap();
    let methods = cfg
        .methods
        .iter()
        .map(|m| {
            Ok(match m {
                MethodName::Sdar => Method::Sdar {
                    support_size: solver.support_size,
                    tau: solver.tau,
                },
                MethodName::Asdar => Method::Asdar {
                    criterion: match knobs.criterion {
                        CriterionName::Hbic => Criterion::Hbic,
                        CriterionName::Cv => Criterion::CrossValidation { folds: knobs.folds },
                        // Simulation default: eps = sqrt(n) sigma.
                        CriterionName::Residual => Criterion::ResidualStop {
                            epsilon: knobs
                                .epsilon
                                .unwrap_or((spec.n as f64).sqrt() * spec.sigma),
                        },
                        CriterionName::Change => Criterion::SolutionChange {
                            epsilon: knobs.epsilon.ok_or_else(|| {
                                AftError::InvalidConfig("--epsilon is required for --criterion change".into())
                            })?,
                        },
                    },
                    tau: solver.tau,
                    step: knobs.step,
                    alpha: knobs.alpha,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = run_experiment_with(
        spec,
        cfg.replications.unwrap_or(20),
        &methods,
        cfg.seed,
        solver.max_iter,
    )?;
    if let Some(csv_path) = cfg.secondary_output_path.as_deref() {
        write_rows_csv(&report, BufWriter::new(File::create(csv_path)?))?;
    }
    let warnings = report
        .aggregates
        .iter()
        .filter(|a| a.failures > 0)
        .map(|a| format!("{}: {} replication(s) failed", a.method, a.failures))
        .collect();
    let results = if cfg.timing {
        report
    } else {
        report.without_timing()
    };
    let out = Report {
        config: cfg,
        results,
        diagnostics: None,
        warnings,
    };
    write_json(&out, cfg.output_path.as_deref())
}

/// Execute a resolved invocation.
pub fn execute(cfg: &RunConfig) -> Result<()> {
    match cfg.subcommand {
        CommandKind::Fit => run_fit(cfg),
        CommandKind::Tune => run_tune(cfg),
        CommandKind::Simulate => run_simulate(cfg),
        CommandKind::Bench => run_bench(cfg),
    }
}

/// Run a resolved configuration and map the outcome to an exit code.
pub fn run(cfg: &RunConfig) -> i32 {
    match execute(cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parse `args` (including the program name) and run.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match resolve(&cli) {
        Ok(cfg) => run(&cfg),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("c.json");
        std::fs::write(&conf, r#"{"tau": 0.5, "support_size": 4, "seed": 9, "n": 77}"#).unwrap();
        let cli = Cli::try_parse_from([
            "aftsdar",
            "--config",
            conf.to_str().unwrap(),
            "fit",
            "--input",
            "x.csv",
            "--tau",
            "0.25",
        ])
        .unwrap();
        let cfg = resolve(&cli).unwrap();
        let s = cfg.solver.unwrap();
        assert_eq!(s.tau, 0.25);
        assert_eq!(s.support_size, Some(4));

        let cli = Cli::try_parse_from([
            "aftsdar",
            "--config",
            conf.to_str().unwrap(),
            "simulate",
            "--output",
            "d.csv",
        ])
        .unwrap();
        let cfg = resolve(&cli).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.scenario.unwrap().n, 77);
        assert_eq!(cfg.secondary_output_path.as_deref(), Some("d.json"));
    }

    #[test]
    fn unknown_config_key_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("c.json");
        std::fs::write(&conf, r#"{"bogus": 1}"#).unwrap();
        let cli =
            Cli::try_parse_from(["aftsdar", "--config", conf.to_str().unwrap(), "fit", "-i", "x"]).unwrap();
        assert_eq!(resolve(&cli).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["aftsdar", "fit", "--bogus"]), 1);
        assert_eq!(main_with_args(["aftsdar"]), 1);
        assert_eq!(main_with_args(["aftsdar", "--help"]), 0);
    }

    #[test]
    fn missing_input_exits_two() {
        assert_eq!(
            main_with_args(["aftsdar", "fit", "--input", "/nonexistent/file.csv"]),
            2
        );
    }

    #[test]
    fn full_flag_restores_large_scale() {
        let cli = Cli::try_parse_from(["aftsdar", "bench", "--full"]).unwrap();
        let cfg = resolve(&cli).unwrap();
        assert_eq!(cfg.replications, Some(100));
        let s = cfg.scenario.unwrap();
        assert_eq!((s.n, s.p, s.k), (500, 10_000, 20));
        let cli = Cli::try_parse_from(["aftsdar", "bench"]).unwrap();
        assert_eq!(resolve(&cli).unwrap().replications, Some(20));
    }
}
