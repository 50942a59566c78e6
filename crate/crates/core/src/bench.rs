//! Accuracy metrics, brute-force theory diagnostics and the replicated
//! experiment runner.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{AftError, Result};
use crate::sdar::{sdar_fit, SdarConfig, Termination};
use crate::simgen::{derive_seed, gen_instance, ScenarioSpec};
use crate::survival_data::{prepare_design, StandardizedDesign};
use crate::tuner::{asdar_tune, default_max_support, Criterion, TuningConfig};

/// Coefficients with magnitude at or below this count as zero.
pub const SUPPORT_TOL: f64 = 1e-12;
/// Largest number of column subsets enumerated for `sigma_min_2T`.
pub const DIAGNOSTICS_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub relative_error: f64,
    pub exact_support_recovery: bool,
    pub iterations: usize,
    pub wall_time_seconds: f64,
}

/// `||beta_hat - beta_star||_2 / ||beta_star||_2`.
pub fn relative_error(beta_hat: &[f64], beta_star: &[f64]) -> Result<f64> {
    if beta_hat.len() != beta_star.len() {
        return Err(AftError::InvalidInput(format!(
            "estimate has length {}, truth has length {}",
            beta_hat.len(),
            beta_star.len()
        )));
    }
    let denom = beta_star.iter().map(|b| b * b).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(AftError::UndefinedMetric);
    }
    let num = beta_hat
        .iter()
        .zip(beta_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// True iff the nonzero pattern of `beta_hat` equals `true_support`.
pub fn exact_support_recovery(beta_hat: &[f64], true_support: &[usize]) -> bool {
    let mut truth = true_support.to_vec();
    truth.sort_unstable();
    truth.dedup();
    let estimated: Vec<usize> = (0..beta_hat.len())
        .filter(|&j| beta_hat[j].abs() > SUPPORT_TOL)
        .collect();
    estimated == truth
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryDiagnostics {
    /// Smallest eigenvalue over all Gram submatrices with 2T columns.
    pub sigma_min_2t: f64,
    /// `||Xbar||_2^2 / n`.
    pub u_bound: f64,
    /// `sigma_min_2t / (n sqrt(2T))`.
    pub l_bound: f64,
    /// Contraction factor `1 - 2 tau L (1 - tau sqrt(T) U) / (sqrt(T)(1 + K))`.
    pub xi: f64,
    /// `||beta*||_inf / min nonzero |beta*|`, when the truth is known.
    pub r_ratio: Option<f64>,
    /// `tau < 1 / (sqrt(T) U)`.
    pub step_size_ok: bool,
    /// `sigma_min_2t > 0` (numerically).
    pub identifiable: bool,
    pub subsets_enumerated: u64,
}

/// `C(n, k)` saturating at `u64::MAX`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Minimum eigenvalue of the `size`-column Gram submatrices, by exhaustive
/// enumeration of column subsets.
pub fn min_subset_eigenvalue(gram: &DMatrix<f64>, size: usize) -> f64 {
    let p = gram.nrows();
    let mut idx: Vec<usize> = (0..size).collect();
    let mut best = f64::INFINITY;
    loop {
        let sub = DMatrix::from_fn(size, size, |a, b| gram[(idx[a], idx[b])]);
        let lmin = SymmetricEigen::new(sub).eigenvalues.min();
        best = best.min(lmin);
        // Next combination in lexicographic order.
        let mut i = size;
        while i > 0 && idx[i - 1] == p - size + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return best;
        }
        idx[i - 1] += 1;
        for j in i..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn theory_diagnostics(
    design: &StandardizedDesign,
    t: usize,
    tau: f64,
    k: usize,
    beta_star: Option<&[f64]>,
) -> Result<TheoryDiagnostics> {
    let p = design.p();
    let size = 2 * t;
    let subsets = binomial(p, size);
    if t == 0 || size > p || subsets > DIAGNOSTICS_LIMIT {
        return Err(AftError::DiagnosticsInfeasible {
            p,
            subset: size,
            limit: DIAGNOSTICS_LIMIT,
        });
    }
    let n = design.n() as f64;
    let gram = design.xbar.tr_mul(&design.xbar);
    let sigma_min = min_subset_eigenvalue(&gram, size);

    let spectral_sq = if design.n() < p {
        let outer = &design.xbar * design.xbar.transpose();
        SymmetricEigen::new(outer).eigenvalues.max()
    } else {
        SymmetricEigen::new(gram).eigenvalues.max()
    };
    let u = spectral_sq / n;
    let l = sigma_min / (n * (size as f64).sqrt());
    let root_t = (t as f64).sqrt();
    let xi = 1.0 - 2.0 * tau * l * (1.0 - tau * root_t * u) / (root_t * (1.0 + k as f64));

    let r_ratio = beta_star.and_then(|b| {
        let nonzero: Vec<f64> = b.iter().map(|v| v.abs()).filter(|v| *v > 0.0).collect();
        let max = nonzero.iter().copied().fold(0.0, f64::max);
        let min = nonzero.iter().copied().fold(f64::INFINITY, f64::min);
        (!nonzero.is_empty()).then(|| max / min)
    });

    Ok(TheoryDiagnostics {
        sigma_min_2t: sigma_min,
        u_bound: u,
        l_bound: l,
        xi,
        r_ratio,
        step_size_ok: tau < 1.0 / (root_t * u),
        identifiable: sigma_min > 1e-10 * n,
        subsets_enumerated: subsets,
    })
}

/// Estimator under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Method {
    /// Fixed support size; `None` uses the true sparsity `K`.
    Sdar { support_size: Option<usize>, tau: f64 },
    Asdar {
        criterion: Criterion,
        tau: f64,
        step: usize,
        alpha: f64,
    },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Sdar { support_size, tau } => match support_size {
                Some(t) => format!("SDAR(T={t},tau={tau})"),
                None => format!("SDAR(T=K,tau={tau})"),
            },
            Method::Asdar { criterion, tau, .. } => {
                let c = match criterion {
                    Criterion::Hbic => "HBIC".to_string(),
                    Criterion::CrossValidation { folds } => format!("CV{folds}"),
                    Criterion::ResidualStop { epsilon } => format!("residual<{epsilon}"),
                    Criterion::SolutionChange { epsilon } => format!("change<{epsilon}"),
                };
                format!("ASDAR({c},tau={tau})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub seed: u64,
    pub method: String,
    pub relative_error: Option<f64>,
    pub recovered: Option<bool>,
    pub iterations: Option<usize>,
    pub selected_support: Option<usize>,
    pub termination: Option<Termination>,
    pub kkt_gap: Option<f64>,
    pub realized_censor_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: String,
    pub successes: usize,
    pub failures: usize,
    pub relative_error: Option<Summary>,
    pub recovery_rate: Option<Summary>,
    pub iterations: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: ScenarioSpec,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub aggregates: Vec<MethodAggregate>,
    pub rows: Vec<ReplicationRow>,
}

impl ExperimentReport {
    /// Drop wall-clock measurements so the report is a pure function of
    /// its inputs.
    pub fn without_timing(mut self) -> Self {
        for r in &mut self.rows {
            r.seconds = None;
        }
        for a in &mut self.aggregates {
            a.seconds = None;
        }
        self
    }

    pub fn aggregate(&self, method: &str) -> Option<&MethodAggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }
}

fn fit_once(
    instance: &crate::simgen::SimulatedInstance,
    method: &Method,
    k: usize,
    max_iter: usize,
) -> Result<(Vec<f64>, usize, usize, Termination, f64, f64)> {
    match method {
        Method::Sdar { support_size, tau } => {
            let design = prepare_design(&instance.dataset)?;
            let t = support_size.unwrap_or(k);
            let cfg = SdarConfig::new(t).with_tau(*tau).with_max_iter(max_iter);
            let start = Instant::now();
            let fit = sdar_fit(&design, &cfg, None)?;
            let secs = start.elapsed().as_secs_f64();
            Ok((fit.beta, fit.iterations, t, fit.termination, fit.kkt_gap, secs))
        }
        Method::Asdar {
            criterion,
            tau,
            step,
            alpha,
        } => {
            let n = instance.dataset.n();
            let cfg = TuningConfig {
                step: *step,
                max_support: default_max_support(n, *alpha),
                tau: *tau,
                criterion: *criterion,
                seed: 0,
                max_iter,
            };
            let start = Instant::now();
            let model = asdar_tune(&instance.dataset, &cfg)?;
            let secs = start.elapsed().as_secs_f64();
            let entry = model.path.selected_entry();
            let fit = &entry.fit;
            Ok((
                fit.beta.clone(),
                fit.iterations,
                entry.support_size,
                fit.termination,
                fit.kkt_gap,
                secs,
            ))
        }
    }
}

fn replicate(
    scenario: &ScenarioSpec,
    methods: &[Method],
    replication: usize,
    seed: u64,
    max_iter: usize,
) -> Vec<ReplicationRow> {
    let rep_seed = derive_seed(seed, replication as u64);
    let instance = gen_instance(&scenario.with_seed(rep_seed));
    methods
        .iter()
        .map(|m| {
            let mut row = ReplicationRow {
                replication,
                seed: rep_seed,
                method: m.label(),
                relative_error: None,
                recovered: None,
                iterations: None,
                selected_support: None,
                termination: None,
                kkt_gap: None,
                realized_censor_rate: 0.0,
                seconds: None,
                error: None,
            };
            let inst = match &instance {
                Ok(i) => i,
                Err(e) => {
                    row.error = Some(e.to_string());
                    return row;
                }
            };
            row.realized_censor_rate = inst.realized_censor_rate;
            let outcome = fit_once(inst, m, scenario.k, max_iter).and_then(|r| {
                relative_error(&r.0, &inst.beta_star).map(|err| (r, err))
            });
            match outcome {
                Ok(((beta, iters, t, term, gap, secs), err)) => {
                    row.relative_error = Some(err);
                    row.recovered = Some(exact_support_recovery(&beta, &inst.true_support));
                    row.iterations = Some(iters);
                    row.selected_support = Some(t);
                    row.termination = Some(term);
                    row.kkt_gap = Some(gap);
                    row.seconds = Some(secs);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect()
}

fn aggregate(method: &str, rows: &[ReplicationRow]) -> MethodAggregate {
    let mine: Vec<&ReplicationRow> = rows.iter().filter(|r| r.method == method).collect();
    let ok: Vec<&&ReplicationRow> = mine.iter().filter(|r| r.error.is_none()).collect();
    let collect = |f: &dyn Fn(&ReplicationRow) -> Option<f64>| -> Vec<f64> {
        ok.iter().filter_map(|r| f(r)).collect()
    };
    let seconds = collect(&|r| r.seconds);
    MethodAggregate {
        method: method.to_string(),
        successes: ok.len(),
        failures: mine.len() - ok.len(),
        relative_error: Summary::of(&collect(&|r| r.relative_error)),
        recovery_rate: Summary::of(&collect(&|r| r.recovered.map(|b| if b { 1.0 } else { 0.0 }))),
        iterations: Summary::of(&collect(&|r| r.iterations.map(|i| i as f64))),
        seconds: Summary::of(&seconds),
    }
}

/// Generates `replications` seeded instances of `scenario`, fits every
/// method on each, and aggregates. Failed replications are recorded as
/// rows with an error message.
pub fn run_experiment(
    scenario: &ScenarioSpec,
    replications: usize,
    methods: &[Method],
    seed: u64,
) -> Result<ExperimentReport> {
    run_experiment_with(scenario, replications, methods, seed, crate::sdar::DEFAULT_MAX_ITER)
}

pub fn run_experiment_with(
    scenario: &ScenarioSpec,
    replications: usize,
    methods: &[Method],
    seed: u64,
    max_iter: usize,
) -> Result<ExperimentReport> {
    scenario.validate()?;
    if replications == 0 {
        return Err(AftError::InvalidConfig("replications must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(AftError::InvalidConfig("no methods to run".into()));
    }
    let work = |r: usize| replicate(scenario, methods, r, seed, max_iter);
    #[cfg(feature = "parallel")]
    let per_rep: Vec<Vec<ReplicationRow>> = {
        use rayon::prelude::*;
        (0..replications).into_par_iter().map(work).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_rep: Vec<Vec<ReplicationRow>> = (0..replications).map(work).collect();

    let rows: Vec<ReplicationRow> = per_rep.into_iter().flatten().collect();
    let aggregates = methods.iter().map(|m| aggregate(&m.label(), &rows)).collect();
    Ok(ExperimentReport {
        scenario: scenario.clone(),
        replications,
        methods: methods.to_vec(),
        aggregates,
        rows,
    })
}

/// Column order of the per-replication CSV.
pub const CSV_COLUMNS: [&str; 20] = [
    "replication",
    "seed",
    "n",
    "p",
    "k",
    "rho",
    "sigma",
    "censor_rate",
    "design",
    "coef",
    "method",
    "relative_error",
    "recovered",
    "iterations",
    "selected_support",
    "termination",
    "kkt_gap",
    "realized_censor_rate",
    "seconds",
    "error",
];

/// One CSV row per replication and method.
pub fn write_rows_csv<W: std::io::Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS).map_err(crate::error::CsvError::from)?;
    let s = &report.scenario;
    let design = serde_json::to_value(s.design)?;
    let coef = match s.coef {
        crate::simgen::CoefKind::LogScaled => "log_scaled".to_string(),
        crate::simgen::CoefKind::RatioScaled { ratio } => format!("ratio_scaled:{ratio}"),
    };
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in &report.rows {
        w.write_record([
            r.replication.to_string(),
            r.seed.to_string(),
            s.n.to_string(),
            s.p.to_string(),
            s.k.to_string(),
            s.rho.to_string(),
            s.sigma.to_string(),
            s.censor_rate.to_string(),
            design.as_str().unwrap_or_default().to_string(),
            coef.clone(),
            r.method.clone(),
            opt(r.relative_error.map(|v| v.to_string())),
            opt(r.recovered.map(|v| v.to_string())),
            opt(r.iterations.map(|v| v.to_string())),
            opt(r.selected_support.map(|v| v.to_string())),
            opt(r.termination.map(|v| v.as_str().to_string())),
            opt(r.kkt_gap.map(|v| v.to_string())),
            r.realized_censor_rate.to_string(),
            opt(r.seconds.map(|v| v.to_string())),
            opt(r.error.clone()),
        ])
        .map_err(crate::error::CsvError::from)?;
    }
    w.flush()?;
    Ok(())
}
