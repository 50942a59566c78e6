//! Adaptive support-size selection.
//!
//! Runs the solver on `T = step, 2 step, ...` up to `Q`, each run warm
//! started from the previous primal/dual pair, and picks `T` by HBIC,
//! cross-validation, or one of two early-stopping rules.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{AftError, Result};
use crate::sdar::{sdar_fit, sdar_fit_warm, SdarConfig, SdarFit, DEFAULT_MAX_ITER};
use crate::simgen::stream_rng;
use crate::survival_data::{
    coefficients_to_original_scale, kaplan_meier_weights, prepare_design, sort_by_observed_time,
    StandardizedDesign, SurvivalDataset,
};

/// Floor applied to the residual sum of squares inside the HBIC logarithm.
pub const RSS_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Criterion {
    Hbic,
    CrossValidation { folds: usize },
    /// Stop at the first `T` with `||Ybar - Xbar eta|| < epsilon`.
    ResidualStop { epsilon: f64 },
    /// Stop once consecutive path solutions differ by less than `epsilon`.
    SolutionChange { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    /// Grid increment.
    pub step: usize,
    /// Largest support size considered.
    pub max_support: usize,
    pub tau: f64,
    pub criterion: Criterion,
    /// Fold assignment seed for cross-validation.
    pub seed: u64,
    pub max_iter: usize,
}

impl TuningConfig {
    /// `Q = ceil(alpha n / ln n)`, unit step, unit step size, HBIC.
    pub fn for_sample_size(n: usize, alpha: f64) -> Self {
        Self {
            step: 1,
            max_support: default_max_support(n, alpha),
            tau: 1.0,
            criterion: Criterion::Hbic,
            seed: 0,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AftError::InvalidConfig(m));
        if self.step == 0 {
            return bad("grid step must be at least 1".into());
        }
        if self.max_support < self.step {
            return bad(format!(
                "maximum support Q={} is smaller than the grid step {}",
                self.max_support, self.step
            ));
        }
        match self.criterion {
            Criterion::CrossValidation { folds } if folds < 2 => {
                bad(format!("cross-validation needs at least 2 folds, got {folds}"))
            }
            Criterion::ResidualStop { epsilon } | Criterion::SolutionChange { epsilon }
                if !(epsilon > 0.0) =>
            {
                bad(format!("stopping tolerance {epsilon} must be positive"))
            }
            _ => Ok(()),
        }
    }

    fn sdar_config(&self, support_size: usize) -> SdarConfig {
        SdarConfig::new(support_size)
            .with_tau(self.tau)
            .with_max_iter(self.max_iter)
    }
}

pub fn default_max_support(n: usize, alpha: f64) -> usize {
    let n = n as f64;
    ((alpha * n / n.ln()).ceil() as usize).max(1)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathEntry {
    pub support_size: usize,
    pub fit: SdarFit,
    pub score: f64,
    pub residual_norm: f64,
    /// The residual sum of squares hit `RSS_FLOOR` while scoring.
    pub score_floored: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningPath {
    pub entries: Vec<PathEntry>,
    pub selected: usize,
    pub criterion: Criterion,
    /// The early-stopping rule fired before the grid was exhausted.
    pub stopped_early: bool,
    /// Solver error that cut the path short, if any.
    pub aborted: Option<String>,
}

impl TuningPath {
    pub fn selected_entry(&self) -> &PathEntry {
        &self.entries[self.selected]
    }

    pub fn support_sizes(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.support_size).collect()
    }
}

/// `n log(RSS/n) + |supp(eta)| log(log n) log p`. The flag reports whether
/// the residual sum of squares was floored.
pub fn hbic_score(fit: &SdarFit, design: &StandardizedDesign) -> (f64, bool) {
    let rss = design.residual(&fit.eta).norm_squared();
    hbic_from_rss(rss, fit.support_len(), design.n(), design.p())
}

fn hbic_from_rss(rss: f64, model_size: usize, n: usize, p: usize) -> (f64, bool) {
    let floored = rss < RSS_FLOOR;
    let n_f = n as f64;
    let score = n_f * (rss.max(RSS_FLOOR) / n_f).ln()
        + model_size as f64 * n_f.ln().ln() * (p as f64).ln();
    (score, floored)
}

/// Support sizes visited by the path: multiples of `step` up to `Q`,
/// capped at `min(n - 1, p)`.
pub fn support_grid(config: &TuningConfig, n: usize, p: usize) -> Vec<usize> {
    let cap = config.max_support.min(n.saturating_sub(1)).min(p);
    (1..)
        .map(|k| k * config.step)
        .take_while(|&t| t <= cap)
        .collect()
}

/// Warm-started path over the support grid, scored by HBIC or an
/// early-stopping rule. Cross-validation needs the raw data; use
/// [`asdar_tune`] for it.
pub fn asdar_path(design: &StandardizedDesign, config: &TuningConfig) -> Result<TuningPath> {
    if matches!(config.criterion, Criterion::CrossValidation { .. }) {
        return Err(AftError::InvalidConfig(
            "cross-validation scores need the raw dataset; use asdar_tune".into(),
        ));
    }
    run_path(design, config, None)
}

fn run_path(
    design: &StandardizedDesign,
    config: &TuningConfig,
    external_scores: Option<&[f64]>,
) -> Result<TuningPath> {
    config.validate()?;
    let grid = support_grid(config, design.n(), design.p());
    if grid.is_empty() {
        return Err(AftError::InvalidConfig(format!(
            "no support size on the grid fits n={} and retained p={}",
            design.n(),
            design.p()
        )));
    }

    let mut entries: Vec<PathEntry> = Vec::with_capacity(grid.len());
    let mut stop_at = None;
    let mut aborted = None;
    for (k, &t) in grid.iter().enumerate() {
        let cfg = config.sdar_config(t);
        let fit = match entries.last() {
            None => sdar_fit(design, &cfg, None),
            Some(prev) => sdar_fit_warm(design, &cfg, &prev.fit.eta, &prev.fit.dual),
        };
        let fit = match fit {
            Ok(f) => f,
            Err(e) if !entries.is_empty() => {
                aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let residual_norm = design.residual(&fit.eta).norm();
        let (score, floored) = match (config.criterion, external_scores) {
            (_, Some(scores)) => (scores[k], false),
            (Criterion::Hbic, None) => hbic_score(&fit, design),
            (Criterion::ResidualStop { .. }, None) => (residual_norm, false),
            (Criterion::SolutionChange { .. }, None) => {
                let change = entries.last().map_or(f64::INFINITY, |prev| {
                    prev.fit
                        .eta
                        .iter()
                        .zip(&fit.eta)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                });
                (change, false)
            }
            (Criterion::CrossValidation { .. }, None) => unreachable!("checked above"),
        };
        entries.push(PathEntry {
            support_size: t,
            fit,
            score,
            residual_norm,
            score_floored: floored,
        });

        match config.criterion {
            Criterion::ResidualStop { epsilon } if residual_norm < epsilon => {
                stop_at = Some(entries.len() - 1);
            }
            Criterion::SolutionChange { epsilon } if score < epsilon => {
                // The earlier of the two nearly equal solutions is kept.
                stop_at = Some(entries.len() - 2);
            }
            _ => {}
        }
        if stop_at.is_some() {
            break;
        }
    }

    let selected = match (config.criterion, stop_at) {
        (_, Some(i)) => i,
        (Criterion::Hbic | Criterion::CrossValidation { .. }, None) => argmin(&entries),
        // Rule never fired: fall back to the largest support visited.
        (_, None) => entries.len() - 1,
    };
    Ok(TuningPath {
        entries,
        selected,
        criterion: config.criterion,
        stopped_early: stop_at.is_some(),
        aborted,
    })
}

/// First index of the minimum score.
fn argmin(entries: &[PathEntry]) -> usize {
    let mut best = 0;
    for (i, e) in entries.iter().enumerate() {
        if e.score < entries[best].score {
            best = i;
        }
    }
    best
}

/// Cross-validation outcome over a support-size grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub grid: Vec<usize>,
    pub selected_support: usize,
    pub mean_loss: Vec<f64>,
    /// `fold_loss[f][g]` for fold `f`, grid point `g`.
    pub fold_loss: Vec<Vec<f64>>,
}

/// Fold labels stratified by event status: events and censorings are each
/// shuffled and dealt round-robin, continuing the count across strata.
pub fn stratified_folds(events: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream_rng(seed, 0x0cf0);
    let mut ev: Vec<usize> = (0..events.len()).filter(|&i| events[i]).collect();
    let mut cens: Vec<usize> = (0..events.len()).filter(|&i| !events[i]).collect();
    ev.shuffle(&mut rng);
    cens.shuffle(&mut rng);
    let mut labels = vec![0; events.len()];
    for (k, &i) in ev.iter().chain(cens.iter()).enumerate() {
        labels[i] = k % folds;
    }
    labels
}

/// K-fold cross-validation of the support size. Sorting, Kaplan-Meier
/// weights and standardization are recomputed on every training split; the
/// validation loss `sum w (Y - x'beta)^2 / (2 n_val)` uses weights computed
/// on the validation split alone. Ties in the mean loss go to the smaller
/// support.
pub fn cross_validate(
    dataset: &SurvivalDataset,
    grid: &[usize],
    folds: usize,
    tau: f64,
    seed: u64,
) -> Result<CvResult> {
    cross_validate_with(dataset, grid, folds, tau, seed, DEFAULT_MAX_ITER)
}

fn cross_validate_with(
    dataset: &SurvivalDataset,
    grid: &[usize],
    folds: usize,
    tau: f64,
    seed: u64,
    max_iter: usize,
) -> Result<CvResult> {
    if folds < 2 {
        return Err(AftError::InvalidConfig(format!(
            "cross-validation needs at least 2 folds, got {folds}"
        )));
    }
    if grid.is_empty() {
        return Err(AftError::InvalidConfig("empty support grid".into()));
    }
    let n = dataset.n();
    let labels = stratified_folds(dataset.events(), folds, seed);
    let largest = *grid.iter().max().unwrap();

    let mut splits = Vec::with_capacity(folds);
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| labels[i] != f).collect();
        let valid: Vec<usize> = (0..n).filter(|&i| labels[i] == f).collect();
        if train.len() < largest + 1 {
            return Err(AftError::InvalidConfig(format!(
                "fold {f} leaves {} training rows, fewer than max(T)+1 = {}",
                train.len(),
                largest + 1
            )));
        }
        if valid.len() < 2 {
            return Err(AftError::InvalidConfig(format!(
                "fold {f} has {} validation rows; use fewer folds",
                valid.len()
            )));
        }
        splits.push((f, train, valid));
    }

    let eval = |(f, train, valid): &(usize, Vec<usize>, Vec<usize>)| -> Result<Vec<f64>> {
        fold_losses(dataset, *f, train, valid, grid, tau, max_iter)
    };
    #[cfg(feature = "parallel")]
    let per_fold: Vec<Result<Vec<f64>>> = {
        use rayon::prelude::*;
        splits.par_iter().map(eval).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_fold: Vec<Result<Vec<f64>>> = splits.iter().map(eval).collect();
    let fold_loss = per_fold.into_iter().collect::<Result<Vec<_>>>()?;

    let mean_loss: Vec<f64> = (0..grid.len())
        .map(|g| fold_loss.iter().map(|row| row[g]).sum::<f64>() / folds as f64)
        .collect();
    let mut best = 0;
    for g in 1..grid.len() {
        let better = mean_loss[g] < mean_loss[best]
            || (mean_loss[g] == mean_loss[best] && grid[g] < grid[best]);
        if better {
            best = g;
        }
    }
    Ok(CvResult {
        grid: grid.to_vec(),
        selected_support: grid[best],
        mean_loss,
        fold_loss,
    })
}

fn fold_losses(
    dataset: &SurvivalDataset,
    fold: usize,
    train: &[usize],
    valid: &[usize],
    grid: &[usize],
    tau: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let train_set = dataset.subset(train)?;
    let valid_set = dataset.subset(valid)?;
    if train_set.event_count() == 0 {
        return Err(AftError::FoldDegenerate {
            fold,
            part: "training",
        });
    }
    if valid_set.event_count() == 0 {
        return Err(AftError::FoldDegenerate {
            fold,
            part: "validation",
        });
    }
    let design = prepare_design(&train_set)?;
    let val_sorted = sort_by_observed_time(&valid_set)?;
    let val_w = kaplan_meier_weights(&val_sorted);
    let n_val = val_sorted.n() as f64;

    grid.iter()
        .map(|&t| {
            let cfg = SdarConfig::new(t).with_tau(tau).with_max_iter(max_iter);
            let fit = sdar_fit(&design, &cfg, None)?;
            let beta = coefficients_to_original_scale(&fit.eta, &design)?;
            let pred = &val_sorted.x * nalgebra::DVector::from_vec(beta);
            let loss: f64 = val_w
                .w
                .iter()
                .zip(&val_sorted.y)
                .zip(pred.iter())
                .map(|((w, y), f)| w * (y - f) * (y - f))
                .sum();
            Ok(loss / (2.0 * n_val))
        })
        .collect()
}

/// Design plus tuning path for a raw dataset, for any criterion.
#[derive(Debug, Clone)]
pub struct TunedModel {
    pub design: StandardizedDesign,
    pub path: TuningPath,
    pub cv: Option<CvResult>,
}

impl TunedModel {
    pub fn selected_fit(&self) -> &SdarFit {
        &self.path.selected_entry().fit
    }
}

pub fn asdar_tune(dataset: &SurvivalDataset, config: &TuningConfig) -> Result<TunedModel> {
    config.validate()?;
    let design = prepare_design(dataset)?;
    match config.criterion {
        Criterion::CrossValidation { folds } => {
            let grid = support_grid(config, design.n(), design.p());
            if grid.is_empty() {
                return Err(AftError::InvalidConfig(
                    "no support size on the grid fits the data".into(),
                ));
            }
            let cv = cross_validate_with(dataset, &grid, folds, config.tau, config.seed, config.max_iter)?;
            let path = run_path(&design, config, Some(&cv.mean_loss))?;
            Ok(TunedModel {
                design,
                path,
                cv: Some(cv),
            })
        }
        _ => {
            let path = run_path(&design, config, None)?;
            Ok(TunedModel {
                design,
                path,
                cv: None,
            })
        }
    }
}
