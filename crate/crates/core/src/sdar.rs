//! Support detection and root finding for the l0-penalized normalized loss
//! `||Ybar - Xbar eta||^2 / (2n) + lambda ||eta||_0`.
//!
//! Each iteration picks the `T` largest entries of `|eta + tau d|` as the
//! active set (which fixes `sqrt(2 lambda)` at the `T`-th largest value),
//! solves least squares exactly on that set, and refreshes the dual
//! `d = Xbar'(Ybar - Xbar eta)/n` off the set. The run stops as soon as the
//! active set repeats.

use std::collections::HashSet;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{AftError, Result};
use crate::survival_data::{coefficients_to_original_scale, StandardizedDesign};

pub const DEFAULT_MAX_ITER: usize = 50;
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Solver settings for a single support size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdarConfig {
    /// Target support size `T`.
    pub support_size: usize,
    /// Step size weighing the dual against the primal in support detection.
    pub tau: f64,
    pub max_iter: usize,
    /// Relative eigenvalue cutoff for treating the active Gram matrix as singular.
    pub ls_rank_tol: f64,
    pub cycle_guard: bool,
}

impl SdarConfig {
    pub fn new(support_size: usize) -> Self {
        Self {
            support_size,
            tau: 1.0,
            max_iter: DEFAULT_MAX_ITER,
            ls_rank_tol: DEFAULT_RANK_TOL,
            cycle_guard: true,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn validate(&self, design: &StandardizedDesign) -> Result<()> {
        let limit = (design.n() - 1).min(design.p());
        if self.support_size == 0 || self.support_size > limit {
            return Err(AftError::InvalidConfig(format!(
                "support size T={} must lie in 1..={limit} (min(n-1, retained p))",
                self.support_size
            )));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(AftError::InvalidConfig(format!(
                "step size tau={} must lie in (0, 1]",
                self.tau
            )));
        }
        if self.max_iter == 0 {
            return Err(AftError::InvalidConfig("max_iter must be positive".into()));
        }
        if !(self.ls_rank_tol >= 0.0) {
            return Err(AftError::InvalidConfig("ls_rank_tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    ActiveSetRepeat,
    MaxIter,
    CycleDetected,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::ActiveSetRepeat => "ActiveSetRepeat",
            Termination::MaxIter => "MaxIter",
            Termination::CycleDetected => "CycleDetected",
        }
    }
}

/// Result of one solver run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdarFit {
    /// Normalized-scale coefficients over the retained columns.
    pub eta: Vec<f64>,
    /// Original-scale coefficients (length p_original).
    pub beta: Vec<f64>,
    /// Final dual, exactly zero on `active_set`.
    pub dual: Vec<f64>,
    /// Sorted indices into the retained columns.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub termination: Termination,
    /// Normalized loss at the start and after every iteration.
    pub loss_trace: Vec<f64>,
    pub kkt_gap: f64,
}

impl SdarFit {
    /// Active set expressed as original column indices.
    pub fn original_active_set(&self, design: &StandardizedDesign) -> Vec<usize> {
        self.active_set.iter().map(|&j| design.retained[j]).collect()
    }

    pub fn support_len(&self) -> usize {
        self.eta.iter().filter(|v| **v != 0.0).count()
    }
}

/// Hard thresholding operator at level `sqrt(2 lambda)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardThresholdRule {
    pub lambda: f64,
}

impl HardThresholdRule {
    pub fn threshold(&self) -> f64 {
        (2.0 * self.lambda).sqrt()
    }
}

/// Keeps entries with `|v_i| >= sqrt(2 lambda)`, zeroes the rest.
pub fn hard_threshold(v: &[f64], rule: HardThresholdRule) -> Vec<f64> {
    let t = rule.threshold();
    v.iter().map(|&x| if x.abs() >= t { x } else { 0.0 }).collect()
}

/// Orders candidates by descending score, lowest index first on ties.
fn rank_desc(scores: &[f64], a: usize, b: usize) -> std::cmp::Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

fn top_indices(scores: &[f64], mut candidates: Vec<usize>, k: usize) -> Vec<usize> {
    if k < candidates.len() {
        if k > 0 {
            candidates.select_nth_unstable_by(k - 1, |&a, &b| rank_desc(scores, a, b));
        }
        candidates.truncate(k);
    }
    candidates.sort_unstable();
    candidates
}

/// Indices of the `t` largest `|eta_i + tau d_i|` (sorted ascending) and the
/// complement.
pub fn select_active_set(
    eta: &[f64],
    d: &[f64],
    tau: f64,
    t: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let p = eta.len();
    if d.len() != p {
        return Err(AftError::InvalidInput(format!(
            "primal has length {p}, dual has length {}",
            d.len()
        )));
    }
    if t > p {
        return Err(AftError::InvalidInput(format!(
            "support size {t} exceeds dimension {p}"
        )));
    }
    let scores: Vec<f64> = eta.iter().zip(d).map(|(e, g)| (e + tau * g).abs()).collect();
    let active = top_indices(&scores, (0..p).collect(), t);
    Ok((active.clone(), complement(&active, p)))
}

fn complement(sorted: &[usize], p: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(p - sorted.len());
    let mut it = sorted.iter().peekable();
    for i in 0..p {
        if it.peek() == Some(&&i) {
            it.next();
        } else {
            out.push(i);
        }
    }
    out
}

/// Least squares `min ||Ybar - Xbar_A u||`. Falls back to the minimum-norm
/// solution when the Gram matrix is singular at `rank_tol`.
pub fn solve_active_least_squares(
    design: &StandardizedDesign,
    active: &[usize],
    rank_tol: f64,
) -> Result<Vec<f64>> {
    let n = design.n();
    if active.len() > n {
        return Err(AftError::OverdeterminedSupport {
            active: active.len(),
            rows: n,
        });
    }
    if active.is_empty() {
        return Ok(Vec::new());
    }
    let xa = design.xbar.select_columns(active);
    let gram = xa.tr_mul(&xa);
    let rhs = xa.tr_mul(&design.ybar);

    let max_diag = gram.diagonal().max();
    if let Some(chol) = Cholesky::new(gram.clone()) {
        let min_pivot = chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v * v)
            .fold(f64::INFINITY, f64::min);
        if min_pivot > rank_tol * max_diag {
            return Ok(chol.solve(&rhs).iter().copied().collect());
        }
    }
    Ok(pinv_solve(gram, &rhs, rank_tol).iter().copied().collect())
}

/// `pinv(G) b` for symmetric positive semidefinite `G`; equals the
/// minimum-norm least squares solution when `G = X'X`, `b = X'y`.
fn pinv_solve(gram: DMatrix<f64>, rhs: &DVector<f64>, rank_tol: f64) -> DVector<f64> {
    let eig = SymmetricEigen::new(gram);
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cutoff = rank_tol * lmax;
    let coords = eig.eigenvectors.tr_mul(rhs);
    let mut scaled = DVector::zeros(coords.len());
    for i in 0..coords.len() {
        let l = eig.eigenvalues[i];
        if l > cutoff && l > 0.0 {
            scaled[i] = coords[i] / l;
        }
    }
    &eig.eigenvectors * scaled
}

/// `d = Xbar'(Ybar - Xbar eta)/n` with `d` set to exactly zero on `active`.
pub fn update_dual(design: &StandardizedDesign, eta: &[f64], active: &[usize]) -> Vec<f64> {
    let r = design.residual(eta);
    let mut d = full_dual(design, &r);
    for &j in active {
        d[j] = 0.0;
    }
    d
}

fn full_dual(design: &StandardizedDesign, residual: &DVector<f64>) -> Vec<f64> {
    let n = design.n() as f64;
    design.xbar.tr_mul(residual).iter().map(|v| v / n).collect()
}

/// Primal/dual iterate of the solver.
#[derive(Debug, Clone)]
pub struct SdarState {
    pub eta: Vec<f64>,
    pub dual: Vec<f64>,
    /// Active set detected from `(eta, dual)`, to be solved on next.
    pub active: Vec<usize>,
    pub k: usize,
}

/// Step-by-step driver; `sdar_fit` runs it to termination.
pub struct SdarIter<'a> {
    design: &'a StandardizedDesign,
    config: SdarConfig,
    state: SdarState,
    solved_on: Vec<usize>,
    seen: HashSet<Vec<usize>>,
    loss_trace: Vec<f64>,
    done: Option<Termination>,
}

impl<'a> SdarIter<'a> {
    /// Starts from `eta0` (zero when `None`). The dual defaults to the full
    /// negative gradient at `eta0`.
    pub fn new(
        design: &'a StandardizedDesign,
        config: SdarConfig,
        eta0: Option<&[f64]>,
        d0: Option<&[f64]>,
    ) -> Result<Self> {
        config.validate(design)?;
        let p = design.p();
        let eta = match eta0 {
            Some(e) if e.len() != p => {
                return Err(AftError::InvalidInput(format!(
                    "initial eta has length {}, design retains {p} columns",
                    e.len()
                )))
            }
            Some(e) => e.to_vec(),
            None => vec![0.0; p],
        };
        let residual = design.residual(&eta);
        let dual = match d0 {
            Some(d) if d.len() != p => {
                return Err(AftError::InvalidInput(format!(
                    "initial dual has length {}, design retains {p} columns",
                    d.len()
                )))
            }
            Some(d) => d.to_vec(),
            None => full_dual(design, &residual),
        };
        let loss0 = residual.norm_squared() / (2.0 * design.n() as f64);
        let (active, _) = select_active_set(&eta, &dual, config.tau, config.support_size)?;
        Ok(Self {
            design,
            config,
            state: SdarState {
                eta,
                dual,
                active,
                k: 0,
            },
            solved_on: Vec::new(),
            seen: HashSet::new(),
            loss_trace: vec![loss0],
            done: None,
        })
    }

    pub fn state(&self) -> &SdarState {
        &self.state
    }

    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn termination(&self) -> Option<Termination> {
        self.done
    }

    /// One root-finding solve on the current active set followed by support
    /// detection. Returns the termination reason once the run has ended.
    pub fn step(&mut self) -> Result<Option<Termination>> {
        if self.done.is_some() {
            return Ok(self.done);
        }
        let design = self.design;
        let active = std::mem::take(&mut self.state.active);
        let coef = solve_active_least_squares(design, &active, self.config.ls_rank_tol)?;

        let mut eta = vec![0.0; design.p()];
        for (&j, &v) in active.iter().zip(&coef) {
            eta[j] = v;
        }
        let residual = design.residual(&eta);
        let mut dual = full_dual(design, &residual);
        for &j in &active {
            dual[j] = 0.0;
        }
        self.loss_trace
            .push(residual.norm_squared() / (2.0 * design.n() as f64));
        self.state.k += 1;

        let (next, _) = select_active_set(&eta, &dual, self.config.tau, self.config.support_size)?;
        self.state.eta = eta;
        self.state.dual = dual;

        if next == active {
            self.done = Some(Termination::ActiveSetRepeat);
        } else if self.config.cycle_guard && self.seen.contains(&next) {
            self.done = Some(Termination::CycleDetected);
        } else if self.state.k >= self.config.max_iter {
            self.done = Some(Termination::MaxIter);
        }
        self.seen.insert(active.clone());
        self.solved_on = active;
        self.state.active = next;
        Ok(self.done)
    }

    pub fn run(mut self) -> Result<SdarFit> {
        while self.step()?.is_none() {}
        self.into_fit()
    }

    fn into_fit(self) -> Result<SdarFit> {
        let termination = self.done.unwrap_or(Termination::MaxIter);
        let kkt_gap = kkt_residual(
            self.design,
            &self.state.eta,
            self.config.tau,
            self.config.support_size,
        );
        let beta = coefficients_to_original_scale(&self.state.eta, self.design)?;
        Ok(SdarFit {
            eta: self.state.eta,
            beta,
            dual: self.state.dual,
            active_set: self.solved_on,
            iterations: self.state.k,
            termination,
            loss_trace: self.loss_trace,
            kkt_gap,
        })
    }
}

/// Runs the solver from `eta0` (zero by default).
pub fn sdar_fit(
    design: &StandardizedDesign,
    config: &SdarConfig,
    eta0: Option<&[f64]>,
) -> Result<SdarFit> {
    SdarIter::new(design, config.clone(), eta0, None)?.run()
}

/// Runs the solver from a previous primal/dual pair, as the adaptive tuner
/// does when it enlarges `T`.
pub fn sdar_fit_warm(
    design: &StandardizedDesign,
    config: &SdarConfig,
    eta0: &[f64],
    d0: &[f64],
) -> Result<SdarFit> {
    SdarIter::new(design, config.clone(), Some(eta0), Some(d0))?.run()
}

/// Distance of `eta` from being a fixed point of the iteration.
///
/// With `d` the full dual at `eta` and `A` the support of `eta` padded to
/// `T` indices by the largest remaining `|tau d_i|`, returns
/// `max(||d_A||_inf, max(0, max_{i not in A} s_i - min_{i in A} s_i))` where
/// `s = |eta + tau d|`. Zero iff `eta` is least squares on `A` and `A` is the
/// detected support. Supports larger than `T` return infinity.
pub fn kkt_residual(design: &StandardizedDesign, eta: &[f64], tau: f64, t: usize) -> f64 {
    let p = design.p();
    if eta.len() != p {
        return f64::INFINITY;
    }
    let support: Vec<usize> = (0..p).filter(|&i| eta[i] != 0.0).collect();
    if support.len() > t || t > p {
        return f64::INFINITY;
    }
    let d = full_dual(design, &design.residual(eta));
    let scores: Vec<f64> = eta.iter().zip(&d).map(|(e, g)| (e + tau * g).abs()).collect();

    let rest = complement(&support, p);
    let padding = top_indices(&scores, rest, t - support.len());
    let mut active = support;
    active.extend(padding);
    active.sort_unstable();

    let stationarity = active.iter().map(|&i| d[i].abs()).fold(0.0, f64::max);
    let min_in = active.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
    let max_out = complement(&active, p)
        .iter()
        .map(|&i| scores[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let ordering = if active.is_empty() || max_out == f64::NEG_INFINITY {
        0.0
    } else {
        (max_out - min_in).max(0.0)
    };
    stationarity.max(ordering)
}
