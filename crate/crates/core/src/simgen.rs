//! Synthetic designs, sparse coefficients and censored responses.
//!
//! All randomness comes from ChaCha20 streams keyed by `(seed, stream)`, so
//! every output is a pure function of its arguments.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{AftError, Result};
use crate::survival_data::SurvivalDataset;

/// Surrogate draws used to estimate the censoring rate during calibration.
pub const CALIBRATION_DRAWS: usize = 50_000;
/// Accepted gap between the estimated and the target censoring rate.
pub const CALIBRATION_TOL: f64 = 0.01;
pub const CALIBRATION_MAX_STEPS: usize = 60;

const STREAM_DESIGN: u64 = 1;
const STREAM_COEF: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_CENSOR: u64 = 4;
const STREAM_CALIBRATION: u64 = 5;

/// Independent generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer, used to derive per-replication seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// `x_j = z_j + rho (z_{j-1} + z_{j+1})` for interior columns.
    NeighborCorrelated,
    /// Rows i.i.d. `N(0, Sigma)` with `Sigma_ij = rho^|i-j|`.
    Ar1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CoefKind {
    /// Magnitudes in `(m1, 100 m1)` with `m1 = sigma sqrt(2 log p / n)`.
    LogScaled,
    /// Magnitudes in `(1, ratio)`.
    RatioScaled { ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub rho: f64,
    pub sigma: f64,
    pub censor_rate: f64,
    pub design: DesignKind,
    pub coef: CoefKind,
    /// Draw coefficient signs uniformly instead of keeping them positive.
    #[serde(default)]
    pub random_signs: bool,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AftError::InvalidConfig(m));
        if self.n < 2 {
            return bad(format!("n={} must be at least 2", self.n));
        }
        if self.p < 2 {
            return bad(format!("p={} must be at least 2", self.p));
        }
        if self.k == 0 || self.k > self.p {
            return bad(format!("K={} must lie in 1..={}", self.k, self.p));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho={} must lie in [0, 1)", self.rho));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma={} must be finite and non-negative", self.sigma));
        }
        if !(0.0..1.0).contains(&self.censor_rate) {
            return bad(format!("censoring rate {} must lie in [0, 1)", self.censor_rate));
        }
        match self.coef {
            CoefKind::LogScaled if self.sigma == 0.0 => bad(
                "log-scaled coefficients need sigma > 0 (their range is proportional to sigma)"
                    .into(),
            ),
            CoefKind::RatioScaled { ratio } if !(ratio >= 1.0 && ratio.is_finite()) => {
                bad(format!("coefficient ratio R={ratio} must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    /// `(m1, m2)` bounds of the nonzero magnitudes.
    pub fn magnitude_range(&self) -> (f64, f64) {
        match self.coef {
            CoefKind::LogScaled => {
                let m1 = self.sigma * (2.0 * (self.p as f64).ln() / self.n as f64).sqrt();
                (m1, 100.0 * m1)
            }
            CoefKind::RatioScaled { ratio } => (1.0, ratio),
        }
    }

    /// Copy with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// A generated dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedInstance {
    pub dataset: SurvivalDataset,
    pub beta_star: Vec<f64>,
    pub true_support: Vec<usize>,
    pub realized_censor_rate: f64,
    /// Upper bound of the censoring uniform; `None` when censoring is off.
    pub eta_c: Option<f64>,
    /// `ln eta_c`, kept separately because `eta_c` may overflow.
    pub log_eta_c: Option<f64>,
}

fn standard_normal(rng: &mut ChaCha20Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gen_design_neighbor(n: usize, p: usize, rho: f64, seed: u64) -> Result<DMatrix<f64>> {
    if p < 2 {
        return Err(AftError::InvalidInput("neighbor design needs p >= 2".into()));
    }
    let mut rng = stream_rng(seed, STREAM_DESIGN);
    let z = DMatrix::from_fn(n, p, |_, _| standard_normal(&mut rng));
    if rho == 0.0 {
        return Ok(z);
    }
    Ok(DMatrix::from_fn(n, p, |i, j| {
        if j == 0 || j == p - 1 {
            z[(i, j)]
        } else {
            z[(i, j)] + rho * (z[(i, j + 1)] + z[(i, j - 1)])
        }
    }))
}

pub fn gen_design_ar1(n: usize, p: usize, rho: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(AftError::InvalidInput(format!("AR(1) design needs |rho| < 1, got {rho}")));
    }
    let mut rng = stream_rng(seed, STREAM_DESIGN);
    let innovation = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut prev = standard_normal(&mut rng);
        x[(i, 0)] = prev;
        for j in 1..p {
            prev = rho * prev + innovation * standard_normal(&mut rng);
            x[(i, j)] = prev;
        }
    }
    Ok(x)
}

pub fn gen_design(spec: &ScenarioSpec) -> Result<DMatrix<f64>> {
    match spec.design {
        DesignKind::NeighborCorrelated => gen_design_neighbor(spec.n, spec.p, spec.rho, spec.seed),
        DesignKind::Ar1 => gen_design_ar1(spec.n, spec.p, spec.rho, spec.seed),
    }
}

/// `(beta_star, sorted true support)`.
pub fn gen_coefficients(spec: &ScenarioSpec) -> Result<(Vec<f64>, Vec<usize>)> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, STREAM_COEF);
    let (m1, m2) = spec.magnitude_range();
    let picked = sample_indices(&mut rng, spec.p, spec.k).into_vec();
    let mut beta = vec![0.0; spec.p];
    for &j in &picked {
        let magnitude = if m2 > m1 { rng.random_range(m1..m2) } else { m1 };
        let sign = if spec.random_signs && rng.random_bool(0.5) { -1.0 } else { 1.0 };
        beta[j] = sign * magnitude;
    }
    let mut support = picked;
    support.sort_unstable();
    Ok((beta, support))
}

/// Finds the censoring bound `eta_c` such that `C ~ U(0, eta_c)` censors a
/// fraction `target_rate` of failure times `T = exp(x'beta + eps)`.
///
/// The failure-time law is represented by 50,000 surrogate draws that
/// resample rows of `x` and add fresh noise; the censoring uniforms are
/// drawn once, so the estimated rate is a monotone step function of
/// `ln eta_c` and plain bisection applies. Works on the log scale
/// throughout and returns `ln eta_c`.
pub fn calibrate_censoring(
    x: &DMatrix<f64>,
    beta_star: &[f64],
    sigma: f64,
    target_rate: f64,
    seed: u64,
) -> Result<f64> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(AftError::Calibration(format!(
            "target censoring rate {target_rate} is unreachable with uniform censoring on (0, eta); \
             use 0 to disable censoring"
        )));
    }
    if x.ncols() != beta_star.len() || x.nrows() == 0 {
        return Err(AftError::InvalidInput(format!(
            "design is {}x{}, beta has length {}",
            x.nrows(),
            x.ncols(),
            beta_star.len()
        )));
    }
    let linear = x * DVector::from_column_slice(beta_star);
    let mut rng = stream_rng(seed, STREAM_CALIBRATION);
    // Censored iff ln eta + ln u < ln T, i.e. ln eta < ln T - ln u.
    let thresholds: Vec<f64> = (0..CALIBRATION_DRAWS)
        .map(|_| {
            let row = rng.random_range(0..x.nrows());
            let log_t = linear[row] + sigma * standard_normal(&mut rng);
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            log_t - u.ln()
        })
        .collect();
    let rate_at = |log_eta: f64| {
        thresholds.iter().filter(|&&s| s > log_eta).count() as f64 / CALIBRATION_DRAWS as f64
    };

    let mut lo = thresholds.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = thresholds.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let (mut rate_lo, mut rate_hi) = (rate_at(lo), rate_at(hi));
    for _ in 0..CALIBRATION_MAX_STEPS {
        let mid = 0.5 * (lo + hi);
        let rate = rate_at(mid);
        if !(rate_hi <= rate && rate <= rate_lo) {
            return Err(AftError::Calibration(
                "censoring rate is not monotone in eta".into(),
            ));
        }
        if (rate - target_rate).abs() <= CALIBRATION_TOL {
            return Ok(mid);
        }
        if rate > target_rate {
            lo = mid;
            rate_lo = rate;
        } else {
            hi = mid;
            rate_hi = rate;
        }
    }
    Err(AftError::Calibration(format!(
        "no censoring bound within {CALIBRATION_TOL} of rate {target_rate} after {CALIBRATION_MAX_STEPS} bisection steps"
    )))
}

/// Generate a full instance: design, coefficients, log failure times with
/// `N(0, sigma^2)` errors, and uniform censoring on the raw time scale.
/// Observed responses are `min(ln T, ln C)`.
pub fn gen_instance(spec: &ScenarioSpec) -> Result<SimulatedInstance> {
    spec.validate()?;
    let x = gen_design(spec)?;
    let (beta_star, true_support) = gen_coefficients(spec)?;

    let linear = &x * DVector::from_column_slice(&beta_star);
    let mut noise_rng = stream_rng(spec.seed, STREAM_NOISE);
    let log_t: Vec<f64> = linear
        .iter()
        .map(|m| m + spec.sigma * standard_normal(&mut noise_rng))
        .collect();

    let log_eta_c = if spec.censor_rate > 0.0 {
        Some(calibrate_censoring(
            &x,
            &beta_star,
            spec.sigma,
            spec.censor_rate,
            spec.seed,
        )?)
    } else {
        None
    };

    let (y, event): (Vec<f64>, Vec<bool>) = match log_eta_c {
        None => (log_t.clone(), vec![true; spec.n]),
        Some(log_eta) => {
            let mut rng = stream_rng(spec.seed, STREAM_CENSOR);
            log_t
                .iter()
                .map(|&lt| {
                    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                    let log_c = log_eta + u.ln();
                    if lt <= log_c {
                        (lt, true)
                    } else {
                        (log_c, false)
                    }
                })
                .unzip()
        }
    };
    let censored = event.iter().filter(|e| !**e).count();
    let dataset = SurvivalDataset::new(y, event, x, None)?;
    Ok(SimulatedInstance {
        dataset,
        beta_star,
        true_support,
        realized_censor_rate: censored as f64 / spec.n as f64,
        eta_c: log_eta_c.map(f64::exp),
        log_eta_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ScenarioSpec {
        ScenarioSpec {
            n: 200,
            p: 50,
            k: 5,
            rho: 0.3,
            sigma: 1.0,
            censor_rate: 0.3,
            design: DesignKind::NeighborCorrelated,
            coef: CoefKind::LogScaled,
            random_signs: false,
            seed: 17,
        }
    }

    fn column_stats(x: &DMatrix<f64>, a: usize, b: usize) -> (f64, f64, f64) {
        let n = x.nrows() as f64;
        let ma = x.column(a).sum() / n;
        let mb = x.column(b).sum() / n;
        let mut va = 0.0;
        let mut vb = 0.0;
        let mut cov = 0.0;
        for i in 0..x.nrows() {
            let da = x[(i, a)] - ma;
            let db = x[(i, b)] - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
        }
        (va / n, vb / n, cov / (va * vb).sqrt())
    }

    #[test]
    fn neighbor_rho_zero_is_plain_gaussian() {
        let a = gen_design_neighbor(50, 10, 0.0, 3).unwrap();
        let mut rng = stream_rng(3, STREAM_DESIGN);
        let z = DMatrix::from_fn(50, 10, |_, _| standard_normal(&mut rng));
        assert_eq!(a, z);
    }

    #[test]
    fn neighbor_variance_and_correlation() {
        let rho = 0.5;
        let x = gen_design_neighbor(10_000, 6, rho, 5).unwrap();
        let (v2, _, c23) = column_stats(&x, 2, 3);
        let var = 1.0 + 2.0 * rho * rho;
        assert!((v2 / var - 1.0).abs() < 0.05, "variance {v2}");
        assert!((c23 - 2.0 * rho / var).abs() < 0.03, "corr {c23}");
    }

    #[test]
    fn ar1_moments() {
        let rho = 0.6;
        let x = gen_design_ar1(10_000, 5, rho, 6).unwrap();
        let (v0, v2, c02) = column_stats(&x, 0, 2);
        assert!((v0 - 1.0).abs() < 0.05);
        assert!((v2 - 1.0).abs() < 0.05);
        assert!((c02 - rho * rho).abs() < 0.05);
        assert!(gen_design_ar1(10, 5, 1.0, 6).is_err());
    }

    #[test]
    fn ar1_rho_zero_has_unit_variance() {
        let x = gen_design_ar1(10_000, 3, 0.0, 8).unwrap();
        let (v0, v1, c) = column_stats(&x, 0, 1);
        assert!((v0 - 1.0).abs() < 0.05 && (v1 - 1.0).abs() < 0.05);
        assert!(c.abs() < 0.05);
    }

    #[test]
    fn coefficients_within_range() {
        let s = spec();
        let (beta, support) = gen_coefficients(&s).unwrap();
        let (m1, m2) = s.magnitude_range();
        assert_eq!(support.len(), s.k);
        assert_eq!(beta.iter().filter(|b| **b != 0.0).count(), s.k);
        for &j in &support {
            assert!(beta[j] > m1 && beta[j] < m2);
        }
        let ratio = ScenarioSpec {
            coef: CoefKind::RatioScaled { ratio: 10.0 },
            random_signs: true,
            ..s
        };
        let (beta, support) = gen_coefficients(&ratio).unwrap();
        for &j in &support {
            assert!(beta[j].abs() >= 1.0 && beta[j].abs() < 10.0);
        }
    }

    #[test]
    fn log_scaled_lower_bound() {
        let s = ScenarioSpec {
            n: 500,
            p: 10_000,
            ..spec()
        };
        let (m1, m2) = s.magnitude_range();
        assert!((m1 - 0.191_941).abs() < 1e-5);
        assert!((m2 / m1 - 100.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_hits_target() {
        let s = spec();
        let x = gen_design(&s).unwrap();
        let (beta, _) = gen_coefficients(&s).unwrap();
        let log_eta = calibrate_censoring(&x, &beta, 1.0, 0.3, 1).unwrap();
        // Re-estimate the rate with fresh draws from the same law.
        let linear = &x * DVector::from_column_slice(&beta);
        let mut rng = stream_rng(99, 0);
        let m = 100_000;
        let censored = (0..m)
            .filter(|_| {
                let row = rng.random_range(0..x.nrows());
                let lt = linear[row] + standard_normal(&mut rng);
                let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                log_eta + u.ln() < lt
            })
            .count();
        assert!((censored as f64 / m as f64 - 0.3).abs() < 0.015);
    }

    #[test]
    fn larger_bound_censors_less() {
        let s = spec();
        let x = gen_design(&s).unwrap();
        let (beta, _) = gen_coefficients(&s).unwrap();
        let mut last = f64::NEG_INFINITY;
        for target in [0.7, 0.5, 0.3, 0.1] {
            let log_eta = calibrate_censoring(&x, &beta, 1.0, target, 2).unwrap();
            assert!(log_eta > last);
            last = log_eta;
        }
    }

    #[test]
    fn zero_target_is_unreachable() {
        let s = spec();
        let x = gen_design(&s).unwrap();
        let (beta, _) = gen_coefficients(&s).unwrap();
        assert!(matches!(
            calibrate_censoring(&x, &beta, 1.0, 0.0, 2),
            Err(AftError::Calibration(_))
        ));
    }

    #[test]
    fn uncensored_instance() {
        let s = ScenarioSpec {
            censor_rate: 0.0,
            sigma: 0.0,
            coef: CoefKind::RatioScaled { ratio: 5.0 },
            ..spec()
        };
        let inst = gen_instance(&s).unwrap();
        assert!(inst.eta_c.is_none());
        assert_eq!(inst.realized_censor_rate, 0.0);
        assert!(inst.dataset.events().iter().all(|&e| e));
        let fitted = inst.dataset.x() * DVector::from_column_slice(&inst.beta_star);
        for (a, b) in fitted.iter().zip(inst.dataset.y()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn instances_are_deterministic() {
        let a = gen_instance(&spec()).unwrap();
        let b = gen_instance(&spec()).unwrap();
        assert_eq!(a.dataset.y(), b.dataset.y());
        assert_eq!(a.dataset.events(), b.dataset.events());
        assert_eq!(a.dataset.x(), b.dataset.x());
        assert_eq!(a.beta_star, b.beta_star);
        assert_eq!(a.log_eta_c, b.log_eta_c);
        let c = gen_instance(&spec().with_seed(18)).unwrap();
        assert_ne!(a.dataset.y(), c.dataset.y());
    }

    #[test]
    fn realized_rate_near_target() {
        let s = ScenarioSpec {
            n: 500,
            p: 100,
            k: 10,
            ..spec()
        };
        let inst = gen_instance(&s).unwrap();
        assert!((inst.realized_censor_rate - 0.3).abs() < 0.03);
        for (i, &ev) in inst.dataset.events().iter().enumerate() {
            if !ev {
                assert!(inst.dataset.y()[i] <= inst.log_eta_c.unwrap());
            }
        }
    }

    #[test]
    fn log_scaled_needs_noise() {
        let s = ScenarioSpec {
            sigma: 0.0,
            ..spec()
        };
        assert!(gen_instance(&s).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
