//! Censored observations, Kaplan-Meier jump weights and the weighted,
//! column-normalized design consumed by every solver.
//!
//! The weighted least squares loss
//! `sum_i w_(i) (Y_(i) - x_(i)' beta)^2 / (2n)` is rewritten as an ordinary
//! least squares loss on `Ybar = diag(sqrt w) Y` and
//! `Xbar = diag(sqrt w) X D`, where `D` rescales every column of the weighted
//! design to Euclidean length `sqrt(n)`. Coefficients on the normalized scale
//! (`eta`) map back through `beta = D eta`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{AftError, Result};

/// Relative threshold below which a weighted column norm counts as zero.
pub const ZERO_COLUMN_TOL: f64 = 1e-12;

/// Observed log-times, event indicators and covariates.
#[derive(Debug, Clone)]
pub struct SurvivalDataset {
    y: Vec<f64>,
    event: Vec<bool>,
    x: DMatrix<f64>,
    feature_names: Option<Vec<String>>,
}

impl SurvivalDataset {
    pub fn new(
        y: Vec<f64>,
        event: Vec<bool>,
        x: DMatrix<f64>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(AftError::InvalidInput(format!(
                "need at least 2 observations, found {n}"
            )));
        }
        if event.len() != n || x.nrows() != n {
            return Err(AftError::InvalidInput(format!(
                "length mismatch: y has {n} entries, status has {}, X has {} rows",
                event.len(),
                x.nrows()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(AftError::InvalidInput(format!(
                "observed log-time at row {i} is not finite"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(AftError::InvalidInput(
                "covariate matrix contains non-finite entries".into(),
            ));
        }
        if let Some(names) = &feature_names {
            if names.len() != x.ncols() {
                return Err(AftError::InvalidInput(format!(
                    "{} feature names for {} covariate columns",
                    names.len(),
                    x.ncols()
                )));
            }
        }
        Ok(Self {
            y,
            event,
            x,
            feature_names,
        })
    }

    /// Build from 0/1 status codes instead of booleans.
    pub fn from_status(
        y: Vec<f64>,
        status: &[u8],
        x: DMatrix<f64>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let event = status
            .iter()
            .enumerate()
            .map(|(i, &s)| match s {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(AftError::InvalidInput(format!(
                    "status at row {i} must be 0 or 1, found {other}"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(y, event, x, feature_names)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn events(&self) -> &[bool] {
        &self.event
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Label for column `j`, falling back to `x{j+1}`.
    pub fn feature_name(&self, j: usize) -> String {
        match &self.feature_names {
            Some(names) => names[j].clone(),
            None => format!("x{}", j + 1),
        }
    }

    pub fn event_count(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }

    /// Rows `rows` (in the given order) as a new dataset.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let event = rows.iter().map(|&i| self.event[i]).collect();
        let x = self.x.select_rows(rows);
        Self::new(y, event, x, self.feature_names.clone())
    }
}

/// A dataset reordered by observed log-time.
#[derive(Debug, Clone)]
pub struct SortedSample {
    pub order: Vec<usize>,
    pub y: Vec<f64>,
    pub event: Vec<bool>,
    pub x: DMatrix<f64>,
}

impl SortedSample {
    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// Sort by observed log-time. At tied times events precede censorings;
/// otherwise the original order is kept.
pub fn sort_by_observed_time(dataset: &SurvivalDataset) -> Result<SortedSample> {
    if dataset.y.iter().any(|v| !v.is_finite()) {
        return Err(AftError::InvalidInput(
            "observed log-times must be finite".into(),
        ));
    }
    let mut order: Vec<usize> = (0..dataset.n()).collect();
    order.sort_by(|&a, &b| {
        dataset.y[a]
            .total_cmp(&dataset.y[b])
            .then_with(|| dataset.event[b].cmp(&dataset.event[a]))
            .then_with(|| a.cmp(&b))
    });
    Ok(SortedSample {
        y: order.iter().map(|&i| dataset.y[i]).collect(),
        event: order.iter().map(|&i| dataset.event[i]).collect(),
        x: dataset.x.select_rows(&order),
        order,
    })
}

/// Kaplan-Meier jumps attached to the sorted observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmWeights {
    pub w: Vec<f64>,
}

/// Jumps of the product-limit estimator, computed by the closed form
/// `w_(i) = delta_(i)/(n-i+1) * prod_{j<i} ((n-j)/(n-j+1))^delta_(j)`.
pub fn kaplan_meier_weights(sample: &SortedSample) -> KmWeights {
    km_jumps(&sample.event)
}

pub(crate) fn km_jumps(event_sorted: &[bool]) -> KmWeights {
    let n = event_sorted.len();
    let mut w = vec![0.0; n];
    let mut carry = 1.0;
    for (i, &ev) in event_sorted.iter().enumerate() {
        if ev {
            let at_risk = (n - i) as f64;
            w[i] = carry / at_risk;
            carry *= (at_risk - 1.0) / at_risk;
        }
    }
    KmWeights { w }
}

/// Weighted, column-normalized design together with the rescaling that maps
/// normalized coefficients back to the covariate scale.
#[derive(Debug, Clone)]
pub struct StandardizedDesign {
    /// n x p_retained, column-major, every column of length sqrt(n).
    pub xbar: DMatrix<f64>,
    pub ybar: DVector<f64>,
    /// Diagonal of D for the retained columns.
    pub d_scale: Vec<f64>,
    /// Original column index of every retained column.
    pub retained: Vec<usize>,
    pub dropped_columns: Vec<usize>,
    /// Kaplan-Meier weights in sorted order.
    pub weights: Vec<f64>,
    pub p_original: usize,
}

impl StandardizedDesign {
    pub fn n(&self) -> usize {
        self.xbar.nrows()
    }

    pub fn p(&self) -> usize {
        self.xbar.ncols()
    }

    /// `Ybar - Xbar eta` for a vector over the retained columns.
    pub fn residual(&self, eta: &[f64]) -> DVector<f64> {
        let mut r = self.ybar.clone();
        for (j, &v) in eta.iter().enumerate() {
            if v != 0.0 {
                r.axpy(-v, &self.xbar.column(j), 1.0);
            }
        }
        r
    }

    /// Normalized loss `||Ybar - Xbar eta||^2 / (2n)`.
    pub fn loss(&self, eta: &[f64]) -> f64 {
        self.residual(eta).norm_squared() / (2.0 * self.n() as f64)
    }

    /// Map original-scale coefficients (length p_original) to the
    /// normalized scale. Dropped columns are discarded.
    pub fn beta_to_eta(&self, beta: &[f64]) -> Result<Vec<f64>> {
        if beta.len() != self.p_original {
            return Err(AftError::InvalidInput(format!(
                "beta has length {}, expected {}",
                beta.len(),
                self.p_original
            )));
        }
        Ok(self
            .retained
            .iter()
            .zip(&self.d_scale)
            .map(|(&j, &d)| beta[j] / d)
            .collect())
    }
}

pub fn build_standardized_design(
    sample: &SortedSample,
    weights: &KmWeights,
) -> Result<StandardizedDesign> {
    let n = sample.n();
    if weights.w.len() != n {
        return Err(AftError::InvalidInput(format!(
            "{} weights for {n} observations",
            weights.w.len()
        )));
    }
    let sqrt_w: Vec<f64> = weights.w.iter().map(|w| w.sqrt()).collect();
    let root_n = (n as f64).sqrt();
    let p = sample.x.ncols();

    let mut retained = Vec::with_capacity(p);
    let mut dropped = Vec::new();
    let mut d_scale = Vec::with_capacity(p);
    for j in 0..p {
        let col = sample.x.column(j);
        let norm = col
            .iter()
            .zip(&sqrt_w)
            .map(|(x, s)| (x * s) * (x * s))
            .sum::<f64>()
            .sqrt();
        if norm < ZERO_COLUMN_TOL * root_n {
            dropped.push(j);
        } else {
            retained.push(j);
            d_scale.push(root_n / norm);
        }
    }
    if retained.is_empty() {
        return Err(AftError::DegenerateDesign(
            "every covariate column has zero Kaplan-Meier weighted norm".into(),
        ));
    }

    let xbar = DMatrix::from_fn(n, retained.len(), |i, k| {
        sqrt_w[i] * sample.x[(i, retained[k])] * d_scale[k]
    });
    let ybar = DVector::from_iterator(n, sample.y.iter().zip(&sqrt_w).map(|(y, s)| s * y));

    Ok(StandardizedDesign {
        xbar,
        ybar,
        d_scale,
        retained,
        dropped_columns: dropped,
        weights: weights.w.clone(),
        p_original: p,
    })
}

/// Sort, weight and normalize in one step.
pub fn prepare_design(dataset: &SurvivalDataset) -> Result<StandardizedDesign> {
    let sample = sort_by_observed_time(dataset)?;
    let weights = kaplan_meier_weights(&sample);
    build_standardized_design(&sample, &weights)
}

/// `beta_j = d_j * eta_j` on retained columns, zero on dropped ones.
pub fn coefficients_to_original_scale(eta: &[f64], design: &StandardizedDesign) -> Result<Vec<f64>> {
    if eta.len() != design.p() {
        return Err(AftError::InvalidInput(format!(
            "eta has length {}, design retains {} columns",
            eta.len(),
            design.p()
        )));
    }
    let mut beta = vec![0.0; design.p_original];
    for ((&j, &d), &e) in design.retained.iter().zip(&design.d_scale).zip(eta) {
        beta[j] = d * e;
    }
    Ok(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(y: &[f64], delta: &[u8], x: DMatrix<f64>) -> SurvivalDataset {
        SurvivalDataset::from_status(y.to_vec(), delta, x, None).unwrap()
    }

    /// Product-limit survival curve, then differences at each position.
    fn km_oracle(event_sorted: &[bool]) -> Vec<f64> {
        let n = event_sorted.len();
        let mut surv_prev = 1.0;
        let mut out = Vec::with_capacity(n);
        for (i, &ev) in event_sorted.iter().enumerate() {
            let at_risk = (n - i) as f64;
            let surv = if ev { surv_prev * (1.0 - 1.0 / at_risk) } else { surv_prev };
            out.push(surv_prev - surv);
            surv_prev = surv;
        }
        out
    }

    #[test]
    fn sorts_by_time() {
        let d = dataset(&[3.0, 1.0, 2.0], &[1, 1, 1], DMatrix::zeros(3, 1));
        let s = sort_by_observed_time(&d).unwrap();
        assert_eq!(s.order, vec![1, 2, 0]);
        assert_eq!(s.y, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn event_precedes_censoring_at_tie() {
        let d = dataset(&[2.0, 2.0], &[0, 1], DMatrix::zeros(2, 1));
        assert_eq!(sort_by_observed_time(&d).unwrap().order, vec![1, 0]);
    }

    #[test]
    fn mixed_ties_match_enumerated_order() {
        // Among the 24 permutations, exactly one is non-decreasing in y,
        // puts events first at ties and is stable otherwise.
        let y = [5.0, 1.0, 5.0, 3.0];
        let delta = [1u8, 0, 0, 1];
        let mut valid = Vec::new();
        let idx = [0usize, 1, 2, 3];
        for a in idx {
            for b in idx {
                for c in idx {
                    for d in idx {
                        let perm = [a, b, c, d];
                        let mut seen = [false; 4];
                        perm.iter().for_each(|&i| seen[i] = true);
                        if !seen.iter().all(|&s| s) {
                            continue;
                        }
                        let ok = perm.windows(2).all(|w| {
                            let (i, j) = (w[0], w[1]);
                            y[i] < y[j]
                                || (y[i] == y[j]
                                    && (delta[i] > delta[j] || (delta[i] == delta[j] && i < j)))
                        });
                        if ok {
                            valid.push(perm.to_vec());
                        }
                    }
                }
            }
        }
        assert_eq!(valid, vec![vec![1, 3, 0, 2]]);
        let ds = dataset(&y, &delta, DMatrix::zeros(4, 1));
        assert_eq!(sort_by_observed_time(&ds).unwrap().order, valid[0]);
    }

    #[test]
    fn sorted_rows_follow_order() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let d = dataset(&[3.0, 1.0, 2.0], &[1, 0, 1], x.clone());
        let s = sort_by_observed_time(&d).unwrap();
        for (k, &i) in s.order.iter().enumerate() {
            assert_eq!(s.x.row(k), x.row(i));
            assert_eq!(s.event[k], d.events()[i]);
        }
    }

    #[test]
    fn rejects_bad_datasets() {
        assert!(SurvivalDataset::from_status(vec![1.0], &[1], DMatrix::zeros(1, 1), None).is_err());
        assert!(
            SurvivalDataset::from_status(vec![1.0, 2.0], &[1, 2], DMatrix::zeros(2, 1), None)
                .is_err()
        );
        assert!(SurvivalDataset::from_status(
            vec![1.0, f64::NAN],
            &[1, 1],
            DMatrix::zeros(2, 1),
            None
        )
        .is_err());
        assert!(
            SurvivalDataset::from_status(vec![1.0, 2.0], &[1, 1], DMatrix::zeros(3, 1), None)
                .is_err()
        );
    }

    #[test]
    fn first_weight_is_one_over_n() {
        let w = km_jumps(&[true, false, true, true, false]);
        assert_eq!(w.w[0], 1.0 / 5.0);
    }

    #[test]
    fn uncensored_weights_are_uniform() {
        let w = km_jumps(&[true; 3]);
        for v in w.w {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_for_single_censoring() {
        let w = km_jumps(&[true, false, true, true]);
        let oracle = km_oracle(&[true, false, true, true]);
        let expected = [0.25, 0.0, 0.375, 0.375];
        for i in 0..4 {
            assert!((w.w[i] - expected[i]).abs() < 1e-15);
            assert!((oracle[i] - expected[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_column_example() {
        let sample = SortedSample {
            order: vec![0, 1],
            y: vec![0.0, 1.0],
            event: vec![true, true],
            x: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
        };
        let w = kaplan_meier_weights(&sample);
        let des = build_standardized_design(&sample, &w).unwrap();
        assert!((des.d_scale[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((des.xbar[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((des.xbar[(1, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn censored_row_contributes_nothing() {
        let sample = SortedSample {
            order: vec![0, 1, 2, 3],
            y: vec![0.0, 1.0, 2.0, 3.0],
            event: vec![true, false, true, true],
            x: DMatrix::from_column_slice(4, 1, &[1.0, 9.0, 2.0, 2.0]),
        };
        let w = kaplan_meier_weights(&sample);
        let des = build_standardized_design(&sample, &w).unwrap();
        // ||x~||^2 = 0.25 + 0 + 1.5 + 1.5
        let norm_sq: f64 = 3.25;
        assert!((des.d_scale[0] - 2.0 / norm_sq.sqrt()).abs() < 1e-14);
        assert_eq!(des.xbar[(1, 0)], 0.0);
    }

    #[test]
    fn zero_weight_columns_are_dropped() {
        // Column 1 is nonzero only on the censored row.
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 5.0, 3.0, 0.0]);
        let d = dataset(&[1.0, 2.0, 3.0], &[1, 0, 1], x);
        let des = prepare_design(&d).unwrap();
        assert_eq!(des.retained, vec![0]);
        assert_eq!(des.dropped_columns, vec![1]);
        let beta = coefficients_to_original_scale(&[0.5], &des).unwrap();
        assert_eq!(beta[1], 0.0);
        assert!(beta[0] != 0.0);
    }

    #[test]
    fn all_columns_dropped_is_degenerate() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 5.0, 0.0]);
        let d = dataset(&[1.0, 2.0, 3.0], &[1, 0, 1], x);
        assert!(matches!(
            prepare_design(&d),
            Err(AftError::DegenerateDesign(_))
        ));
    }

    #[test]
    fn original_scale_mapping() {
        let des = StandardizedDesign {
            xbar: DMatrix::zeros(2, 2),
            ybar: DVector::zeros(2),
            d_scale: vec![2.0, 3.0],
            retained: vec![0, 1],
            dropped_columns: vec![],
            weights: vec![0.5, 0.5],
            p_original: 2,
        };
        assert_eq!(coefficients_to_original_scale(&[0.0, 0.0], &des).unwrap(), vec![0.0, 0.0]);
        assert_eq!(coefficients_to_original_scale(&[1.0, 0.0], &des).unwrap(), vec![2.0, 0.0]);
        assert!(coefficients_to_original_scale(&[1.0], &des).is_err());
        let eta = [0.3, -1.7];
        let beta = coefficients_to_original_scale(&eta, &des).unwrap();
        let back = des.beta_to_eta(&beta).unwrap();
        for (a, b) in eta.iter().zip(&back) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    fn sample_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, Vec<f64>)> {
        (2usize..20).prop_flat_map(|n| {
            (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(-3.0f64..3.0, n * 3),
            )
        })
    }

    proptest! {
        #[test]
        fn weights_match_product_limit((y, ev, _x) in sample_strategy()) {
            let n = y.len();
            let d = SurvivalDataset::new(y, ev, DMatrix::zeros(n, 1), None).unwrap();
            let s = sort_by_observed_time(&d).unwrap();
            let w = kaplan_meier_weights(&s);
            let oracle = km_oracle(&s.event);
            let mut total = 0.0;
            for i in 0..n {
                prop_assert!((w.w[i] - oracle[i]).abs() < 1e-12);
                prop_assert!(w.w[i] >= 0.0);
                if !s.event[i] { prop_assert_eq!(w.w[i], 0.0); }
                total += w.w[i];
            }
            prop_assert!(total <= 1.0 + 1e-12);
            if *s.event.last().unwrap() {
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
            prop_assert!(s.y.windows(2).all(|p| p[0] <= p[1]));
        }

        #[test]
        fn column_norms_are_root_n((y, ev, xs) in sample_strategy()) {
            let n = y.len();
            let mut ev = ev;
            ev[0] = true;
            let x = DMatrix::from_column_slice(n, 3, &xs);
            let d = SurvivalDataset::new(y, ev, x, None).unwrap();
            if let Ok(des) = prepare_design(&d) {
                let root_n = (n as f64).sqrt();
                for j in 0..des.p() {
                    let norm = des.xbar.column(j).norm();
                    prop_assert!(((norm - root_n) / root_n).abs() < 1e-10);
                    prop_assert!(des.d_scale[j] > 0.0);
                }
            }
        }

        #[test]
        fn positive_column_rescaling_leaves_design_unchanged(
            (y, ev, xs) in sample_strategy(),
            scale in prop::collection::vec(0.01f64..100.0, 3),
        ) {
            let n = y.len();
            let mut ev = ev;
            ev[n - 1] = true;
            let x = DMatrix::from_column_slice(n, 3, &xs);
            let mut xs2 = x.clone();
            for j in 0..3 { xs2.column_mut(j).scale_mut(scale[j]); }
            let a = prepare_design(&SurvivalDataset::new(y.clone(), ev.clone(), x, None).unwrap());
            let b = prepare_design(&SurvivalDataset::new(y, ev, xs2, None).unwrap());
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert_eq!(&a.retained, &b.retained);
                for (u, v) in a.xbar.iter().zip(b.xbar.iter()) {
                    prop_assert!((u - v).abs() < 1e-12 * (1.0 + u.abs()));
                }
            }
        }
    }
}
