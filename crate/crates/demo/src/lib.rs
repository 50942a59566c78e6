//! Browser bindings. Each exported function takes plain numbers, returns a
//! JSON string, and reports failures as `{"error": "..."}`.

use aftsdar::bench::relative_error;
use aftsdar::simgen::{gen_instance, CoefKind, DesignKind, ScenarioSpec};
use aftsdar::survival_data::{kaplan_meier_weights, sort_by_observed_time};
use aftsdar::tuner::{asdar_path, TuningConfig};
use aftsdar::{prepare_design, sdar_fit, SdarConfig, SurvivalDataset};
use nalgebra::DMatrix;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Largest problem the page will attempt.
pub const MAX_CELLS: usize = 400_000;

fn to_json(result: Result<Value, String>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn scenario(n: usize, p: usize, k: usize, rho: f64, censor_rate: f64, seed: u64) -> Result<ScenarioSpec, String> {
    if n.saturating_mul(p) > MAX_CELLS {
        return Err(format!("n*p = {} exceeds the demo limit of {MAX_CELLS}", n * p));
    }
    Ok(ScenarioSpec {
        n,
        p,
        k,
        rho,
        sigma: 1.0,
        censor_rate,
        design: DesignKind::NeighborCorrelated,
        coef: CoefKind::RatioScaled { ratio: 10.0 },
        random_signs: true,
        seed,
    })
}

/// Kaplan-Meier jump weights for raw (positive) times, in input order, plus
/// the survival curve at each sorted observation.
pub fn km_weights_value(times: &[f64], status: &[u8]) -> Result<Value, String> {
    if times.iter().any(|t| !(*t > 0.0)) {
        return Err("times must be positive".into());
    }
    let y: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let n = y.len();
    let ds = SurvivalDataset::from_status(y, status, DMatrix::zeros(n, 1), None).map_err(|e| e.to_string())?;
    let sample = sort_by_observed_time(&ds).map_err(|e| e.to_string())?;
    let km = kaplan_meier_weights(&sample);
    let mut weights = vec![0.0; n];
    for (i, &orig) in sample.order.iter().enumerate() {
        weights[orig] = km.w[i];
    }
    let mut surv = 1.0;
    let curve: Vec<Value> = (0..n)
        .map(|i| {
            surv -= km.w[i];
            json!({ "time": times[sample.order[i]], "event": sample.event[i], "survival": surv.max(0.0) })
        })
        .collect();
    Ok(json!({ "weights": weights, "curve": curve }))
}

/// One simulated instance fitted at support size `t`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_and_fit_value(
    n: usize,
    p: usize,
    k: usize,
    rho: f64,
    censor_rate: f64,
    t: usize,
    tau: f64,
    seed: u64,
) -> Result<Value, String> {
    let spec = scenario(n, p, k, rho, censor_rate, seed)?;
    let inst = gen_instance(&spec).map_err(|e| e.to_string())?;
    let design = prepare_design(&inst.dataset).map_err(|e| e.to_string())?;
    let fit = sdar_fit(&design, &SdarConfig::new(t).with_tau(tau), None).map_err(|e| e.to_string())?;
    let re = relative_error(&fit.beta, &inst.beta_star).map_err(|e| e.to_string())?;
    Ok(json!({
        "beta_star": inst.beta_star,
        "beta_hat": fit.beta,
        "true_support": inst.true_support,
        "active_set": fit.original_active_set(&design),
        "iterations": fit.iterations,
        "termination": fit.termination.as_str(),
        "loss_trace": fit.loss_trace,
        "relative_error": re,
        "realized_censor_rate": inst.realized_censor_rate,
    }))
}

/// Warm-started HBIC path over T = 1..=max_support.
pub fn hbic_path_value(
    n: usize,
    p: usize,
    k: usize,
    rho: f64,
    censor_rate: f64,
    max_support: usize,
    seed: u64,
) -> Result<Value, String> {
    let spec = scenario(n, p, k, rho, censor_rate, seed)?;
    let inst = gen_instance(&spec).map_err(|e| e.to_string())?;
    let design = prepare_design(&inst.dataset).map_err(|e| e.to_string())?;
    let mut cfg = TuningConfig::for_sample_size(n, 1.0);
    cfg.max_support = max_support;
    let path = asdar_path(&design, &cfg).map_err(|e| e.to_string())?;
    let selected = path.selected_entry();
    Ok(json!({
        "support_sizes": path.support_sizes(),
        "scores": path.entries.iter().map(|e| e.score).collect::<Vec<_>>(),
        "selected_support_size": selected.support_size,
        "selected_active_set": selected.fit.original_active_set(&design),
        "true_support": inst.true_support,
    }))
}

#[wasm_bindgen]
pub fn km_weights(times: &[f64], status: &[u8]) -> String {
    to_json(km_weights_value(times, status))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate_and_fit(
    n: usize,
    p: usize,
    k: usize,
    rho: f64,
    censor_rate: f64,
    t: usize,
    tau: f64,
    seed: u32,
) -> String {
    to_json(simulate_and_fit_value(n, p, k, rho, censor_rate, t, tau, seed as u64))
}

#[wasm_bindgen]
pub fn hbic_path(n: usize, p: usize, k: usize, rho: f64, censor_rate: f64, max_support: usize, seed: u32) -> String {
    to_json(hbic_path_value(n, p, k, rho, censor_rate, max_support, seed as u64))
}
