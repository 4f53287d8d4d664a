//! Browser bindings: simulate a design, run the estimator, draw a quantile curve.
//!
//! Each export wraps a plain function that returns JSON, so the logic runs
//! and is tested without a JavaScript host.

use gradwatch::estimator::known_quantile_curve;
use gradwatch::harness::{generate, Design, DesignKind};
use gradwatch::{detect, Direction, FeatureSpec, Mode, PipelineConfig, TimeSeries};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Simulated {
    design: String,
    u0_true: f64,
    dim: usize,
    u: Vec<f64>,
    values: Vec<f64>,
}

pub fn simulate_json(design: &str, t_len: usize, seed: u64) -> Result<String, String> {
    let kind: DesignKind = design.parse().map_err(|e| format!("{e}"))?;
    let d = Design::new(kind, t_len).map_err(|e| e.to_string())?;
    let x = generate(&d, seed);
    let out = Simulated {
        design: kind.to_string(),
        u0_true: d.u0_true(),
        dim: x.dim(),
        u: (1..=x.len()).map(|t| x.rescaled_time(t)).collect(),
        values: x.values().to_vec(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

fn demo_config(alpha: f64, draws: usize) -> PipelineConfig {
    PipelineConfig {
        alpha: gradwatch::AlphaSpec::Fixed(alpha),
        draws,
        sim_grid: 30,
        ..PipelineConfig::default()
    }
}

/// `values` is row-major with `dim` columns.
pub fn detect_json(
    values: &[f64],
    dim: usize,
    feature: &str,
    mode: &str,
    direction: &str,
    alpha: f64,
    draws: usize,
) -> Result<String, String> {
    if dim == 0 || values.len() % dim != 0 {
        return Err(format!("{} values do not fill rows of width {dim}", values.len()));
    }
    let x = TimeSeries::new(values.to_vec(), values.len() / dim, dim).map_err(|e| e.to_string())?;
    let spec: FeatureSpec = feature.parse().map_err(|e| format!("{e}"))?;
    let mode: Mode = mode.parse().map_err(|e| format!("{e}"))?;
    let direction: Direction = direction.parse().map_err(|e| format!("{e}"))?;
    let family = spec.family_for(dim).map_err(|e| e.to_string())?;
    let est = detect(&x, &family, mode, direction, &demo_config(alpha, draws)).map_err(|e| e.to_string())?;
    serde_json::to_string(&est).map_err(|e| e.to_string())
}

pub fn quantiles_json(alpha: f64, n_features: usize, draws: usize, seed: u64) -> Result<String, String> {
    let mut cfg = demo_config(alpha, draws);
    cfg.seed = seed;
    let q = known_quantile_curve(n_features, alpha, &cfg).map_err(|e| e.to_string())?;
    serde_json::to_string(&q).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn simulate(design: &str, t_len: usize, seed: u32) -> Result<String, JsError> {
    simulate_json(design, t_len, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = detect)]
pub fn detect_series(
    values: &[f64],
    dim: usize,
    feature: &str,
    mode: &str,
    direction: &str,
    alpha: f64,
    draws: usize,
) -> Result<String, JsError> {
    detect_json(values, dim, feature, mode, direction, alpha, draws).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn quantiles(alpha: f64, n_features: usize, draws: usize, seed: u32) -> Result<String, JsError> {
    quantiles_json(alpha, n_features, draws, seed as u64).map_err(|e| JsError::new(&e))
}
