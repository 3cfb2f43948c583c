//! Browser bindings for the `aopsic` demo page.
//!
//! Each export takes plain numbers and JSON strings and returns a JSON
//! document; the `*_json` functions are the same operations for native
//! callers and tests.

use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

use aopsic::channel::SalehPaConfig;
use aopsic::harness::{parse_scenario, run_scenario, to_db};
use aopsic::moments::{estimate_moments, MomentKind};
use aopsic::numerics::{ComplexSample, RngState};
use aopsic::orthopoly::{build_basis, OrthonormalBasis};
use aopsic::signals::{generate, DistributionSpec};

const TRAINING_SAMPLES: usize = 50_000;
const HISTOGRAM_BINS: usize = 60;
const TRACE_POINTS: usize = 300;

fn parse_distribution(text: &str) -> Result<DistributionSpec, String> {
    let spec: DistributionSpec = serde_json::from_str(text).map_err(|e| format!("distribution: {e}"))?;
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

/// Basis for `spec`: closed-form moments when known, otherwise estimated.
fn basis_for(spec: &DistributionSpec, order: usize, samples: &[ComplexSample]) -> Result<OrthonormalBasis, String> {
    let mu = match spec.closed_form_moments(order) {
        Some(mu) => mu,
        None => estimate_moments(samples, order, MomentKind::EvenOnly).map_err(|e| e.to_string())?,
    };
    build_basis(&mu, order).map_err(|e| e.to_string())
}

fn grid(max: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points).map(|i| max * i as f64 / (points - 1) as f64).collect()
}

fn histogram(samples: &[ComplexSample], max: f64) -> Vec<f64> {
    let mut counts = vec![0.0; HISTOGRAM_BINS];
    let width = max / HISTOGRAM_BINS as f64;
    for s in samples {
        let b = (s.norm() / width) as usize;
        if b < HISTOGRAM_BINS {
            counts[b] += 1.0;
        }
    }
    counts.iter().map(|c| c / (samples.len() as f64 * width)).collect()
}

#[derive(Serialize)]
struct BasisCurves {
    label: String,
    effective_rank: usize,
    coeffs: Vec<Vec<f64>>,
    amplitude: Vec<f64>,
    /// `curves[p][i]`: φ_{p+1} at `amplitude[i]` on the real axis.
    curves: Vec<Vec<f64>>,
    /// Amplitude density `|x|` of the distribution, on `HISTOGRAM_BINS` bins up to the same maximum.
    density: Vec<f64>,
}

pub fn basis_curves_json(distribution: &str, order: usize, max_amplitude: f64, points: usize) -> Result<String, String> {
    let spec = parse_distribution(distribution)?;
    let samples = generate(&spec, TRAINING_SAMPLES, &mut RngState::new(1, 0));
    let basis = basis_for(&spec, order, &samples)?;
    let amplitude = grid(max_amplitude, points);
    let mut curves = vec![Vec::with_capacity(amplitude.len()); basis.effective_rank()];
    for &a in &amplitude {
        for (p, v) in basis.evaluate_regressor(ComplexSample::new(a, 0.0)).into_iter().enumerate() {
            curves[p].push(v.re);
        }
    }
    let out = BasisCurves {
        label: spec.label(),
        effective_rank: basis.effective_rank(),
        coeffs: basis.coeffs().to_vec(),
        density: histogram(&samples, max_amplitude),
        amplitude,
        curves,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SalehFit {
    amplitude: Vec<f64>,
    saleh: Vec<f64>,
    fit: Vec<f64>,
    /// Projection weights onto each orthonormal function.
    weights: Vec<[f64; 2]>,
    /// Residual power of the fit relative to the output power, over the input distribution.
    residual_db: f64,
}

/// Fits the memoryless Saleh AM/AM curve by orthonormal projection,
/// `w_p = E[φ_p(x)*·f(x)]`, under the chosen input distribution.
pub fn saleh_fit_json(gamma: f64, beta: f64, order: usize, distribution: &str, points: usize) -> Result<String, String> {
    let spec = parse_distribution(distribution)?;
    let pa = SalehPaConfig::new(gamma, beta, vec![ComplexSample::new(1.0, 0.0)]).map_err(|e| e.to_string())?;
    let x = generate(&spec, TRAINING_SAMPLES, &mut RngState::new(2, 0));
    let basis = basis_for(&spec, order, &x)?;
    let r = basis.effective_rank();
    let mut w = vec![ComplexSample::new(0.0, 0.0); r];
    for &v in &x {
        let f = pa.compress(v);
        for (wp, phi) in w.iter_mut().zip(basis.evaluate_regressor(v)) {
            *wp += phi.conj() * f;
        }
    }
    w.iter_mut().for_each(|v| *v /= x.len() as f64);
    let model = |v: ComplexSample| -> ComplexSample { basis.evaluate_regressor(v).iter().zip(&w).map(|(p, c)| p * c).sum() };
    let (mut err, mut pow) = (0.0, 0.0);
    for &v in &x {
        let f = pa.compress(v);
        err += (f - model(v)).norm_sqr();
        pow += f.norm_sqr();
    }
    let max = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let amplitude = grid(max, points);
    let out = SalehFit {
        saleh: amplitude.iter().map(|&a| pa.compress(ComplexSample::new(a, 0.0)).norm()).collect(),
        fit: amplitude.iter().map(|&a| model(ComplexSample::new(a, 0.0)).norm()).collect(),
        amplitude,
        weights: w.iter().map(|c| [c.re, c.im]).collect(),
        residual_db: to_db(err / pow),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct MseRace {
    sample: Vec<usize>,
    noise_floor_db: f64,
    /// `(label, windowed MSE in dB at each entry of sample)`.
    traces: Vec<(String, Vec<f64>)>,
}

/// A short single-seed run of AOP, HP-W, IH and HP on one distribution.
pub fn mse_race_json(distribution: &str, order: usize, step: f64, samples: usize, seed: u64) -> Result<String, String> {
    let spec = parse_distribution(distribution)?;
    let canceller = |algorithm: &str| {
        json!({"algorithm": algorithm, "order": order, "taps": 5, "step_size": step, "n_max": 500, "n_int": samples})
    };
    let scenario = json!({
        "name": "demo",
        "schedule": {"segments": [{"distribution": spec, "duration": samples}]},
        "channel": {"pa": {"gamma": 3.0, "beta": 0.09, "memory": 5}, "si": {"length": 1}},
        "si_to_noise_db": 50.0,
        "cancellers": [canceller("aop"), canceller("hp-w"), canceller("ih"), canceller("hp")],
        "seeds": [seed],
        "mse_window": 100
    });
    let cfg = parse_scenario(&scenario.to_string()).map_err(|e| e.to_string())?;
    let result = run_scenario(&cfg).map_err(|e| e.to_string())?;
    let w = result.mse_window;
    let stride = ((result.len() - w) / TRACE_POINTS).max(1);
    let sample: Vec<usize> = (w..result.len()).step_by(stride).collect();
    let traces = result
        .labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let values = match result.mean_mse_db(i) {
                Some(mse) => sample.iter().map(|&n| mse[n - w]).collect(),
                None => Vec::new(),
            };
            (label.clone(), values)
        })
        .collect();
    let out = MseRace { sample, noise_floor_db: result.noise_floor_db, traces };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = basisCurves)]
pub fn basis_curves(distribution: &str, order: usize, max_amplitude: f64, points: usize) -> Result<String, JsValue> {
    js(basis_curves_json(distribution, order, max_amplitude, points))
}

#[wasm_bindgen(js_name = salehFit)]
pub fn saleh_fit(gamma: f64, beta: f64, order: usize, distribution: &str, points: usize) -> Result<String, JsValue> {
    js(saleh_fit_json(gamma, beta, order, distribution, points))
}

#[wasm_bindgen(js_name = mseRace)]
pub fn mse_race(distribution: &str, order: usize, step: f64, samples: usize, seed: u64) -> Result<String, JsValue> {
    js(mse_race_json(distribution, order, step, samples, seed))
}
