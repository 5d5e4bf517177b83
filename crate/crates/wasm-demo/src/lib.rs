//! Browser bindings. Each export has a plain-Rust twin so it can be tested
//! natively.

use qprobe::decoherence::{closed_form_partial, lambda_interpolated, lambda_mixed, lambda_pure};
use qprobe::linalg::c64;
use qprobe::probe::{premeasure_with_coupling, probe_distribution as born_distribution, attach_probe, ProbeSetup};
use qprobe::protocol::coherence_indicator;
use qprobe::states::QuantumState;
use qprobe::tomography::{
    estimate_populations, max_abs_error, post_interaction_distribution, sample_outcomes, Histogram, Observation, ProbeWavefunction,
};
use serde_json::json;
use wasm_bindgen::prelude::*;

const MAX_N: usize = 16;

fn check_n(n: usize) -> Result<(), String> {
    if !(2..=MAX_N).contains(&n) {
        return Err(format!("n must be between 2 and {MAX_N}"));
    }
    Ok(())
}

/// Probe reading probabilities after a direct interaction of strength
/// `g_fraction`·ħc with a system in the (unnormalised) state given as
/// interleaved `[re0, im0, re1, im1, …]`.
pub fn probe_distribution_native(n: usize, g_fraction: f64, amplitudes: &[f64]) -> Result<Vec<f64>, String> {
    check_n(n)?;
    if amplitudes.len() != 2 * n {
        return Err(format!("expected {} amplitude components, got {}", 2 * n, amplitudes.len()));
    }
    let c = amplitudes.chunks(2).map(|z| c64(z[0], z[1])).collect();
    let setup = ProbeSetup::new(n).map_err(|e| e.to_string())?;
    let system = QuantumState::normalized(c).map_err(|e| e.to_string())?;
    let joint = attach_probe(&setup, &system).map_err(|e| e.to_string())?;
    let after = premeasure_with_coupling(&setup, &joint, g_fraction * setup.completion_coupling()).map_err(|e| e.to_string())?;
    born_distribution(&setup, &after).map_err(|e| e.to_string())
}

/// Conjugate-basis readouts at completion for the uniform superposition as
/// the environment correlation e^{−θ} decays. Flat rows of
/// `[θ, expected_a, pure_prediction, mixed_baseline, coherence_indicator]`.
pub fn coherence_sweep_native(n: usize, theta_max: f64, points: usize) -> Result<Vec<f64>, String> {
    check_n(n)?;
    if points < 2 || !(theta_max > 0.0 && theta_max.is_finite()) {
        return Err("need at least 2 points and a positive theta_max".into());
    }
    let setup = ProbeSetup::new(n).map_err(|e| e.to_string())?;
    let g = setup.completion_coupling();
    let c = vec![c64(1.0 / (n as f64).sqrt(), 0.0); n];
    let pure = closed_form_partial(&setup, &c, &lambda_pure(n), g).map_err(|e| e.to_string())?;
    let mixed = closed_form_partial(&setup, &c, &lambda_mixed(n), g).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(points * 5);
    for i in 0..points {
        let theta = theta_max * i as f64 / (points - 1) as f64;
        let lam = lambda_interpolated(n, theta).map_err(|e| e.to_string())?;
        let a = closed_form_partial(&setup, &c, &lam, g).map_err(|e| e.to_string())?;
        out.extend([theta, a, pure, mixed, coherence_indicator(a, pure, mixed)]);
    }
    Ok(out)
}

/// Samples the probe density for populations p_j ∝ j + 1, bins the samples
/// and recovers the populations. Returns a JSON document.
pub fn tomography_demo_native(n: usize, sigma: f64, samples: usize, bins: usize, seed: u64) -> Result<String, String> {
    check_n(n)?;
    let total = (n * (n + 1) / 2) as f64;
    let p: Vec<f64> = (0..n).map(|j| (j + 1) as f64 / total).collect();
    let s: Vec<f64> = (0..n).map(|j| j as f64).collect();
    let g = 1.0;
    let phi = ProbeWavefunction::gaussian_with_points(0.0, sigma, g, &s, 1024).map_err(|e| e.to_string())?;
    let f = post_interaction_distribution(&phi, g, &s, &p).map_err(|e| e.to_string())?;
    let draws = sample_outcomes(&f, samples.max(1), seed).map_err(|e| e.to_string())?;
    let hist = Histogram::from_samples(&draws, phi.grid.a_min, phi.grid.a_max, bins.max(1)).map_err(|e| e.to_string())?;
    let est = estimate_populations(Observation::Histogram(&hist), &phi, g, &s).map_err(|e| e.to_string())?;
    let total = hist.total() as f64;
    let density: Vec<f64> = hist
        .counts
        .iter()
        .zip(hist.edges.windows(2))
        .map(|(&c, w)| c as f64 / (total * (w[1] - w[0])))
        .collect();
    Ok(json!({
        "a": phi.grid.points(),
        "f": f.values,
        "edges": hist.edges,
        "histogram": density,
        "p": p,
        "p_hat": est.p_hat,
        "error": max_abs_error(&est.p_hat, &p),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn probe_distribution(n: usize, g_fraction: f64, amplitudes: &[f64]) -> Result<Vec<f64>, JsError> {
    probe_distribution_native(n, g_fraction, amplitudes).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn coherence_sweep(n: usize, theta_max: f64, points: usize) -> Result<Vec<f64>, JsError> {
    coherence_sweep_native(n, theta_max, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn tomography_demo(n: usize, sigma: f64, samples: usize, bins: usize, seed: u64) -> Result<String, JsError> {
    tomography_demo_native(n, sigma, samples, bins, seed).map_err(|e| JsError::new(&e))
}
