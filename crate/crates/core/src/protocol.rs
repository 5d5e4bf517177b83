//! QFT-sandwich measurement cycles.
//!
//! Each cycle rotates the system into its conjugate basis with the QFT,
//! lets the probe interact for the window, reads ⟨Â⟩ and rotates back with
//! the inverse QFT. A fully decohered (diagonal) system state gives the same
//! readout whatever its populations, so the distance of the readout from that
//! baseline measures the remaining coherence.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dft_matrix;
use crate::probe::{attach_probe, expected_probe_value, premeasure_with_coupling, ProbeSetup, PROBE_FACTOR, SYSTEM_FACTOR};
use crate::states::{partial_trace, QuantumState};

const FRESH_PROBE_TOL: f64 = 1e-9;
const INDICATOR_EPS: f64 = 1e-12;

/// Applies the QFT (unitary DFT) on `factor`.
pub fn qft_system(state: &QuantumState, factor: usize) -> Result<QuantumState> {
    let n = state.layout().dim(factor)?;
    state.apply_factor_unitary(factor, &dft_matrix(n))
}

/// Applies the inverse QFT on `factor`.
pub fn inverse_qft_system(state: &QuantumState, factor: usize) -> Result<QuantumState> {
    let n = state.layout().dim(factor)?;
    state.apply_factor_unitary(factor, &dft_matrix(n).adjoint())
}

/// Interaction windows of successive cycles; the QFT pulses between them are
/// instantaneous.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PulseSchedule {
    windows: Vec<(f64, f64)>,
}

impl PulseSchedule {
    pub fn new(windows: Vec<(f64, f64)>) -> Result<Self> {
        for (i, &(a, b)) in windows.iter().enumerate() {
            if !(a.is_finite() && b.is_finite()) || b < a {
                return Err(Error::InvalidArgument(format!("window {i} = ({a}, {b}) is not an interval")));
            }
            if i > 0 && a < windows[i - 1].1 {
                return Err(Error::InvalidArgument(format!(
                    "window {i} starts at {a} before window {} ends at {}",
                    i - 1,
                    windows[i - 1].1
                )));
            }
        }
        Ok(Self { windows })
    }

    /// `count` back-to-back windows of length `width` starting at 0.
    pub fn periodic(count: usize, width: f64) -> Result<Self> {
        Self::new((0..count).map(|i| (i as f64 * width, (i + 1) as f64 * width)).collect())
    }

    pub fn windows(&self) -> &[(f64, f64)] {
        &self.windows
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// How the probe is prepared between cycles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbePolicy {
    /// Trace out the probe and re-prepare the setup's fresh state.
    #[default]
    Fresh,
    /// Keep whatever state the probe was left in.
    Carry,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleReadout {
    pub expected_a: f64,
    pub pure_prediction: f64,
    pub mixed_baseline: f64,
    pub coherence_indicator: f64,
}

/// clamp(|observed − baseline| / max(|pure − baseline|, ε), 0, 1).
pub fn coherence_indicator(observed: f64, pure_pred: f64, baseline: f64) -> f64 {
    let span = (pure_pred - baseline).abs().max(INDICATOR_EPS);
    ((observed - baseline).abs() / span).clamp(0.0, 1.0)
}

/// Conjugate-basis readout of a system state (system at factor 0, any
/// further factors are spectators): attach a fresh probe, QFT, premeasure.
pub fn conjugate_readout(setup: &ProbeSetup, system: &QuantumState, g_total: f64) -> Result<f64> {
    let joint = attach_probe(setup, system)?;
    let rotated = qft_system(&joint, SYSTEM_FACTOR)?;
    expected_probe_value(setup, &premeasure_with_coupling(setup, &rotated, g_total)?)
}

/// Readout predicted for the pure system state with amplitudes `candidate`.
pub fn pure_prediction(setup: &ProbeSetup, candidate: &[Complex64], g_total: f64) -> Result<f64> {
    if candidate.len() != setup.n() {
        return Err(Error::mismatch("pure_prediction", setup.n(), candidate.len()));
    }
    conjugate_readout(setup, &QuantumState::normalized(candidate.to_vec())?, g_total)
}

/// Population-independent readout of a fully decohered system, at G(t).
pub fn mixed_baseline(setup: &ProbeSetup, t: f64) -> Result<f64> {
    mixed_baseline_at(setup, setup.coupling().integrated(t))
}

/// [`mixed_baseline`] at a given integrated coupling.
pub fn mixed_baseline_at(setup: &ProbeSetup, g_total: f64) -> Result<f64> {
    let n = setup.n();
    conjugate_readout(setup, &QuantumState::mixture(&vec![1.0 / n as f64; n])?, g_total)
}

fn check_fresh_probe(setup: &ProbeSetup, state: &QuantumState) -> Result<()> {
    let probe = partial_trace(state, &[PROBE_FACTOR])?;
    let fidelity = probe.fidelity(&setup.fresh_probe())?;
    if fidelity < 1.0 - FRESH_PROBE_TOL {
        return Err(Error::InvalidState(format!(
            "probe is not in its fresh state |A_{}⟩ (fidelity {fidelity})",
            setup.initial_probe()
        )));
    }
    Ok(())
}

fn cycle(
    setup: &ProbeSetup,
    state: &QuantumState,
    window: (f64, f64),
    candidate: &[Complex64],
) -> Result<(QuantumState, CycleReadout)> {
    let g = setup.coupling().integrated_between(window.0, window.1);
    let rotated = qft_system(state, SYSTEM_FACTOR)?;
    let measured = premeasure_with_coupling(setup, &rotated, g)?;
    let expected_a = expected_probe_value(setup, &measured)?;
    let restored = inverse_qft_system(&measured, SYSTEM_FACTOR)?;
    let pure = pure_prediction(setup, candidate, g)?;
    let baseline = mixed_baseline_at(setup, g)?;
    Ok((
        restored,
        CycleReadout {
            expected_a,
            pure_prediction: pure,
            mixed_baseline: baseline,
            coherence_indicator: coherence_indicator(expected_a, pure, baseline),
        },
    ))
}

/// One QFT → interaction → readout → inverse-QFT cycle on a joint
/// `[system, probe, …]` state whose probe is freshly prepared. `candidate`
/// is the pure system state the readout is contrasted against.
pub fn conjugate_measure_cycle(
    setup: &ProbeSetup,
    state: &QuantumState,
    window: (f64, f64),
    candidate: &[Complex64],
) -> Result<(QuantumState, CycleReadout)> {
    check_fresh_probe(setup, state)?;
    cycle(setup, state, window, candidate)
}

/// Runs every window of `schedule` in order, re-preparing the probe between
/// cycles according to `policy`.
pub fn run_schedule(
    setup: &ProbeSetup,
    state: &QuantumState,
    schedule: &PulseSchedule,
    candidate: &[Complex64],
    policy: ProbePolicy,
) -> Result<Vec<CycleReadout>> {
    run_schedule_with_state(setup, state, schedule, candidate, policy).map(|(_, r)| r)
}

/// [`run_schedule`] that also returns the state after the last cycle.
pub fn run_schedule_with_state(
    setup: &ProbeSetup,
    state: &QuantumState,
    schedule: &PulseSchedule,
    candidate: &[Complex64],
    policy: ProbePolicy,
) -> Result<(QuantumState, Vec<CycleReadout>)> {
    let mut current = state.clone();
    let mut readouts = Vec::with_capacity(schedule.windows.len());
    for (i, &window) in schedule.windows.iter().enumerate() {
        if i > 0 && policy == ProbePolicy::Fresh {
            current = current.replace_factor(PROBE_FACTOR, &setup.fresh_probe())?;
        }
        let (next, readout) = if i == 0 || policy == ProbePolicy::Fresh {
            conjugate_measure_cycle(setup, &current, window, candidate)?
        } else {
            cycle(setup, &current, window, candidate)?
        };
        current = next;
        readouts.push(readout);
    }
    Ok((current, readouts))
}
