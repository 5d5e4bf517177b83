//! Pointer-basis probe: the shift generator P̂, the interaction g(t)·ŝ⊗P̂,
//! the closed-form branch amplitudes α_jl, and premeasurement.
//!
//! The probe pointer basis is |A_l⟩ (computational basis of the probe
//! factor); the conjugate basis is |B_k⟩ = F|A_k⟩ with F = [`dft_matrix`].
//! Under g(t)·ŝ⊗P̂ the branch |s_j⟩|B_k⟩ picks up the phase
//! exp(−i·s_j·k·G/ħ), where G = ∫g is the integrated coupling. At
//! G = ħc with c = 2π/N and integer s_j this is the cyclic shift
//! |s_j⟩|A_k⟩ → |s_j⟩|A_{k+j}⟩.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{dft_matrix, ComplexMatrix, ZERO};
use crate::states::{partial_trace, FactorLayout, Operator, PiecewiseConstant, QuantumState};

/// Layout position of the system factor in joint states.
pub const SYSTEM_FACTOR: usize = 0;
/// Layout position of the probe factor in joint states.
pub const PROBE_FACTOR: usize = 1;

/// Externally modulated coupling strength g(t) ≥ 0.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingProfile(PiecewiseConstant);

impl CouplingProfile {
    pub fn new(signal: PiecewiseConstant) -> Result<Self> {
        if signal.values().iter().any(|&g| g < 0.0) {
            return Err(Error::InvalidArgument("coupling strength must be non-negative".into()));
        }
        Ok(Self(signal))
    }

    pub fn constant(g: f64) -> Result<Self> {
        Self::new(PiecewiseConstant::constant(g))
    }

    pub fn signal(&self) -> &PiecewiseConstant {
        &self.0
    }

    pub fn at(&self, t: f64) -> f64 {
        self.0.at(t)
    }

    /// G(t) = ∫₀ᵗ g(τ)dτ.
    pub fn integrated(&self, t: f64) -> f64 {
        self.0.integral(t)
    }

    pub fn integrated_between(&self, t0: f64, t1: f64) -> f64 {
        self.0.integral_between(t0, t1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSetup {
    n: usize,
    a: Vec<f64>,
    s: Vec<f64>,
    coupling: CouplingProfile,
    hbar: f64,
    initial_probe: usize,
}

impl ProbeSetup {
    /// Defaults: a_l = l, s_j = j, ħ = 1, constant coupling ħc (premeasurement
    /// completes at t = 1), probe prepared in |A_0⟩.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("probe dimension must be positive".into()));
        }
        let ladder: Vec<f64> = (0..n).map(|i| i as f64).collect();
        Ok(Self {
            n,
            a: ladder.clone(),
            s: ladder,
            coupling: CouplingProfile::constant(2.0 * PI / n as f64)?,
            hbar: 1.0,
            initial_probe: 0,
        })
    }

    pub fn with_probe_eigenvalues(mut self, a: Vec<f64>) -> Result<Self> {
        if a.len() != self.n {
            return Err(Error::mismatch("probe eigenvalues", self.n, a.len()));
        }
        self.a = a;
        Ok(self)
    }

    pub fn with_system_eigenvalues(mut self, s: Vec<f64>) -> Result<Self> {
        if s.len() != self.n {
            return Err(Error::mismatch("system eigenvalues", self.n, s.len()));
        }
        self.s = s;
        Ok(self)
    }

    pub fn with_coupling(mut self, coupling: CouplingProfile) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn with_hbar(mut self, hbar: f64) -> Result<Self> {
        if !(hbar > 0.0) || !hbar.is_finite() {
            return Err(Error::InvalidArgument("hbar must be positive".into()));
        }
        self.hbar = hbar;
        Ok(self)
    }

    pub fn with_initial_probe(mut self, index: usize) -> Result<Self> {
        if index >= self.n {
            return Err(Error::InvalidArgument(format!("initial probe index {index} >= n")));
        }
        self.initial_probe = index;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn probe_eigenvalues(&self) -> &[f64] {
        &self.a
    }

    pub fn system_eigenvalues(&self) -> &[f64] {
        &self.s
    }

    pub fn coupling(&self) -> &CouplingProfile {
        &self.coupling
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn initial_probe(&self) -> usize {
        self.initial_probe
    }

    /// c = 2π/N.
    pub fn c(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    /// Integrated coupling at which premeasurement is complete: G = ħc.
    pub fn completion_coupling(&self) -> f64 {
        self.hbar * self.c()
    }

    /// Fresh probe state |A_k⟩ for the configured initial index.
    pub fn fresh_probe(&self) -> QuantumState {
        QuantumState::basis(self.n, self.initial_probe)
    }

    /// Â = Σ a_l |A_l⟩⟨A_l|.
    pub fn probe_observable(&self) -> Operator {
        Operator::new(FactorLayout::single(self.n), ComplexMatrix::real_diag(&self.a))
            .expect("square by construction")
    }

    /// ŝ = Σ s_j |s_j⟩⟨s_j|.
    pub fn system_observable(&self) -> Operator {
        Operator::new(FactorLayout::single(self.n), ComplexMatrix::real_diag(&self.s))
            .expect("square by construction")
    }
}

/// P̂ = Σ_l l|B_l⟩⟨B_l| written in the |A⟩ basis: F·diag(0,…,N−1)·F†.
pub fn shift_operator(setup: &ProbeSetup) -> Operator {
    let n = setup.n;
    let f = dft_matrix(n);
    let ladder: Vec<f64> = (0..n).map(|l| l as f64).collect();
    let m = &(&f * &ComplexMatrix::real_diag(&ladder)) * &f.adjoint();
    Operator::new(FactorLayout::single(n), m).expect("square by construction")
}

/// Time-independent part ŝ⊗P̂ of H_SP = g(t)·ŝ⊗P̂ on layout [N, N].
pub fn interaction_hamiltonian(setup: &ProbeSetup) -> Operator {
    setup.system_observable().tensor(&shift_operator(setup))
}

/// α for a system eigenvalue `s_value`, probe index `l` and integrated
/// coupling `g_total`: Σ_k exp((2πik/N)(l − s·G/(cħ))).
pub fn alpha_for(n: usize, s_value: f64, l: usize, g_total: f64, hbar: f64) -> Complex64 {
    let c = 2.0 * PI / n as f64;
    let shift = s_value * g_total / (c * hbar);
    (0..n)
        .map(|k| {
            let phase = 2.0 * PI * k as f64 / n as f64 * (l as f64 - shift);
            Complex64::from_polar(1.0, phase)
        })
        .sum()
}

/// α_jl(t) with the exact integrated coupling G(t) of the setup's profile.
pub fn alpha(setup: &ProbeSetup, j: usize, l: usize, t: f64) -> Complex64 {
    alpha_at_coupling(setup, j, l, setup.coupling.integrated(t))
}

/// α_jl evaluated at a given integrated coupling.
pub fn alpha_at_coupling(setup: &ProbeSetup, j: usize, l: usize, g_total: f64) -> Complex64 {
    assert!(j < setup.n && l < setup.n, "alpha index out of range");
    alpha_for(setup.n, setup.s[j], l, g_total, setup.hbar)
}

fn check_joint_layout(setup: &ProbeSetup, layout: &FactorLayout) -> Result<()> {
    let dims = layout.dims();
    if dims.len() < 2 || dims[SYSTEM_FACTOR] != setup.n || dims[PROBE_FACTOR] != setup.n {
        return Err(Error::Layout(format!(
            "expected [system={n}, probe={n}, …], got {dims:?}",
            n = setup.n
        )));
    }
    Ok(())
}

/// Inserts the setup's fresh probe state as factor 1 of `state`.
pub fn attach_probe(setup: &ProbeSetup, state: &QuantumState) -> Result<QuantumState> {
    if state.layout().dims()[SYSTEM_FACTOR] != setup.n {
        return Err(Error::Layout(format!(
            "system factor has dimension {}, probe setup expects {}",
            state.layout().dims()[SYSTEM_FACTOR],
            setup.n
        )));
    }
    state.insert_factor(PROBE_FACTOR, &setup.fresh_probe())
}

/// Evolves under g(t)·ŝ⊗P̂ from 0 to `t`.
pub fn premeasure(setup: &ProbeSetup, state: &QuantumState, t: f64) -> Result<QuantumState> {
    premeasure_with_coupling(setup, state, setup.coupling.integrated(t))
}

/// Evolves under ŝ⊗P̂ with total integrated coupling `g_total`: every
/// branch |s_j⟩|B_k⟩ acquires exp(−i·s_j·k·G/ħ); other factors are untouched.
pub fn premeasure_with_coupling(setup: &ProbeSetup, state: &QuantumState, g_total: f64) -> Result<QuantumState> {
    check_joint_layout(setup, state.layout())?;
    let f = dft_matrix(setup.n);
    let layout = state.layout().clone();
    let in_conjugate = state.apply_factor_unitary(PROBE_FACTOR, &f.adjoint())?;
    let scale = g_total / setup.hbar;
    let phased = in_conjugate.apply_diagonal(|flat| {
        let j = layout.digit(flat, SYSTEM_FACTOR);
        let k = layout.digit(flat, PROBE_FACTOR);
        Complex64::from_polar(1.0, -setup.s[j] * k as f64 * scale)
    });
    phased.apply_factor_unitary(PROBE_FACTOR, &f)
}

/// Probe-pointer distribution P(A_l) = ⟨A_l|ρ_probe|A_l⟩.
pub fn probe_distribution(setup: &ProbeSetup, state: &QuantumState) -> Result<Vec<f64>> {
    check_joint_layout(setup, state.layout())?;
    Ok(partial_trace(state, &[PROBE_FACTOR])?.populations())
}

/// ⟨Â⟩ = tr(ρ_probe·Â) by the Born rule.
pub fn expected_probe_value(setup: &ProbeSetup, state: &QuantumState) -> Result<f64> {
    let dist = probe_distribution(setup, state)?;
    let total: f64 = dist.iter().sum();
    Ok(dist.iter().zip(&setup.a).map(|(p, a)| p * a).sum::<f64>() / total)
}

/// Closed form of the direct (no QFT) readout for system pointer
/// populations p_j: Σ_l a_l Σ_j |α_jl|² p_j, normalized by Σ_l Σ_j |α_jl|² p_j.
pub fn closed_form_direct(setup: &ProbeSetup, populations: &[f64], g_total: f64) -> Result<f64> {
    if populations.len() != setup.n {
        return Err(Error::mismatch("closed_form_direct", setup.n, populations.len()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, &p) in populations.iter().enumerate() {
        for (l, &a) in setup.a.iter().enumerate() {
            let w = alpha_at_coupling(setup, j, l, g_total).norm_sqr() * p;
            num += a * w;
            den += w;
        }
    }
    Ok(num / den)
}

/// Direct measurement of a system state: attach |A_0⟩, premeasure with
/// `g_total`, read ⟨Â⟩.
pub fn direct_readout(setup: &ProbeSetup, system: &QuantumState, g_total: f64) -> Result<f64> {
    let joint = attach_probe(setup, system)?;
    expected_probe_value(setup, &premeasure_with_coupling(setup, &joint, g_total)?)
}

/// Branch amplitudes n^{-1}·α_jl·c_j predicted by the closed form,
/// indexed `[j][l]`.
pub fn closed_form_branches(setup: &ProbeSetup, c: &[Complex64], g_total: f64) -> Vec<Vec<Complex64>> {
    let n = setup.n;
    (0..n)
        .map(|j| {
            (0..n)
                .map(|l| alpha_at_coupling(setup, j, l, g_total) * c[j] / n as f64)
                .collect()
        })
        .collect()
}

/// Splits a pure joint [N, N] state vector into its `[j][l]` amplitudes.
pub fn branch_amplitudes(setup: &ProbeSetup, state: &QuantumState) -> Result<Vec<Vec<Complex64>>> {
    check_joint_layout(setup, state.layout())?;
    let amps = state
        .amplitudes()
        .ok_or_else(|| Error::InvalidState("branch amplitudes need a pure state vector".into()))?;
    if state.layout().factors() != 2 {
        return Err(Error::Layout("branch amplitudes need a [system, probe] layout".into()));
    }
    let n = setup.n;
    let mut out = vec![vec![ZERO; n]; n];
    for (flat, &z) in amps.iter().enumerate() {
        out[flat / n][flat % n] = z;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, commutator, propagator, ONE};
    use crate::states::tensor_state;

    #[test]
    fn shift_operator_n2() {
        let setup = ProbeSetup::new(2).unwrap();
        let p = shift_operator(&setup);
        let expected = ComplexMatrix::from_real_rows(&[&[0.5, -0.5], &[-0.5, 0.5]]);
        assert!((p.matrix() - &expected).frobenius_norm() < 1e-15);
    }

    #[test]
    fn shift_operator_spectrum_is_integer_ladder() {
        for n in 1..=8 {
            let setup = ProbeSetup::new(n).unwrap();
            let (vals, _) = shift_operator(&setup).matrix().hermitian_eigen().unwrap();
            for (i, v) in vals.iter().enumerate() {
                assert!((v - i as f64).abs() < 1e-12, "n={n}: {vals:?}");
            }
        }
    }

    #[test]
    fn full_turn_of_shift_generator_is_identity() {
        // exp(−i·(2π/n)·n·P̂) = exp(−2πi·P̂) = I since spec(P̂) ⊂ ℤ.
        for n in 2..=6 {
            let setup = ProbeSetup::new(n).unwrap();
            let u = propagator(shift_operator(&setup).matrix(), 2.0 * PI / n as f64 * n as f64).unwrap();
            assert!((&u - &ComplexMatrix::identity(n)).frobenius_norm() < 1e-12);
        }
    }

    #[test]
    fn interaction_structure() {
        let setup = ProbeSetup::new(2).unwrap();
        let h = interaction_hamiltonian(&setup);
        let p = shift_operator(&setup);
        assert_eq!(h.layout().dims(), &[2, 2]);
        for r in 0..4 {
            for c in 0..4 {
                let expected = if r / 2 == 1 && c / 2 == 1 { p.matrix()[(r % 2, c % 2)] } else { ZERO };
                assert!((h.matrix()[(r, c)] - expected).norm() < 1e-15);
            }
        }
        assert!(h.matrix().hermiticity_defect() < 1e-12);
        let s_id = setup.system_observable().tensor(&Operator::identity(FactorLayout::single(2)));
        assert!(commutator(h.matrix(), s_id.matrix()).unwrap().frobenius_norm() < 1e-14);
    }

    #[test]
    fn alpha_examples() {
        let setup = ProbeSetup::new(4).unwrap();
        for j in 0..4 {
            for l in 0..4 {
                let a0 = alpha_at_coupling(&setup, j, l, 0.0);
                let expected = if l == 0 { 4.0 } else { 0.0 };
                assert!((a0 - c64(expected, 0.0)).norm() < 1e-12);

                let done = alpha_at_coupling(&setup, j, l, setup.completion_coupling());
                let expected = if l == j { 4.0 } else { 0.0 };
                assert!((done - c64(expected, 0.0)).norm() < 1e-12);
            }
        }
        let s2 = ProbeSetup::new(2).unwrap();
        let half = alpha_at_coupling(&s2, 1, 0, s2.completion_coupling() / 2.0);
        assert!((half - c64(1.0, -1.0)).norm() < 1e-14);
    }

    #[test]
    fn alpha_follows_coupling_profile() {
        let profile = CouplingProfile::new(PiecewiseConstant::new(vec![0.0, 0.5], vec![0.0, 2.0]).unwrap()).unwrap();
        let setup = ProbeSetup::new(3).unwrap().with_coupling(profile);
        // G(t) = 2(t − 0.5) for t ≥ 0.5.
        let t = 0.5 + setup.completion_coupling() / 2.0;
        assert!((alpha(&setup, 1, 1, t) - c64(3.0, 0.0)).norm() < 1e-12);
        assert!((alpha(&setup, 1, 0, 0.3) - c64(3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn negative_coupling_rejected() {
        assert!(CouplingProfile::constant(-1.0).is_err());
    }

    #[test]
    fn premeasure_zero_eigenvalue_branch_is_unchanged() {
        let setup = ProbeSetup::new(3).unwrap();
        for k in 0..3 {
            let psi = tensor_state(&[QuantumState::basis(3, 0), QuantumState::basis(3, k)]).unwrap();
            for g in [0.1, 1.0, 7.3] {
                let out = premeasure_with_coupling(&setup, &psi, g).unwrap();
                assert!((out.fidelity(&psi).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn premeasure_shift_n4() {
        let setup = ProbeSetup::new(4).unwrap();
        let psi = tensor_state(&[QuantumState::basis(4, 1), QuantumState::basis(4, 0)]).unwrap();
        let out = premeasure(&setup, &psi, 1.0).unwrap();
        let target = tensor_state(&[QuantumState::basis(4, 1), QuantumState::basis(4, 1)]).unwrap();
        assert!(out.fidelity(&target).unwrap() > 1.0 - 1e-10);
    }

    #[test]
    fn premeasure_superposition_correlates_branches() {
        let setup = ProbeSetup::new(2).unwrap();
        let c = [c64(0.6, 0.0), c64(0.0, 0.8)];
        let sys = QuantumState::normalized(c.to_vec()).unwrap();
        let joint = attach_probe(&setup, &sys).unwrap();
        let out = premeasure_with_coupling(&setup, &joint, setup.completion_coupling()).unwrap();
        let dist = probe_distribution(&setup, &out).unwrap();
        assert!((dist[0] - 0.36).abs() < 1e-12 && (dist[1] - 0.64).abs() < 1e-12);
        let b = branch_amplitudes(&setup, &out).unwrap();
        assert!((b[0][0].norm() - 0.6).abs() < 1e-12 && b[0][1].norm() < 1e-12);
        assert!((b[1][1].norm() - 0.8).abs() < 1e-12 && b[1][0].norm() < 1e-12);
    }

    #[test]
    fn premeasure_rejects_bad_layout() {
        let setup = ProbeSetup::new(3).unwrap();
        assert!(premeasure(&setup, &QuantumState::basis(9, 0), 1.0).is_err());
        let wrong = tensor_state(&[QuantumState::basis(3, 0), QuantumState::basis(2, 0)]).unwrap();
        assert!(premeasure(&setup, &wrong, 1.0).is_err());
    }

    #[test]
    fn expected_value_examples() {
        let setup = ProbeSetup::new(4).unwrap().with_probe_eigenvalues(vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        let sys = QuantumState::normalized(vec![c64(0.5, 0.0), c64(0.5, 0.0), c64(0.0, 0.5), c64(-0.5, 0.0)]).unwrap();
        assert!((direct_readout(&setup, &sys, 0.0).unwrap() - 0.5).abs() < 1e-12);

        let c = [c64(0.1, 0.2), c64(0.3, -0.4), c64(0.5, 0.0), c64(0.0, 0.6)];
        let norm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let c: Vec<_> = c.iter().map(|z| z / norm).collect();
        let sys = QuantumState::normalized(c.clone()).unwrap();
        let got = direct_readout(&setup, &sys, setup.completion_coupling()).unwrap();
        let expected: f64 = c.iter().zip(setup.probe_eigenvalues()).map(|(z, a)| z.norm_sqr() * a).sum();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn fresh_probe_override() {
        let setup = ProbeSetup::new(3).unwrap().with_initial_probe(2).unwrap();
        let joint = attach_probe(&setup, &QuantumState::basis(3, 1)).unwrap();
        let out = premeasure_with_coupling(&setup, &joint, setup.completion_coupling()).unwrap();
        let dist = probe_distribution(&setup, &out).unwrap();
        assert!((dist[0] - 1.0).abs() < 1e-12, "{dist:?}");
        assert!(ProbeSetup::new(3).unwrap().with_initial_probe(3).is_err());
        let _ = ONE;
    }
}
