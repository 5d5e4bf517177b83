//! Output-decoupling certificates.
//!
//! The output y(t) = ⟨ξ(t)|C|ξ(t)⟩ is insensitive to the system–environment
//! interaction H_SE when every operator in the smallest subspace containing C
//! and closed under ad_H and ad_{H_i} commutes with H_SE. With state feedback
//! the weaker requirement is that [C̃, H_SE] stays inside C̃.
//!
//! Operators here are time-independent, so the ∂/∂t part of the iteration
//! drops out and the closure is a plain commutator closure.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{commutator, ComplexMatrix, MatrixSpan, DEFAULT_SPAN_TOL, HERMITIAN_TOL};
use crate::states::{evolve_observed, expectation, tensor_state, DriftControlSystem, Operator, PiecewiseConstant, QuantumState};

/// Default relative tolerance of the commutation tests.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Piecewise-constant segments per random control signal in the simulation oracle.
pub const CONTROL_SEGMENTS: usize = 10;

#[derive(Clone, Debug)]
pub struct DecouplingProblem {
    /// Output operator C; need not be Hermitian.
    pub c0: Operator,
    /// Free Hamiltonian H = H_0⊗I_e + I_s⊗H_e.
    pub drift: Operator,
    /// Control Hamiltonians H_i⊗I_e.
    pub controls: Vec<Operator>,
    /// H_SE.
    pub interaction: Operator,
    pub tol: f64,
}

impl DecouplingProblem {
    pub fn new(c0: Operator, drift: Operator, controls: Vec<Operator>, interaction: Operator) -> Result<Self> {
        let layout = c0.layout();
        for (name, op) in [("drift", &drift), ("interaction", &interaction)]
            .into_iter()
            .chain(controls.iter().map(|c| ("control", c)))
        {
            if op.layout() != layout {
                return Err(Error::Layout(format!("{name} layout {:?} differs from output layout {:?}", op.layout().dims(), layout.dims())));
            }
            let defect = op.matrix().hermiticity_defect();
            if defect > HERMITIAN_TOL {
                return Err(Error::NotHermitian { deviation: defect });
            }
        }
        Ok(Self {
            c0,
            drift,
            controls,
            interaction,
            tol: DEFAULT_TOL,
        })
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    fn generators(&self) -> impl Iterator<Item = &ComplexMatrix> {
        std::iter::once(self.drift.matrix()).chain(self.controls.iter().map(Operator::matrix))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplingReport {
    pub distribution_dim: usize,
    pub open_loop_decoupled: bool,
    pub feedback_decoupled: bool,
    pub max_open_loop_residual: f64,
    pub max_containment_residual: f64,
    /// Commutators evaluated while closing the distribution.
    pub iterations: usize,
}

/// Closes span{C} under ad_H and every ad_{H_i}, breadth first. Returns the
/// orthonormal basis and the number of commutators evaluated.
pub fn build_distribution_counted(p: &DecouplingProblem) -> Result<(MatrixSpan, usize)> {
    let d = p.c0.layout().total();
    let mut span = MatrixSpan::empty(d);
    span.extend(p.c0.matrix(), DEFAULT_SPAN_TOL)?;
    let mut next = 0;
    let mut iterations = 0;
    while next < span.len() {
        let element = span.basis()[next].clone();
        next += 1;
        for g in p.generators() {
            iterations += 1;
            let comm = commutator(g, &element)?;
            // A commutator that vanishes up to round-off would otherwise pass
            // the relative test of `extend` as pure noise.
            if comm.frobenius_norm() <= DEFAULT_SPAN_TOL * g.frobenius_norm().max(f64::MIN_POSITIVE) {
                continue;
            }
            span.extend(&comm, DEFAULT_SPAN_TOL)?;
        }
        if span.len() > d * d {
            return Err(Error::Numerical("operator distribution exceeded the d² bound".into()));
        }
    }
    Ok((span, iterations))
}

pub fn build_distribution(p: &DecouplingProblem) -> Result<MatrixSpan> {
    build_distribution_counted(p).map(|(s, _)| s)
}

fn relative_scale(h_se: &Operator) -> f64 {
    h_se.matrix().frobenius_norm().max(1e-300)
}

/// [C̃, H_SE] = 0: residual is max_B ‖[B, H_SE]‖_F / ‖H_SE‖_F over the basis.
pub fn check_open_loop(dist: &MatrixSpan, h_se: &Operator, tol: f64) -> Result<(bool, f64)> {
    let scale = relative_scale(h_se);
    let mut worst: f64 = 0.0;
    for b in dist.basis() {
        worst = worst.max(commutator(b, h_se.matrix())?.frobenius_norm() / scale);
    }
    Ok((worst < tol, worst))
}

/// [C̃, H_SE] ⊂ C̃: residual is the part of each [B, H_SE] outside the span,
/// relative to ‖H_SE‖_F.
pub fn check_feedback(dist: &MatrixSpan, h_se: &Operator, tol: f64) -> Result<(bool, f64)> {
    let scale = relative_scale(h_se);
    let mut worst: f64 = 0.0;
    for b in dist.basis() {
        let comm = commutator(b, h_se.matrix())?;
        worst = worst.max(dist.residual(&comm)?.frobenius_norm() / scale);
    }
    Ok((worst < tol, worst))
}

/// Largest relative residual of ad_G(B) outside the span, over basis elements
/// B and generators G. Zero (to round-off) for a closed distribution.
pub fn closure_defect(p: &DecouplingProblem, dist: &MatrixSpan) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for b in dist.basis() {
        for g in p.generators() {
            let comm = commutator(g, b)?;
            let norm = comm.frobenius_norm();
            if norm <= DEFAULT_SPAN_TOL * g.frobenius_norm().max(f64::MIN_POSITIVE) {
                continue;
            }
            worst = worst.max(dist.residual(&comm)?.frobenius_norm() / norm);
        }
    }
    Ok(worst)
}

pub fn certify(p: &DecouplingProblem) -> Result<DecouplingReport> {
    let (dist, iterations) = build_distribution_counted(p)?;
    let (open_loop, open_res) = check_open_loop(&dist, &p.interaction, p.tol)?;
    let (feedback, cont_res) = check_feedback(&dist, &p.interaction, p.tol)?;
    Ok(DecouplingReport {
        distribution_dim: dist.len(),
        open_loop_decoupled: open_loop,
        feedback_decoupled: feedback,
        max_open_loop_residual: open_res,
        max_containment_residual: cont_res,
        iterations,
    })
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn random_product_state(p: &DecouplingProblem, rng: &mut ChaCha8Rng) -> Result<QuantumState> {
    let parts: Vec<QuantumState> = p
        .c0
        .layout()
        .dims()
        .iter()
        .map(|&d| QuantumState::random_pure(d, rng))
        .collect();
    tensor_state(&parts)
}

fn random_signal(horizon: f64, rng: &mut ChaCha8Rng) -> Result<PiecewiseConstant> {
    let width = horizon / CONTROL_SEGMENTS as f64;
    let breakpoints = (0..CONTROL_SEGMENTS).map(|i| i as f64 * width).collect();
    let values = (0..CONTROL_SEGMENTS).map(|_| rng.random_range(-1.0..=1.0)).collect();
    PiecewiseConstant::new(breakpoints, values)
}

fn output_trace(sys: &DriftControlSystem, psi: &QuantumState, c: &Operator, horizon: f64, dt: f64) -> Result<Vec<Complex64>> {
    let mut ys = vec![expectation(psi, c)?];
    let mut failure = None;
    evolve_observed(sys, psi, 0.0, horizon, dt, |_, s| match expectation(s, c) {
        Ok(y) => ys.push(y),
        Err(e) => failure = Some(e),
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(ys),
    }
}

fn trial_deviation(p: &DecouplingProblem, trial: usize, horizon: f64, dt: f64, seed: u64) -> Result<f64> {
    let mut rng = trial_rng(seed, trial);
    let psi = random_product_state(p, &mut rng)?;
    let signals = p
        .controls
        .iter()
        .map(|_| random_signal(horizon, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let coupled = DriftControlSystem::new(p.drift.clone(), p.controls.clone(), p.interaction.clone(), signals.clone())?;
    let free = DriftControlSystem::new(
        p.drift.clone(),
        p.controls.clone(),
        Operator::zero(p.c0.layout().clone()),
        signals,
    )?;
    let with = output_trace(&coupled, &psi, &p.c0, horizon, dt)?;
    let without = output_trace(&free, &psi, &p.c0, horizon, dt)?;
    Ok(with
        .iter()
        .zip(&without)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max))
}

/// Largest |y_with(t) − y_without(t)| over seeded random product states and
/// random piecewise-constant controls, where the two runs differ only in
/// whether H_SE is present.
pub fn simulate_output_invariance(p: &DecouplingProblem, n_trials: usize, horizon: f64, dt: f64, seed: u64) -> Result<f64> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("n_trials must be at least 1".into()));
    }
    let per_trial = trial_deviations(p, n_trials, horizon, dt, seed)?;
    Ok(per_trial.into_iter().fold(0.0, f64::max))
}

/// Per-trial maximum deviations, in trial order.
pub fn trial_deviations(p: &DecouplingProblem, n_trials: usize, horizon: f64, dt: f64, seed: u64) -> Result<Vec<f64>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n_trials)
            .into_par_iter()
            .map(|i| trial_deviation(p, i, horizon, dt, seed))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_trials).map(|i| trial_deviation(p, i, horizon, dt, seed)).collect()
    }
}

/// Curated problems with known verdicts.
pub mod corpus {
    use super::*;
    use crate::linalg::{c64, kron, kron_all, pauli};
    use crate::states::FactorLayout;
    use rand_distr::StandardNormal;

    #[derive(Clone, Debug)]
    pub struct CorpusEntry {
        pub name: &'static str,
        pub problem: DecouplingProblem,
        pub open_loop: bool,
        pub feedback: bool,
    }

    fn op(layout: &FactorLayout, m: ComplexMatrix) -> Operator {
        Operator::new(layout.clone(), m).expect("corpus operator")
    }

    fn random_hermitian(d: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        let x = ComplexMatrix::from_fn(d, d, |_, _| c64(rng.sample(StandardNormal), rng.sample(StandardNormal)));
        (&x + &x.adjoint()).scale_real(0.5)
    }

    fn random_unitary(d: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        random_hermitian(d, rng).hermitian_eigen().expect("Hermitian by construction").1
    }

    fn random_diagonal(d: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        ComplexMatrix::real_diag(&v)
    }

    fn conj(v: &ComplexMatrix, d: &ComplexMatrix) -> ComplexMatrix {
        &(v * d) * &v.adjoint()
    }

    /// Output commutes with every Hamiltonian: pure dephasing.
    pub fn dephasing() -> CorpusEntry {
        let l = FactorLayout::new(vec![2, 2]).unwrap();
        let id = pauli::id();
        CorpusEntry {
            name: "commuting-dephasing",
            problem: DecouplingProblem::new(
                op(&l, kron(&pauli::z(), &id)),
                op(&l, &kron(&pauli::z(), &id).scale_real(0.7) + &kron(&id, &pauli::x()).scale_real(0.5)),
                vec![op(&l, kron(&pauli::z(), &id))],
                op(&l, kron(&pauli::z(), &pauli::z()).scale_real(0.8)),
            )
            .unwrap(),
            open_loop: true,
            feedback: true,
        }
    }

    fn pauli_problem(interaction_strength: f64) -> DecouplingProblem {
        let l = FactorLayout::new(vec![2, 2]).unwrap();
        let id = pauli::id();
        DecouplingProblem::new(
            op(&l, kron(&pauli::x(), &id)),
            op(&l, &kron(&pauli::z(), &id) + &kron(&id, &pauli::x()).scale_real(0.5)),
            vec![op(&l, kron(&pauli::x(), &id))],
            op(&l, kron(&pauli::z(), &pauli::z()).scale_real(interaction_strength)),
        )
        .unwrap()
    }

    /// σx output, σz drift, σx control: the closure is all of su(2)⊗I.
    pub fn pauli_closure() -> CorpusEntry {
        CorpusEntry {
            name: "pauli-closure",
            problem: pauli_problem(0.8),
            open_loop: false,
            feedback: false,
        }
    }

    pub fn no_interaction() -> CorpusEntry {
        CorpusEntry {
            name: "no-interaction",
            problem: pauli_problem(0.0),
            open_loop: true,
            feedback: true,
        }
    }

    /// Everything lives on the |0⟩⟨0| environment block, so [C̃, H_SE] ⊂ C̃.
    pub fn projector_feedback() -> CorpusEntry {
        let l = FactorLayout::new(vec![2, 2]).unwrap();
        let b = ComplexMatrix::real_diag(&[1.0, 0.0]);
        CorpusEntry {
            name: "projector-feedback",
            problem: DecouplingProblem::new(
                op(&l, kron(&pauli::x(), &b)),
                op(&l, kron(&pauli::z(), &b)),
                vec![op(&l, kron(&pauli::x(), &b))],
                op(&l, kron(&pauli::z(), &b).scale_real(0.8)),
            )
            .unwrap(),
            open_loop: false,
            feedback: true,
        }
    }

    /// Output, drift, controls and H_SE share a random eigenbasis on the system.
    pub fn random_diagonal_commutant(seed: u64) -> CorpusEntry {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ds, de) = (3, 2);
        let l = FactorLayout::new(vec![ds, de]).unwrap();
        let v = random_unitary(ds, &mut rng);
        let ie = ComplexMatrix::identity(de);
        let is = ComplexMatrix::identity(ds);
        let sys = |rng: &mut ChaCha8Rng| conj(&v, &random_diagonal(ds, rng));
        let c = sys(&mut rng);
        let h0 = sys(&mut rng);
        let h1 = sys(&mut rng);
        let coupling = sys(&mut rng);
        let he = random_hermitian(de, &mut rng);
        let b = random_hermitian(de, &mut rng);
        CorpusEntry {
            name: "random-diagonal-commutant",
            problem: DecouplingProblem::new(
                op(&l, kron(&c, &ie)),
                op(&l, &kron(&h0, &ie) + &kron(&is, &he)),
                vec![op(&l, kron(&h1, &ie))],
                op(&l, kron(&coupling, &b).scale_real(0.5)),
            )
            .unwrap(),
            open_loop: true,
            feedback: true,
        }
    }

    /// System = qubit A ⊗ qubit B; output and controls act on A, H_SE couples
    /// only B to the environment.
    pub fn random_factor_commutant(seed: u64) -> CorpusEntry {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = FactorLayout::new(vec![2, 2, 2]).unwrap();
        let id = pauli::id();
        let on_a = |m: &ComplexMatrix| kron_all([m, &id, &id]);
        let c = random_hermitian(2, &mut rng);
        let h0 = random_hermitian(2, &mut rng);
        let h1 = random_hermitian(2, &mut rng);
        let h2 = random_hermitian(2, &mut rng);
        let he = random_hermitian(2, &mut rng);
        let m = random_hermitian(2, &mut rng);
        let b = random_hermitian(2, &mut rng);
        CorpusEntry {
            name: "random-factor-commutant",
            problem: DecouplingProblem::new(
                op(&l, on_a(&c)),
                op(&l, &on_a(&h0) + &kron_all([&id, &id, &he])),
                vec![op(&l, on_a(&h1)), op(&l, on_a(&h2))],
                op(&l, kron_all([&id, &m, &b]).scale_real(0.5)),
            )
            .unwrap(),
            open_loop: true,
            feedback: true,
        }
    }

    /// Generic random Hamiltonians: nothing is protected.
    pub fn random_generic(seed: u64) -> CorpusEntry {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = FactorLayout::new(vec![2, 2]).unwrap();
        let id = pauli::id();
        let c = random_hermitian(2, &mut rng);
        let h0 = random_hermitian(2, &mut rng);
        let h1 = random_hermitian(2, &mut rng);
        let he = random_hermitian(2, &mut rng);
        let s = random_hermitian(2, &mut rng);
        let b = random_hermitian(2, &mut rng);
        CorpusEntry {
            name: "random-generic",
            problem: DecouplingProblem::new(
                op(&l, kron(&c, &id)),
                op(&l, &kron(&h0, &id) + &kron(&id, &he)),
                vec![op(&l, kron(&h1, &id))],
                op(&l, kron(&s, &b).scale_real(0.5)),
            )
            .unwrap(),
            open_loop: false,
            feedback: false,
        }
    }

    pub fn all() -> Vec<CorpusEntry> {
        vec![
            dephasing(),
            pauli_closure(),
            no_interaction(),
            projector_feedback(),
            random_diagonal_commutant(11),
            random_factor_commutant(12),
            random_generic(13),
        ]
    }
}
