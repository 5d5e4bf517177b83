use proptest::prelude::*;

use num_complex::Complex64;
use qprobe::decoherence::{born_rule_partial, expected_value_partial_at, lambda_interpolated};
use qprobe::linalg::{c64, commutator, dft_matrix, kron, propagator, span_extend, ComplexMatrix, MatrixSpan, DEFAULT_SPAN_TOL};
use qprobe::probe::{alpha_for, attach_probe, direct_readout, premeasure_with_coupling, ProbeSetup};
use qprobe::protocol::{conjugate_readout, mixed_baseline_at};
use qprobe::states::{partial_trace, FactorLayout, QuantumState};

fn complex() -> impl Strategy<Value = Complex64> {
    (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(re, im)| c64(re, im))
}

fn matrix(r: usize, c: usize) -> impl Strategy<Value = ComplexMatrix> {
    prop::collection::vec(complex(), r * c).prop_map(move |v| ComplexMatrix::from_row_major(r, c, v).unwrap())
}

fn hermitian(d: usize) -> impl Strategy<Value = ComplexMatrix> {
    matrix(d, d).prop_map(|x| (&x + &x.adjoint()).scale_real(0.5))
}

fn amplitudes(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec(complex(), n).prop_filter("non-zero", |v| v.iter().map(|z| z.norm_sqr()).sum::<f64>() > 1e-3)
}

fn close(a: &ComplexMatrix, b: &ComplexMatrix, tol: f64) -> bool {
    (a - b).frobenius_norm() <= tol * (1.0 + a.frobenius_norm())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kron_is_associative(a in matrix(2, 3), b in matrix(2, 1), c in matrix(1, 2)) {
        prop_assert!(close(&kron(&kron(&a, &b), &c), &kron(&a, &kron(&b, &c)), 1e-12));
    }

    #[test]
    fn commutator_is_exactly_antisymmetric(pair in (1..=4usize).prop_flat_map(|d| (matrix(d, d), matrix(d, d)))) {
        let (a, b) = pair;
        let ab = commutator(&a, &b).unwrap();
        let ba = commutator(&b, &a).unwrap();
        let neg = -&ba;
        prop_assert_eq!(ab.as_slice(), neg.as_slice());
    }

    #[test]
    fn jacobi_identity(t in (1..=4usize).prop_flat_map(|d| (matrix(d, d), matrix(d, d), matrix(d, d)))) {
        let (a, b, c) = t;
        let cm = |x: &ComplexMatrix, y: &ComplexMatrix| commutator(x, y).unwrap();
        let sum = &(&cm(&a, &cm(&b, &c)) + &cm(&b, &cm(&c, &a))) + &cm(&c, &cm(&a, &b));
        prop_assert!(sum.frobenius_norm() < 1e-10);
    }

    #[test]
    fn propagator_group_law(h in hermitian(4), s in -2.0..2.0f64, t in -2.0..2.0f64) {
        let u = &propagator(&h, s).unwrap() * &propagator(&h, t).unwrap();
        prop_assert!(close(&u, &propagator(&h, s + t).unwrap(), 1e-10));
        let unit = &u.adjoint() * &u;
        prop_assert!(close(&unit, &ComplexMatrix::identity(4), 1e-10));
    }

    #[test]
    fn span_extension_is_idempotent(ms in prop::collection::vec(matrix(2, 2), 1..6)) {
        let mut span = MatrixSpan::empty(2);
        for m in &ms {
            span.extend(m, DEFAULT_SPAN_TOL).unwrap();
        }
        prop_assert!(span.len() <= 4);
        prop_assert!(span.orthonormality_defect() < 1e-10);
        for m in &ms {
            let (again, grew) = span_extend(&span, m, DEFAULT_SPAN_TOL).unwrap();
            prop_assert!(!grew);
            prop_assert_eq!(again.len(), span.len());
        }
    }

    #[test]
    fn alpha_parseval(n in 2..=8usize, s in -3.0..3.0f64, g in -10.0..10.0f64) {
        let total: f64 = (0..n).map(|l| alpha_for(n, s, l, g, 1.0).norm_sqr()).sum();
        prop_assert!((total - (n * n) as f64).abs() < 1e-9 * (n * n) as f64);
    }

    #[test]
    fn premeasurement_conserves_norm(c in amplitudes(4), g in -10.0..10.0f64) {
        let setup = ProbeSetup::new(4).unwrap();
        let joint = attach_probe(&setup, &QuantumState::normalized(c).unwrap()).unwrap();
        let after = premeasure_with_coupling(&setup, &joint, g).unwrap();
        prop_assert!((after.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn direct_readout_ignores_coherence(c in amplitudes(3), g in -10.0..10.0f64) {
        let setup = ProbeSetup::new(3).unwrap();
        let psi = QuantumState::normalized(c).unwrap();
        let mixed = QuantumState::mixture(&psi.populations()).unwrap();
        let diff = direct_readout(&setup, &psi, g).unwrap() - direct_readout(&setup, &mixed, g).unwrap();
        prop_assert!(diff.abs() < 1e-10);
    }

    #[test]
    fn conjugate_baseline_ignores_populations(p in prop::collection::vec(0.01..1.0f64, 4), g in -10.0..10.0f64) {
        let total: f64 = p.iter().sum();
        let p: Vec<f64> = p.iter().map(|x| x / total).collect();
        let setup = ProbeSetup::new(4).unwrap();
        let diff = conjugate_readout(&setup, &QuantumState::mixture(&p).unwrap(), g).unwrap() - mixed_baseline_at(&setup, g).unwrap();
        prop_assert!(diff.abs() < 1e-10);
    }

    #[test]
    fn closed_form_matches_born_rule(c in amplitudes(3), theta in 0.0..6.0f64, g in -8.0..8.0f64) {
        let setup = ProbeSetup::new(3).unwrap();
        let norm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let c: Vec<Complex64> = c.iter().map(|z| z / norm).collect();
        let lam = lambda_interpolated(3, theta).unwrap();
        let gram = lam.overlap_gram();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { (-theta).exp() };
                prop_assert!((gram[(i, j)] - c64(want, 0.0)).norm() < 1e-12);
            }
        }
        let a = expected_value_partial_at(&setup, &c, &lam, g).unwrap();
        prop_assert!((a - born_rule_partial(&setup, &c, &lam, g).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn partial_traces_are_states(c in amplitudes(6)) {
        let psi = QuantumState::normalized(c).unwrap().with_layout(FactorLayout::new(vec![2, 3]).unwrap()).unwrap();
        for keep in [[0usize], [1]] {
            let rho = partial_trace(&psi, &keep).unwrap();
            prop_assert!((rho.density_matrix().trace().re - 1.0).abs() < 1e-12);
            prop_assert!(rho.min_eigenvalue().unwrap() > -1e-9);
        }
        // both reductions of a pure state share their spectrum, hence purity
        let a = partial_trace(&psi, &[0]).unwrap().purity();
        let b = partial_trace(&psi, &[1]).unwrap().purity();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn dft_fourth_power(n in 1..=12usize) {
        let f4 = dft_matrix(n).pow(4);
        prop_assert!(close(&f4, &ComplexMatrix::identity(n), 1e-10));
    }
}
