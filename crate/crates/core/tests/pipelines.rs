use num_complex::Complex64;
use qprobe::decoupling::{build_distribution, corpus, DecouplingProblem};
use qprobe::harness::{emit, parse_scenario, render_json, run, OutputFormat, RunRecord, RunResult};
use qprobe::linalg::{c64, kron, pauli, ComplexMatrix};
use qprobe::probe::{attach_probe, premeasure_with_coupling, probe_distribution, ProbeSetup};
use qprobe::protocol::{conjugate_measure_cycle, qft_system, run_schedule, run_schedule_with_state, ProbePolicy, PulseSchedule};
use qprobe::states::{partial_trace, FactorLayout, Operator, QuantumState};
use qprobe::tomography::{
    estimate_populations, max_abs_error, post_interaction_distribution, sample_outcomes, Histogram, Observation, ProbeWavefunction,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const S4: [f64; 4] = [0.0, 1.0, 2.0, 3.0];

#[test]
fn tomography_agrees_with_discrete_probe_readout() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let setup = ProbeSetup::new(4).unwrap();
    let psi = QuantumState::random_pure(4, &mut rng);
    let joint = attach_probe(&setup, &psi).unwrap();
    let read = probe_distribution(&setup, &premeasure_with_coupling(&setup, &joint, setup.completion_coupling()).unwrap()).unwrap();

    let phi = ProbeWavefunction::gaussian_for(0.0, 0.1, 1.0, &S4).unwrap();
    let f = post_interaction_distribution(&phi, 1.0, &S4, &psi.populations()).unwrap();
    let est = estimate_populations(Observation::Sampled(&f), &phi, 1.0, &S4).unwrap();
    assert!(max_abs_error(&est.p_hat, &read) < 1e-6);
}

#[test]
fn sampled_mean_is_consistent() {
    let phi = ProbeWavefunction::gaussian_for(0.0, 0.1, 1.0, &S4).unwrap();
    let f = post_interaction_distribution(&phi, 1.0, &S4, &[0.1, 0.2, 0.3, 0.4]).unwrap();
    let draws = sample_outcomes(&f, 100_000, 4).unwrap();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    assert!((mean - f.mean()).abs() < 3.0 * (var / draws.len() as f64).sqrt());
}

#[test]
fn estimator_error_shrinks_with_samples() {
    let p = [0.15, 0.35, 0.2, 0.3];
    let phi = ProbeWavefunction::gaussian_for(0.0, 0.1, 1.0, &S4).unwrap();
    let f = post_interaction_distribution(&phi, 1.0, &S4, &p).unwrap();
    let median = |count: usize| {
        let mut errs: Vec<f64> = (0..20u64)
            .map(|seed| {
                let draws = sample_outcomes(&f, count, 1000 + seed).unwrap();
                let h = Histogram::from_samples(&draws, phi.grid.a_min, phi.grid.a_max, 400).unwrap();
                let est = estimate_populations(Observation::Histogram(&h), &phi, 1.0, &S4).unwrap();
                let total: f64 = est.p_hat.iter().sum();
                assert!(est.p_hat.iter().all(|x| *x >= 0.0) && (total - 1.0).abs() < 1e-8);
                max_abs_error(&est.p_hat, &p)
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        0.5 * (errs[9] + errs[10])
    };
    let m: Vec<f64> = [1_000, 10_000, 100_000].into_iter().map(median).collect();
    assert!(m[0] > m[1] && m[1] > m[2], "{m:?}");
}

fn qubit_joint(setup: &ProbeSetup, c: &[Complex64]) -> QuantumState {
    attach_probe(setup, &QuantumState::normalized(c.to_vec()).unwrap()).unwrap()
}

#[test]
fn zero_window_restores_the_system_exactly() {
    let setup = ProbeSetup::new(3).unwrap();
    let c = [c64(0.6, 0.0), c64(0.0, 0.64), c64(0.48, 0.0)];
    let joint = qubit_joint(&setup, &c);
    let (after, _) = conjugate_measure_cycle(&setup, &joint, (0.0, 0.0), &c).unwrap();
    let system = partial_trace(&after, &[0]).unwrap();
    assert!(system.fidelity(&QuantumState::normalized(c.to_vec()).unwrap()).unwrap() > 1.0 - 1e-12);
}

#[test]
fn cycles_preserve_conjugate_populations_and_repeat() {
    let setup = ProbeSetup::new(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let psi = QuantumState::random_pure(4, &mut rng);
    let c = psi.amplitudes().unwrap().to_vec();
    let joint = attach_probe(&setup, &psi).unwrap();
    let schedule = PulseSchedule::periodic(5, 0.7).unwrap();
    let (last, readouts) = run_schedule_with_state(&setup, &joint, &schedule, &c, ProbePolicy::Fresh).unwrap();
    for r in &readouts {
        assert!((r.expected_a - readouts[0].expected_a).abs() < 1e-10);
    }
    let before = qft_system(&psi, 0).unwrap().populations();
    let after = qft_system(&partial_trace(&last, &[0]).unwrap(), 0).unwrap().populations();
    assert!(max_abs_error(&before, &after) < 1e-10);
}

#[test]
fn carried_probe_skips_the_fresh_check() {
    let setup = ProbeSetup::new(2).unwrap();
    let c = [c64(0.6, 0.0), c64(0.8, 0.0)];
    let schedule = PulseSchedule::periodic(3, 1.0).unwrap();
    let carried = run_schedule(&setup, &qubit_joint(&setup, &c), &schedule, &c, ProbePolicy::Carry).unwrap();
    let fresh = run_schedule(&setup, &qubit_joint(&setup, &c), &schedule, &c, ProbePolicy::Fresh).unwrap();
    assert_eq!(carried[0], fresh[0]);
    assert_eq!(carried.len(), 3);
}

#[test]
fn closure_is_monotone_in_generators() {
    let l = FactorLayout::new(vec![2, 2]).unwrap();
    let id = pauli::id();
    let op = |m: ComplexMatrix| Operator::new(l.clone(), m).unwrap();
    let base = |controls: Vec<Operator>| {
        DecouplingProblem::new(op(kron(&pauli::x(), &id)), op(kron(&pauli::z(), &id)), controls, Operator::zero(l.clone())).unwrap()
    };
    let small = build_distribution(&base(vec![])).unwrap();
    let large = build_distribution(&base(vec![op(kron(&pauli::x(), &pauli::z()))])).unwrap();
    assert!(small.len() <= large.len());
    for b in small.basis() {
        assert!(large.residual(b).unwrap().frobenius_norm() < 1e-10);
    }
    for entry in corpus::all() {
        assert!(build_distribution(&entry.problem).unwrap().len() <= 64);
    }
}

#[test]
fn json_record_round_trips() {
    for text in [
        r#"{"schema_version": 1, "name": "rt-sweep", "kind": "lambda_sweep", "n": 3,
            "state": {"lambda": {"kind": "dephasing", "rate": 0.4}}, "schedule": {"periodic": {"count": 4, "width": 0.5}}}"#,
        r#"{"schema_version": 1, "name": "rt-direct", "kind": "direct_measure", "n": 2, "state": {"populations": [0.3, 0.7]}}"#,
        r#"{"schema_version": 1, "name": "rt-tomo", "kind": "tomography", "n": 3, "state": {"populations": [0.2, 0.3, 0.5]}}"#,
    ] {
        let record = run(&parse_scenario(text).unwrap()).unwrap();
        let back: RunRecord = serde_json::from_str(&render_json(&record)).unwrap();
        assert_eq!(back, record);
    }
}

#[test]
fn sweep_rows_are_ordered_and_decay() {
    let sc = parse_scenario(
        r#"{"schema_version": 1, "name": "decay", "kind": "lambda_sweep", "n": 4,
            "state": {"lambda": {"kind": "dephasing", "rate": 0.5}}, "schedule": {"periodic": {"count": 10, "width": 1}}}"#,
    )
    .unwrap();
    let RunResult::Rows { rows } = run(&sc).unwrap().result else { panic!("rows expected") };
    assert!(rows.windows(2).all(|w| w[0].t < w[1].t && w[1].coherence_indicator <= w[0].coherence_indicator + 1e-12));
    assert!((rows[0].coherence_indicator - (-0.5f64).exp()).abs() < 1e-9);
}

#[test]
fn golden_csv_for_fixed_scenario() {
    let sc = parse_scenario(
        r#"{"schema_version": 1, "name": "golden", "kind": "conjugate_protocol", "n": 2,
            "state": {"amplitudes": [[0.6, 0], [0.8, 0]]}, "schedule": {"windows": [[0, 0.5], [1, 2]]}}"#,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(emit(&run(&sc).unwrap(), OutputFormat::Csv, dir.path()).unwrap()).unwrap();
    assert_eq!(text, include_str!("golden/conjugate_qubit.csv"));
}
