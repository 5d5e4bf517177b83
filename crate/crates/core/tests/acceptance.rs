//! Acceptance suite: one PASS/FAIL line per criterion, with its runtime
//! budget. Run with `cargo test -p qprobe --test acceptance -- --nocapture`.

use std::fs;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use qprobe::decoherence::{
    born_rule_partial, closed_form_partial, expanded_form_partial, expected_value_partial_at, lambda_interpolated, lambda_mixed, lambda_pure,
};
use qprobe::decoupling::{certify, corpus, trial_deviations};
use qprobe::harness::{emit, parse_scenario, run, OutputFormat};
use qprobe::linalg::{c64, dft_matrix, propagator, ComplexMatrix};
use qprobe::probe::{attach_probe, branch_amplitudes, closed_form_branches, direct_readout, premeasure_with_coupling, ProbeSetup};
use qprobe::protocol::{coherence_indicator, conjugate_readout, inverse_qft_system, mixed_baseline_at, pure_prediction, qft_system};
use qprobe::states::{
    evolve_observed, partial_trace, DriftControlSystem, FactorLayout, Operator, PiecewiseConstant, QuantumState,
};
use qprobe::tomography::{
    estimate_populations, max_abs_error, min_gap, post_interaction_distribution, sample_outcomes, Histogram, Observation, ProbeWavefunction,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn random_amplitudes(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    QuantumState::random_pure(n, rng).amplitudes().unwrap().to_vec()
}

fn random_populations(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn random_hermitian(d: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
    let x = ComplexMatrix::from_fn(d, d, |_, _| c64(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    (&x + &x.adjoint()).scale_real(0.5)
}

fn unitarity_defect(u: &ComplexMatrix) -> f64 {
    (&(&u.adjoint() * u) - &ComplexMatrix::identity(u.rows())).frobenius_norm()
}

fn shift_fidelity() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in [2, 3, 4, 8] {
        for j in 0..n {
            for k in 0..n {
                let setup = ProbeSetup::new(n).unwrap().with_initial_probe(k).unwrap();
                let joint = attach_probe(&setup, &QuantumState::basis(n, j)).unwrap();
                let after = premeasure_with_coupling(&setup, &joint, setup.completion_coupling()).unwrap();
                let target = QuantumState::basis(n * n, j * n + (k + j) % n)
                    .with_layout(FactorLayout::new(vec![n, n]).unwrap())
                    .unwrap();
                worst = worst.max(1.0 - after.fidelity(&target).unwrap());
            }
        }
    }
    Outcome {
        pass: worst < 1e-10,
        detail: format!("max infidelity {worst:.2e}"),
    }
}

fn alpha_vs_propagator() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for n in [2, 4, 8] {
        let setup = ProbeSetup::new(n).unwrap();
        for _ in 0..50 {
            let c = random_amplitudes(n, &mut rng);
            let g = rng.random_range(-2.0..2.0) * setup.completion_coupling();
            let joint = attach_probe(&setup, &QuantumState::normalized(c.clone()).unwrap()).unwrap();
            let evolved = branch_amplitudes(&setup, &premeasure_with_coupling(&setup, &joint, g).unwrap()).unwrap();
            let closed = closed_form_branches(&setup, &c, g);
            for (got, want) in evolved.iter().zip(&closed) {
                let overlap: Complex64 = got.iter().zip(want).map(|(x, y)| y.conj() * x).sum();
                let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { c64(1.0, 0.0) };
                for (x, y) in got.iter().zip(want) {
                    worst = worst.max((x - phase * y).norm());
                }
            }
        }
    }
    Outcome {
        pass: worst < 1e-9,
        detail: format!("max branch deviation {worst:.2e}"),
    }
}

fn pure_mixed_degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for n in [2, 4, 8] {
        let setup = ProbeSetup::new(n).unwrap();
        for _ in 0..100 {
            let psi = QuantumState::random_pure(n, &mut rng);
            let mixed = QuantumState::mixture(&psi.populations()).unwrap();
            let g = rng.random_range(-3.0..3.0) * setup.completion_coupling();
            let a = direct_readout(&setup, &psi, g).unwrap();
            let b = direct_readout(&setup, &mixed, g).unwrap();
            worst = worst.max((a - b).abs());
        }
    }
    Outcome {
        pass: worst < 1e-10,
        detail: format!("max |pure − mixed| {worst:.2e}"),
    }
}

fn conjugate_discrimination() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_baseline: f64 = 0.0;
    let mut min_hits = usize::MAX;
    for n in [2, 4, 8] {
        let setup = ProbeSetup::new(n).unwrap();
        let g = setup.completion_coupling();
        let baseline = mixed_baseline_at(&setup, g).unwrap();
        for _ in 0..20 {
            let diag = QuantumState::mixture(&random_populations(n, &mut rng)).unwrap();
            worst_baseline = worst_baseline.max((conjugate_readout(&setup, &diag, g).unwrap() - baseline).abs());
        }
        let hits = (0..100)
            .filter(|_| {
                let psi = QuantumState::random_pure(n, &mut rng);
                (conjugate_readout(&setup, &psi, g).unwrap() - baseline).abs() > 1e-6
            })
            .count();
        min_hits = min_hits.min(hits);
    }
    Outcome {
        pass: worst_baseline < 1e-10 && min_hits >= 95,
        detail: format!("baseline spread {worst_baseline:.2e}; pure states separated {min_hits}/100 (worst n)"),
    }
}

fn lambda_family() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut oracle, mut endpoints): (f64, f64) = (0.0, 0.0);
    for n in [2, 3, 4, 8] {
        let setup = ProbeSetup::new(n).unwrap();
        for _ in 0..50 {
            let c = random_amplitudes(n, &mut rng);
            let lam = lambda_interpolated(n, rng.random_range(0.0..5.0)).unwrap();
            let g = rng.random_range(-2.0..2.0) * setup.completion_coupling();
            let born = born_rule_partial(&setup, &c, &lam, g).unwrap();
            oracle = oracle
                .max((expected_value_partial_at(&setup, &c, &lam, g).unwrap() - born).abs())
                .max((expanded_form_partial(&setup, &c, &lam, g).unwrap() - born).abs());

            let case_one = pure_prediction(&setup, &c, g).unwrap();
            let diag: Vec<f64> = c.iter().map(|z| z.norm_sqr()).collect();
            let case_two = conjugate_readout(&setup, &QuantumState::mixture(&diag).unwrap(), g).unwrap();
            endpoints = endpoints
                .max((closed_form_partial(&setup, &c, &lambda_pure(n), g).unwrap() - case_one).abs())
                .max((closed_form_partial(&setup, &c, &lambda_mixed(n), g).unwrap() - case_two).abs());
        }
    }
    let setup = ProbeSetup::new(4).unwrap();
    let g = setup.completion_coupling();
    let c = vec![c64(0.5, 0.0); 4];
    let pure = closed_form_partial(&setup, &c, &lambda_pure(4), g).unwrap();
    let mixed = closed_form_partial(&setup, &c, &lambda_mixed(4), g).unwrap();
    let sweep: Vec<f64> = [0.0, 0.5, 1.0, 2.0, 4.0, 40.0]
        .iter()
        .map(|&theta| {
            let a = expected_value_partial_at(&setup, &c, &lambda_interpolated(4, theta).unwrap(), g).unwrap();
            coherence_indicator(a, pure, mixed)
        })
        .collect();
    let monotone = sweep.windows(2).all(|w| w[1] <= w[0]);
    Outcome {
        pass: oracle < 1e-9 && endpoints < 1e-10 && monotone,
        detail: format!(
            "oracle {oracle:.2e}; endpoints {endpoints:.2e}; sweep [{}]",
            sweep.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn decoupling_corpus() -> Outcome {
    let mut agree = 0;
    let mut notes = Vec::new();
    let entries = corpus::all();
    for entry in &entries {
        let report = certify(&entry.problem).unwrap();
        let devs = trial_deviations(&entry.problem, 100, 10.0, 1e-3, 2024).unwrap();
        let max = devs.iter().cloned().fold(0.0, f64::max);
        let ok = if report.open_loop_decoupled { max < 1e-6 } else { max > 1e-3 };
        if ok {
            agree += 1;
        }
        notes.push(format!("{}={}:{max:.1e}", entry.name, if report.open_loop_decoupled { "D" } else { "N" }));
    }
    Outcome {
        pass: entries.len() >= 6 && agree == entries.len(),
        detail: format!("{agree}/{} agree; {}", entries.len(), notes.join(" ")),
    }
}

fn tomography_recovery() -> Outcome {
    let s = [0.0, 1.0, 2.0, 3.0];
    let g = 1.0;
    let sigma = 0.1 * g * min_gap(&s);
    let phi = ProbeWavefunction::gaussian_for(0.0, sigma, g, &s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = random_populations(4, &mut rng);
    let f = post_interaction_distribution(&phi, g, &s, &p).unwrap();
    let exact = max_abs_error(&estimate_populations(Observation::Sampled(&f), &phi, g, &s).unwrap().p_hat, &p);
    let mut errors: Vec<f64> = (0..20u64)
        .map(|seed| {
            let draws = sample_outcomes(&f, 100_000, seed).unwrap();
            let hist = Histogram::from_samples(&draws, phi.grid.a_min, phi.grid.a_max, 400).unwrap();
            max_abs_error(&estimate_populations(Observation::Histogram(&hist), &phi, g, &s).unwrap().p_hat, &p)
        })
        .collect();
    errors.sort_by(f64::total_cmp);
    let median = 0.5 * (errors[9] + errors[10]);
    Outcome {
        pass: exact < 1e-6 && median < 5e-2,
        detail: format!("noiseless {exact:.2e}; sampled median {median:.2e}"),
    }
}

const DETERMINISM_CONFIGS: [&str; 3] = [
    r#"{"schema_version": 1, "name": "det-conj", "kind": "conjugate_protocol", "n": 3,
        "state": {"amplitudes": [[0.6,0],[0,0.64],[0.48,0]], "lambda": {"kind": "interpolated", "theta": 0.7}},
        "schedule": {"periodic": {"count": 5, "width": 0.8}}}"#,
    r#"{"schema_version": 1, "name": "det-tomo", "kind": "tomography", "n": 4,
        "state": {"populations": [0.1,0.2,0.3,0.4]}, "tomography": {"samples": 20000}, "seed": 11}"#,
    r#"{"schema_version": 1, "name": "det-dec", "kind": "decoupling_check",
        "decoupling": {"corpus": "pauli-closure", "simulation": {"trials": 6, "horizon": 2, "dt": 0.01}}, "seed": 5}"#,
];

fn global_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();

    // norm and trace over 10³ steps
    let layout = FactorLayout::new(vec![2, 3]).unwrap();
    let op = |m: ComplexMatrix| Operator::new(layout.clone(), m).unwrap();
    let sys = DriftControlSystem::new(
        op(random_hermitian(6, &mut rng)),
        vec![op(random_hermitian(6, &mut rng))],
        op(random_hermitian(6, &mut rng).scale_real(0.3)),
        vec![PiecewiseConstant::new(vec![0.0, 0.4, 0.7], vec![1.0, -0.5, 0.25]).unwrap()],
    )
    .unwrap();
    let psi = QuantumState::random_pure(6, &mut rng).with_layout(layout.clone()).unwrap();
    let (mut norm_dev, mut steps): (f64, usize) = (0.0, 0);
    evolve_observed(&sys, &psi, 0.0, 1.0, 1e-3, |_, s| {
        norm_dev = norm_dev.max((s.norm() - 1.0).abs());
        steps += 1;
    })
    .unwrap();
    let rho = QuantumState::density(layout.clone(), {
        let a = QuantumState::random_pure(6, &mut rng).to_density().density_matrix();
        let b = QuantumState::random_pure(6, &mut rng).to_density().density_matrix();
        &a.scale_real(0.3) + &b.scale_real(0.7)
    })
    .unwrap();
    let mut floor = f64::INFINITY;
    evolve_observed(&sys, &rho, 0.0, 1.0, 1e-3, |_, s| {
        norm_dev = norm_dev.max((s.density_matrix().trace().re - 1.0).abs());
        floor = floor.min(s.min_eigenvalue().unwrap());
    })
    .unwrap();
    if steps != 1000 || norm_dev >= 1e-9 {
        failures.push(format!("norm/trace {norm_dev:.2e} over {steps} steps"));
    }

    // unitarity
    let mut unit: f64 = 0.0;
    for d in [2, 3, 4, 6, 8] {
        let u = propagator(&random_hermitian(d, &mut rng), rng.random_range(-3.0..3.0)).unwrap();
        unit = unit.max(unitarity_defect(&u)).max(unitarity_defect(&dft_matrix(d)));
    }
    for n in [2, 3, 4, 8] {
        let setup = ProbeSetup::new(n).unwrap();
        let joint = attach_probe(&setup, &QuantumState::random_pure(n, &mut rng)).unwrap();
        let after = premeasure_with_coupling(&setup, &joint, rng.random_range(-5.0..5.0)).unwrap();
        let round = inverse_qft_system(&qft_system(&after, 0).unwrap(), 0).unwrap();
        unit = unit.max((after.norm() - 1.0).abs()).max((1.0 - round.fidelity(&after).unwrap()).abs());
    }
    if unit >= 1e-10 {
        failures.push(format!("unitarity {unit:.2e}"));
    }

    // positivity of reduced states
    for _ in 0..20 {
        let joint = QuantumState::random_pure(12, &mut rng).with_layout(FactorLayout::new(vec![3, 4]).unwrap()).unwrap();
        for keep in [[0], [1]] {
            floor = floor.min(partial_trace(&joint, &keep).unwrap().min_eigenvalue().unwrap());
        }
    }
    if floor < -1e-9 {
        failures.push(format!("eigenvalue floor {floor:.2e}"));
    }

    // F⁴ = I
    let mut qft: f64 = 0.0;
    for n in 1..=16 {
        qft = qft.max((&dft_matrix(n).pow(4) - &ComplexMatrix::identity(n)).frobenius_norm());
    }
    if qft >= 1e-10 {
        failures.push(format!("F⁴ − I {qft:.2e}"));
    }

    // byte-identical reruns, across thread counts
    let dir = tempfile::tempdir().unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut identical = true;
    for (i, text) in DETERMINISM_CONFIGS.iter().enumerate() {
        let sc = parse_scenario(text).unwrap();
        let mut outputs = Vec::new();
        for (j, pool) in [None, Some(&single), None].into_iter().enumerate() {
            let record = match pool {
                Some(p) => p.install(|| run(&sc)).unwrap(),
                None => run(&sc).unwrap(),
            };
            for format in [OutputFormat::Csv, OutputFormat::Json] {
                let out = dir.path().join(format!("{i}-{j}-{format:?}"));
                outputs.push((format, fs::read(emit(&record, format, &out).unwrap()).unwrap()));
            }
        }
        for format in [OutputFormat::Csv, OutputFormat::Json] {
            let runs: Vec<_> = outputs.iter().filter(|o| o.0 == format).map(|o| &o.1).collect();
            identical &= runs.windows(2).all(|w| w[0] == w[1]);
        }
    }
    if !identical {
        failures.push("harness reruns differ".into());
    }

    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("norm {norm_dev:.1e}, unitarity {unit:.1e}, floor {floor:.1e}, F⁴ {qft:.1e}, reruns identical")
        } else {
            failures.join("; ")
        },
    }
}

#[test]
fn acceptance() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check, u64); 8] = [
        ("shift fidelity", shift_fidelity, 1),
        ("closed-form alpha vs propagator", alpha_vs_propagator, 5),
        ("pure/mixed degeneracy (direct)", pure_mixed_degeneracy, 5),
        ("conjugate-basis discrimination", conjugate_discrimination, 10),
        ("lambda endpoints and interpolation", lambda_family, 30),
        ("decoupling certifier vs simulation", decoupling_corpus, 60),
        ("tomography recovery", tomography_recovery, 30),
        ("global invariant suite", global_invariants, 30),
    ];
    let mut all = true;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*budget);
        let pass = outcome.pass && in_time;
        all &= pass;
        println!(
            "[{}] {}. {name}: {} ({:.2}s / {budget}s)",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            outcome.detail,
            elapsed.as_secs_f64()
        );
    }
    assert!(all, "acceptance criteria failed");
}
