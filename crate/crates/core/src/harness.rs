//! Scenario configs, runs and result files.
//!
//! A scenario is a JSON document with a `schema_version` field. Complex
//! numbers are `[re, im]` pairs and operators are row-major nested arrays of
//! them. Parsing fills every default in, so the scenario echoed in a record
//! is complete and re-parses to itself.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoherence::{build_joint, closed_form_partial, expected_value_partial_at, lambda_interpolated, lambda_mixed, lambda_pure, LambdaMatrix};
use crate::decoupling::{certify, corpus, simulate_output_invariance, DecouplingProblem, DecouplingReport, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::linalg::{c64, ComplexMatrix, HERMITIAN_TOL};
use crate::probe::{attach_probe, closed_form_direct, direct_readout, CouplingProfile, ProbeSetup};
use crate::protocol::{coherence_indicator, run_schedule, ProbePolicy, PulseSchedule};
use crate::states::{FactorLayout, Operator, PiecewiseConstant, QuantumState};
use crate::tomography::{
    estimate_populations, max_abs_error, min_gap, post_interaction_distribution, sample_outcomes, Histogram, Observation,
    PopulationEstimate, ProbeWavefunction, DEFAULT_GRID_POINTS,
};

pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "QPROBE_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "out";
pub const DEFAULT_BINS: usize = 400;
/// Allowed deviation of ‖c‖ from 1 in a config.
pub const AMPLITUDE_TOL: f64 = 1e-6;
pub const CSV_HEADER: &str = "t,G,expected_a,pure_prediction,mixed_baseline,coherence_indicator";

/// `[re, im]`.
pub type ComplexConfig = [f64; 2];
pub type MatrixConfig = Vec<Vec<ComplexConfig>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    DirectMeasure,
    ConjugateProtocol,
    LambdaSweep,
    DecouplingCheck,
    Tomography,
}

impl ScenarioKind {
    fn label(self) -> &'static str {
        match self {
            Self::DirectMeasure => "direct_measure",
            Self::ConjugateProtocol => "conjugate_protocol",
            Self::LambdaSweep => "lambda_sweep",
            Self::DecouplingCheck => "decoupling_check",
            Self::Tomography => "tomography",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseConfig {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

/// A constant rate or a piecewise-constant signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CouplingConfig {
    Constant(f64),
    Piecewise(PiecewiseConfig),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hbar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_probe: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaConfig {
    Pure,
    Mixed,
    Interpolated { theta: f64 },
    Matrix { entries: MatrixConfig },
    /// θ(t) = rate·t, for sweeps.
    Dephasing { rate: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<ComplexConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub populations: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<LambdaConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicConfig {
    pub count: usize,
    pub width: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub windows: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periodic: Option<PeriodicConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_policy: Option<ProbePolicy>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub trials: usize,
    pub horizon: f64,
    pub dt: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecouplingConfig {
    /// Name of a built-in corpus problem; excludes the explicit operators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<MatrixConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<MatrixConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<Vec<MatrixConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<MatrixConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    /// Absent: estimate from the exact density.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub kind: ScenarioKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoupling: Option<DecouplingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tomography: Option<TomographyConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub t: f64,
    #[serde(rename = "G")]
    pub g: f64,
    pub expected_a: f64,
    pub pure_prediction: f64,
    pub mixed_baseline: f64,
    pub coherence_indicator: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplingOutcome {
    pub report: DecouplingReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulated_max_deviation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomographyOutcome {
    pub populations: Vec<f64>,
    pub estimate: PopulationEstimate,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunResult {
    Rows { rows: Vec<Row> },
    Decoupling(DecouplingOutcome),
    Tomography(TomographyOutcome),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub config_hash: String,
    pub seed: u64,
    pub result: RunResult,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Git-style blob hash: sha256 of `"blob <len>\0" + content`, hex encoded.
pub fn config_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Canonical text of a scenario; this is what the record hash covers.
pub fn canonical_json(sc: &Scenario) -> String {
    serde_json::to_string(sc).expect("scenario serialises")
}

/// Parses, validates and completes a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })?;
    complete(raw)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario(&fs::read_to_string(path)?)
}

fn forbid<T>(field: &Option<T>, name: &str, kind: ScenarioKind) -> Result<()> {
    match field {
        Some(_) => Err(Error::config(name, format!("not used by kind `{}`", kind.label()))),
        None => Ok(()),
    }
}

fn require_n(sc: &Scenario) -> Result<usize> {
    match sc.n {
        Some(0) => Err(Error::config("n", "dimension must be positive")),
        Some(n) => Ok(n),
        None => Err(Error::config("n", format!("required by kind `{}`", sc.kind.label()))),
    }
}

fn check_len<T>(v: &[T], n: usize, path: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::config(path, format!("expected {n} entries, found {}", v.len())));
    }
    Ok(())
}

fn to_complex(v: &[ComplexConfig]) -> Vec<Complex64> {
    v.iter().map(|z| c64(z[0], z[1])).collect()
}

fn matrix_from(m: &MatrixConfig, dim: usize, path: &str) -> Result<ComplexMatrix> {
    check_len(m, dim, path)?;
    for (r, row) in m.iter().enumerate() {
        check_len(row, dim, &format!("{path}[{r}]"))?;
    }
    let flat: Vec<Complex64> = m.iter().flat_map(|row| row.iter().map(|z| c64(z[0], z[1]))).collect();
    ComplexMatrix::from_row_major(dim, dim, flat).map_err(|e| Error::config(path, e.to_string()))
}

fn hermitian_from(m: &MatrixConfig, dim: usize, path: &str) -> Result<ComplexMatrix> {
    let h = matrix_from(m, dim, path)?;
    let defect = h.hermiticity_defect();
    if defect > HERMITIAN_TOL {
        return Err(Error::config(path, format!("operator is not Hermitian (‖H − H†‖_F = {defect:.3e})")));
    }
    Ok(h)
}

fn complete_probe(p: Option<ProbeConfig>, n: usize) -> Result<ProbeConfig> {
    let p = p.unwrap_or_default();
    let ladder: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let hbar = p.hbar.unwrap_or(1.0);
    if !(hbar > 0.0 && hbar.is_finite()) {
        return Err(Error::config("probe.hbar", "must be positive and finite"));
    }
    let done = ProbeConfig {
        a: Some(p.a.unwrap_or_else(|| ladder.clone())),
        s: Some(p.s.unwrap_or(ladder)),
        coupling: Some(p.coupling.unwrap_or(CouplingConfig::Constant(hbar * 2.0 * PI / n as f64))),
        hbar: Some(hbar),
        initial_probe: Some(p.initial_probe.unwrap_or(0)),
    };
    probe_setup(&done, n)?;
    Ok(done)
}

fn probe_setup(p: &ProbeConfig, n: usize) -> Result<ProbeSetup> {
    let a = p.a.clone().unwrap_or_default();
    let s = p.s.clone().unwrap_or_default();
    check_len(&a, n, "probe.a")?;
    check_len(&s, n, "probe.s")?;
    let coupling = match p.coupling.as_ref().expect("completed") {
        CouplingConfig::Constant(g) => CouplingProfile::constant(*g),
        CouplingConfig::Piecewise(pc) => {
            PiecewiseConstant::new(pc.breakpoints.clone(), pc.values.clone()).and_then(CouplingProfile::new)
        }
    }
    .map_err(|e| Error::config("probe.coupling", e.to_string()))?;
    ProbeSetup::new(n)?
        .with_probe_eigenvalues(a)?
        .with_system_eigenvalues(s)?
        .with_coupling(coupling)
        .with_hbar(p.hbar.expect("completed"))
        .map_err(|e| Error::config("probe.hbar", e.to_string()))?
        .with_initial_probe(p.initial_probe.expect("completed"))
        .map_err(|e| Error::config("probe.initial_probe", e.to_string()))
}

fn check_amplitudes(c: &[ComplexConfig], n: usize) -> Result<Vec<Complex64>> {
    check_len(c, n, "state.amplitudes")?;
    let z = to_complex(c);
    let norm = z.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > AMPLITUDE_TOL {
        return Err(Error::config(
            "state.amplitudes",
            format!("amplitudes have norm {norm}, expected 1 within {AMPLITUDE_TOL:e}"),
        ));
    }
    Ok(z.into_iter().map(|x| x / norm).collect())
}

fn check_populations(p: &[f64], n: usize) -> Result<Vec<f64>> {
    check_len(p, n, "state.populations")?;
    let total: f64 = p.iter().sum();
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) || (total - 1.0).abs() > AMPLITUDE_TOL {
        return Err(Error::config("state.populations", format!("must be non-negative and sum to 1, sum is {total}")));
    }
    Ok(p.iter().map(|x| x / total).collect())
}

fn complete_schedule(s: Option<ScheduleConfig>) -> Result<ScheduleConfig> {
    let s = s.unwrap_or_default();
    let windows = match (s.windows, s.periodic) {
        (Some(_), Some(_)) => return Err(Error::config("schedule", "give either `windows` or `periodic`, not both")),
        (Some(w), None) => w,
        (None, Some(p)) => {
            let sched = PulseSchedule::periodic(p.count, p.width).map_err(|e| Error::config("schedule.periodic", e.to_string()))?;
            sched.windows().iter().map(|&(a, b)| [a, b]).collect()
        }
        (None, None) => vec![[0.0, 1.0]],
    };
    PulseSchedule::new(windows.iter().map(|w| (w[0], w[1])).collect()).map_err(|e| Error::config("schedule.windows", e.to_string()))?;
    Ok(ScheduleConfig {
        windows: Some(windows),
        periodic: None,
        probe_policy: Some(s.probe_policy.unwrap_or_default()),
    })
}

fn lambda_from(cfg: &LambdaConfig, n: usize) -> Result<LambdaMatrix> {
    let path = "state.lambda";
    match cfg {
        LambdaConfig::Pure => Ok(lambda_pure(n)),
        LambdaConfig::Mixed => Ok(lambda_mixed(n)),
        LambdaConfig::Interpolated { theta } => lambda_interpolated(n, *theta).map_err(|e| Error::config(path, e.to_string())),
        LambdaConfig::Matrix { entries } => {
            LambdaMatrix::new(matrix_from(entries, n, "state.lambda.entries")?).map_err(|e| Error::config("state.lambda.entries", e.to_string()))
        }
        LambdaConfig::Dephasing { .. } => Err(Error::config(path, "`dephasing` is only valid for kind `lambda_sweep`")),
    }
}

fn default_amplitudes(n: usize) -> Vec<ComplexConfig> {
    vec![[1.0 / (n as f64).sqrt(), 0.0]; n]
}

fn complete_state(sc: &Scenario, n: usize) -> Result<StateConfig> {
    let st = sc.state.clone().unwrap_or_default();
    match sc.kind {
        ScenarioKind::DirectMeasure | ScenarioKind::Tomography => {
            forbid(&st.lambda, "state.lambda", sc.kind)?;
            match (&st.amplitudes, &st.populations) {
                (Some(_), Some(_)) => return Err(Error::config("state", "give either `amplitudes` or `populations`, not both")),
                (Some(c), None) => {
                    check_amplitudes(c, n)?;
                }
                (None, Some(p)) => {
                    check_populations(p, n)?;
                }
                (None, None) => {
                    return Ok(StateConfig {
                        amplitudes: Some(default_amplitudes(n)),
                        ..Default::default()
                    })
                }
            }
            Ok(st)
        }
        ScenarioKind::ConjugateProtocol | ScenarioKind::LambdaSweep => {
            forbid(&st.populations, "state.populations", sc.kind)?;
            let amplitudes = st.amplitudes.unwrap_or_else(|| default_amplitudes(n));
            check_amplitudes(&amplitudes, n)?;
            let lambda = match (sc.kind, st.lambda) {
                (ScenarioKind::LambdaSweep, Some(LambdaConfig::Dephasing { rate })) => {
                    if !(rate >= 0.0 && rate.is_finite()) {
                        return Err(Error::config("state.lambda.rate", "must be finite and non-negative"));
                    }
                    Some(LambdaConfig::Dephasing { rate })
                }
                (ScenarioKind::LambdaSweep, _) => {
                    return Err(Error::config("state.lambda", "kind `lambda_sweep` needs {\"kind\": \"dephasing\", \"rate\": …}"))
                }
                (_, Some(l)) => {
                    lambda_from(&l, n)?;
                    Some(l)
                }
                (_, None) => None,
            };
            Ok(StateConfig {
                amplitudes: Some(amplitudes),
                populations: None,
                lambda,
            })
        }
        ScenarioKind::DecouplingCheck => unreachable!("no state for decoupling checks"),
    }
}

fn complete_decoupling(d: Option<DecouplingConfig>) -> Result<DecouplingConfig> {
    let d = d.ok_or_else(|| Error::config("decoupling", "required by kind `decoupling_check`"))?;
    let tol = d.tol.unwrap_or(DEFAULT_TOL);
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::config("decoupling.tol", "must be positive"));
    }
    if let Some(sim) = &d.simulation {
        if sim.trials == 0 {
            return Err(Error::config("decoupling.simulation.trials", "must be at least 1"));
        }
        if !(sim.horizon > 0.0 && sim.dt > 0.0 && sim.horizon.is_finite() && sim.dt.is_finite()) {
            return Err(Error::config("decoupling.simulation", "horizon and dt must be positive"));
        }
    }
    let done = DecouplingConfig {
        tol: Some(tol),
        controls: if d.corpus.is_none() { Some(d.controls.clone().unwrap_or_default()) } else { d.controls.clone() },
        ..d
    };
    decoupling_problem(&done)?;
    Ok(done)
}

fn required<'a>(m: &'a Option<MatrixConfig>, name: &str) -> Result<&'a MatrixConfig> {
    m.as_ref().ok_or_else(|| Error::config(format!("decoupling.{name}"), "required"))
}

fn decoupling_problem(d: &DecouplingConfig) -> Result<DecouplingProblem> {
    let tol = d.tol.expect("completed");
    if let Some(name) = &d.corpus {
        for (field, present) in [
            ("decoupling.dims", d.dims.is_some()),
            ("decoupling.output", d.output.is_some()),
            ("decoupling.drift", d.drift.is_some()),
            ("decoupling.controls", d.controls.is_some()),
            ("decoupling.interaction", d.interaction.is_some()),
        ] {
            if present {
                return Err(Error::config(field, "not allowed together with `corpus`"));
            }
        }
        let entry = corpus::all().into_iter().find(|e| e.name == name).ok_or_else(|| {
            let names: Vec<_> = corpus::all().iter().map(|e| e.name).collect();
            Error::config("decoupling.corpus", format!("unknown problem `{name}`; known: {}", names.join(", ")))
        })?;
        return Ok(entry.problem.with_tol(tol));
    }
    let dims = d.dims.clone().ok_or_else(|| Error::config("decoupling.dims", "required"))?;
    let layout = FactorLayout::new(dims).map_err(|e| Error::config("decoupling.dims", e.to_string()))?;
    let dim = layout.total();
    let op = |m: ComplexMatrix| Operator::new(layout.clone(), m);
    let c0 = op(matrix_from(required(&d.output, "output")?, dim, "decoupling.output")?)?;
    let drift = op(hermitian_from(required(&d.drift, "drift")?, dim, "decoupling.drift")?)?;
    let interaction = op(hermitian_from(required(&d.interaction, "interaction")?, dim, "decoupling.interaction")?)?;
    let controls = d
        .controls
        .iter()
        .flatten()
        .enumerate()
        .map(|(i, m)| op(hermitian_from(m, dim, &format!("decoupling.controls[{i}]"))?))
        .collect::<Result<Vec<_>>>()?;
    Ok(DecouplingProblem::new(c0, drift, controls, interaction)?.with_tol(tol))
}

fn complete_tomography(t: Option<TomographyConfig>, s: &[f64]) -> Result<TomographyConfig> {
    let t = t.unwrap_or_default();
    let g = t.g.unwrap_or(1.0);
    if g == 0.0 || !g.is_finite() {
        return Err(Error::config("tomography.g", "must be finite and non-zero"));
    }
    let gap = min_gap(s);
    let sigma = match t.sigma {
        Some(x) => x,
        None if gap.is_finite() => 0.1 * g.abs() * gap,
        None => 0.1 * g.abs(),
    };
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config("tomography.sigma", "must be positive (system eigenvalues may coincide)"));
    }
    let grid_points = t.grid_points.unwrap_or(DEFAULT_GRID_POINTS);
    if grid_points < 2 {
        return Err(Error::config("tomography.grid_points", "must be at least 2"));
    }
    if t.samples == Some(0) {
        return Err(Error::config("tomography.samples", "must be at least 1"));
    }
    let bins = match (t.samples, t.bins) {
        (None, Some(_)) => return Err(Error::config("tomography.bins", "only used together with `samples`")),
        (None, None) => None,
        (Some(_), b) => Some(b.unwrap_or(DEFAULT_BINS)),
    };
    if bins == Some(0) {
        return Err(Error::config("tomography.bins", "must be at least 1"));
    }
    Ok(TomographyConfig {
        g: Some(g),
        center: Some(t.center.unwrap_or(0.0)),
        sigma: Some(sigma),
        grid_points: Some(grid_points),
        samples: t.samples,
        bins,
    })
}

fn complete(sc: Scenario) -> Result<Scenario> {
    if sc.schema_version != SCHEMA_VERSION {
        return Err(Error::config(
            "schema_version",
            format!("unsupported version {}, expected {SCHEMA_VERSION}", sc.schema_version),
        ));
    }
    if sc.name.trim().is_empty() {
        return Err(Error::config("name", "must not be empty"));
    }
    let kind = sc.kind;
    match kind {
        ScenarioKind::DirectMeasure | ScenarioKind::ConjugateProtocol | ScenarioKind::LambdaSweep => {
            forbid(&sc.decoupling, "decoupling", kind)?;
            forbid(&sc.tomography, "tomography", kind)?;
            let n = require_n(&sc)?;
            let probe = complete_probe(sc.probe.clone(), n)?;
            let state = complete_state(&sc, n)?;
            let schedule = complete_schedule(sc.schedule.clone())?;
            if kind != ScenarioKind::ConjugateProtocol && schedule.probe_policy != Some(ProbePolicy::Fresh) {
                return Err(Error::config("schedule.probe_policy", format!("kind `{}` always uses a fresh probe", kind.label())));
            }
            Ok(Scenario {
                probe: Some(probe),
                state: Some(state),
                schedule: Some(schedule),
                ..sc
            })
        }
        ScenarioKind::DecouplingCheck => {
            for (field, present) in [
                ("n", sc.n.is_some()),
                ("probe", sc.probe.is_some()),
                ("state", sc.state.is_some()),
                ("schedule", sc.schedule.is_some()),
                ("tomography", sc.tomography.is_some()),
            ] {
                if present {
                    return Err(Error::config(field, "not used by kind `decoupling_check`"));
                }
            }
            let decoupling = complete_decoupling(sc.decoupling.clone())?;
            Ok(Scenario {
                decoupling: Some(decoupling),
                ..sc
            })
        }
        ScenarioKind::Tomography => {
            forbid(&sc.schedule, "schedule", kind)?;
            forbid(&sc.decoupling, "decoupling", kind)?;
            let n = require_n(&sc)?;
            let given = sc.probe.clone().unwrap_or_default();
            for (field, present) in [
                ("probe.a", given.a.is_some()),
                ("probe.coupling", given.coupling.is_some()),
                ("probe.hbar", given.hbar.is_some()),
                ("probe.initial_probe", given.initial_probe.is_some()),
            ] {
                if present {
                    return Err(Error::config(field, "not used by kind `tomography`"));
                }
            }
            let s = given.s.unwrap_or_else(|| (0..n).map(|i| i as f64).collect());
            check_len(&s, n, "probe.s")?;
            let state = complete_state(&sc, n)?;
            let tomography = complete_tomography(sc.tomography.clone(), &s)?;
            Ok(Scenario {
                probe: Some(ProbeConfig {
                    s: Some(s),
                    ..Default::default()
                }),
                state: Some(state),
                tomography: Some(tomography),
                ..sc
            })
        }
    }
}

fn state_populations(st: &StateConfig, n: usize) -> Result<Vec<f64>> {
    match (&st.amplitudes, &st.populations) {
        (Some(c), _) => Ok(check_amplitudes(c, n)?.iter().map(|z| z.norm_sqr()).collect()),
        (None, Some(p)) => check_populations(p, n),
        (None, None) => Err(Error::config("state", "missing")),
    }
}

fn windows(sc: &Scenario) -> Vec<(f64, f64)> {
    sc.schedule
        .as_ref()
        .and_then(|s| s.windows.as_ref())
        .map(|w| w.iter().map(|w| (w[0], w[1])).collect())
        .unwrap_or_default()
}

fn run_direct(sc: &Scenario, setup: &ProbeSetup, n: usize) -> Result<Vec<Row>> {
    let st = sc.state.as_ref().expect("completed");
    let pops = state_populations(st, n)?;
    let system = match &st.amplitudes {
        Some(c) => QuantumState::normalized(check_amplitudes(c, n)?)?,
        None => QuantumState::mixture(&pops)?,
    };
    let mixed = QuantumState::mixture(&pops)?;
    windows(sc)
        .into_iter()
        .map(|(t0, t1)| {
            let g = setup.coupling().integrated_between(t0, t1);
            Ok(Row {
                t: t1,
                g,
                expected_a: direct_readout(setup, &system, g)?,
                pure_prediction: closed_form_direct(setup, &pops, g)?,
                mixed_baseline: direct_readout(setup, &mixed, g)?,
                // Direct readouts cannot tell pure from mixed states.
                coherence_indicator: 0.0,
            })
        })
        .collect()
}

fn run_conjugate(sc: &Scenario, setup: &ProbeSetup, n: usize) -> Result<Vec<Row>> {
    let st = sc.state.as_ref().expect("completed");
    let c = check_amplitudes(st.amplitudes.as_ref().expect("completed"), n)?;
    let system = match &st.lambda {
        Some(l) => build_joint(&c, &lambda_from(l, n)?)?,
        None => QuantumState::normalized(c.clone())?,
    };
    let joint = attach_probe(setup, &system)?;
    let ws = windows(sc);
    let schedule = PulseSchedule::new(ws.clone())?;
    let policy = sc.schedule.as_ref().and_then(|s| s.probe_policy).unwrap_or_default();
    let readouts = run_schedule(setup, &joint, &schedule, &c, policy)?;
    Ok(ws
        .iter()
        .zip(readouts)
        .map(|(&(t0, t1), r)| Row {
            t: t1,
            g: setup.coupling().integrated_between(t0, t1),
            expected_a: r.expected_a,
            pure_prediction: r.pure_prediction,
            mixed_baseline: r.mixed_baseline,
            coherence_indicator: r.coherence_indicator,
        })
        .collect())
}

fn run_sweep(sc: &Scenario, setup: &ProbeSetup, n: usize) -> Result<Vec<Row>> {
    let st = sc.state.as_ref().expect("completed");
    let c = check_amplitudes(st.amplitudes.as_ref().expect("completed"), n)?;
    let rate = match st.lambda {
        Some(LambdaConfig::Dephasing { rate }) => rate,
        _ => return Err(Error::config("state.lambda", "missing dephasing rate")),
    };
    let (pure, mixed) = (lambda_pure(n), lambda_mixed(n));
    windows(sc)
        .into_iter()
        .map(|(t0, t1)| {
            let g = setup.coupling().integrated_between(t0, t1);
            let lam = lambda_interpolated(n, rate * t1)?;
            let expected_a = expected_value_partial_at(setup, &c, &lam, g)?;
            let pure_prediction = closed_form_partial(setup, &c, &pure, g)?;
            let mixed_baseline = closed_form_partial(setup, &c, &mixed, g)?;
            Ok(Row {
                t: t1,
                g,
                expected_a,
                pure_prediction,
                mixed_baseline,
                coherence_indicator: coherence_indicator(expected_a, pure_prediction, mixed_baseline),
            })
        })
        .collect()
}

fn run_decoupling(sc: &Scenario) -> Result<DecouplingOutcome> {
    let d = sc.decoupling.as_ref().expect("completed");
    let problem = decoupling_problem(d)?;
    let report = certify(&problem)?;
    let simulated_max_deviation = d
        .simulation
        .as_ref()
        .map(|s| simulate_output_invariance(&problem, s.trials, s.horizon, s.dt, sc.seed))
        .transpose()?;
    Ok(DecouplingOutcome {
        report,
        simulated_max_deviation,
    })
}

fn run_tomography(sc: &Scenario, n: usize) -> Result<TomographyOutcome> {
    let t = sc.tomography.as_ref().expect("completed");
    let s = sc.probe.as_ref().and_then(|p| p.s.clone()).expect("completed");
    let p = state_populations(sc.state.as_ref().expect("completed"), n)?;
    let g = t.g.expect("completed");
    let phi = ProbeWavefunction::gaussian_with_points(
        t.center.expect("completed"),
        t.sigma.expect("completed"),
        g,
        &s,
        t.grid_points.expect("completed"),
    )?;
    let f = post_interaction_distribution(&phi, g, &s, &p)?;
    let estimate = match t.samples {
        Some(count) => {
            let draws = sample_outcomes(&f, count, sc.seed)?;
            let hist = Histogram::from_samples(&draws, phi.grid.a_min, phi.grid.a_max, t.bins.unwrap_or(DEFAULT_BINS))?;
            estimate_populations(Observation::Histogram(&hist), &phi, g, &s)?
        }
        None => estimate_populations(Observation::Sampled(&f), &phi, g, &s)?,
    };
    Ok(TomographyOutcome {
        max_abs_error: max_abs_error(&estimate.p_hat, &p),
        populations: p,
        estimate,
    })
}

fn dispatch(sc: &Scenario) -> Result<RunResult> {
    Ok(match sc.kind {
        ScenarioKind::DecouplingCheck => RunResult::Decoupling(run_decoupling(sc)?),
        ScenarioKind::Tomography => RunResult::Tomography(run_tomography(sc, require_n(sc)?)?),
        kind => {
            let n = require_n(sc)?;
            let setup = probe_setup(sc.probe.as_ref().expect("completed"), n)?;
            let rows = match kind {
                ScenarioKind::DirectMeasure => run_direct(sc, &setup, n)?,
                ScenarioKind::ConjugateProtocol => run_conjugate(sc, &setup, n)?,
                _ => run_sweep(sc, &setup, n)?,
            };
            RunResult::Rows { rows }
        }
    })
}

/// Runs a scenario. Deterministic in (scenario, seed).
pub fn run(sc: &Scenario) -> Result<RunRecord> {
    let sc = complete(sc.clone())?;
    let result = dispatch(&sc).map_err(|e| Error::Scenario {
        name: sc.name.clone(),
        source: Box::new(e),
    })?;
    Ok(RunRecord {
        config_hash: config_hash(canonical_json(&sc).as_bytes()),
        seed: sc.seed,
        scenario: sc,
        result,
    })
}

pub fn render_csv(rows: &[Row]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.t, r.g, r.expected_a, r.pure_prediction, r.mixed_baseline, r.coherence_indicator
        );
    }
    out
}

pub fn render_json(record: &RunRecord) -> String {
    let mut s = serde_json::to_string_pretty(record).expect("record serialises");
    s.push('\n');
    s
}

/// `--out` beats the scenario's `output_path`, which beats the environment.
pub fn resolve_output_dir(cli: Option<&Path>, sc: &Scenario) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Some(p) = &sc.output_path {
        return PathBuf::from(p);
    }
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("record");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::Io(e)
    })
}

/// Writes the record into `dir`. Time series honour `format`; decoupling
/// and tomography records are always JSON. Returns the written path.
pub fn emit(record: &RunRecord, format: OutputFormat, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let stem = file_stem(&record.scenario.name);
    let (path, contents) = match (&record.result, format) {
        (RunResult::Rows { rows }, OutputFormat::Csv) => (dir.join(format!("{stem}.csv")), render_csv(rows)),
        _ => (dir.join(format!("{stem}.json")), render_json(record)),
    };
    write_atomic(&path, contents.as_bytes())?;
    Ok(path)
}
