//! Population recovery from continuous probe readouts.
//!
//! After an interaction of strength G with a probe prepared in φ(a), the
//! probe reading is distributed as f(a) = Σ_j |φ(a + G s_j)|² p_j. Given f
//! (exactly or as a histogram) and the kernels, the populations p_j are the
//! simplex-constrained least-squares fit.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on normalisation of supplied populations.
pub const POPULATION_TOL: f64 = 1e-9;
/// Mass a shifted component may lose off the grid before we refuse.
pub const MAX_LOST_MASS: f64 = 1e-4;
/// Largest acceptable condition number of the kernel Gram matrix.
pub const MAX_CONDITION: f64 = 1e8;
pub const DEFAULT_GRID_POINTS: usize = 2048;
const GRID_HALF_WIDTHS: f64 = 6.0;
const BIN_SUBDIVISIONS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub a_min: f64,
    pub a_max: f64,
    pub n_points: usize,
}

impl Grid {
    pub fn new(a_min: f64, a_max: f64, n_points: usize) -> Result<Self> {
        if !(a_min.is_finite() && a_max.is_finite() && a_max > a_min) {
            return Err(Error::InvalidArgument(format!("grid bounds [{a_min}, {a_max}] are not an interval")));
        }
        if n_points < 2 {
            return Err(Error::InvalidArgument("grid needs at least 2 points".into()));
        }
        Ok(Self { a_min, a_max, n_points })
    }

    pub fn dx(&self) -> f64 {
        (self.a_max - self.a_min) / (self.n_points - 1) as f64
    }

    pub fn point(&self, k: usize) -> f64 {
        self.a_min + k as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.point(k)).collect()
    }

    /// Trapezoid weights.
    pub fn weights(&self) -> Vec<f64> {
        let dx = self.dx();
        let mut w = vec![dx; self.n_points];
        w[0] *= 0.5;
        w[self.n_points - 1] *= 0.5;
        w
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        trapezoid(self.dx(), values)
    }
}

fn trapezoid(dx: f64, values: &[f64]) -> f64 {
    match values {
        [] | [_] => 0.0,
        [first, inner @ .., last] => dx * (0.5 * (first + last) + inner.iter().sum::<f64>()),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavefunctionKind {
    #[default]
    Gaussian,
}

/// Real probe wavefunction φ(a) with its numerical grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeWavefunction {
    pub kind: WavefunctionKind,
    pub center: f64,
    pub sigma: f64,
    pub grid: Grid,
}

impl ProbeWavefunction {
    pub fn gaussian(center: f64, sigma: f64, grid: Grid) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite() && center.is_finite()) {
            return Err(Error::InvalidArgument(format!("gaussian needs finite center and sigma > 0, got ({center}, {sigma})")));
        }
        Ok(Self {
            kind: WavefunctionKind::Gaussian,
            center,
            sigma,
            grid,
        })
    }

    /// Gaussian on the default grid: center ± 6(σ + |G|·max|s_j|).
    pub fn gaussian_for(center: f64, sigma: f64, g: f64, s: &[f64]) -> Result<Self> {
        Self::gaussian_with_points(center, sigma, g, s, DEFAULT_GRID_POINTS)
    }

    pub fn gaussian_with_points(center: f64, sigma: f64, g: f64, s: &[f64], n_points: usize) -> Result<Self> {
        let reach = s.iter().fold(0.0_f64, |m, x| m.max(x.abs())) * g.abs();
        let half = GRID_HALF_WIDTHS * (sigma + reach);
        Self::gaussian(center, sigma, Grid::new(center - half, center + half, n_points)?)
    }

    pub fn amplitude(&self, a: f64) -> f64 {
        match self.kind {
            WavefunctionKind::Gaussian => {
                let z = a - self.center;
                (2.0 * std::f64::consts::PI * self.sigma * self.sigma).powf(-0.25) * (-z * z / (4.0 * self.sigma * self.sigma)).exp()
            }
        }
    }

    /// |φ(a)|².
    pub fn density(&self, a: f64) -> f64 {
        let v = self.amplitude(a);
        v * v
    }

    pub fn norm_on_grid(&self) -> f64 {
        let vals: Vec<f64> = self.grid.points().into_iter().map(|a| self.density(a)).collect();
        self.grid.integrate(&vals)
    }

    pub fn translated(&self, delta: f64) -> Self {
        Self {
            center: self.center + delta,
            ..self.clone()
        }
    }
}

/// A density sampled on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledDensity {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl SampledDensity {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points {
            return Err(Error::mismatch("SampledDensity::new", grid.n_points, values.len()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("density values must be finite and non-negative".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn mean(&self) -> f64 {
        let weighted: Vec<f64> = self.grid.points().iter().zip(&self.values).map(|(a, f)| a * f).collect();
        self.grid.integrate(&weighted) / self.integral()
    }

    pub fn at(&self, k: usize) -> f64 {
        self.values[k]
    }
}

/// Binned sample counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(edges: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        if edges.len() < 2 || counts.len() + 1 != edges.len() {
            return Err(Error::mismatch("Histogram::new", edges.len().saturating_sub(1), counts.len()));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("histogram edges must be strictly increasing".into()));
        }
        Ok(Self { edges, counts })
    }

    /// Uniform bins over [lo, hi]; samples outside are dropped.
    pub fn from_samples(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::InvalidArgument(format!("bad histogram range [{lo}, {hi}] with {bins} bins")));
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0u64; bins];
        for &x in samples {
            if (lo..=hi).contains(&x) {
                counts[(((x - lo) / width) as usize).min(bins - 1)] += 1;
            }
        }
        Self::new(edges, counts)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn check_populations(p: &[f64], s: &[f64]) -> Result<()> {
    if p.len() != s.len() {
        return Err(Error::mismatch("populations", s.len(), p.len()));
    }
    if p.iter().any(|x| !x.is_finite() || *x < -POPULATION_TOL) {
        return Err(Error::InvalidArgument("populations must be non-negative".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > POPULATION_TOL {
        return Err(Error::InvalidArgument(format!("populations sum to {total}, not 1")));
    }
    Ok(())
}

fn check_coupling(g: f64) -> Result<()> {
    if g == 0.0 || !g.is_finite() {
        return Err(Error::InvalidArgument(format!("interaction strength must be finite and non-zero, got {g}")));
    }
    Ok(())
}

/// Shifted kernel |φ(a + G s_j)|² on the grid.
fn shifted_kernel(phi: &ProbeWavefunction, g: f64, s_j: f64) -> Vec<f64> {
    phi.grid.points().into_iter().map(|a| phi.density(a + g * s_j)).collect()
}

/// f(a) = Σ_j |φ(a + G s_j)|² p_j on the wavefunction's grid.
pub fn post_interaction_distribution(phi: &ProbeWavefunction, g: f64, s: &[f64], p: &[f64]) -> Result<SampledDensity> {
    check_coupling(g)?;
    check_populations(p, s)?;
    let mut f = vec![0.0; phi.grid.n_points];
    for (j, (&s_j, &p_j)) in s.iter().zip(p).enumerate() {
        let kernel = shifted_kernel(phi, g, s_j);
        let lost = 1.0 - phi.grid.integrate(&kernel);
        if lost > MAX_LOST_MASS {
            return Err(Error::GridTooNarrow { component: j, lost_mass: lost });
        }
        for (fk, kk) in f.iter_mut().zip(&kernel) {
            *fk += p_j * kk;
        }
    }
    SampledDensity::new(phi.grid, f)
}

/// W(s − s_j) = |G|·|φ(⟨a⟩ − G(s − s_j))|², a density in s.
pub fn kernel_w(phi: &ProbeWavefunction, g: f64, mean_a: f64, s_shift: f64) -> f64 {
    g.abs() * phi.density(mean_a - g * s_shift)
}

/// f(s) = Σ_j W(s − s_j) p_j, with ⟨a⟩ taken as the wavefunction center.
pub fn system_density(phi: &ProbeWavefunction, g: f64, s: &[f64], p: &[f64], s_value: f64) -> f64 {
    s.iter().zip(p).map(|(&s_j, &p_j)| p_j * kernel_w(phi, g, phi.center, s_value - s_j)).sum()
}

/// Inverse-CDF sampling of a grid density; the CDF is the running trapezoid
/// sum and is inverted by linear interpolation within a cell.
pub fn sample_outcomes(f: &SampledDensity, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let dx = f.grid.dx();
    let mut cdf = Vec::with_capacity(f.values.len());
    cdf.push(0.0);
    for w in f.values.windows(2) {
        cdf.push(cdf.last().unwrap() + 0.5 * dx * (w[0] + w[1]));
    }
    let total = *cdf.last().unwrap();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("density has no mass on its grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_samples)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let hi = cdf.partition_point(|&c| c < u).clamp(1, cdf.len() - 1);
            let (c0, c1) = (cdf[hi - 1], cdf[hi]);
            let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
            f.grid.point(hi - 1) + frac * dx
        })
        .collect())
}

/// Observed data for the estimator.
#[derive(Clone, Copy, Debug)]
pub enum Observation<'a> {
    Sampled(&'a SampledDensity),
    Histogram(&'a Histogram),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationEstimate {
    /// Simplex-constrained least-squares populations.
    pub p_hat: Vec<f64>,
    /// ‖f − Σ_j p̂_j K_j‖₂ in the data's quadrature.
    pub residual_norm: f64,
    /// Unconstrained least-squares solution, for comparison.
    pub unconstrained: Vec<f64>,
}

/// Weighted least-squares data: target values, quadrature weights and one
/// kernel column per component.
struct Design {
    target: Vec<f64>,
    weights: Vec<f64>,
    kernels: Vec<Vec<f64>>,
}

fn design(obs: Observation<'_>, phi: &ProbeWavefunction, g: f64, s: &[f64]) -> Result<Design> {
    match obs {
        Observation::Sampled(f) => Ok(Design {
            target: f.values.clone(),
            weights: f.grid.weights(),
            kernels: s
                .iter()
                .map(|&s_j| f.grid.points().into_iter().map(|a| phi.density(a + g * s_j)).collect())
                .collect(),
        }),
        Observation::Histogram(h) => {
            let n = h.total();
            if n == 0 {
                return Err(Error::InvalidArgument("histogram is empty".into()));
            }
            let widths: Vec<f64> = h.edges.windows(2).map(|w| w[1] - w[0]).collect();
            let target = h.counts.iter().zip(&widths).map(|(&c, w)| c as f64 / (n as f64 * w)).collect();
            let kernels = s
                .iter()
                .map(|&s_j| {
                    h.edges
                        .windows(2)
                        .map(|w| bin_average(|a| phi.density(a + g * s_j), w[0], w[1]))
                        .collect()
                })
                .collect();
            Ok(Design { target, weights: widths, kernels })
        }
    }
}

/// Composite Simpson average of `f` over [lo, hi].
fn bin_average(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let m = BIN_SUBDIVISIONS;
    let h = (hi - lo) / m as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..m {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
    }
    acc * h / 3.0 / (hi - lo)
}

fn weighted_dot(w: &[f64], x: &[f64], y: &[f64]) -> f64 {
    w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum()
}

/// Pairs (j, k) whose two-component sub-Gram alone is too ill-conditioned,
/// or the single most correlated pair if none is.
fn colliding_pairs(m: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = m.nrows();
    let mut scored = Vec::new();
    for j in 0..n {
        for k in j + 1..n {
            let rho = (m[(j, k)] / (m[(j, j)] * m[(k, k)]).sqrt()).abs().min(1.0);
            let cond = if rho < 1.0 { (1.0 + rho) / (1.0 - rho) } else { f64::INFINITY };
            scored.push(((j, k), rho, cond));
        }
    }
    let bad: Vec<_> = scored.iter().filter(|x| x.2 >= MAX_CONDITION).map(|x| x.0).collect();
    if !bad.is_empty() {
        return bad;
    }
    scored
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|x| vec![x.0])
        .unwrap_or_default()
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Minimises ½pᵀMp − bᵀp over the probability simplex with a primal
/// active-set method started from the uniform distribution.
fn simplex_qp(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = b.len();
    let mut p = DVector::from_element(n, 1.0 / n as f64);
    let mut free = vec![true; n];
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let tol = 1e-13 * scale;
    for _ in 0..(10 * n + 50) {
        let idx: Vec<usize> = (0..n).filter(|&j| free[j]).collect();
        let k = idx.len();
        let mut kkt = DMatrix::zeros(k + 1, k + 1);
        let mut rhs = DVector::zeros(k + 1);
        for (a, &ja) in idx.iter().enumerate() {
            for (c, &jc) in idx.iter().enumerate() {
                kkt[(a, c)] = m[(ja, jc)];
            }
            kkt[(a, k)] = 1.0;
            kkt[(k, a)] = 1.0;
            rhs[a] = b[ja];
        }
        rhs[k] = 1.0;
        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular KKT system in population estimate".into()))?;
        let mut candidate = DVector::zeros(n);
        for (a, &j) in idx.iter().enumerate() {
            candidate[j] = sol[a];
        }
        if idx.iter().all(|&j| candidate[j] >= 0.0) {
            p = candidate;
            let nu = sol[k];
            let grad = m * &p - b;
            let release = (0..n)
                .filter(|&j| !free[j])
                .map(|j| (j, grad[j] + nu))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match release {
                Some((j, lambda)) if lambda < -tol => free[j] = true,
                _ => return Ok(p),
            }
        } else {
            let mut step = 1.0;
            let mut blocking = idx[0];
            for &j in &idx {
                let d = candidate[j] - p[j];
                if d < 0.0 {
                    let t = -p[j] / d;
                    if t < step {
                        step = t;
                        blocking = j;
                    }
                }
            }
            p += (&candidate - &p) * step;
            p[blocking] = 0.0;
            free[blocking] = false;
        }
    }
    Err(Error::Numerical("active-set solver did not converge".into()))
}

/// Simplex-constrained least-squares populations from a sampled density or
/// a histogram.
pub fn estimate_populations(obs: Observation<'_>, phi: &ProbeWavefunction, g: f64, s: &[f64]) -> Result<PopulationEstimate> {
    check_coupling(g)?;
    if s.is_empty() {
        return Err(Error::InvalidArgument("no system eigenvalues".into()));
    }
    let d = design(obs, phi, g, s)?;
    let n = s.len();
    let m = DMatrix::from_fn(n, n, |j, k| weighted_dot(&d.weights, &d.kernels[j], &d.kernels[k]));
    let b = DVector::from_fn(n, |j, _| weighted_dot(&d.weights, &d.kernels[j], &d.target));

    let condition = condition_number(&m);
    if !(condition < MAX_CONDITION) {
        return Err(Error::IllConditioned {
            condition,
            pairs: colliding_pairs(&m),
        });
    }

    let unconstrained = m
        .clone()
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("singular kernel Gram matrix".into()))?;
    let p = simplex_qp(&m, &b)?;
    let fit: Vec<f64> = (0..d.target.len())
        .map(|k| (0..n).map(|j| p[j] * d.kernels[j][k]).sum())
        .collect();
    let diff: Vec<f64> = d.target.iter().zip(&fit).map(|(a, b)| a - b).collect();
    Ok(PopulationEstimate {
        p_hat: p.iter().map(|x| x.max(0.0)).collect(),
        residual_norm: weighted_dot(&d.weights, &diff, &diff).sqrt(),
        unconstrained: unconstrained.iter().copied().collect(),
    })
}

/// Smallest spacing between distinct sorted eigenvalues.
pub fn min_gap(s: &[f64]) -> f64 {
    let mut sorted = s.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// L∞ distance between two population vectors.
pub fn max_abs_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
