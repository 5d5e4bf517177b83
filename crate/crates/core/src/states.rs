//! States, operators and time evolution over tensor-factor layouts.
//!
//! Flat indices are row-major across factors: factor 0 is the most
//! significant digit, matching `kron(A_0, kron(A_1, …))`.

use std::collections::BTreeSet;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{c64, kron, kron_all, propagator, ComplexMatrix, ONE, ZERO};

const NORM_TOL: f64 = 1e-10;
const PSD_FLOOR: f64 = -1e-9;

/// Ordered subsystem dimensions, e.g. `[system, probe, environment]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FactorLayout {
    dims: Vec<usize>,
}

impl FactorLayout {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Layout(format!("invalid factor dimensions {dims:?}")));
        }
        Ok(Self { dims })
    }

    pub fn single(dim: usize) -> Self {
        Self::new(vec![dim]).expect("dimension must be positive")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn factors(&self) -> usize {
        self.dims.len()
    }

    pub fn total(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn dim(&self, factor: usize) -> Result<usize> {
        self.dims.get(factor).copied().ok_or(Error::InvalidFactor {
            index: factor,
            factors: self.dims.len(),
        })
    }

    /// Product of the dimensions after `factor`.
    fn stride(&self, factor: usize) -> usize {
        self.dims[factor + 1..].iter().product()
    }

    /// Digit of `factor` in the flat index.
    pub fn digit(&self, flat: usize, factor: usize) -> usize {
        (flat / self.stride(factor)) % self.dims[factor]
    }

    pub fn concat(&self, other: &FactorLayout) -> FactorLayout {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        FactorLayout { dims }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Repr {
    Pure(Vec<Complex64>),
    Density(ComplexMatrix),
}

/// A normalized pure state vector or density matrix over a [`FactorLayout`].
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    layout: FactorLayout,
    repr: Repr,
}

impl QuantumState {
    pub fn pure(layout: FactorLayout, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != layout.total() {
            return Err(Error::mismatch("pure state", layout.total(), amplitudes.len()));
        }
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("state norm {norm} is not 1")));
        }
        Ok(Self {
            layout,
            repr: Repr::Pure(amplitudes),
        })
    }

    /// Normalizes `amplitudes` before building a single-factor pure state.
    pub fn normalized(amplitudes: Vec<Complex64>) -> Result<Self> {
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("cannot normalize a zero vector".into()));
        }
        let n = amplitudes.len();
        Self::pure(
            FactorLayout::single(n),
            amplitudes.into_iter().map(|z| z / norm).collect(),
        )
    }

    pub fn density(layout: FactorLayout, rho: ComplexMatrix) -> Result<Self> {
        let d = layout.total();
        if rho.rows() != d || rho.cols() != d {
            return Err(Error::mismatch("density matrix", format!("{d}x{d}"), format!("{}x{}", rho.rows(), rho.cols())));
        }
        let defect = rho.hermiticity_defect();
        if defect > NORM_TOL {
            return Err(Error::InvalidState(format!("density matrix not Hermitian ({defect:.3e})")));
        }
        let tr = rho.trace();
        if (tr - ONE).norm() > NORM_TOL {
            return Err(Error::InvalidState(format!("density matrix trace {tr} is not 1")));
        }
        let (eigs, _) = rho.hermitian_eigen()?;
        if eigs[0] < PSD_FLOOR {
            return Err(Error::InvalidState(format!(
                "density matrix has negative eigenvalue {:.3e}",
                eigs[0]
            )));
        }
        Ok(Self {
            layout,
            repr: Repr::Density(rho),
        })
    }

    /// Computational basis state |k⟩ on a single factor.
    pub fn basis(dim: usize, k: usize) -> Self {
        assert!(k < dim, "basis index out of range");
        let mut v = vec![ZERO; dim];
        v[k] = ONE;
        Self {
            layout: FactorLayout::single(dim),
            repr: Repr::Pure(v),
        }
    }

    /// Diagonal density matrix with the given populations.
    pub fn mixture(populations: &[f64]) -> Result<Self> {
        Self::density(
            FactorLayout::single(populations.len()),
            ComplexMatrix::real_diag(populations),
        )
    }

    /// Haar-random pure state on a single factor.
    pub fn random_pure<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        loop {
            let v: Vec<Complex64> = (0..dim)
                .map(|_| c64(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            if let Ok(s) = Self::normalized(v) {
                return s;
            }
        }
    }

    pub fn layout(&self) -> &FactorLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.total()
    }

    pub fn is_pure_vector(&self) -> bool {
        matches!(self.repr, Repr::Pure(_))
    }

    pub fn amplitudes(&self) -> Option<&[Complex64]> {
        match &self.repr {
            Repr::Pure(v) => Some(v),
            Repr::Density(_) => None,
        }
    }

    pub fn density_matrix(&self) -> ComplexMatrix {
        match &self.repr {
            Repr::Pure(v) => ComplexMatrix::outer(v, v),
            Repr::Density(m) => m.clone(),
        }
    }

    pub fn to_density(&self) -> QuantumState {
        Self {
            layout: self.layout.clone(),
            repr: Repr::Density(self.density_matrix()),
        }
    }

    /// Re-tags the state with a different layout of the same total dimension.
    pub fn with_layout(mut self, layout: FactorLayout) -> Result<Self> {
        if layout.total() != self.layout.total() {
            return Err(Error::mismatch("with_layout", self.layout.total(), layout.total()));
        }
        self.layout = layout;
        Ok(self)
    }

    /// ‖ψ‖ for vectors, tr ρ for density matrices.
    pub fn norm(&self) -> f64 {
        match &self.repr {
            Repr::Pure(v) => v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
            Repr::Density(m) => m.trace().re,
        }
    }

    pub fn purity(&self) -> f64 {
        match &self.repr {
            Repr::Pure(v) => v.iter().map(|z| z.norm_sqr()).sum::<f64>().powi(2),
            Repr::Density(m) => m.inner(m).re,
        }
    }

    /// Smallest eigenvalue of the density matrix.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.density_matrix().hermitian_eigen()?.0[0])
    }

    /// Diagonal of the density matrix in the computational basis.
    pub fn populations(&self) -> Vec<f64> {
        match &self.repr {
            Repr::Pure(v) => v.iter().map(|z| z.norm_sqr()).collect(),
            Repr::Density(m) => (0..m.rows()).map(|i| m[(i, i)].re).collect(),
        }
    }

    /// Root fidelity: |⟨φ|ψ⟩| for two vectors, √⟨ψ|ρ|ψ⟩ against a density
    /// matrix, and tr√(√ρ σ √ρ) in general.
    pub fn fidelity(&self, other: &QuantumState) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::mismatch("fidelity", self.dim(), other.dim()));
        }
        match (&self.repr, &other.repr) {
            (Repr::Pure(a), Repr::Pure(b)) => {
                Ok(a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<Complex64>().norm())
            }
            (Repr::Pure(v), Repr::Density(m)) | (Repr::Density(m), Repr::Pure(v)) => {
                let mv = m.matvec(v);
                let val: Complex64 = v.iter().zip(&mv).map(|(x, y)| x.conj() * y).sum();
                Ok(val.re.max(0.0).sqrt())
            }
            (Repr::Density(a), Repr::Density(b)) => {
                let (vals, vecs) = a.hermitian_eigen()?;
                let root: Vec<Complex64> = vals.iter().map(|&x| c64(x.max(0.0).sqrt(), 0.0)).collect();
                let sqrt_a = &(&vecs * &ComplexMatrix::diag(&root)) * &vecs.adjoint();
                let inner = &(&sqrt_a * b) * &sqrt_a;
                let (ev, _) = inner.hermitian_eigen()?;
                Ok(ev.iter().map(|&x| x.max(0.0).sqrt()).sum())
            }
        }
    }

    /// Applies a unitary acting on a single factor.
    pub fn apply_factor_unitary(&self, factor: usize, u: &ComplexMatrix) -> Result<QuantumState> {
        let d = self.layout.dim(factor)?;
        if u.rows() != d || u.cols() != d {
            return Err(Error::mismatch("apply_factor_unitary", format!("{d}x{d}"), format!("{}x{}", u.rows(), u.cols())));
        }
        let stride = self.layout.stride(factor);
        let repr = match &self.repr {
            Repr::Pure(v) => Repr::Pure(apply_on_axis(v, 1, d, stride, u)),
            Repr::Density(m) => {
                let n = m.rows();
                let left = apply_on_axis(m.as_slice(), n, d, stride, u);
                let left = ComplexMatrix::from_row_major(n, n, left)?.adjoint();
                let both = apply_on_axis(left.as_slice(), n, d, stride, u);
                Repr::Density(ComplexMatrix::from_row_major(n, n, both)?.adjoint())
            }
        };
        Ok(Self {
            layout: self.layout.clone(),
            repr,
        })
    }

    /// Multiplies each basis amplitude by `phase(flat_index)`: ψ_i → φ_i ψ_i,
    /// ρ_ij → φ_i ρ_ij φ_j*.
    pub fn apply_diagonal(&self, phase: impl Fn(usize) -> Complex64) -> QuantumState {
        let repr = match &self.repr {
            Repr::Pure(v) => Repr::Pure(v.iter().enumerate().map(|(i, &z)| phase(i) * z).collect()),
            Repr::Density(m) => {
                let phases: Vec<Complex64> = (0..m.rows()).map(&phase).collect();
                Repr::Density(ComplexMatrix::from_fn(m.rows(), m.cols(), |r, c| {
                    phases[r] * m[(r, c)] * phases[c].conj()
                }))
            }
        };
        Self {
            layout: self.layout.clone(),
            repr,
        }
    }

    /// Applies a full-space unitary.
    pub fn apply_unitary(&self, u: &ComplexMatrix) -> Result<QuantumState> {
        if u.rows() != self.dim() || u.cols() != self.dim() {
            return Err(Error::mismatch("apply_unitary", self.dim(), u.rows()));
        }
        let repr = match &self.repr {
            Repr::Pure(v) => Repr::Pure(u.matvec(v)),
            Repr::Density(m) => Repr::Density(&(u * m) * &u.adjoint()),
        };
        Ok(Self {
            layout: self.layout.clone(),
            repr,
        })
    }

    /// Inserts a single-factor state at position `pos` of the layout.
    pub fn insert_factor(&self, pos: usize, part: &QuantumState) -> Result<QuantumState> {
        if part.layout.factors() != 1 {
            return Err(Error::Layout("insert_factor expects a single-factor state".into()));
        }
        if pos > self.layout.factors() {
            return Err(Error::InvalidFactor {
                index: pos,
                factors: self.layout.factors(),
            });
        }
        let pd = part.dim();
        let mut dims = self.layout.dims.clone();
        dims.insert(pos, pd);
        let layout = FactorLayout::new(dims)?;
        // Digits after `pos` form the low part of the old index.
        let low: usize = self.layout.dims[pos..].iter().product();
        let map = |flat: usize, k: usize| -> usize {
            let (hi, lo) = (flat / low, flat % low);
            (hi * pd + k) * low + lo
        };
        let d = self.dim();
        let repr = match (&self.repr, &part.repr) {
            (Repr::Pure(v), Repr::Pure(w)) => {
                let mut out = vec![ZERO; d * pd];
                for (i, &a) in v.iter().enumerate() {
                    for (k, &b) in w.iter().enumerate() {
                        out[map(i, k)] = a * b;
                    }
                }
                Repr::Pure(out)
            }
            _ => {
                let a = self.density_matrix();
                let b = part.density_matrix();
                let mut out = ComplexMatrix::zeros(d * pd, d * pd);
                for r in 0..d {
                    for c in 0..d {
                        let x = a[(r, c)];
                        if x == ZERO {
                            continue;
                        }
                        for k in 0..pd {
                            for l in 0..pd {
                                out[(map(r, k), map(c, l))] = x * b[(k, l)];
                            }
                        }
                    }
                }
                Repr::Density(out)
            }
        };
        Ok(Self { layout, repr })
    }

    /// Traces out `factor` and puts `fresh` in its place.
    pub fn replace_factor(&self, factor: usize, fresh: &QuantumState) -> Result<QuantumState> {
        let d = self.layout.dim(factor)?;
        if fresh.dim() != d {
            return Err(Error::mismatch("replace_factor", d, fresh.dim()));
        }
        let keep: Vec<usize> = (0..self.layout.factors()).filter(|&f| f != factor).collect();
        if keep.is_empty() {
            return Ok(fresh.clone());
        }
        partial_trace(self, &keep)?.insert_factor(factor, fresh)
    }
}

/// Applies `u` (d×d) on the axis with dimension `d` and stride `stride` of a
/// buffer holding `ncols` interleaved columns per flat index.
fn apply_on_axis(buf: &[Complex64], ncols: usize, d: usize, stride: usize, u: &ComplexMatrix) -> Vec<Complex64> {
    let total = buf.len() / ncols;
    let block = d * stride;
    let mut out = vec![ZERO; buf.len()];
    let mut tmp = vec![ZERO; d];
    for outer in 0..total / block {
        for inner in 0..stride {
            let base = outer * block + inner;
            for col in 0..ncols {
                for (k, t) in tmp.iter_mut().enumerate() {
                    *t = buf[(base + k * stride) * ncols + col];
                }
                for i in 0..d {
                    let mut acc = ZERO;
                    for (k, &t) in tmp.iter().enumerate() {
                        acc += u[(i, k)] * t;
                    }
                    out[(base + i * stride) * ncols + col] = acc;
                }
            }
        }
    }
    out
}

/// Kronecker product of states with concatenated layout.
pub fn tensor_state(parts: &[QuantumState]) -> Result<QuantumState> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("tensor_state needs at least one part".into()))?;
    let all_pure = parts.iter().all(QuantumState::is_pure_vector);
    let all_density = parts.iter().all(|p| !p.is_pure_vector());
    if !all_pure && !all_density {
        return Err(Error::InvalidArgument(
            "tensor_state parts must be all vectors or all density matrices".into(),
        ));
    }
    let mut layout = first.layout.clone();
    for p in &parts[1..] {
        layout = layout.concat(&p.layout);
    }
    let repr = if all_pure {
        let mut acc = vec![ONE];
        for p in parts {
            let v = p.amplitudes().expect("pure");
            acc = acc.iter().flat_map(|&a| v.iter().map(move |&b| a * b)).collect();
        }
        Repr::Pure(acc)
    } else {
        let mats: Vec<ComplexMatrix> = parts.iter().map(QuantumState::density_matrix).collect();
        Repr::Density(kron_all(&mats))
    };
    Ok(QuantumState { layout, repr })
}

/// Reduced density matrix on the factors in `keep` (kept in layout order).
pub fn partial_trace(state: &QuantumState, keep: &[usize]) -> Result<QuantumState> {
    let layout = &state.layout;
    let keep: BTreeSet<usize> = keep.iter().copied().collect();
    if keep.is_empty() {
        return Err(Error::InvalidArgument("partial_trace: keep set is empty".into()));
    }
    if let Some(&bad) = keep.iter().find(|&&f| f >= layout.factors()) {
        return Err(Error::InvalidFactor {
            index: bad,
            factors: layout.factors(),
        });
    }
    let kept: Vec<usize> = keep.into_iter().collect();
    let traced: Vec<usize> = (0..layout.factors()).filter(|f| !kept.contains(f)).collect();
    let kd: Vec<usize> = kept.iter().map(|&f| layout.dims[f]).collect();
    let td: Vec<usize> = traced.iter().map(|&f| layout.dims[f]).collect();
    let kdim: usize = kd.iter().product();
    let tdim: usize = td.iter().product();
    let out_layout = FactorLayout::new(kd.clone())?;

    // Flat index in the full layout for a (kept, traced) index pair.
    let strides: Vec<usize> = (0..layout.factors()).map(|f| layout.stride(f)).collect();
    let compose = |k: usize, t: usize| -> usize {
        let mut flat = 0;
        let mut rem = k;
        for (i, &f) in kept.iter().enumerate().rev() {
            flat += (rem % kd[i]) * strides[f];
            rem /= kd[i];
        }
        let mut rem = t;
        for (i, &f) in traced.iter().enumerate().rev() {
            flat += (rem % td[i]) * strides[f];
            rem /= td[i];
        }
        flat
    };
    let index: Vec<Vec<usize>> = (0..kdim)
        .map(|k| (0..tdim).map(|t| compose(k, t)).collect())
        .collect();

    let mut out = ComplexMatrix::zeros(kdim, kdim);
    match &state.repr {
        Repr::Pure(v) => {
            for r in 0..kdim {
                for c in 0..kdim {
                    out[(r, c)] = (0..tdim).map(|t| v[index[r][t]] * v[index[c][t]].conj()).sum();
                }
            }
        }
        Repr::Density(m) => {
            for r in 0..kdim {
                for c in 0..kdim {
                    out[(r, c)] = (0..tdim).map(|t| m[(index[r][t], index[c][t])]).sum();
                }
            }
        }
    }
    Ok(QuantumState {
        layout: out_layout,
        repr: Repr::Density(out),
    })
}

/// A square operator tagged with the layout it acts on.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    layout: FactorLayout,
    matrix: ComplexMatrix,
}

impl Operator {
    pub fn new(layout: FactorLayout, matrix: ComplexMatrix) -> Result<Self> {
        let d = layout.total();
        if matrix.rows() != d || matrix.cols() != d {
            return Err(Error::mismatch("operator", format!("{d}x{d}"), format!("{}x{}", matrix.rows(), matrix.cols())));
        }
        if !matrix.is_finite() {
            return Err(Error::InvalidArgument("operator entries must be finite".into()));
        }
        Ok(Self { layout, matrix })
    }

    pub fn zero(layout: FactorLayout) -> Self {
        let d = layout.total();
        Self {
            layout,
            matrix: ComplexMatrix::zeros(d, d),
        }
    }

    pub fn identity(layout: FactorLayout) -> Self {
        let d = layout.total();
        Self {
            layout,
            matrix: ComplexMatrix::identity(d),
        }
    }

    /// Tensor product of local operators, identity on unlisted factors.
    pub fn local(layout: &FactorLayout, parts: &[(usize, &ComplexMatrix)]) -> Result<Self> {
        let mut factors: Vec<ComplexMatrix> = layout.dims.iter().map(|&d| ComplexMatrix::identity(d)).collect();
        for &(f, m) in parts {
            let d = layout.dim(f)?;
            if m.rows() != d || m.cols() != d {
                return Err(Error::mismatch("Operator::local", d, m.rows()));
            }
            factors[f] = m.clone();
        }
        Ok(Self {
            layout: layout.clone(),
            matrix: kron_all(&factors),
        })
    }

    pub fn layout(&self) -> &FactorLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.matrix.is_hermitian(tol)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self {
            layout: self.layout.clone(),
            matrix: self.matrix.scale_real(s),
        }
    }

    pub fn add(&self, other: &Operator) -> Result<Self> {
        if self.layout != other.layout {
            return Err(Error::Layout(format!(
                "cannot add operators on {:?} and {:?}",
                self.layout.dims, other.layout.dims
            )));
        }
        Ok(Self {
            layout: self.layout.clone(),
            matrix: &self.matrix + &other.matrix,
        })
    }

    /// A ⊗ B with concatenated layouts.
    pub fn tensor(&self, other: &Operator) -> Self {
        Self {
            layout: self.layout.concat(&other.layout),
            matrix: kron(&self.matrix, &other.matrix),
        }
    }
}

/// ⟨ψ|C|ψ⟩ or tr(ρC).
pub fn expectation(state: &QuantumState, c: &Operator) -> Result<Complex64> {
    if state.dim() != c.layout.total() {
        return Err(Error::mismatch("expectation", c.layout.total(), state.dim()));
    }
    let m = &c.matrix;
    Ok(match &state.repr {
        Repr::Pure(v) => {
            let mv = m.matvec(v);
            v.iter().zip(&mv).map(|(a, b)| a.conj() * b).sum()
        }
        Repr::Density(rho) => {
            // tr(ρC) = Σ_ij ρ_ij C_ji
            let n = rho.rows();
            let mut acc = ZERO;
            for i in 0..n {
                for j in 0..n {
                    acc += rho[(i, j)] * m[(j, i)];
                }
            }
            acc
        }
    })
}

/// Piecewise-constant real signal: `values[i]` on `[breakpoints[i], breakpoints[i+1])`,
/// the last value held indefinitely, zero before the first breakpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseConstant {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(Error::InvalidArgument(
                "piecewise signal needs matching, non-empty breakpoints and values".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("breakpoints must be strictly increasing".into()));
        }
        if breakpoints.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("piecewise signal entries must be finite".into()));
        }
        Ok(Self { breakpoints, values })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            breakpoints: vec![0.0],
            values: vec![value],
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, t: f64) -> f64 {
        match self.breakpoints.partition_point(|&b| b <= t) {
            0 => 0.0,
            i => self.values[i - 1],
        }
    }

    /// Exact ∫₀ᵗ of the signal.
    pub fn integral(&self, t: f64) -> f64 {
        self.integral_between(0.0, t)
    }

    /// Exact ∫ from `a` to `b`.
    pub fn integral_between(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return -self.integral_between(b, a);
        }
        let mut acc = 0.0;
        for (i, &start) in self.breakpoints.iter().enumerate() {
            let end = self.breakpoints.get(i + 1).copied().unwrap_or(f64::INFINITY);
            let lo = start.max(a);
            let hi = end.min(b);
            if hi > lo {
                acc += self.values[i] * (hi - lo);
            }
        }
        acc
    }
}

/// H(t) = drift + Σ u_i(t)·H_i + interaction.
#[derive(Clone, Debug)]
pub struct DriftControlSystem {
    pub drift: Operator,
    pub controls: Vec<Operator>,
    pub interaction: Operator,
    pub signals: Vec<PiecewiseConstant>,
    pub hbar: f64,
}

impl DriftControlSystem {
    pub fn new(
        drift: Operator,
        controls: Vec<Operator>,
        interaction: Operator,
        signals: Vec<PiecewiseConstant>,
    ) -> Result<Self> {
        let layout = drift.layout();
        if controls.iter().chain([&interaction]).any(|op| op.layout() != layout) {
            return Err(Error::Layout("all operators must share one layout".into()));
        }
        if controls.len() != signals.len() {
            return Err(Error::InvalidArgument(format!(
                "{} controls but {} signals",
                controls.len(),
                signals.len()
            )));
        }
        Ok(Self {
            drift,
            controls,
            interaction,
            signals,
            hbar: 1.0,
        })
    }

    pub fn with_hbar(mut self, hbar: f64) -> Self {
        assert!(hbar > 0.0, "hbar must be positive");
        self.hbar = hbar;
        self
    }

    pub fn hamiltonian(&self, t: f64) -> ComplexMatrix {
        let u: Vec<f64> = self.signals.iter().map(|s| s.at(t)).collect();
        self.hamiltonian_for(&u)
    }

    fn hamiltonian_for(&self, u: &[f64]) -> ComplexMatrix {
        let mut h = &self.drift.matrix + &self.interaction.matrix;
        for (op, &ui) in self.controls.iter().zip(u) {
            if ui != 0.0 {
                h = &h + &op.matrix.scale_real(ui);
            }
        }
        h
    }
}

/// Evolves `state` from `t0` to `t1` in steps of `dt`, holding controls at
/// their left-endpoint value within each step. The final step is shortened
/// to land exactly on `t1`.
pub fn evolve(sys: &DriftControlSystem, state: &QuantumState, t0: f64, t1: f64, dt: f64) -> Result<QuantumState> {
    evolve_observed(sys, state, t0, t1, dt, |_, _| {})
}

/// Like [`evolve`], calling `observe(t, state)` after every step.
pub fn evolve_observed(
    sys: &DriftControlSystem,
    state: &QuantumState,
    t0: f64,
    t1: f64,
    dt: f64,
    mut observe: impl FnMut(f64, &QuantumState),
) -> Result<QuantumState> {
    if !(dt > 0.0) || t1 < t0 {
        return Err(Error::InvalidArgument(format!(
            "evolve needs dt > 0 and t1 >= t0 (dt={dt}, t0={t0}, t1={t1})"
        )));
    }
    if state.dim() != sys.drift.layout().total() {
        return Err(Error::mismatch("evolve", sys.drift.layout().total(), state.dim()));
    }
    let steps = (((t1 - t0) / dt) - 1e-9).ceil().max(0.0) as usize;
    let mut current = state.clone();
    // Controls are piecewise constant, so most consecutive steps reuse the
    // same propagator.
    let mut cache: Option<(Vec<f64>, f64, ComplexMatrix)> = None;
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let h = if k + 1 == steps { t1 - t } else { dt };
        let u: Vec<f64> = sys.signals.iter().map(|s| s.at(t)).collect();
        let hit = matches!(&cache, Some((cu, ch, _)) if *cu == u && *ch == h);
        if !hit {
            let ham = sys.hamiltonian_for(&u);
            cache = Some((u, h, propagator(&ham, h / sys.hbar)?));
        }
        let prop = &cache.as_ref().expect("cache populated").2;
        current = current.apply_unitary(prop)?;
        observe(t + h, &current);
    }
    Ok(current)
}
