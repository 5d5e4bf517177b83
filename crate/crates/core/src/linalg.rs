//! Dense complex matrix kernel.
//!
//! Everything in this crate works on small (total dimension up to a few
//! hundred) dense operators, so matrices are plain row-major `Vec`s. The
//! Hermitian eigendecomposition is delegated to `nalgebra`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative tolerance used by [`span_extend`] when none is supplied.
pub const DEFAULT_SPAN_TOL: f64 = 1e-9;

/// Absolute Frobenius tolerance on `‖H − H†‖` accepted as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Dense complex matrix in row-major order.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:+.4}{:+.4}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::mismatch("from_row_major", rows * cols, data.len()));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == m), "ragged rows");
        Self {
            rows: n,
            cols: m,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        Self::from_rows(
            &rows
                .iter()
                .map(|r| r.iter().map(|&x| c64(x, 0.0)).collect())
                .collect::<Vec<_>>(),
        )
    }

    pub fn diag(entries: &[Complex64]) -> Self {
        let n = entries.len();
        let mut m = Self::zeros(n, n);
        for (i, &z) in entries.iter().enumerate() {
            m[(i, i)] = z;
        }
        m
    }

    pub fn real_diag(entries: &[f64]) -> Self {
        Self::diag(&entries.iter().map(|&x| c64(x, 0.0)).collect::<Vec<_>>())
    }

    /// Outer product |u⟩⟨v|.
    pub fn outer(u: &[Complex64], v: &[Complex64]) -> Self {
        Self::from_fn(u.len(), v.len(), |r, c| u[r] * v[c].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        self.map(|z| z * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.map(|z| z * s)
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Frobenius inner product tr(A†B).
    pub fn inner(&self, other: &Self) -> Complex64 {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// ‖A − A†‖_F.
    pub fn hermiticity_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut acc = 0.0;
        for r in 0..n {
            for c in 0..n {
                acc += (self[(r, c)] - self[(c, r)].conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::mismatch(
                "matmul",
                format!("{} rows", self.cols),
                format!("{} rows", other.rows),
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in row.iter().enumerate() {
                if a == ZERO {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Integer matrix power by repeated squaring.
    pub fn pow(&self, mut k: u32) -> Self {
        assert!(self.is_square());
        let mut base = self.clone();
        let mut acc = Self::identity(self.rows);
        while k > 0 {
            if k & 1 == 1 {
                acc = &acc * &base;
            }
            base = &base * &base;
            k >>= 1;
        }
        acc
    }

    /// Eigendecomposition of a Hermitian matrix: ascending eigenvalues and
    /// the unitary whose columns are the matching eigenvectors.
    pub fn hermitian_eigen(&self) -> Result<(Vec<f64>, ComplexMatrix)> {
        let defect = self.hermiticity_defect();
        if !defect.is_finite() || defect > HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation: defect });
        }
        let n = self.rows;
        // Symmetrize so the solver sees an exactly Hermitian input.
        let sym = nalgebra::DMatrix::from_fn(n, n, |r, c| {
            (self[(r, c)] + self[(c, r)].conj()) * 0.5
        });
        let eig = nalgebra::SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = ComplexMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Ok((values, vectors))
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.cols + c]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs).expect("matrix product dimension mismatch")
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add dimension mismatch");
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub dimension mismatch");
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.map(|z| -z)
    }
}

/// Pauli matrices and friends, used throughout the tests and the example corpus.
pub mod pauli {
    use super::*;

    pub fn x() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    pub fn y() -> ComplexMatrix {
        ComplexMatrix::from_rows(&[vec![ZERO, -I], vec![I, ZERO]])
    }

    pub fn z() -> ComplexMatrix {
        ComplexMatrix::real_diag(&[1.0, -1.0])
    }

    pub fn id() -> ComplexMatrix {
        ComplexMatrix::identity(2)
    }
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (br, bc) = (b.rows, b.cols);
    ComplexMatrix::from_fn(a.rows * br, a.cols * bc, |r, c| {
        a[(r / br, c / bc)] * b[(r % br, c % bc)]
    })
}

/// Kronecker product of a list of factors, left to right.
pub fn kron_all<'a>(factors: impl IntoIterator<Item = &'a ComplexMatrix>) -> ComplexMatrix {
    factors
        .into_iter()
        .fold(ComplexMatrix::identity(1), |acc, f| kron(&acc, f))
}

fn check_same_square(op: &'static str, a: &ComplexMatrix, b: &ComplexMatrix) -> Result<()> {
    if !a.is_square() || !b.is_square() || a.rows != b.rows {
        return Err(Error::mismatch(
            op,
            format!("{0}x{0}", a.rows),
            format!("{}x{}", b.rows, b.cols),
        ));
    }
    Ok(())
}

/// [a, b] = ab − ba.
pub fn commutator(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    check_same_square("commutator", a, b)?;
    Ok(&(a * b) - &(b * a))
}

/// ad_h^j(c): the j-fold nested commutator [h, [h, … [h, c]]].
pub fn ad_power(h: &ComplexMatrix, c: &ComplexMatrix, j: usize) -> Result<ComplexMatrix> {
    check_same_square("ad_power", h, c)?;
    let mut acc = c.clone();
    for _ in 0..j {
        acc = commutator(h, &acc)?;
    }
    Ok(acc)
}

/// exp(−i·θ·h) for Hermitian `h`, via eigendecomposition.
pub fn propagator(h: &ComplexMatrix, theta: f64) -> Result<ComplexMatrix> {
    if !h.is_square() {
        return Err(Error::mismatch("propagator", "square matrix", format!("{}x{}", h.rows, h.cols)));
    }
    let (values, vectors) = h.hermitian_eigen()?;
    let phases: Vec<Complex64> = values
        .iter()
        .map(|&e| Complex64::from_polar(1.0, -theta * e))
        .collect();
    let n = h.rows;
    // V · diag(phases) · V†
    let scaled = ComplexMatrix::from_fn(n, n, |r, c| vectors[(r, c)] * phases[c]);
    Ok(&scaled * &vectors.adjoint())
}

/// Unitary DFT matrix, entry (k, l) = n^{-1/2} exp(2πi·kl/n).
pub fn dft_matrix(n: usize) -> ComplexMatrix {
    assert!(n >= 1, "dft_matrix requires n >= 1");
    let norm = (n as f64).sqrt().recip();
    ComplexMatrix::from_fn(n, n, |k, l| {
        // Reduce kl mod n before the trig call so large products stay exact.
        let phase = 2.0 * PI * ((k * l) % n) as f64 / n as f64;
        Complex64::from_polar(norm, phase)
    })
}

/// Orthonormal basis (Frobenius inner product) of a subspace of dim×dim matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixSpan {
    dim: usize,
    basis: Vec<ComplexMatrix>,
}

impl MatrixSpan {
    pub fn empty(dim: usize) -> Self {
        Self { dim, basis: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> &[ComplexMatrix] {
        &self.basis
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    fn check(&self, m: &ComplexMatrix) -> Result<()> {
        if m.rows != self.dim || m.cols != self.dim {
            return Err(Error::mismatch(
                "span",
                format!("{0}x{0}", self.dim),
                format!("{}x{}", m.rows, m.cols),
            ));
        }
        Ok(())
    }

    /// Component of `m` orthogonal to the span (two Gram–Schmidt passes).
    pub fn residual(&self, m: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.check(m)?;
        let mut r = m.clone();
        for _ in 0..2 {
            for b in &self.basis {
                let coeff = b.inner(&r);
                if coeff != ZERO {
                    for (x, y) in r.data.iter_mut().zip(&b.data) {
                        *x -= coeff * y;
                    }
                }
            }
        }
        Ok(r)
    }

    /// Orthogonal projection of `m` onto the span.
    pub fn project(&self, m: &ComplexMatrix) -> Result<ComplexMatrix> {
        Ok(m - &self.residual(m)?)
    }

    /// Largest |⟨B_i, B_j⟩ − δ_ij| over the basis.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.basis.iter().enumerate() {
            for (j, b) in self.basis.iter().enumerate() {
                let target = if i == j { ONE } else { ZERO };
                worst = worst.max((a.inner(b) - target).norm());
            }
        }
        worst
    }
}

/// Extends `span` by `m` if `m` has a component outside it larger than
/// `tol·‖m‖_F`. Returns the (possibly unchanged) span and whether it grew.
pub fn span_extend(span: &MatrixSpan, m: &ComplexMatrix, tol: f64) -> Result<(MatrixSpan, bool)> {
    let mut out = span.clone();
    let grew = out.extend(m, tol)?;
    Ok((out, grew))
}

impl MatrixSpan {
    /// In-place form of [`span_extend`].
    pub fn extend(&mut self, m: &ComplexMatrix, tol: f64) -> Result<bool> {
        let r = self.residual(m)?;
        let norm_m = m.frobenius_norm();
        let norm_r = r.frobenius_norm();
        if norm_m == 0.0 || norm_r <= tol * norm_m {
            return Ok(false);
        }
        self.basis.push(r.scale_real(norm_r.recip()));
        Ok(true)
    }
}
