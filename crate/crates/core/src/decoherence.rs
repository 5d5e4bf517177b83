//! Partial decoherence through environment-correlation coefficients.
//!
//! The joint state Σ_j c_j |s_j⟩|e_j⟩ has environment branches
//! |e_j⟩ = Σ_j′ λ_jj′ |E_j′⟩ over orthonormal classical environment states.
//! Equal rows of λ describe a pure system; λ = I a completely decohered one.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{c64, ComplexMatrix, ZERO};
use crate::probe::{alpha_at_coupling, ProbeSetup};
use crate::protocol::conjugate_readout;
use crate::states::{FactorLayout, QuantumState};

const ROW_NORM_TOL: f64 = 1e-10;
/// Allowed disagreement between the closed form and the Born-rule pipeline.
pub const ORACLE_TOL: f64 = 1e-9;

/// Row j holds the expansion of |e_j⟩ over |E_0⟩ … |E_{N−1}⟩.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaMatrix {
    entries: ComplexMatrix,
}

impl LambdaMatrix {
    pub fn new(entries: ComplexMatrix) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::mismatch("LambdaMatrix", "square", format!("{}x{}", entries.rows(), entries.cols())));
        }
        for j in 0..entries.rows() {
            let norm: f64 = (0..entries.cols()).map(|k| entries[(j, k)].norm_sqr()).sum();
            if (norm - 1.0).abs() > ROW_NORM_TOL {
                return Err(Error::InvalidArgument(format!("λ row {j} has squared norm {norm}, expected 1")));
            }
        }
        Ok(Self { entries })
    }

    pub fn n(&self) -> usize {
        self.entries.rows()
    }

    pub fn entries(&self) -> &ComplexMatrix {
        &self.entries
    }

    pub fn get(&self, j: usize, jp: usize) -> Complex64 {
        self.entries[(j, jp)]
    }

    /// ⟨e_i|e_j⟩ = Σ_j′ λ*_ij′ λ_jj′.
    pub fn overlap_gram(&self) -> ComplexMatrix {
        let n = self.n();
        ComplexMatrix::from_fn(n, n, |i, j| {
            (0..n).map(|k| self.entries[(i, k)].conj() * self.entries[(j, k)]).sum()
        })
    }
}

/// Every branch correlates with |E_0⟩: the environment factors out.
pub fn lambda_pure(n: usize) -> LambdaMatrix {
    assert!(n >= 1);
    LambdaMatrix {
        entries: ComplexMatrix::from_fn(n, n, |_, k| if k == 0 { c64(1.0, 0.0) } else { ZERO }),
    }
}

/// λ_jj′ = δ_jj′: orthogonal environment branches.
pub fn lambda_mixed(n: usize) -> LambdaMatrix {
    assert!(n >= 1);
    LambdaMatrix {
        entries: ComplexMatrix::identity(n),
    }
}

/// λ whose overlap Gram has unit diagonal and every off-diagonal entry equal
/// to e^{−θ}: the lower Cholesky factor of that Gram.
pub fn lambda_interpolated(n: usize, theta: f64) -> Result<LambdaMatrix> {
    if !(theta >= 0.0) {
        return Err(Error::InvalidArgument(format!("theta must be >= 0, got {theta}")));
    }
    if theta == 0.0 {
        return Ok(lambda_pure(n));
    }
    let x = (-theta).exp();
    let gram = |i: usize, j: usize| if i == j { 1.0 } else { x };
    let mut l = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = gram(i, i) - dot;
                if d <= 0.0 {
                    return Err(Error::Numerical(format!("overlap Gram not positive definite at row {i}")));
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (gram(i, j) - dot) / l[j][j];
            }
        }
    }
    LambdaMatrix::new(ComplexMatrix::from_fn(n, n, |r, c| c64(l[r][c], 0.0)))
}

fn check_amplitudes(c: &[Complex64], lam: &LambdaMatrix) -> Result<()> {
    if c.len() != lam.n() {
        return Err(Error::mismatch("amplitudes vs λ", lam.n(), c.len()));
    }
    let norm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidState(format!("amplitude norm {norm} is not 1")));
    }
    Ok(())
}

/// Σ_j c_j |s_j⟩ ⊗ Σ_j′ λ_jj′ |E_j′⟩ on layout [N, N].
pub fn build_joint(c: &[Complex64], lam: &LambdaMatrix) -> Result<QuantumState> {
    check_amplitudes(c, lam)?;
    let n = lam.n();
    let amps = (0..n * n).map(|flat| c[flat / n] * lam.get(flat / n, flat % n)).collect();
    QuantumState::pure(FactorLayout::new(vec![n, n])?, amps)
}

fn conjugate_weights(c: &[Complex64], lam: &LambdaMatrix, expanded: bool) -> Vec<f64> {
    // w_k = Σ_j′ |Σ_j c_j e^{2πijk/N} λ_jj′|²
    let n = lam.n();
    let root = |j: usize, k: usize| Complex64::from_polar(1.0, 2.0 * PI * ((j * k) % n) as f64 / n as f64);
    (0..n)
        .map(|k| {
            (0..n)
                .map(|jp| {
                    if expanded {
                        let mut acc: f64 = (0..n).map(|j| c[j].norm_sqr() * lam.get(j, jp).norm_sqr()).sum();
                        for j in 0..n {
                            for m in j + 1..n {
                                let phase = Complex64::from_polar(1.0, 2.0 * PI * k as f64 * (j as f64 - m as f64) / n as f64);
                                acc += 2.0 * (phase * c[j] * c[m].conj() * lam.get(j, jp) * lam.get(m, jp).conj()).re;
                            }
                        }
                        acc
                    } else {
                        (0..n).map(|j| c[j] * root(j, k) * lam.get(j, jp)).sum::<Complex64>().norm_sqr()
                    }
                })
                .sum()
        })
        .collect()
}

fn weighted_readout(setup: &ProbeSetup, weights: &[f64], g_total: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        for (l, &a) in setup.probe_eigenvalues().iter().enumerate() {
            let p = w * alpha_at_coupling(setup, k, l, g_total).norm_sqr();
            num += a * p;
            den += p;
        }
    }
    num / den
}

/// Closed-form conjugate-basis readout
/// Σ_l a_l Σ_{k,j′} |Σ_j c_j e^{2πijk/N} λ_jj′|² |α_kl|², normalized by the
/// same sum without a_l.
pub fn closed_form_partial(setup: &ProbeSetup, c: &[Complex64], lam: &LambdaMatrix, g_total: f64) -> Result<f64> {
    check_amplitudes(c, lam)?;
    if lam.n() != setup.n() {
        return Err(Error::mismatch("closed_form_partial", setup.n(), lam.n()));
    }
    Ok(weighted_readout(setup, &conjugate_weights(c, lam, false), g_total))
}

/// The same readout with the modulus expanded into populations plus
/// interference terms: Σ_j |c_j|²|λ_jj′|² + 2 Σ_{j<m} re[e^{2πik(j−m)/N} c_j c_m* λ_jj′ λ*_mj′].
/// The sum runs over unordered pairs j < m.
pub fn expanded_form_partial(setup: &ProbeSetup, c: &[Complex64], lam: &LambdaMatrix, g_total: f64) -> Result<f64> {
    check_amplitudes(c, lam)?;
    if lam.n() != setup.n() {
        return Err(Error::mismatch("expanded_form_partial", setup.n(), lam.n()));
    }
    Ok(weighted_readout(setup, &conjugate_weights(c, lam, true), g_total))
}

/// Born-rule pipeline: build_joint → attach probe → QFT → premeasure → ⟨Â⟩.
pub fn born_rule_partial(setup: &ProbeSetup, c: &[Complex64], lam: &LambdaMatrix, g_total: f64) -> Result<f64> {
    conjugate_readout(setup, &build_joint(c, lam)?, g_total)
}

/// Conjugate-basis readout of the partially decohered state at G(t).
/// Evaluates the closed form and fails if it disagrees with the Born-rule
/// pipeline by more than [`ORACLE_TOL`].
pub fn expected_value_partial(setup: &ProbeSetup, c: &[Complex64], lam: &LambdaMatrix, t: f64) -> Result<f64> {
    expected_value_partial_at(setup, c, lam, setup.coupling().integrated(t))
}

/// [`expected_value_partial`] at a given integrated coupling.
pub fn expected_value_partial_at(setup: &ProbeSetup, c: &[Complex64], lam: &LambdaMatrix, g_total: f64) -> Result<f64> {
    let closed = closed_form_partial(setup, c, lam, g_total)?;
    let born = born_rule_partial(setup, c, lam, g_total)?;
    if (closed - born).abs() > ORACLE_TOL {
        return Err(Error::Numerical(format!(
            "closed form {closed} disagrees with Born rule {born}"
        )));
    }
    Ok(closed)
}
