//! Dense symmetric / positive-semidefinite matrix kernel.
//!
//! Every matrix quantity in the crate (source and noise covariances,
//! conditional covariances, multipliers) is a [`SymMatrix`]: a square
//! `nalgebra` matrix whose symmetry is enforced on construction. The free
//! functions in this module are the linear-algebra primitives the bound
//! evaluators and the solver are built from. They are pure; determinant and
//! definiteness failures surface as errors, and [`project_psd`] is the only
//! place that silently repairs an input.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative factor of the default cone-membership tolerance.
pub const DEFAULT_REL_TOL: f64 = 1e-9;

/// A real symmetric matrix of dimension at least one.
///
/// Serializes as `{"dim": n, "rows": [[...], ...]}`; deserialization
/// averages the input with its transpose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct SymMatrix(DMatrix<f64>);

/// Wire form of a square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

impl MatrixJson {
    /// Largest `|m_ij - m_ji|`, or `None` when the rows are not square.
    pub fn asymmetry(&self) -> Option<f64> {
        let n = self.rows.len();
        if self.rows.iter().any(|r| r.len() != n) {
            return None;
        }
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.rows[i][j] - self.rows[j][i]).abs());
            }
        }
        Some(worst)
    }
}

impl TryFrom<MatrixJson> for SymMatrix {
    type Error = Error;
    fn try_from(m: MatrixJson) -> Result<Self> {
        if m.dim != m.rows.len() {
            return Err(Error::DimensionMismatch {
                expected: m.dim,
                found: m.rows.len(),
            });
        }
        SymMatrix::from_rows(&m.rows)
    }
}

impl From<SymMatrix> for MatrixJson {
    fn from(s: SymMatrix) -> Self {
        MatrixJson {
            dim: s.dim(),
            rows: s.rows(),
        }
    }
}

impl SymMatrix {
    /// Wraps `m`, replacing it by `(m + mᵀ)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::InvalidShape {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes without shape checks; callers guarantee a square input.
    pub(crate) fn symmetrized(mut m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        debug_assert_eq!(n, m.ncols());
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidShape { rows: 0, cols: 0 });
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::InvalidShape {
                rows: n,
                cols: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// A 1×1 matrix.
    pub fn scalar(x: f64) -> Self {
        SymMatrix(DMatrix::from_element(1, 1, x))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.0.row(i).iter().copied().collect())
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal().iter().copied().collect()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scale(&self, c: f64) -> Self {
        SymMatrix(&self.0 * c)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }

    /// Eigenvalues in ascending order with matching eigenvector columns.
    pub fn eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        sorted_eigen(&self.0)
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        self.eigen().0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues().amax()
    }

    /// `p · self · pᵀ` (p may be rectangular).
    pub fn congruence(&self, p: &DMatrix<f64>) -> Self {
        SymMatrix::symmetrized(p * &self.0 * p.transpose())
    }

    /// Applies `f` to the eigenvalues.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Self {
        let (vals, vecs) = self.eigen();
        let mapped = DVector::from_iterator(vals.len(), vals.iter().map(|&v| f(v)));
        SymMatrix::symmetrized(&vecs * DMatrix::from_diagonal(&mapped) * vecs.transpose())
    }

    /// Principal square root of the PSD part.
    pub fn psd_sqrt(&self) -> Self {
        self.map_spectrum(|v| v.max(0.0).sqrt())
    }

    /// Spectral decomposition into positive part and non-positive part.
    pub(crate) fn split_spectrum(&self) -> (Self, Self) {
        (
            self.map_spectrum(|v| v.max(0.0)),
            self.map_spectrum(|v| v.min(0.0)),
        )
    }

    pub(crate) fn check_same_dim(&self, other: &SymMatrix) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

impl From<SymMatrix> for DMatrix<f64> {
    fn from(s: SymMatrix) -> Self {
        s.0
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl Neg for &SymMatrix {
    type Output = SymMatrix;
    fn neg(self) -> SymMatrix {
        SymMatrix(-&self.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        self.scale(rhs)
    }
}

/// Result of a definiteness test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdCheckReport {
    pub min_eigenvalue: f64,
    pub is_psd: bool,
    pub is_pd: bool,
    pub tolerance_used: f64,
}

pub(crate) fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Scale-aware default tolerance `1e-9 · (1 + max |eigenvalue|)`.
pub fn default_tol(a: &SymMatrix) -> f64 {
    DEFAULT_REL_TOL * (1.0 + a.max_abs_eigenvalue())
}

pub fn psd_check(a: &SymMatrix, tol: Option<f64>) -> PsdCheckReport {
    let tol = tol.unwrap_or_else(|| default_tol(a));
    let min_eigenvalue = a.min_eigenvalue();
    PsdCheckReport {
        min_eigenvalue,
        is_psd: min_eigenvalue >= -tol,
        is_pd: min_eigenvalue > tol,
        tolerance_used: tol,
    }
}

/// Natural log of the determinant of a positive definite matrix.
pub fn logdet(a: &SymMatrix) -> Result<f64> {
    let chol =
        a.0.clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite {
                context: "logdet".into(),
            })?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..a.dim() {
        let p = l[(i, i)];
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::NotPositiveDefinite {
                context: "logdet pivot".into(),
            });
        }
        acc += p.ln();
    }
    Ok(2.0 * acc)
}

/// `a ⪯ b` in the Loewner order, i.e. `λ_min(b − a) ≥ −tol`.
pub fn psd_order(a: &SymMatrix, b: &SymMatrix, tol: f64) -> Result<bool> {
    a.check_same_dim(b)?;
    Ok((b - a).min_eigenvalue() >= -tol)
}

pub fn spd_inverse(a: &SymMatrix) -> Result<SymMatrix> {
    let chol =
        a.0.clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite {
                context: "spd_inverse".into(),
            })?;
    Ok(SymMatrix::symmetrized(chol.inverse()))
}

/// `(A + C B Cᵀ)⁻¹` through the Woodbury identity.
pub fn woodbury_inverse(a: &SymMatrix, c: &DMatrix<f64>, b: &SymMatrix) -> Result<SymMatrix> {
    if c.nrows() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: c.nrows(),
        });
    }
    if c.ncols() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            found: c.ncols(),
        });
    }
    let a_inv = spd_inverse(a)?;
    let b_inv = spd_inverse(b)?;
    let a_inv_c = a_inv.as_matrix() * c;
    let inner = SymMatrix::symmetrized(b_inv.as_matrix() + c.transpose() * &a_inv_c);
    let inner_inv = spd_inverse(&inner).map_err(|_| Error::NotPositiveDefinite {
        context: "woodbury inner factor".into(),
    })?;
    let correction = &a_inv_c * inner_inv.as_matrix() * a_inv_c.transpose();
    Ok(SymMatrix::symmetrized(a_inv.as_matrix() - correction))
}

/// Congruence `a = wᵀ·diag(lambda_a)·w`, `b = wᵀ·diag(lambda_b)·w`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimultaneousDiagonalization {
    pub w: DMatrix<f64>,
    pub lambda_a: DVector<f64>,
    pub lambda_b: DVector<f64>,
}

impl SimultaneousDiagonalization {
    pub fn reconstruct_a(&self) -> DMatrix<f64> {
        self.w.transpose() * DMatrix::from_diagonal(&self.lambda_a) * &self.w
    }

    pub fn reconstruct_b(&self) -> DMatrix<f64> {
        self.w.transpose() * DMatrix::from_diagonal(&self.lambda_b) * &self.w
    }

    /// Largest relative Frobenius reconstruction error over the two inputs.
    pub fn residual(&self, a: &SymMatrix, b: &SymMatrix) -> f64 {
        let scale = 1.0 + a.frobenius_norm().max(b.frobenius_norm());
        let ra = (self.reconstruct_a() - a.as_matrix()).norm();
        let rb = (self.reconstruct_b() - b.as_matrix()).norm();
        ra.max(rb) / scale
    }

    /// 2-norm condition number of `w`.
    pub fn condition_number(&self) -> f64 {
        let sv = self.w.singular_values();
        let max = sv.max();
        let min = sv.min();
        if min > 0.0 {
            max / min
        } else {
            f64::INFINITY
        }
    }
}

/// Simultaneous congruence diagonalization of two PSD matrices.
///
/// The pair is whitened on the range of `a + b`; the null space of `a + b`
/// (where both inputs vanish) is carried by an orthonormal complement, so the
/// construction stays exact when `a + b` is singular.
pub fn simultaneous_diagonalize(
    a: &SymMatrix,
    b: &SymMatrix,
) -> Result<SimultaneousDiagonalization> {
    a.check_same_dim(b)?;
    let n = a.dim();
    for (name, m) in [("a", a), ("b", b)] {
        let rep = psd_check(m, None);
        if !rep.is_psd {
            return Err(Error::Degenerate(format!(
                "input {name} is not PSD (min eigenvalue {:.3e})",
                rep.min_eigenvalue
            )));
        }
    }
    let sum = a + b;
    let (s, q) = sum.eigen();
    let s_max = s.amax();
    let cutoff = 1e-13 * s_max.max(f64::MIN_POSITIVE);
    let range: Vec<usize> = (0..n).filter(|&i| s_max > 0.0 && s[i] > cutoff).collect();
    let null: Vec<usize> = (0..n).filter(|i| !range.contains(i)).collect();
    let r = range.len();

    let mut w = DMatrix::zeros(n, n);
    let mut lambda_a = DVector::zeros(n);
    let mut lambda_b = DVector::zeros(n);

    if r > 0 {
        // whitening map T = diag(s_r)^{-1/2} Q_rᵀ, so T (a+b) Tᵀ = I on the range
        let mut t = DMatrix::zeros(r, n);
        let mut t_inv_t = DMatrix::zeros(n, r);
        for (k, &i) in range.iter().enumerate() {
            let root = s[i].sqrt();
            for j in 0..n {
                t[(k, j)] = q[(j, i)] / root;
                t_inv_t[(j, k)] = q[(j, i)] * root;
            }
        }
        let c = SymMatrix::symmetrized(&t * a.as_matrix() * t.transpose());
        let (mu, p) = c.eigen();
        // w_r = Pᵀ diag(s_r)^{1/2} Q_rᵀ
        let w_r = p.transpose() * t_inv_t.transpose();
        for k in 0..r {
            w.set_row(k, &w_r.row(k));
            let la = mu[k].clamp(0.0, 1.0);
            lambda_a[k] = la;
            lambda_b[k] = 1.0 - la;
        }
    }
    for (k, &i) in null.iter().enumerate() {
        for j in 0..n {
            w[(r + k, j)] = q[(j, i)];
        }
    }
    Ok(SimultaneousDiagonalization {
        w,
        lambda_a,
        lambda_b,
    })
}

/// Diagonal pseudo-inverse: `1/λ` where `λ > zero_tol`, `0` otherwise.
pub fn diag_pseudo_inverse(lambda: &DVector<f64>, zero_tol: f64) -> DVector<f64> {
    lambda.map(|l| if l > zero_tol { 1.0 / l } else { 0.0 })
}

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped to 0).
pub fn project_psd(a: &SymMatrix) -> SymMatrix {
    let (vals, _) = a.eigen();
    if vals[0] >= 0.0 {
        return a.clone();
    }
    a.map_spectrum(|v| v.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m2(a: f64, b: f64, c: f64) -> SymMatrix {
        SymMatrix::from_rows(&[vec![a, b], vec![b, c]]).unwrap()
    }

    #[test]
    fn construction_symmetrizes_and_rejects_bad_shapes() {
        let s = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).unwrap();
        assert_eq!(s.get(0, 1), 1.0);
        assert_eq!(s.get(1, 0), 1.0);
        assert!(SymMatrix::new(DMatrix::zeros(2, 3)).is_err());
        assert!(SymMatrix::new(DMatrix::zeros(0, 0)).is_err());
        assert!(SymMatrix::from_rows(&[vec![1.0, f64::NAN], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn logdet_examples() {
        assert_eq!(logdet(&SymMatrix::identity(3)).unwrap(), 0.0);
        assert_relative_eq!(
            logdet(&SymMatrix::from_diagonal(&[2.0, 0.5])).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            logdet(&SymMatrix::from_diagonal(&[1.0, 2.0, 4.0])).unwrap(),
            8f64.ln(),
            epsilon = 1e-14
        );
        assert!(matches!(
            logdet(&SymMatrix::from_diagonal(&[1.0, 0.0])),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn psd_order_examples() {
        let tol = 1e-12;
        assert!(psd_order(&SymMatrix::zeros(2), &m2(2.0, 1.0, 2.0), tol).unwrap());
        assert!(psd_order(
            &SymMatrix::identity(2),
            &SymMatrix::identity(2).scale(2.0),
            tol
        )
        .unwrap());
        assert!(!psd_order(
            &SymMatrix::from_diagonal(&[1.0, 2.0]),
            &SymMatrix::from_diagonal(&[2.0, 1.0]),
            tol
        )
        .unwrap());
        assert!(matches!(
            psd_order(&SymMatrix::identity(2), &SymMatrix::identity(3), tol),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn spd_inverse_examples() {
        let inv = spd_inverse(&SymMatrix::from_diagonal(&[2.0, 4.0])).unwrap();
        assert_relative_eq!(inv.get(0, 0), 0.5);
        assert_relative_eq!(inv.get(1, 1), 0.25);
        assert_eq!(
            spd_inverse(&SymMatrix::identity(3)).unwrap(),
            SymMatrix::identity(3)
        );
        let inv = spd_inverse(&m2(2.0, 1.0, 2.0)).unwrap();
        let expected = m2(2.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0);
        assert!((inv.as_matrix() - expected.as_matrix()).amax() < 1e-15);
        assert!(spd_inverse(&m2(1.0, 2.0, 1.0)).is_err());
    }

    #[test]
    fn woodbury_trivial_cases() {
        let i2 = SymMatrix::identity(2);
        let r = woodbury_inverse(&i2, &DMatrix::zeros(2, 2), &i2).unwrap();
        assert!((r.as_matrix() - DMatrix::identity(2, 2)).amax() < 1e-15);
        let r = woodbury_inverse(&i2, &DMatrix::identity(2, 2), &i2).unwrap();
        assert!((r.as_matrix() - DMatrix::identity(2, 2) * 0.5).amax() < 1e-15);
        assert!(woodbury_inverse(&i2, &DMatrix::zeros(3, 2), &i2).is_err());
    }

    #[test]
    fn simultaneous_diagonalization_examples() {
        let i2 = SymMatrix::identity(2);
        let sd = simultaneous_diagonalize(&i2, &i2).unwrap();
        assert!((&sd.lambda_a - &sd.lambda_b).amax() < 1e-14);
        assert!(sd.residual(&i2, &i2) < 1e-12);

        let a = SymMatrix::from_diagonal(&[1.0, 0.0]);
        let b = SymMatrix::from_diagonal(&[0.0, 1.0]);
        let sd = simultaneous_diagonalize(&a, &b).unwrap();
        assert!(sd.residual(&a, &b) < 1e-12);
        let mut la: Vec<f64> = sd.lambda_a.iter().copied().collect();
        la.sort_by(f64::total_cmp);
        assert_eq!(la, vec![0.0, 1.0]);
        assert!(sd.condition_number().is_finite());

        // singular a + b keeps an exact reconstruction and a non-singular w
        let z = SymMatrix::zeros(3);
        let a = SymMatrix::from_diagonal(&[2.0, 0.0, 0.0]);
        let sd = simultaneous_diagonalize(&a, &z).unwrap();
        assert!(sd.residual(&a, &z) < 1e-14);
        assert!(sd.condition_number().is_finite());
        assert!(simultaneous_diagonalize(&SymMatrix::from_diagonal(&[1.0, -1.0]), &i2).is_err());
    }

    #[test]
    fn pseudo_inverse_rule() {
        let d = diag_pseudo_inverse(&DVector::from_vec(vec![2.0, 0.0]), 1e-12);
        assert_eq!(d.as_slice(), &[0.5, 0.0]);
        let d = diag_pseudo_inverse(&DVector::from_vec(vec![1.0, 1.0, 1.0]), 1e-12);
        assert_eq!(d.as_slice(), &[1.0, 1.0, 1.0]);
        let d = diag_pseudo_inverse(&DVector::from_vec(vec![0.0]), 1e-12);
        assert_eq!(d.as_slice(), &[0.0]);
    }

    #[test]
    fn projection_examples() {
        let p = m2(2.0, 1.0, 2.0);
        assert_eq!(project_psd(&p), p);
        let q = project_psd(&SymMatrix::from_diagonal(&[1.0, -1.0]));
        assert!((q.as_matrix() - SymMatrix::from_diagonal(&[1.0, 0.0]).as_matrix()).amax() < 1e-15);
    }
}
