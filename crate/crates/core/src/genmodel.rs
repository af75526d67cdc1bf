//! General linear observations `Y = H_Y X + N_Y`, `Z = H_Z X + N_Z` with
//! identity noise covariances.
//!
//! The bounds are evaluated directly in the channel-matrix
//! parameterization. The perturbed aligned family
//! `Σ_{Y,α} = R_Y (Λ_Y + αI)^{-2} R_Yᵀ` built from the SVD of `H_Y` is used
//! only to check that its conditional covariances and distortion transfer
//! converge to the general-model ones as `α → 0`.
//!
//! The leakage objective is
//! `½log(|K_X|/|K_{X|V}|) − ½log(|H_Y K_{X|U} H_Yᵀ+I| / |H_Y K_{X|V} H_Yᵀ+I|) + ½log|H_Y K_{X|U} H_Yᵀ+I|`.
//! Its second and third terms cancel in `K_{X|U}`, so the minimum does not
//! depend on `H_Z`; the eavesdropper's matrix enters only [`limit_checks`].

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leakopt::program::{Part, Program, Var};
use crate::leakopt::{LeakageSolution, Problem, SolverOptions};
use crate::matkernel::{default_tol, logdet, spd_inverse, SymMatrix};
use crate::model::{AuxiliaryPair, DistortionConstraint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeneralModelRaw", into = "GeneralModelRaw")]
pub struct GeneralModel {
    k_x: SymMatrix,
    h_y: DMatrix<f64>,
    h_z: DMatrix<f64>,
}

/// Wire form of a rectangular matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectJson {
    pub rows: Vec<Vec<f64>>,
}

impl RectJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        RectJson {
            rows: (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let r = self.rows.len();
        let c = self.rows.first().map_or(0, |x| x.len());
        if r == 0 || c == 0 || self.rows.iter().any(|x| x.len() != c) {
            return Err(Error::InvalidShape { rows: r, cols: c });
        }
        if self.rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("channel matrix".into()));
        }
        Ok(DMatrix::from_fn(r, c, |i, j| self.rows[i][j]))
    }
}

#[derive(Serialize, Deserialize)]
struct GeneralModelRaw {
    #[serde(rename = "K_X")]
    k_x: SymMatrix,
    #[serde(rename = "H_Y")]
    h_y: RectJson,
    #[serde(rename = "H_Z")]
    h_z: RectJson,
}

impl TryFrom<GeneralModelRaw> for GeneralModel {
    type Error = Error;
    fn try_from(r: GeneralModelRaw) -> Result<Self> {
        GeneralModel::new(r.k_x, r.h_y.to_matrix()?, r.h_z.to_matrix()?)
    }
}

impl From<GeneralModel> for GeneralModelRaw {
    fn from(g: GeneralModel) -> Self {
        GeneralModelRaw {
            h_y: RectJson::from_matrix(&g.h_y),
            h_z: RectJson::from_matrix(&g.h_z),
            k_x: g.k_x,
        }
    }
}

impl GeneralModel {
    pub fn new(k_x: SymMatrix, h_y: DMatrix<f64>, h_z: DMatrix<f64>) -> Result<Self> {
        let n = k_x.dim();
        for h in [&h_y, &h_z] {
            if h.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: h.ncols(),
                });
            }
            if h.nrows() == 0 {
                return Err(Error::InvalidShape {
                    rows: 0,
                    cols: h.ncols(),
                });
            }
        }
        if !crate::matkernel::psd_check(&k_x, None).is_pd {
            return Err(Error::NotPositiveDefinite {
                context: "K_X".into(),
            });
        }
        Ok(GeneralModel { k_x, h_y, h_z })
    }

    pub fn dim(&self) -> usize {
        self.k_x.dim()
    }

    pub fn k_x(&self) -> &SymMatrix {
        &self.k_x
    }

    pub fn h_y(&self) -> &DMatrix<f64> {
        &self.h_y
    }

    pub fn h_z(&self) -> &DMatrix<f64> {
        &self.h_z
    }

    /// `K_{X|Y} = (K_X^{-1} + H_YᵀH_Y)^{-1}`.
    pub fn cond_cov_xy(&self) -> Result<SymMatrix> {
        let info = &spd_inverse(&self.k_x)? + &gram(&self.h_y);
        spd_inverse(&info)
    }
}

fn gram(h: &DMatrix<f64>) -> SymMatrix {
    SymMatrix::symmetrized(h.transpose() * h)
}

/// SVD factors `H = Q Λ Rᵀ` with `Λ` square of the source dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaFamily {
    pub r_y: DMatrix<f64>,
    pub r_z: DMatrix<f64>,
    pub lambda_y: DVector<f64>,
    pub lambda_z: DVector<f64>,
    pub alpha_star: Option<f64>,
}

/// Right singular vectors and singular values (descending) of `h`, with
/// `h` zero-padded to at least `n` rows so that `Λ` is `n × n`.
fn square_svd(h: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = h.ncols();
    let rows = h.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (h.nrows(), n)).copy_from(h);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested right factor");
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let mut r = DMatrix::zeros(n, n);
    let mut lambda = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        lambda[dst] = sv[src];
        r.set_column(dst, &vt.row(src).transpose());
    }
    (r, lambda)
}

fn shifted(r: &DMatrix<f64>, lambda: &DVector<f64>, alpha: f64, power: i32) -> SymMatrix {
    let d = lambda.map(|l| (l + alpha).powi(power));
    SymMatrix::symmetrized(r * DMatrix::from_diagonal(&d) * r.transpose())
}

impl AlphaFamily {
    /// `Σ_{Y,α} = R_Y (Λ_Y + αI)^{-2} R_Yᵀ`.
    pub fn sigma_y_alpha(&self, alpha: f64) -> SymMatrix {
        shifted(&self.r_y, &self.lambda_y, alpha, -2)
    }

    pub fn sigma_z_alpha(&self, alpha: f64) -> SymMatrix {
        shifted(&self.r_z, &self.lambda_z, alpha, -2)
    }

    /// `Σ_{Y,α}^{-1} = R_Y (Λ_Y + αI)² R_Yᵀ`.
    pub fn info_y(&self, alpha: f64) -> SymMatrix {
        shifted(&self.r_y, &self.lambda_y, alpha, 2)
    }

    fn gain_y(&self, alpha: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.lambda_y.map(|l| l + alpha)) * self.r_y.transpose()
    }

    fn gain_z(&self, alpha: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.lambda_z.map(|l| l + alpha)) * self.r_z.transpose()
    }
}

pub fn svd_reduce(g: &GeneralModel) -> AlphaFamily {
    let (r_y, lambda_y) = square_svd(&g.h_y);
    let (r_z, lambda_z) = square_svd(&g.h_z);
    AlphaFamily {
        r_y,
        r_z,
        lambda_y,
        lambda_z,
        alpha_star: None,
    }
}

fn alpha_ok(fam: &AlphaFamily, d_inv: &SymMatrix, alpha: f64) -> bool {
    (d_inv - &fam.info_y(alpha))
        .into_inner()
        .cholesky()
        .is_some()
}

/// Half of the largest `α` (found by bisection) with
/// `D^{-1} − R_Y (Λ_Y + αI)² R_Yᵀ ≻ 0`.
pub fn alpha_star(fam: &AlphaFamily, d: &DistortionConstraint) -> Result<f64> {
    let d_inv = spd_inverse(d.d())
        .map_err(|_| Error::InfeasibleDistortion("D must be positive definite".into()))?;
    let mut lo = 1e-12;
    if !alpha_ok(fam, &d_inv, lo) {
        return Err(Error::InfeasibleDistortion(
            "no alpha > 1e-12 keeps Sigma_Y,alpha - D positive definite".into(),
        ));
    }
    let mut hi = 1e-12;
    for _ in 0..200 {
        hi *= 2.0;
        if !alpha_ok(fam, &d_inv, hi) {
            break;
        }
        lo = hi;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if alpha_ok(fam, &d_inv, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * lo)
}

/// `F_o(D) = (D^{-1} − H_YᵀH_Y)^{-1}`.
pub fn f_o(g: &GeneralModel, d: &DistortionConstraint) -> Result<SymMatrix> {
    let d_inv = spd_inverse(d.d())?;
    spd_inverse(&(&d_inv - &gram(&g.h_y))).map_err(|_| Error::NotPositiveDefinite {
        context: "D^-1 - H_Y^T H_Y".into(),
    })
}

/// Checks `0 ≺ D ⪯ K_{X|Y}` and returns `K_{X|Y}`.
pub fn check_distortion(g: &GeneralModel, d: &DistortionConstraint) -> Result<SymMatrix> {
    g.k_x.check_same_dim(d.d())?;
    let k_xy = g.cond_cov_xy()?;
    let tol = default_tol(&k_xy);
    if (&k_xy - d.d()).min_eigenvalue() < -tol {
        return Err(Error::InfeasibleDistortion(
            "D <= K_X|Y violated for the general model".into(),
        ));
    }
    if d.d().min_eigenvalue() <= tol {
        return Err(Error::InfeasibleDistortion(
            "D must be positive definite".into(),
        ));
    }
    Ok(k_xy)
}

pub(crate) fn general_problem(g: &GeneralModel, f: SymMatrix) -> Result<Problem> {
    let n = g.dim();
    let m = g.h_y.nrows();
    let mut program = Program::new(n, 0.5 * logdet(&g.k_x)?);
    let eye = DMatrix::identity(m, m);
    program.push(-0.5, DMatrix::zeros(n, n), vec![Part::plain(1.0, Var::V)]);
    program.push(
        -0.5,
        eye.clone(),
        vec![Part::mapped(1.0, Var::U, g.h_y.clone())],
    );
    program.push(
        0.5,
        eye.clone(),
        vec![Part::mapped(1.0, Var::V, g.h_y.clone())],
    );
    program.push(0.5, eye, vec![Part::mapped(1.0, Var::U, g.h_y.clone())]);
    Ok(Problem {
        program,
        k_x: g.k_x.clone(),
        f,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralBounds {
    pub r_min: f64,
    pub ie_min: f64,
    pub pair: AuxiliaryPair,
    pub solution: LeakageSolution,
}

/// Rate bound and minimum leakage of the general model.
pub fn general_bounds(
    g: &GeneralModel,
    d: &DistortionConstraint,
    opts: &SolverOptions,
) -> Result<GeneralBounds> {
    let k_xy = check_distortion(g, d)?;
    let r_min = (0.5 * (logdet(&k_xy)? - logdet(d.d())?)).max(0.0);
    let f = f_o(g, d)?;
    let solution = general_problem(g, f)?.solve(opts)?;
    Ok(GeneralBounds {
        r_min,
        ie_min: solution.value,
        pair: solution.pair.clone(),
        solution,
    })
}

/// The general leakage with the eavesdropper term written through `H_Z`.
pub fn general_leakage(g: &GeneralModel, pair: &AuxiliaryPair) -> Result<f64> {
    let m_y = g.h_y.nrows();
    let m_z = g.h_z.nrows();
    let through = |h: &DMatrix<f64>, k: &SymMatrix, m: usize| {
        logdet(&SymMatrix::symmetrized(
            h * k.as_matrix() * h.transpose() + DMatrix::identity(m, m),
        ))
    };
    Ok(0.5 * (logdet(&g.k_x)? - logdet(&pair.k_xv)?)
        - 0.5 * (through(&g.h_y, &pair.k_xu, m_y)? - through(&g.h_y, &pair.k_xv, m_y)?)
        + 0.5 * through(&g.h_z, &pair.k_xu, m_z)?)
}

/// Aligned leakage of the `α`-perturbed model, via `|K + Σ_α| / |Σ_α| = |I + G K Gᵀ|`.
pub fn alpha_leakage(
    g: &GeneralModel,
    fam: &AlphaFamily,
    alpha: f64,
    pair: &AuxiliaryPair,
) -> Result<f64> {
    let n = g.dim();
    let through = |gain: &DMatrix<f64>, k: &SymMatrix| {
        logdet(&SymMatrix::symmetrized(
            gain * k.as_matrix() * gain.transpose() + DMatrix::identity(n, n),
        ))
    };
    let gy = fam.gain_y(alpha);
    let gz = fam.gain_z(alpha);
    Ok(0.5 * (logdet(&g.k_x)? - logdet(&pair.k_xv)?)
        - 0.5 * (through(&gy, &pair.k_xu)? - through(&gy, &pair.k_xv)?)
        + 0.5 * through(&gz, &pair.k_xu)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    pub alpha: f64,
    /// `‖K_{X|Ȳ_α} − K_{X|Y}‖ / ‖K_{X|Y}‖`.
    pub cond_cov_residual: f64,
    /// `‖F_α(D) − F_o(D)‖ / ‖F_o(D)‖`.
    pub f_residual: f64,
    /// Largest `I_{e,α} − I_{e,o}` over the sampled pairs.
    pub leakage_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub alpha_star: f64,
    pub rows: Vec<LimitRow>,
    pub cond_cov_slope: f64,
    pub f_slope: f64,
    /// `I_{e,o} ≥ I_{e,α} − ε` at the smallest `α`.
    pub leakage_order_holds: bool,
    pub epsilon: f64,
}

impl LimitReport {
    pub fn final_residual(&self) -> f64 {
        self.rows
            .last()
            .map_or(f64::INFINITY, |r| r.cond_cov_residual.max(r.f_residual))
    }

    pub fn min_slope(&self) -> f64 {
        self.cond_cov_slope.min(self.f_slope)
    }
}

/// `{1e-1, …, 1e-6}` restricted to `α ≤ α*`, or `[α*]` if that is empty.
pub fn default_alphas(alpha_star: f64) -> Vec<f64> {
    let v: Vec<f64> = (1..=6)
        .map(|k| 10f64.powi(-k))
        .filter(|&a| a <= alpha_star)
        .collect();
    if v.is_empty() {
        vec![alpha_star]
    } else {
        v
    }
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > 1e-15)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn sample_pairs(k_x: &SymMatrix, f: &SymMatrix, count: usize, seed: u64) -> Vec<AuxiliaryPair> {
    let n = k_x.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rotated = |lo: f64, hi: f64| {
        let q = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5)
            .qr()
            .q();
        let d = DVector::from_fn(n, |_, _| lo + (hi - lo) * rng.random::<f64>());
        SymMatrix::symmetrized(&q * DMatrix::from_diagonal(&d) * q.transpose())
    };
    (0..count)
        .map(|_| {
            let k_xv = rotated(0.1, 1.0).congruence(f.psd_sqrt().as_matrix());
            let gap = (k_x - &k_xv).psd_sqrt();
            let k_xu = &k_xv + &rotated(0.0, 1.0).congruence(gap.as_matrix());
            AuxiliaryPair { k_xv, k_xu }
        })
        .collect()
}

/// Convergence of the `α`-family to the general model as `α` decreases.
pub fn limit_checks(
    g: &GeneralModel,
    d: &DistortionConstraint,
    alphas: &[f64],
) -> Result<LimitReport> {
    let k_xy = check_distortion(g, d)?;
    let mut fam = svd_reduce(g);
    let a_star = alpha_star(&fam, d)?;
    fam.alpha_star = Some(a_star);
    let f = f_o(g, d)?;
    let d_inv = spd_inverse(d.d())?;
    let kx_inv = spd_inverse(&g.k_x)?;
    let pairs = sample_pairs(&g.k_x, &f, 16, 0xA1FA);
    let rel = |a: &SymMatrix, b: &SymMatrix| (a - b).frobenius_norm() / b.frobenius_norm();
    let mut rows = Vec::new();
    for &alpha in alphas {
        let info = fam.info_y(alpha);
        let k_alpha = spd_inverse(&(&kx_inv + &info))?;
        let f_alpha = spd_inverse(&(&d_inv - &info)).map_err(|_| {
            Error::InfeasibleDistortion(format!("alpha {alpha} exceeds the admissible range"))
        })?;
        let mut excess = f64::NEG_INFINITY;
        for p in &pairs {
            excess = excess.max(alpha_leakage(g, &fam, alpha, p)? - general_leakage(g, p)?);
        }
        rows.push(LimitRow {
            alpha,
            cond_cov_residual: rel(&k_alpha, &k_xy),
            f_residual: rel(&f_alpha, &f),
            leakage_excess: excess,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.alpha).collect();
    let cs: Vec<f64> = rows.iter().map(|r| r.cond_cov_residual).collect();
    let fs: Vec<f64> = rows.iter().map(|r| r.f_residual).collect();
    let epsilon = 1e-5;
    let leakage_order_holds = rows.last().is_some_and(|r| r.leakage_excess <= epsilon);
    Ok(LimitReport {
        alpha_star: a_star,
        cond_cov_slope: loglog_slope(&xs, &cs),
        f_slope: loglog_slope(&xs, &fs),
        rows,
        leakage_order_holds,
        epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_model(n: usize) -> GeneralModel {
        GeneralModel::new(
            SymMatrix::identity(n),
            DMatrix::identity(n, n),
            DMatrix::identity(n, n),
        )
        .unwrap()
    }

    #[test]
    fn svd_of_identity_and_row() {
        let fam = svd_reduce(&identity_model(2));
        assert!((fam.lambda_y.as_slice()[0] - 1.0).abs() < 1e-14);
        let g = GeneralModel::new(
            SymMatrix::identity(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let fam = svd_reduce(&g);
        assert!((fam.lambda_y[0] - 1.0).abs() < 1e-14);
        assert!(fam.lambda_y[1].abs() < 1e-14);
        let rt_r = fam.r_y.transpose() * &fam.r_y;
        assert!((rt_r - DMatrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn tall_channel_is_reduced() {
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        let g = GeneralModel::new(SymMatrix::identity(2), h.clone(), h).unwrap();
        let fam = svd_reduce(&g);
        assert_eq!(fam.lambda_y.len(), 2);
        assert!((fam.lambda_y[0] - 2.0).abs() < 1e-14);
        let back =
            &fam.r_y * DMatrix::from_diagonal(&fam.lambda_y.map(|l| l * l)) * fam.r_y.transpose();
        assert!((back - gram(g.h_y()).as_matrix()).amax() < 1e-12);
    }

    #[test]
    fn f_o_examples() {
        let g = identity_model(2);
        let f = f_o(
            &g,
            &DistortionConstraint::new(SymMatrix::identity(2).scale(0.5)),
        )
        .unwrap();
        assert!((f.as_matrix() - DMatrix::identity(2, 2)).amax() < 1e-14);
        let g0 = GeneralModel::new(
            SymMatrix::identity(2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let d = SymMatrix::from_diagonal(&[0.3, 0.4]);
        let f = f_o(&g0, &DistortionConstraint::new(d.clone())).unwrap();
        assert!((&f - &d).max_abs() < 1e-14);
        let k_xy = g.cond_cov_xy().unwrap();
        let f = f_o(&g, &DistortionConstraint::new(k_xy)).unwrap();
        assert!((f.as_matrix() - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn alpha_star_examples() {
        let g = identity_model(2);
        let fam = svd_reduce(&g);
        let d = DistortionConstraint::new(g.cond_cov_xy().unwrap().scale(0.4));
        let a = alpha_star(&fam, &d).unwrap();
        assert!(a > 0.0);
        assert!(alpha_ok(&fam, &spd_inverse(d.d()).unwrap(), a));
        let bad = DistortionConstraint::new(SymMatrix::identity(2));
        assert!(alpha_star(&fam, &bad).is_err());
    }

    #[test]
    fn limits_converge_linearly() {
        let g = GeneralModel::new(
            SymMatrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 0.8]]).unwrap(),
            DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.0, 0.3]),
            DMatrix::from_row_slice(1, 2, &[0.2, 0.3]),
        )
        .unwrap();
        let d = DistortionConstraint::new(g.cond_cov_xy().unwrap().scale(0.5));
        let fam = svd_reduce(&g);
        let a = alpha_star(&fam, &d).unwrap();
        let rep = limit_checks(&g, &d, &default_alphas(a)).unwrap();
        assert!(rep.final_residual() < 1e-6, "{rep:?}");
        assert!(rep.min_slope() >= 0.9, "{rep:?}");
        assert!(rep.leakage_order_holds, "{rep:?}");
    }

    #[test]
    fn objective_independent_of_eavesdropper() {
        let mk = |hz: DMatrix<f64>| {
            GeneralModel::new(SymMatrix::identity(2), DMatrix::identity(2, 2) * 0.8, hz).unwrap()
        };
        let d = DistortionConstraint::new(SymMatrix::identity(2).scale(0.3));
        let a = general_bounds(&mk(DMatrix::zeros(2, 2)), &d, &SolverOptions::default()).unwrap();
        let b =
            general_bounds(&mk(DMatrix::identity(2, 2)), &d, &SolverOptions::default()).unwrap();
        assert!((a.ie_min - b.ie_min).abs() < 1e-9);
    }
}
