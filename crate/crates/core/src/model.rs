//! The aligned model `Y = X + N_Y`, `Z = X + N_Z` and its closed-form
//! quantities: conditional covariances, the distortion transfer `F(D)`, the
//! Wyner–Ziv rate bound and the leakage objective with its gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matkernel::{default_tol, logdet, psd_check, psd_order, spd_inverse, SymMatrix};

/// Source covariance `K_X` and noise covariances `Σ_Y`, `Σ_Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AlignedModelRaw", into = "AlignedModelRaw")]
pub struct AlignedModel {
    k_x: SymMatrix,
    sigma_y: SymMatrix,
    sigma_z: SymMatrix,
}

#[derive(Serialize, Deserialize)]
struct AlignedModelRaw {
    #[serde(rename = "K_X")]
    k_x: SymMatrix,
    #[serde(rename = "Sigma_Y")]
    sigma_y: SymMatrix,
    #[serde(rename = "Sigma_Z")]
    sigma_z: SymMatrix,
}

impl TryFrom<AlignedModelRaw> for AlignedModel {
    type Error = Error;
    fn try_from(r: AlignedModelRaw) -> Result<Self> {
        AlignedModel::new(r.k_x, r.sigma_y, r.sigma_z)
    }
}

impl From<AlignedModel> for AlignedModelRaw {
    fn from(m: AlignedModel) -> Self {
        AlignedModelRaw {
            k_x: m.k_x,
            sigma_y: m.sigma_y,
            sigma_z: m.sigma_z,
        }
    }
}

fn require_pd(m: &SymMatrix, name: &str) -> Result<()> {
    if !psd_check(m, None).is_pd {
        return Err(Error::NotPositiveDefinite {
            context: name.to_string(),
        });
    }
    Ok(())
}

impl AlignedModel {
    pub fn new(k_x: SymMatrix, sigma_y: SymMatrix, sigma_z: SymMatrix) -> Result<Self> {
        k_x.check_same_dim(&sigma_y)?;
        k_x.check_same_dim(&sigma_z)?;
        require_pd(&k_x, "K_X")?;
        require_pd(&sigma_y, "Sigma_Y")?;
        require_pd(&sigma_z, "Sigma_Z")?;
        Ok(AlignedModel {
            k_x,
            sigma_y,
            sigma_z,
        })
    }

    /// Scalar model with variances `σx²`, `σy²`, `σz²`.
    pub fn scalar(sigx2: f64, sigy2: f64, sigz2: f64) -> Result<Self> {
        Self::new(
            SymMatrix::scalar(sigx2),
            SymMatrix::scalar(sigy2),
            SymMatrix::scalar(sigz2),
        )
    }

    pub fn dim(&self) -> usize {
        self.k_x.dim()
    }

    pub fn k_x(&self) -> &SymMatrix {
        &self.k_x
    }

    pub fn sigma_y(&self) -> &SymMatrix {
        &self.sigma_y
    }

    pub fn sigma_z(&self) -> &SymMatrix {
        &self.sigma_z
    }

    /// The same model with every covariance multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.k_x.scale(c),
            self.sigma_y.scale(c),
            self.sigma_z.scale(c),
        )
    }
}

/// Distortion matrix `D` bounding the legitimate receiver's error covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DistortionConstraint {
    d: SymMatrix,
}

impl DistortionConstraint {
    pub fn new(d: SymMatrix) -> Self {
        DistortionConstraint { d }
    }

    pub fn scalar(d: f64) -> Self {
        Self::new(SymMatrix::scalar(d))
    }

    pub fn d(&self) -> &SymMatrix {
        &self.d
    }

    pub fn dim(&self) -> usize {
        self.d.dim()
    }
}

/// Conditional covariances `(K_{X|V}, K_{X|U})` of the two auxiliaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryPair {
    #[serde(rename = "K_XgV")]
    pub k_xv: SymMatrix,
    #[serde(rename = "K_XgU")]
    pub k_xu: SymMatrix,
}

impl AuxiliaryPair {
    pub fn new(k_xv: SymMatrix, k_xu: SymMatrix) -> Result<Self> {
        k_xv.check_same_dim(&k_xu)?;
        Ok(AuxiliaryPair { k_xv, k_xu })
    }

    /// Largest violation of `0 ⪯ K_{X|V} ⪯ K_{X|U} ⪯ K_X` (0 when feasible).
    pub fn order_violation(&self, k_x: &SymMatrix) -> f64 {
        let a = -self.k_xv.min_eigenvalue();
        let b = -(&self.k_xu - &self.k_xv).min_eigenvalue();
        let c = -(k_x - &self.k_xu).min_eigenvalue();
        a.max(b).max(c).max(0.0)
    }

    /// Checks the chain order with the default tolerance scaled to `K_X`.
    pub fn validate(&self, k_x: &SymMatrix) -> Result<()> {
        self.k_xv.check_same_dim(k_x)?;
        let tol = default_tol(k_x);
        let v = self.order_violation(k_x);
        if v > tol {
            return Err(Error::InvalidOrder(format!(
                "largest violation {v:.3e} exceeds {tol:.3e}"
            )));
        }
        Ok(())
    }
}

/// `K_{X|Y} = K_X (K_X + Σ_Y)^{-1} Σ_Y`.
pub fn cond_cov_xy(m: &AlignedModel) -> Result<SymMatrix> {
    let s = m.sigma_y.as_matrix();
    let inv = spd_inverse(&(&m.k_x + &m.sigma_y))?;
    Ok(SymMatrix::symmetrized(s - s * inv.as_matrix() * s))
}

/// `F(D) = Σ_Y (Σ_Y − D)^{-1} Σ_Y − Σ_Y`, evaluated as `D + D (Σ_Y − D)^{-1} D`.
pub fn f_of_d(m: &AlignedModel, d: &DistortionConstraint) -> Result<SymMatrix> {
    m.k_x.check_same_dim(d.d())?;
    let gap = &m.sigma_y - d.d();
    let inv = spd_inverse(&gap)
        .map_err(|_| Error::InfeasibleDistortion("Sigma_Y - D is not positive definite".into()))?;
    let dm = d.d().as_matrix();
    Ok(SymMatrix::symmetrized(dm + dm * inv.as_matrix() * dm))
}

/// `K_{X|VY} = Σ_Y − Σ_Y (K_{X|V} + Σ_Y)^{-1} Σ_Y`, evaluated as
/// `K − K (K + Σ_Y)^{-1} K` so that `K_{X|V} = 0` maps exactly to 0.
pub fn cond_cov_given_v_and_y(k_xv: &SymMatrix, sigma_y: &SymMatrix) -> Result<SymMatrix> {
    k_xv.check_same_dim(sigma_y)?;
    let inv = spd_inverse(&(k_xv + sigma_y))?;
    let k = k_xv.as_matrix();
    Ok(SymMatrix::symmetrized(k - k * inv.as_matrix() * k))
}

/// Both sides of the distortion equivalence, each tested at `tol`:
/// `(K_{X|VY} ⪯ D, K_{X|V} ⪯ F(D))`.
pub fn lemma4_forms(
    k_xv: &SymMatrix,
    m: &AlignedModel,
    d: &DistortionConstraint,
    tol: f64,
) -> Result<(bool, bool)> {
    let lhs = psd_order(&cond_cov_given_v_and_y(k_xv, &m.sigma_y)?, d.d(), tol)?;
    let rhs = psd_order(k_xv, &f_of_d(m, d)?, tol)?;
    Ok((lhs, rhs))
}

/// Whether `K_{X|VY} ⪯ D` (default tolerance).
pub fn lemma4_equivalent(
    k_xv: &SymMatrix,
    m: &AlignedModel,
    d: &DistortionConstraint,
) -> Result<bool> {
    let tol = default_tol(d.d());
    Ok(lemma4_forms(k_xv, m, d, tol)?.0)
}

/// A model bound to a distortion matrix whose feasibility has been checked.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub model: AlignedModel,
    pub d: DistortionConstraint,
    pub k_xy: SymMatrix,
    pub f_d: SymMatrix,
}

impl Instance {
    /// Validates `0 ⪯ D ⪯ K_{X|Y}` and precomputes `K_{X|Y}` and `F(D)`.
    pub fn bind(m: &AlignedModel, d: &DistortionConstraint) -> Result<Self> {
        m.k_x.check_same_dim(d.d())?;
        let k_xy = cond_cov_xy(m)?;
        let tol = default_tol(&k_xy);
        let min_d = d.d().min_eigenvalue();
        if min_d < -tol {
            return Err(Error::InfeasibleDistortion(format!(
                "D is not PSD (min eigenvalue {min_d:.3e})"
            )));
        }
        let slack = (&k_xy - d.d()).min_eigenvalue();
        if slack < -tol {
            return Err(Error::InfeasibleDistortion(format!(
                "D <= K_X|Y violated (min eigenvalue of K_X|Y - D is {slack:.3e})"
            )));
        }
        let f_d = f_of_d(m, d)?;
        Ok(Instance {
            model: m.clone(),
            d: d.clone(),
            k_xy,
            f_d,
        })
    }
}

/// The two expressions of the rate bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBoundForms {
    /// `½ log(|K_{X|Y}| / |D|)`.
    pub direct: f64,
    /// `½ log(|K_X| / |F(D)|) − ½ log(|K_X + Σ_Y| / |F(D) + Σ_Y|)`.
    pub via_f: f64,
}

impl RateBoundForms {
    pub fn discrepancy(&self) -> f64 {
        if self.direct.is_infinite() && self.via_f.is_infinite() {
            return 0.0;
        }
        (self.direct - self.via_f).abs()
    }
}

/// Evaluates both forms; a singular `D` yields `+∞` for both.
pub fn rate_bound_forms(m: &AlignedModel, d: &DistortionConstraint) -> Result<RateBoundForms> {
    let inst = Instance::bind(m, d)?;
    rate_bound_forms_bound(&inst)
}

pub(crate) fn rate_bound_forms_bound(inst: &Instance) -> Result<RateBoundForms> {
    let tol = default_tol(&inst.k_xy);
    if inst.d.d().min_eigenvalue() <= tol {
        return Ok(RateBoundForms {
            direct: f64::INFINITY,
            via_f: f64::INFINITY,
        });
    }
    let m = &inst.model;
    let direct = 0.5 * (logdet(&inst.k_xy)? - logdet(inst.d.d())?);
    let via_f = 0.5 * (logdet(&m.k_x)? - logdet(&inst.f_d)?)
        - 0.5 * (logdet(&(&m.k_x + &m.sigma_y))? - logdet(&(&inst.f_d + &m.sigma_y))?);
    Ok(RateBoundForms { direct, via_f })
}

/// Minimum rate `½ log(|K_{X|Y}| / |D|)` in nats; `+∞` for singular `D`.
pub fn rate_lower_bound(m: &AlignedModel, d: &DistortionConstraint) -> Result<f64> {
    let forms = rate_bound_forms(m, d)?;
    let scale = 1.0 + forms.direct.abs();
    if forms.discrepancy() > 1e-9 * scale {
        return Err(Error::Degenerate(format!(
            "rate bound forms disagree by {:.3e}",
            forms.discrepancy()
        )));
    }
    Ok(forms.direct.max(0.0))
}

/// Leakage objective of the minimum-leakage program; `+∞` when `K_{X|V}` is
/// singular.
pub fn leakage_objective(m: &AlignedModel, pair: &AuxiliaryPair) -> Result<f64> {
    m.k_x.check_same_dim(&pair.k_xv)?;
    m.k_x.check_same_dim(&pair.k_xu)?;
    let ld_v = match logdet(&pair.k_xv) {
        Ok(v) => v,
        Err(_) => return Ok(f64::INFINITY),
    };
    let t1 = 0.5 * (logdet(&m.k_x)? - ld_v);
    let t2 = 0.5 * (logdet(&(&pair.k_xu + &m.sigma_y))? - logdet(&(&pair.k_xv + &m.sigma_y))?);
    let t3 = 0.5 * (logdet(&(&pair.k_xu + &m.sigma_z))? - logdet(&m.sigma_z)?);
    Ok(t1 - t2 + t3)
}

/// Gradients of [`leakage_objective`] with respect to `K_{X|V}` and `K_{X|U}`.
pub fn objective_gradient(
    m: &AlignedModel,
    pair: &AuxiliaryPair,
) -> Result<(SymMatrix, SymMatrix)> {
    let inv_v = spd_inverse(&pair.k_xv).map_err(|_| Error::SingularKv)?;
    let inv_vy = spd_inverse(&(&pair.k_xv + &m.sigma_y))?;
    let inv_uy = spd_inverse(&(&pair.k_xu + &m.sigma_y))?;
    let inv_uz = spd_inverse(&(&pair.k_xu + &m.sigma_z))?;
    Ok((
        (&inv_vy - &inv_v).scale(0.5),
        (&inv_uz - &inv_uy).scale(0.5),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn example_scalar() -> AlignedModel {
        AlignedModel::scalar(1.0, 0.5, 1.0).unwrap()
    }

    #[test]
    fn model_rejects_non_pd() {
        assert!(AlignedModel::scalar(1.0, 0.0, 1.0).is_err());
        assert!(AlignedModel::new(
            SymMatrix::identity(2),
            SymMatrix::identity(3),
            SymMatrix::identity(2)
        )
        .is_err());
    }

    #[test]
    fn cond_cov_examples() {
        let m = AlignedModel::new(
            SymMatrix::identity(2),
            SymMatrix::identity(2),
            SymMatrix::identity(2),
        )
        .unwrap();
        let k = cond_cov_xy(&m).unwrap();
        assert!((k.as_matrix() - SymMatrix::identity(2).scale(0.5).as_matrix()).amax() < 1e-15);
        let k = cond_cov_xy(&example_scalar()).unwrap();
        assert_relative_eq!(k.get(0, 0), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn f_of_d_examples() {
        let m = AlignedModel::new(
            SymMatrix::identity(2),
            SymMatrix::identity(2),
            SymMatrix::identity(2),
        )
        .unwrap();
        let f = f_of_d(
            &m,
            &DistortionConstraint::new(SymMatrix::identity(2).scale(0.5)),
        )
        .unwrap();
        assert!((f.as_matrix() - SymMatrix::identity(2).as_matrix()).amax() < 1e-15);
        let f = f_of_d(&m, &DistortionConstraint::new(SymMatrix::zeros(2))).unwrap();
        assert_eq!(f.max_abs(), 0.0);
        let k_xy = cond_cov_xy(&example_scalar()).unwrap();
        let f = f_of_d(&example_scalar(), &DistortionConstraint::new(k_xy)).unwrap();
        assert_relative_eq!(f.get(0, 0), 1.0, epsilon = 1e-14);
        assert!(matches!(
            f_of_d(&example_scalar(), &DistortionConstraint::scalar(0.5)),
            Err(Error::InfeasibleDistortion(_))
        ));
    }

    #[test]
    fn cond_cov_given_v_examples() {
        let s = SymMatrix::scalar(0.5);
        assert_eq!(
            cond_cov_given_v_and_y(&SymMatrix::scalar(0.0), &s)
                .unwrap()
                .get(0, 0),
            0.0
        );
        assert_relative_eq!(
            cond_cov_given_v_and_y(&SymMatrix::scalar(0.5), &s)
                .unwrap()
                .get(0, 0),
            0.25,
            epsilon = 1e-15
        );
        let m = example_scalar();
        let d = DistortionConstraint::scalar(0.25);
        let f = f_of_d(&m, &d).unwrap();
        assert_relative_eq!(
            cond_cov_given_v_and_y(&f, m.sigma_y()).unwrap().get(0, 0),
            0.25,
            epsilon = 1e-14
        );
    }

    #[test]
    fn distortion_form_examples() {
        let m = example_scalar();
        let d = DistortionConstraint::scalar(0.25);
        let f = f_of_d(&m, &d).unwrap();
        assert!(lemma4_equivalent(&f, &m, &d).unwrap());
        assert!(!lemma4_equivalent(&(&f + &SymMatrix::scalar(0.1)), &m, &d).unwrap());
        assert!(lemma4_equivalent(&SymMatrix::scalar(0.0), &m, &d).unwrap());
    }

    #[test]
    fn rate_bound_examples() {
        let m = example_scalar();
        let k_xy = cond_cov_xy(&m).unwrap();
        assert_relative_eq!(
            rate_lower_bound(&m, &DistortionConstraint::new(k_xy.clone())).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            rate_lower_bound(&m, &DistortionConstraint::scalar(0.25)).unwrap(),
            0.5 * (4.0f64 / 3.0).ln(),
            epsilon = 1e-12
        );
        let m3 = AlignedModel::new(
            SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]),
            SymMatrix::from_diagonal(&[0.5, 1.0, 0.7]),
            SymMatrix::identity(3),
        )
        .unwrap();
        let half = cond_cov_xy(&m3).unwrap().scale(0.5);
        assert_relative_eq!(
            rate_lower_bound(&m3, &DistortionConstraint::new(half)).unwrap(),
            1.5 * 2f64.ln(),
            epsilon = 1e-12
        );
        assert_eq!(
            rate_lower_bound(&m, &DistortionConstraint::scalar(0.0)).unwrap(),
            f64::INFINITY
        );
        assert!(rate_lower_bound(&m, &DistortionConstraint::scalar(0.4)).is_err());
    }

    #[test]
    fn objective_examples() {
        let m = example_scalar();
        let full = AuxiliaryPair::new(SymMatrix::scalar(1.0), SymMatrix::scalar(1.0)).unwrap();
        assert_relative_eq!(
            leakage_objective(&m, &full).unwrap(),
            0.5 * 2f64.ln(),
            epsilon = 1e-15
        );
        let half = AuxiliaryPair::new(SymMatrix::scalar(0.5), SymMatrix::scalar(0.5)).unwrap();
        assert_relative_eq!(
            leakage_objective(&m, &half).unwrap(),
            0.5 * 3f64.ln(),
            epsilon = 1e-15
        );
        let opt = AuxiliaryPair::new(SymMatrix::scalar(0.5), SymMatrix::scalar(1.0)).unwrap();
        assert_relative_eq!(
            leakage_objective(&m, &opt).unwrap(),
            0.5 * (8.0f64 / 3.0).ln(),
            epsilon = 1e-15
        );
        let sing = AuxiliaryPair::new(SymMatrix::scalar(0.0), SymMatrix::scalar(1.0)).unwrap();
        assert_eq!(leakage_objective(&m, &sing).unwrap(), f64::INFINITY);
    }

    #[test]
    fn gradient_signs() {
        let m = AlignedModel::new(
            SymMatrix::from_diagonal(&[2.0, 1.0]),
            SymMatrix::identity(2),
            SymMatrix::identity(2),
        )
        .unwrap();
        let pair = AuxiliaryPair::new(
            SymMatrix::from_diagonal(&[0.3, 0.4]),
            SymMatrix::from_diagonal(&[1.0, 0.8]),
        )
        .unwrap();
        let (gv, gu) = objective_gradient(&m, &pair).unwrap();
        assert_eq!(gu.max_abs(), 0.0);
        assert!(gv.eigenvalues().max() <= 0.0);
    }
}
