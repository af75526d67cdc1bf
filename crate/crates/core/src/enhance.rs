//! Enhanced side information and the closed-form leakage it certifies.
//!
//! Given a solution with multipliers, the enhanced covariance
//! `Σ̃_Y = [(K_{X|U}+Σ_Y)^{-1} + M_U]^{-1} − K_{X|U}` is a less noisy side
//! channel for which the relaxed problem has the closed-form value
//! [`closed_form_lbar`]. When the KKT system holds, that value equals the
//! solver's value, which proves global optimality of a local solve.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::Result;
use crate::leakopt::LeakageSolution;
use crate::matkernel::{logdet, spd_inverse, SymMatrix};
use crate::model::{f_of_d, AlignedModel, DistortionConstraint};

/// Names of the six enhancement properties, in order.
pub const PROPERTY_NAMES: [&str; 6] = [
    "p1_nonnegative",
    "p2_dominated",
    "p3_v_inverse_shift",
    "p4_uv_ratio",
    "p5_xu_ratio",
    "p6_fv_ratio",
];

#[derive(Debug, Clone)]
pub struct EnhancedChannel<'a> {
    pub sigma_y_tilde: SymMatrix,
    pub source_solution: &'a LeakageSolution,
    pub property_report: BTreeMap<String, f64>,
}

impl EnhancedChannel<'_> {
    pub fn max_property_residual(&self) -> f64 {
        self.property_report.values().copied().fold(0.0, f64::max)
    }

    /// The same channel with a different enhanced covariance (report kept).
    pub fn with_sigma(&self, sigma_y_tilde: SymMatrix) -> Self {
        EnhancedChannel {
            sigma_y_tilde,
            source_solution: self.source_solution,
            property_report: self.property_report.clone(),
        }
    }
}

/// Builds `Σ̃_Y` from the solution's `M_U` and fills the property report.
pub fn enhance<'a>(
    m: &AlignedModel,
    d: &DistortionConstraint,
    sol: &'a LeakageSolution,
) -> Result<EnhancedChannel<'a>> {
    let k_u = &sol.pair.k_xu;
    let m_u = &sol.certificate.m_u;
    let sigma_y_tilde = if m_u.as_matrix().iter().all(|&x| x == 0.0) {
        m.sigma_y().clone()
    } else {
        let bracket = &spd_inverse(&(k_u + m.sigma_y()))? + m_u;
        &spd_inverse(&bracket)? - k_u
    };
    let mut e = EnhancedChannel {
        sigma_y_tilde,
        source_solution: sol,
        property_report: BTreeMap::new(),
    };
    e.property_report = verify_lemma6(m, d, sol, &e)?;
    Ok(e)
}

fn inv(a: &SymMatrix) -> Option<DMatrix<f64>> {
    a.as_matrix().clone().try_inverse()
}

fn diff_norm(a: Option<DMatrix<f64>>, b: Option<DMatrix<f64>>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).norm(),
        _ => f64::INFINITY,
    }
}

/// Residual norms of the six enhancement properties: PSD-ness of `Σ̃_Y`,
/// domination by `Σ_Y` and `Σ_Z`, and the four inverse / ratio identities.
pub fn verify_lemma6(
    m: &AlignedModel,
    d: &DistortionConstraint,
    sol: &LeakageSolution,
    e: &EnhancedChannel<'_>,
) -> Result<BTreeMap<String, f64>> {
    let st = &e.sigma_y_tilde;
    let k_v = &sol.pair.k_xv;
    let k_u = &sol.pair.k_xu;
    let k_x = m.k_x();
    let sy = m.sigma_y();
    let sz = m.sigma_z();
    let f = f_of_d(m, d)?;
    let m_u = sol.certificate.m_u.as_matrix();

    let p1 = (-st.min_eigenvalue()).max(0.0);
    let p2 = (-(sy - st).min_eigenvalue())
        .max(-(sz - st).min_eigenvalue())
        .max(0.0);
    let p3 = diff_norm(inv(&(k_v + st)), inv(&(k_v + sy)).map(|x| x + m_u));
    let ratio = |a: &SymMatrix, b: &SymMatrix| inv(a).map(|ia| ia * b.as_matrix());
    let p4 = diff_norm(
        ratio(&(k_u + st), &(k_v + st)),
        ratio(&(k_u + sy), &(k_v + sy)),
    );
    let p5 = diff_norm(
        ratio(&(k_u + st), &(k_x + st)),
        ratio(&(k_u + sz), &(k_x + sz)),
    );
    let p6 = diff_norm(ratio(&(k_v + st), &(&f + st)), ratio(k_v, &f));

    Ok(PROPERTY_NAMES
        .iter()
        .zip([p1, p2, p3, p4, p5, p6])
        .map(|(k, v)| (k.to_string(), v))
        .collect())
}

/// `½log(|K_X|/|F|) − ½log(|K_X+Σ̃_Y|/|F+Σ̃_Y|) + ½log(|K_X+Σ_Z|/|Σ_Z|)`.
pub fn closed_form_lbar(
    m: &AlignedModel,
    d: &DistortionConstraint,
    e: &EnhancedChannel<'_>,
) -> Result<f64> {
    let f = f_of_d(m, d)?;
    lbar_with(m, &f, &e.sigma_y_tilde)
}

pub(crate) fn lbar_with(m: &AlignedModel, f: &SymMatrix, st: &SymMatrix) -> Result<f64> {
    let k_x = m.k_x();
    Ok(
        0.5 * (logdet(k_x)? - logdet(f)?) - 0.5 * (logdet(&(k_x + st))? - logdet(&(f + st))?)
            + 0.5 * (logdet(&(k_x + m.sigma_z()))? - logdet(m.sigma_z())?),
    )
}

/// The four successive expressions that connect the closed form to the
/// objective at the solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainValues {
    pub closed_form: f64,
    pub with_kv: f64,
    pub with_ku: f64,
    pub objective: f64,
}

impl ChainValues {
    pub fn max_step(&self) -> f64 {
        (self.closed_form - self.with_kv)
            .abs()
            .max((self.with_kv - self.with_ku).abs())
            .max((self.with_ku - self.objective).abs())
    }
}

pub fn chain_values(
    m: &AlignedModel,
    d: &DistortionConstraint,
    sol: &LeakageSolution,
    e: &EnhancedChannel<'_>,
) -> Result<ChainValues> {
    let st = &e.sigma_y_tilde;
    let k_x = m.k_x();
    let k_v = &sol.pair.k_xv;
    let k_u = &sol.pair.k_xu;
    let sz = m.sigma_z();
    let ld = |a: &SymMatrix| logdet(a);
    let closed_form = closed_form_lbar(m, d, e)?;
    let source = 0.5 * (ld(&(k_x + sz))? - ld(sz)?);
    let with_kv =
        0.5 * (ld(k_x)? - ld(k_v)?) - 0.5 * (ld(&(k_x + st))? - ld(&(k_v + st))?) + source;
    let with_ku = 0.5 * (ld(k_x)? - ld(k_v)?) - 0.5 * (ld(&(k_u + st))? - ld(&(k_v + st))?)
        + 0.5 * (ld(&(k_u + sz))? - ld(sz)?);
    let objective = crate::model::leakage_objective(m, &sol.pair)?;
    Ok(ChainValues {
        closed_form,
        with_kv,
        with_ku,
        objective,
    })
}

/// True iff each successive step of the chain agrees within `tol`.
pub fn verify_chain(
    m: &AlignedModel,
    d: &DistortionConstraint,
    sol: &LeakageSolution,
    e: &EnhancedChannel<'_>,
    tol: f64,
) -> bool {
    chain_values(m, d, sol, e)
        .map(|c| c.max_step() < tol)
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leakopt::{minimize_leakage, SolverOptions};

    fn scalar() -> (AlignedModel, DistortionConstraint) {
        (
            AlignedModel::scalar(1.0, 0.5, 1.0).unwrap(),
            DistortionConstraint::scalar(0.25),
        )
    }

    #[test]
    fn zero_multiplier_returns_sigma_exactly() {
        let (m, d) = scalar();
        let mut sol = minimize_leakage(&m, &d, &SolverOptions::default()).unwrap();
        sol.certificate.m_u = SymMatrix::zeros(1);
        let e = enhance(&m, &d, &sol).unwrap();
        assert_eq!(&e.sigma_y_tilde, m.sigma_y());
    }

    #[test]
    fn scalar_certified_optimum() {
        let (m, d) = scalar();
        let sol = minimize_leakage(&m, &d, &SolverOptions::default()).unwrap();
        let e = enhance(&m, &d, &sol).unwrap();
        let s = e.sigma_y_tilde.get(0, 0);
        assert!((-1e-9..=0.5 + 1e-9).contains(&s));
        assert!(e.max_property_residual() < 1e-7, "{:?}", e.property_report);
        let lbar = closed_form_lbar(&m, &d, &e).unwrap();
        assert!((lbar - 0.5 * (8.0f64 / 3.0).ln()).abs() < 1e-7);
        assert!(verify_chain(&m, &d, &sol, &e, 1e-7));
        let corrupted = e.with_sigma(&e.sigma_y_tilde + &SymMatrix::scalar(0.01));
        assert!(!verify_chain(&m, &d, &sol, &corrupted, 1e-7));
    }

    #[test]
    fn loose_distortion_closed_form() {
        let m = AlignedModel::new(
            SymMatrix::from_diagonal(&[1.0, 2.0]),
            SymMatrix::identity(2),
            SymMatrix::from_diagonal(&[0.5, 3.0]),
        )
        .unwrap();
        let d = DistortionConstraint::new(crate::model::cond_cov_xy(&m).unwrap());
        let f = f_of_d(&m, &d).unwrap();
        let v = lbar_with(&m, &f, m.sigma_y()).unwrap();
        let direct =
            0.5 * (logdet(&(m.k_x() + m.sigma_z())).unwrap() - logdet(m.sigma_z()).unwrap());
        assert!((v - direct).abs() < 1e-9);
        let v0 = lbar_with(&m, &f, &SymMatrix::zeros(2)).unwrap();
        assert!((v0 - direct).abs() < 1e-9);
    }
}
