//! Minimum-leakage optimization with KKT certification.
//!
//! The solver minimizes
//!
//! ```text
//! ½log(|K_X|/|K_{X|V}|) − ½log(|K_{X|U}+Σ_Y|/|K_{X|V}+Σ_Y|) + ½log(|K_{X|U}+Σ_Z|/|Σ_Z|)
//! ```
//!
//! over `0 ⪯ K_{X|V} ⪯ K_{X|U} ⪯ K_X`, `K_{X|V} ⪯ F(D)`. Each restart runs
//! projected gradient with Armijo backtracking and a Dykstra projection; the
//! best restart is then refined by a log-barrier Newton method whose final
//! barrier weights give the multipliers `(M_U, M_D, M_X)` of the KKT system
//!
//! ```text
//! (K_V+Σ_Y)^{-1} + M_U + M_D = K_V^{-1}
//! (K_U+Σ_Z)^{-1} + M_X       = (K_U+Σ_Y)^{-1} + M_U
//! M_U(K_U−K_V) = 0,  M_D(F(D)−K_V) = 0,  M_X(K_X−K_U) = 0.
//! ```

mod barrier;
mod multipliers;
mod oracle;
pub(crate) mod program;
mod projection;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use oracle::{scalar_f, scalar_grid_oracle, scalar_objective, GridOptimum};

use crate::enhance;
use crate::error::{Error, Result};
use crate::matkernel::{logdet, SymMatrix};
use crate::model::{AlignedModel, AuxiliaryPair, DistortionConstraint, Instance};
use program::{Part, Program, Var};
use projection::FeasibleSet;

/// Residual names, in the order of the KKT system.
pub const RESIDUAL_NAMES: [&str; 5] = [
    "stationarity_v",
    "stationarity_u",
    "slack_uv",
    "slack_d",
    "slack_x",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub step_init: f64,
    pub tol_grad: f64,
    pub tol_feas: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 400,
            step_init: 1.0,
            tol_grad: 1e-8,
            tol_feas: 1e-9,
            restarts: 8,
            seed: 0x5EC1EA4,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step_init > 0.0
            && self.tol_grad > 0.0
            && self.tol_feas > 0.0
            && self.restarts >= 1;
        if !ok {
            return Err(Error::Degenerate(
                "solver tolerances and step must be positive and restarts >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Multipliers and the Frobenius norms of the five KKT residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktCertificate {
    #[serde(rename = "M_U")]
    pub m_u: SymMatrix,
    #[serde(rename = "M_D")]
    pub m_d: SymMatrix,
    #[serde(rename = "M_X")]
    pub m_x: SymMatrix,
    pub residuals: BTreeMap<String, f64>,
}

impl KktCertificate {
    pub fn max_residual(&self) -> f64 {
        self.residuals.values().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageSolution {
    pub pair: AuxiliaryPair,
    pub value: f64,
    pub certificate: KktCertificate,
    pub converged: bool,
    pub iterations: usize,
    /// Objective value reached by each projected-gradient restart.
    pub restart_values: Vec<f64>,
}

/// A minimum-leakage program: objective plus the data of the feasible set.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub program: Program,
    pub k_x: SymMatrix,
    pub f: SymMatrix,
}

impl Problem {
    pub fn aligned(inst: &Instance) -> Result<Problem> {
        let m = &inst.model;
        let n = m.dim();
        let constant = 0.5 * (logdet(m.k_x())? - logdet(m.sigma_z())?);
        let mut program = Program::new(n, constant);
        let zero = DMatrix::zeros(n, n);
        let sy = m.sigma_y().as_matrix().clone();
        let sz = m.sigma_z().as_matrix().clone();
        program.push(-0.5, zero, vec![Part::plain(1.0, Var::V)]);
        program.push(-0.5, sy.clone(), vec![Part::plain(1.0, Var::U)]);
        program.push(0.5, sy, vec![Part::plain(1.0, Var::V)]);
        program.push(0.5, sz, vec![Part::plain(1.0, Var::U)]);
        Ok(Problem {
            program,
            k_x: m.k_x().clone(),
            f: inst.f_d.clone(),
        })
    }

    fn scale(&self) -> f64 {
        self.k_x.trace() / self.k_x.dim() as f64
    }

    fn feasible_set(&self) -> FeasibleSet<'_> {
        FeasibleSet {
            k_x: &self.k_x,
            f: &self.f,
            floor: 1e-10 * self.scale(),
        }
    }

    /// Largest violation of the chain order and of `K_V ⪯ F`.
    pub fn violation(&self, pair: &AuxiliaryPair) -> f64 {
        let set = FeasibleSet {
            k_x: &self.k_x,
            f: &self.f,
            floor: 0.0,
        };
        set.violation(pair)
    }

    pub fn residuals(
        &self,
        pair: &AuxiliaryPair,
        m: &multipliers::Triple,
    ) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        let (gv, gu) = match self.program.matrix_gradient(pair) {
            Some(g) => g,
            None => {
                for name in RESIDUAL_NAMES {
                    out.insert(name.to_string(), f64::INFINITY);
                }
                return out;
            }
        };
        let (mu, md, mx) = m;
        let prod = |a: &SymMatrix, b: &SymMatrix| (a.as_matrix() * b.as_matrix()).norm();
        let rv = &(&gv.scale(2.0) + mu) + md;
        let ru = &(&gu.scale(2.0) - mu) + mx;
        let vals = [
            rv.frobenius_norm(),
            ru.frobenius_norm(),
            prod(mu, &(&pair.k_xu - &pair.k_xv)),
            prod(md, &(&self.f - &pair.k_xv)),
            prod(mx, &(&self.k_x - &pair.k_xu)),
        ];
        for (name, v) in RESIDUAL_NAMES.iter().zip(vals) {
            out.insert(name.to_string(), v);
        }
        out
    }

    fn doubled_gradient(&self, pair: &AuxiliaryPair) -> Option<(SymMatrix, SymMatrix)> {
        let (gv, gu) = self.program.matrix_gradient(pair)?;
        Some((gv.scale(2.0), gu.scale(2.0)))
    }

    pub fn certificate(
        &self,
        pair: &AuxiliaryPair,
        warm: Option<multipliers::Triple>,
        iters: usize,
    ) -> KktCertificate {
        let n = self.k_x.dim();
        let (gv, gu) = match self.doubled_gradient(pair) {
            Some(g) => g,
            None => {
                let z = SymMatrix::zeros(n);
                let triple = (z.clone(), z.clone(), z);
                let residuals = self.residuals(pair, &triple);
                return KktCertificate {
                    m_u: triple.0,
                    m_d: triple.1,
                    m_x: triple.2,
                    residuals,
                };
            }
        };
        let mut best: Option<(f64, multipliers::Triple, BTreeMap<String, f64>)> = None;
        let mut consider = |t: multipliers::Triple| {
            let r = self.residuals(pair, &t);
            let worst = r.values().copied().fold(0.0, f64::max);
            if best.as_ref().is_none_or(|b| worst < b.0) {
                best = Some((worst, t, r));
            }
        };
        if let Some(w) = warm.clone() {
            consider(w);
        }
        consider(multipliers::least_squares(self, pair, gv, gu, warm, iters));
        let (_, t, residuals) = best.expect("at least one candidate");
        KktCertificate {
            m_u: t.0,
            m_d: t.1,
            m_x: t.2,
            residuals,
        }
    }

    fn random_start(&self, rng: &mut ChaCha8Rng) -> AuxiliaryPair {
        let n = self.k_x.dim();
        let mut orth = |lo: f64, hi: f64| {
            let g = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
            let q = g.qr().q();
            let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| {
                lo + (hi - lo) * rng.random::<f64>()
            }));
            SymMatrix::symmetrized(&q * d * q.transpose())
        };
        let bv = orth(0.1, 1.0);
        let bu = orth(0.0, 1.0);
        let k_xv = bv.congruence(self.f.psd_sqrt().as_matrix());
        let gap = (&self.k_x - &k_xv).psd_sqrt();
        let k_xu = &k_xv + &bu.congruence(gap.as_matrix());
        AuxiliaryPair { k_xv, k_xu }
    }

    fn starts(&self, opts: &SolverOptions) -> Vec<AuxiliaryPair> {
        let f = &self.f;
        let mut out = vec![
            AuxiliaryPair {
                k_xv: f.clone(),
                k_xu: f.clone(),
            },
            AuxiliaryPair {
                k_xv: f.clone(),
                k_xu: self.k_x.clone(),
            },
            AuxiliaryPair {
                k_xv: f.clone(),
                k_xu: (f + &self.k_x).scale(0.5),
            },
        ];
        out.truncate(opts.restarts);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        while out.len() < opts.restarts {
            out.push(self.random_start(&mut rng));
        }
        out
    }

    fn inner(a: &SymMatrix, b: &SymMatrix) -> f64 {
        a.as_matrix().dot(b.as_matrix())
    }

    fn projected_gradient(
        &self,
        start: &AuxiliaryPair,
        opts: &SolverOptions,
    ) -> (AuxiliaryPair, f64, usize) {
        let set = self.feasible_set();
        let scale = self.scale();
        let ptol = opts.tol_feas * scale;
        let mut x = set.project(start, 50, ptol);
        let mut fx = self.program.value(&x);
        let alpha_max = opts.step_init * scale * scale;
        let mut alpha = alpha_max;
        let mut iters = 0;
        while iters < opts.max_iters {
            iters += 1;
            let Some((gv, gu)) = self.program.matrix_gradient(&x) else {
                break;
            };
            let mut accepted = None;
            for _ in 0..40 {
                let trial = AuxiliaryPair {
                    k_xv: &x.k_xv - &gv.scale(alpha),
                    k_xu: &x.k_xu - &gu.scale(alpha),
                };
                let y = set.project(&trial, 50, ptol);
                let fy = self.program.value(&y);
                let dv = &y.k_xv - &x.k_xv;
                let du = &y.k_xu - &x.k_xu;
                let slope = Self::inner(&gv, &dv) + Self::inner(&gu, &du);
                let inside = set.violation(&y) <= 10.0 * ptol;
                if inside && fy.is_finite() && fy <= fx + 1e-4 * slope {
                    let moved = dv.frobenius_norm().max(du.frobenius_norm());
                    accepted = Some((y, fy, moved));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((y, fy, moved)) = accepted else {
                break;
            };
            let drop = fx - fy;
            x = y;
            fx = fy;
            if moved <= opts.tol_grad * scale || drop <= 1e-15 * (1.0 + fx.abs()) {
                break;
            }
            alpha = (alpha * 2.0).min(alpha_max);
        }
        (x, fx, iters)
    }

    pub fn solve(&self, opts: &SolverOptions) -> Result<LeakageSolution> {
        opts.validate()?;
        let feas_tol = 10.0 * opts.tol_feas * self.scale();
        let mut best: Option<(AuxiliaryPair, f64, bool)> = None;
        let mut restart_values = Vec::new();
        let mut iterations = 0;
        for s in self.starts(opts) {
            let (x, fx, it) = self.projected_gradient(&s, opts);
            iterations += it;
            restart_values.push(fx);
            let inside = self.violation(&x) <= feas_tol;
            let better = match &best {
                None => true,
                Some(b) => (inside && !b.2) || (inside == b.2 && fx < b.1),
            };
            if better {
                best = Some((x, fx, inside));
            }
        }
        let (pg_pair, pg_value, pg_inside) = best.expect("restarts >= 1");
        let polished = barrier::polish(self, &pg_pair);
        let (pair, warm, converged) = match polished {
            Some(p) => {
                iterations += p.newton_steps;
                let v = self.program.value(&p.pair);
                if !pg_inside || v <= pg_value + 1e-9 * (1.0 + pg_value.abs()) {
                    (p.pair, Some(p.multipliers), p.converged)
                } else {
                    (pg_pair, Some(p.multipliers), false)
                }
            }
            None => (pg_pair, None, false),
        };
        let value = self.program.value(&pair);
        let certificate = self.certificate(&pair, warm, 300);
        Ok(LeakageSolution {
            pair,
            value,
            certificate,
            converged,
            iterations,
            restart_values,
        })
    }
}

fn bind_positive(m: &AlignedModel, d: &DistortionConstraint) -> Result<Instance> {
    let inst = Instance::bind(m, d)?;
    let tol = crate::matkernel::default_tol(&inst.k_xy);
    if d.d().min_eigenvalue() <= tol {
        return Err(Error::InfeasibleDistortion(
            "D must be positive definite for the leakage program".into(),
        ));
    }
    Ok(inst)
}

/// Minimum leakage to the eavesdropper at distortion `D`, with certificate.
pub fn minimize_leakage(
    m: &AlignedModel,
    d: &DistortionConstraint,
    opts: &SolverOptions,
) -> Result<LeakageSolution> {
    let inst = bind_positive(m, d)?;
    Problem::aligned(&inst)?.solve(opts)
}

/// Least-squares PSD multipliers for the KKT system at `pair`.
pub fn recover_multipliers(
    m: &AlignedModel,
    d: &DistortionConstraint,
    pair: &AuxiliaryPair,
) -> Result<KktCertificate> {
    let inst = Instance::bind(m, d)?;
    let p = Problem::aligned(&inst)?;
    Ok(p.certificate(pair, None, 20_000))
}

/// True iff `sol` is feasible, its five KKT residuals are below `tol`, and
/// its value matches the enhanced closed form within `tol`.
pub fn certify(
    m: &AlignedModel,
    d: &DistortionConstraint,
    sol: &LeakageSolution,
    tol: f64,
) -> bool {
    let Ok(inst) = Instance::bind(m, d) else {
        return false;
    };
    let Ok(p) = Problem::aligned(&inst) else {
        return false;
    };
    if p.violation(&sol.pair) > tol {
        return false;
    }
    if RESIDUAL_NAMES.iter().any(|k| {
        !(sol
            .certificate
            .residuals
            .get(*k)
            .copied()
            .unwrap_or(f64::INFINITY)
            < tol)
    }) {
        return false;
    }
    let Ok(e) = enhance::enhance(m, d, sol) else {
        return false;
    };
    match enhance::closed_form_lbar(m, d, &e) {
        Ok(lbar) => (sol.value - lbar).abs() < tol,
        Err(_) => false,
    }
}

/// Largest relative discrepancy between the analytic gradient and central
/// finite differences over every packed coordinate.
pub fn gradient_selfcheck(m: &AlignedModel, pair: &AuxiliaryPair) -> Result<f64> {
    let (gv, gu) = crate::model::objective_gradient(m, pair)?;
    let n = m.dim();
    let h = 1e-5 * m.k_x().trace() / n as f64;
    let mut worst: f64 = 0.0;
    let denom = gv.max_abs().max(gu.max_abs()).max(1e-300);
    for (which, g) in [(0, &gv), (1, &gu)] {
        for &(i, j) in &program::packed_pairs(n) {
            let mut e = DMatrix::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            let e = SymMatrix::symmetrized(e).scale(h);
            let shift = |sign: f64| {
                let mut p = pair.clone();
                let target = if which == 0 { &mut p.k_xv } else { &mut p.k_xu };
                *target = &*target + &e.scale(sign);
                crate::model::leakage_objective(m, &p)
            };
            let fd = (shift(1.0)? - shift(-1.0)?) / (2.0 * h);
            let an = if i == j {
                g.get(i, i)
            } else {
                2.0 * g.get(i, j)
            };
            worst = worst.max((fd - an).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar() -> (AlignedModel, DistortionConstraint) {
        (
            AlignedModel::scalar(1.0, 0.5, 1.0).unwrap(),
            DistortionConstraint::scalar(0.25),
        )
    }

    #[test]
    fn scalar_optimum() {
        let (m, d) = scalar();
        let sol = minimize_leakage(&m, &d, &SolverOptions::default()).unwrap();
        assert!(
            (sol.value - 0.5 * (8.0f64 / 3.0).ln()).abs() < 1e-8,
            "{}",
            sol.value
        );
        assert!((sol.pair.k_xv.get(0, 0) - 0.5).abs() < 1e-6);
        assert!((sol.pair.k_xu.get(0, 0) - 1.0).abs() < 1e-6);
        assert!(
            sol.certificate.max_residual() < 1e-7,
            "{:?}",
            sol.certificate.residuals
        );
        assert!(certify(&m, &d, &sol, 1e-6));
    }

    #[test]
    fn equal_noise_instance() {
        let n = 2;
        let m = AlignedModel::new(
            SymMatrix::identity(n).scale(2.0),
            SymMatrix::identity(n),
            SymMatrix::identity(n),
        )
        .unwrap();
        let d = DistortionConstraint::new(SymMatrix::identity(n).scale(2.0 / 3.0));
        let sol = minimize_leakage(&m, &d, &SolverOptions::default()).unwrap();
        let expected = 0.5 * (logdet(&SymMatrix::identity(n).scale(3.0)).unwrap());
        assert!((sol.value - expected).abs() < 1e-8);
    }

    #[test]
    fn multipliers_for_equal_noises() {
        let m = AlignedModel::new(
            SymMatrix::from_diagonal(&[2.0, 1.5]),
            SymMatrix::identity(2),
            SymMatrix::identity(2),
        )
        .unwrap();
        let d = DistortionConstraint::new(SymMatrix::from_diagonal(&[0.3, 0.35]));
        let inst = Instance::bind(&m, &d).unwrap();
        let k_xv = inst.f_d.clone();
        let k_xu = (&k_xv + m.k_x()).scale(0.5);
        let pair = AuxiliaryPair::new(k_xv.clone(), k_xu).unwrap();
        let cert = recover_multipliers(&m, &d, &pair).unwrap();
        assert!(cert.m_u.max_abs() < 1e-9);
        assert!(cert.m_x.max_abs() < 1e-9);
        let expected = &crate::matkernel::spd_inverse(&k_xv).unwrap()
            - &crate::matkernel::spd_inverse(&(&k_xv + m.sigma_y())).unwrap();
        assert!((&cert.m_d - &expected).max_abs() < 1e-9);
    }

    #[test]
    fn non_optimal_pair_has_large_residual() {
        let (m, d) = scalar();
        let pair = AuxiliaryPair::new(SymMatrix::scalar(0.2), SymMatrix::scalar(0.6)).unwrap();
        let cert = recover_multipliers(&m, &d, &pair).unwrap();
        assert!(cert.max_residual() > 1e-2);
    }

    #[test]
    fn perturbed_solution_fails_certification() {
        let (m, d) = scalar();
        let mut sol = minimize_leakage(&m, &d, &SolverOptions::default()).unwrap();
        sol.pair.k_xv = &sol.pair.k_xv - &SymMatrix::scalar(0.05);
        sol.value = crate::model::leakage_objective(&m, &sol.pair).unwrap();
        sol.certificate = recover_multipliers(&m, &d, &sol.pair).unwrap();
        assert!(!certify(&m, &d, &sol, 1e-6));
        sol.pair.k_xv = SymMatrix::scalar(0.9);
        assert!(!certify(&m, &d, &sol, 1e-6));
    }

    #[test]
    fn selfcheck_scalar() {
        let (m, _) = scalar();
        let pair = AuxiliaryPair::new(SymMatrix::scalar(0.4), SymMatrix::scalar(0.7)).unwrap();
        assert!(gradient_selfcheck(&m, &pair).unwrap() < 1e-6);
    }

    #[test]
    fn deterministic_given_seed() {
        let m = AlignedModel::new(
            SymMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap(),
            SymMatrix::from_diagonal(&[0.6, 1.2]),
            SymMatrix::from_diagonal(&[1.0, 0.5]),
        )
        .unwrap();
        let d = DistortionConstraint::new(SymMatrix::from_diagonal(&[0.2, 0.25]));
        let a = minimize_leakage(&m, &d, &SolverOptions::default()).unwrap();
        let b = minimize_leakage(&m, &d, &SolverOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
