//! Randomized property suites shared by the CLI `verify` command and the
//! integration tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::auxgauss;
use crate::enhance;
use crate::error::Result;
use crate::examples;
use crate::genmodel::{self, GeneralModel};
use crate::leakopt::{self, SolverOptions};
use crate::matkernel::SymMatrix;
use crate::model::{self, AlignedModel, AuxiliaryPair, DistortionConstraint};

/// Haar-ish orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    g.qr().q()
}

/// `Q diag(λ) Qᵀ` with eigenvalues uniform in `[lo, hi]`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> SymMatrix {
    let q = random_orthogonal(rng, n);
    let d = DVector::from_fn(n, |_, _| rng.random_range(lo..=hi));
    SymMatrix::symmetrized(&q * DMatrix::from_diagonal(&d) * q.transpose())
}

/// `S^{1/2} B S^{1/2}` with `B` having eigenvalues in `[lo, hi]`.
pub fn random_below<R: Rng>(rng: &mut R, s: &SymMatrix, lo: f64, hi: f64) -> SymMatrix {
    let b = random_spd(rng, s.dim(), lo, hi);
    b.congruence(s.psd_sqrt().as_matrix())
}

/// A well-conditioned aligned model and an interior distortion matrix.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize) -> (AlignedModel, DistortionConstraint) {
    loop {
        let k_x = random_spd(rng, n, 0.5, 2.0);
        let sy = random_spd(rng, n, 0.3, 2.0);
        let sz = random_spd(rng, n, 0.3, 2.0);
        let Ok(m) = AlignedModel::new(k_x, sy, sz) else {
            continue;
        };
        let Ok(k_xy) = model::cond_cov_xy(&m) else {
            continue;
        };
        let d = random_below(rng, &k_xy, 0.05, 0.95);
        return (m, DistortionConstraint::new(d));
    }
}

/// A random admissible pair `K_{X|V} ⪯ K_{X|U} ⪯ K_X` with `K_{X|V} ≻ 0`.
pub fn random_pair<R: Rng>(rng: &mut R, k_x: &SymMatrix) -> AuxiliaryPair {
    let k_xv = random_below(rng, k_x, 0.05, 0.95);
    let gap = k_x - &k_xv;
    let k_xu = &k_xv + &random_below(rng, &gap, 0.0, 1.0);
    AuxiliaryPair { k_xv, k_xu }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub passed: bool,
    pub max_residual: f64,
    pub tolerance: f64,
    pub trials: usize,
}

fn outcome(name: &str, residual: f64, tol: f64, trials: usize) -> SuiteOutcome {
    SuiteOutcome {
        name: name.to_string(),
        passed: residual.is_finite() && residual < tol,
        max_residual: residual,
        tolerance: tol,
        trials,
    }
}

fn max_or_inf(acc: f64, r: Result<f64>) -> f64 {
    match r {
        Ok(v) if !v.is_nan() => acc.max(v),
        _ => f64::INFINITY,
    }
}

pub fn rate_identity(rng: &mut ChaCha8Rng, trials: usize, tol: f64) -> SuiteOutcome {
    let mut worst: f64 = 0.0;
    for i in 0..trials {
        let (m, d) = random_instance(rng, 1 + i % 6);
        worst = max_or_inf(
            worst,
            model::rate_bound_forms(&m, &d).map(|f| f.discrepancy() / (1.0 + f.direct.abs())),
        );
    }
    outcome("rate_identity", worst, tol, trials)
}

/// Counts disagreements between the two forms of the distortion constraint.
pub fn distortion_equivalence(rng: &mut ChaCha8Rng, trials: usize, tol: f64) -> SuiteOutcome {
    let mut disagreements = 0usize;
    for i in 0..trials {
        let (m, d) = random_instance(rng, 1 + i % 4);
        let f = model::f_of_d(&m, &d).expect("interior distortion");
        let k_xv = random_below(rng, &f, 0.5, 1.5);
        match model::lemma4_forms(&k_xv, &m, &d, tol) {
            Ok((a, b)) if a == b => {}
            _ => disagreements += 1,
        }
    }
    outcome("distortion_equivalence", disagreements as f64, 0.5, trials)
}

/// Largest certificate residual of one solve: KKT residuals, enhancement
/// properties, chain steps and the gap to the closed form.
pub fn certificate_residual(
    m: &AlignedModel,
    d: &DistortionConstraint,
    opts: &SolverOptions,
) -> Result<f64> {
    let sol = leakopt::minimize_leakage(m, d, opts)?;
    let e = enhance::enhance(m, d, &sol)?;
    let lbar = enhance::closed_form_lbar(m, d, &e)?;
    let chain = enhance::chain_values(m, d, &sol, &e)?;
    Ok(sol
        .certificate
        .max_residual()
        .max(e.max_property_residual())
        .max(chain.max_step())
        .max((sol.value - lbar).abs()))
}

pub fn solver_certificate(rng: &mut ChaCha8Rng, trials: usize, tol: f64) -> SuiteOutcome {
    let opts = SolverOptions::default();
    let mut worst: f64 = 0.0;
    for i in 0..trials {
        let (m, d) = random_instance(rng, 1 + i % 4);
        worst = max_or_inf(worst, certificate_residual(&m, &d, &opts));
    }
    outcome("solver_certificate", worst, tol, trials)
}

/// Round-trip residual of the Gaussian auxiliary construction.
pub fn aux_residual(k_x: &SymMatrix, pair: &AuxiliaryPair) -> Result<f64> {
    let r = auxgauss::construct(k_x, pair)?;
    let (kv, ku) = auxgauss::verify_conditional_covariances(k_x, &r)?;
    let rel = |a: &SymMatrix, b: &SymMatrix| (a - b).frobenius_norm() / b.frobenius_norm();
    let factor = (&r.a_uv * &r.a_v - &r.a_u).norm();
    let noise = (-r.sigma_tilde_n.min_eigenvalue()).max(0.0);
    Ok(rel(&kv, &pair.k_xv)
        .max(rel(&ku, &pair.k_xu))
        .max(factor)
        .max(auxgauss::verify_markov(k_x, &r)?)
        .max(noise))
}

pub fn aux_round_trip(rng: &mut ChaCha8Rng, trials: usize, tol: f64) -> SuiteOutcome {
    let mut worst: f64 = 0.0;
    for i in 0..trials {
        let k_x = random_spd(rng, 1 + i % 6, 0.5, 2.0);
        let pair = random_pair(rng, &k_x);
        worst = max_or_inf(worst, aux_residual(&k_x, &pair));
    }
    outcome("aux_round_trip", worst, tol, trials)
}

/// A general model with small channel gains and a distortion halfway to
/// `K_{X|Y}`.
pub fn random_general<R: Rng>(rng: &mut R, n: usize) -> (GeneralModel, DistortionConstraint) {
    loop {
        let k_x = random_spd(rng, n, 0.8, 1.2);
        let h_y = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.1..0.1));
        let h_z = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.1..0.1));
        let Ok(g) = GeneralModel::new(k_x, h_y, h_z) else {
            continue;
        };
        let Ok(k_xy) = g.cond_cov_xy() else {
            continue;
        };
        let d = random_below(rng, &k_xy, 0.3, 0.7);
        return (g, DistortionConstraint::new(d));
    }
}

/// Residual of the `α → 0` limits, plus a penalty when the slope is below
/// `0.9` or the leakage ordering fails.
pub fn limit_residual(g: &GeneralModel, d: &DistortionConstraint) -> Result<f64> {
    let fam = genmodel::svd_reduce(g);
    let a = genmodel::alpha_star(&fam, d)?;
    let rep = genmodel::limit_checks(g, d, &genmodel::default_alphas(a))?;
    if rep.min_slope() < 0.9 || !rep.leakage_order_holds {
        return Ok(f64::INFINITY);
    }
    Ok(rep.final_residual())
}

pub fn limit_convergence(rng: &mut ChaCha8Rng, trials: usize, tol: f64) -> SuiteOutcome {
    let mut worst: f64 = 0.0;
    for i in 0..trials {
        let (g, d) = random_general(rng, 1 + i % 3);
        worst = max_or_inf(worst, limit_residual(&g, &d));
    }
    outcome("limit_convergence", worst, tol, trials)
}

/// Distance of the example gaps from their reference values.
pub fn example_gap_residual() -> Result<f64> {
    let c = examples::example1_default();
    let g1 = examples::scalar_ie_ins(&c)? - examples::scalar_ie_min(&c)?;
    let p = examples::example2_default();
    let min = examples::parallel_ie_min(&p)?.0;
    let g_phi = examples::parallel_ie_min_phi(&p)?.0 - min;
    let g_s = examples::parallel_ie_min_s(&p)?.0 - min;
    if g1 <= 0.0 || g_phi <= 0.0 || g_s <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((g1 - 0.0589)
        .abs()
        .max((g_phi - 0.09116).abs())
        .max((g_s - 0.05890).abs()))
}

pub fn gradient_check(rng: &mut ChaCha8Rng, trials: usize, tol: f64) -> SuiteOutcome {
    let mut worst: f64 = 0.0;
    for i in 0..trials {
        let (m, _) = random_instance(rng, 1 + i % 4);
        let pair = random_pair(rng, m.k_x());
        worst = max_or_inf(worst, leakopt::gradient_selfcheck(&m, &pair));
    }
    outcome("gradient_check", worst, tol, trials)
}

/// Runs every suite. `tol` overrides each suite's own tolerance.
pub fn run_all(seed: u64, trials: usize, tol: Option<f64>) -> Vec<SuiteOutcome> {
    if trials == 0 {
        return Vec::new();
    }
    let t = |default: f64| tol.unwrap_or(default);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let few = trials.div_ceil(4);
    vec![
        rate_identity(&mut rng, trials, t(1e-9)),
        distortion_equivalence(&mut rng, trials, t(1e-9)),
        solver_certificate(&mut rng, few, t(1e-6)),
        aux_round_trip(&mut rng, trials, t(1e-8)),
        limit_convergence(&mut rng, few, t(1e-6)),
        outcome(
            "example_gaps",
            example_gap_residual().unwrap_or(f64::INFINITY),
            t(4e-3),
            1,
        ),
        gradient_check(&mut rng, few, t(1e-5)),
    ]
}
