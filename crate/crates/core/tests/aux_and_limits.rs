use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use secleak_core::genmodel::{
    alpha_star, default_alphas, general_bounds, limit_checks, svd_reduce, GeneralModel,
};
use secleak_core::leakopt::{minimize_leakage, SolverOptions};
use secleak_core::matkernel::SymMatrix;
use secleak_core::model::{rate_lower_bound, AlignedModel, DistortionConstraint};
use secleak_core::verify::{aux_residual, limit_residual, random_general, random_pair, random_spd};

#[test]
fn gaussian_auxiliaries_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for i in 0..200 {
        let k_x = random_spd(&mut rng, 1 + i % 6, 0.5, 2.0);
        let pair = random_pair(&mut rng, &k_x);
        let r = aux_residual(&k_x, &pair).unwrap();
        assert!(r < 1e-8, "pair {i}: {r}");
    }
}

#[test]
fn identity_channels_reproduce_the_aligned_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let opts = SolverOptions::default();
    for i in 0..6 {
        let n = 1 + i % 3;
        let k_x = random_spd(&mut rng, n, 0.5, 2.0);
        let aligned =
            AlignedModel::new(k_x.clone(), SymMatrix::identity(n), SymMatrix::identity(n)).unwrap();
        let general =
            GeneralModel::new(k_x, DMatrix::identity(n, n), DMatrix::identity(n, n)).unwrap();
        let k_xy = general.cond_cov_xy().unwrap();
        let d = DistortionConstraint::new(k_xy.scale(0.5));
        let gb = general_bounds(&general, &d, &opts).unwrap();
        let r = rate_lower_bound(&aligned, &d).unwrap();
        let ie = minimize_leakage(&aligned, &d, &opts).unwrap().value;
        assert!((gb.r_min - r).abs() < 1e-8);
        assert!((gb.ie_min - ie).abs() < 1e-8, "{} vs {}", gb.ie_min, ie);
    }
}

#[test]
fn alpha_limits_converge() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for i in 0..9 {
        let (g, d) = random_general(&mut rng, 1 + i % 3);
        let r = limit_residual(&g, &d).unwrap();
        assert!(r < 1e-6, "model {i}: {r}");
    }
}

#[test]
fn rank_deficient_channel_reduces() {
    let g = GeneralModel::new(
        SymMatrix::identity(2),
        DMatrix::from_row_slice(3, 2, &[0.3, 0.0, 0.0, 0.0, 0.0, 0.0]),
        DMatrix::from_row_slice(1, 2, &[0.1, 0.2]),
    )
    .unwrap();
    let fam = svd_reduce(&g);
    assert_eq!(fam.lambda_y.len(), 2);
    assert!(fam.lambda_y[1].abs() < 1e-15);
    let d = DistortionConstraint::new(g.cond_cov_xy().unwrap().scale(0.6));
    let a = alpha_star(&fam, &d).unwrap();
    let rep = limit_checks(&g, &d, &default_alphas(a)).unwrap();
    assert!(rep.final_residual() < 1e-6, "{rep:?}");
}

#[test]
fn general_solutions_carry_small_residuals() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for i in 0..6 {
        let (g, d) = random_general(&mut rng, 1 + i % 3);
        let b = general_bounds(&g, &d, &SolverOptions::default()).unwrap();
        assert!(b.r_min > 0.0);
        assert!(
            b.solution.certificate.max_residual() < 1e-6,
            "{:?}",
            b.solution.certificate.residuals
        );
        b.pair.validate(g.k_x()).unwrap();
    }
}
