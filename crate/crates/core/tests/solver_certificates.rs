use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use secleak_core::enhance::{chain_values, closed_form_lbar, enhance};
use secleak_core::leakopt::{
    certify, minimize_leakage, recover_multipliers, scalar_grid_oracle, SolverOptions,
};
use secleak_core::matkernel::SymMatrix;
use secleak_core::model::{AlignedModel, DistortionConstraint};
use secleak_core::verify::random_instance;

#[test]
fn random_instances_are_certified() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let opts = SolverOptions::default();
    for i in 0..24 {
        let (m, d) = random_instance(&mut rng, 1 + i % 4);
        let sol = minimize_leakage(&m, &d, &opts).unwrap();
        assert!(
            certify(&m, &d, &sol, 1e-6),
            "instance {i}: {:?}",
            sol.certificate.residuals
        );
        let e = enhance(&m, &d, &sol).unwrap();
        assert!(e.max_property_residual() < 1e-6, "{:?}", e.property_report);
        let chain = chain_values(&m, &d, &sol, &e).unwrap();
        assert!(chain.max_step() < 1e-6, "{chain:?}");
        assert!((closed_form_lbar(&m, &d, &e).unwrap() - sol.value).abs() < 1e-6);
    }
}

#[test]
fn scalar_solver_matches_grid() {
    for (sy, sz, d) in [
        (0.5, 1.0, 0.25),
        (1.0, 0.5, 0.25),
        (0.7, 0.7, 0.1),
        (0.3, 2.0, 0.2),
    ] {
        let m = AlignedModel::scalar(1.0, sy, sz).unwrap();
        let dc = DistortionConstraint::scalar(d);
        let sol = minimize_leakage(&m, &dc, &SolverOptions::default()).unwrap();
        let grid = scalar_grid_oracle(1.0, sy, sz, d, 400).unwrap();
        assert!(sol.value <= grid.value + 1e-9, "{sol:?} {grid:?}");
        assert!(grid.value - sol.value < 2e-3);
    }
}

#[test]
fn optimum_does_not_depend_on_the_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (m, d) = random_instance(&mut rng, 3);
    let a = minimize_leakage(&m, &d, &SolverOptions::default()).unwrap();
    let b = minimize_leakage(
        &m,
        &d,
        &SolverOptions {
            seed: 99,
            ..SolverOptions::default()
        },
    )
    .unwrap();
    assert!((a.value - b.value).abs() < 1e-8);
}

#[test]
fn recovered_multipliers_vanish_in_the_interior_direction() {
    let m = AlignedModel::new(
        SymMatrix::from_diagonal(&[1.0, 1.0]),
        SymMatrix::from_diagonal(&[0.5, 1.0]),
        SymMatrix::from_diagonal(&[1.0, 0.5]),
    )
    .unwrap();
    let d = DistortionConstraint::new(SymMatrix::from_diagonal(&[0.25, 0.25]));
    let sol = minimize_leakage(&m, &d, &SolverOptions::default()).unwrap();
    let cert = recover_multipliers(&m, &d, &sol.pair).unwrap();
    assert!(cert.max_residual() < 1e-6, "{:?}", cert.residuals);
    assert!((sol.pair.k_xu.get(0, 0) - 1.0).abs() < 1e-4);
}

#[test]
fn invalid_options_are_rejected() {
    let m = AlignedModel::scalar(1.0, 0.5, 1.0).unwrap();
    let d = DistortionConstraint::scalar(0.25);
    let bad = SolverOptions {
        restarts: 0,
        ..SolverOptions::default()
    };
    assert!(minimize_leakage(&m, &d, &bad).is_err());
    assert!(minimize_leakage(
        &m,
        &DistortionConstraint::scalar(0.5),
        &SolverOptions::default()
    )
    .is_err());
}
