//! Explicit jointly Gaussian auxiliaries realizing a pair of conditional
//! covariances.
//!
//! For `0 ≺ K_{X|V} ⪯ K_{X|U} ⪯ K_X` the construction is
//! `V = A_V X + N_V` and `U = A_UV V + Ñ` with `N_V ~ N(0, I)`,
//! `Ñ ~ N(0, I − A_UV A_UVᵀ)`, so that `U → V → X` is a Markov chain and
//! `Cov(X | V) = K_{X|V}`, `Cov(X | U) = K_{X|U}`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matkernel::{
    default_tol, diag_pseudo_inverse, project_psd, simultaneous_diagonalize, spd_inverse, SymMatrix,
};
use crate::model::{cond_cov_given_v_and_y, AuxiliaryPair};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianAuxRealization {
    pub a_v: DMatrix<f64>,
    pub a_u: DMatrix<f64>,
    pub a_uv: DMatrix<f64>,
    pub sigma_tilde_n: SymMatrix,
    pub w: DMatrix<f64>,
    pub lambda_v: DVector<f64>,
    pub lambda_u: DVector<f64>,
}

/// Builds `(A_V, A_U, A_UV)` from a simultaneous diagonalization of
/// `K_{X|V}^{-1} − K_X^{-1}` and `K_{X|U}^{-1} − K_X^{-1}`.
pub fn construct(k_x: &SymMatrix, pair: &AuxiliaryPair) -> Result<GaussianAuxRealization> {
    k_x.check_same_dim(&pair.k_xv)?;
    k_x.check_same_dim(&pair.k_xu)?;
    if pair.k_xv.min_eigenvalue() <= default_tol(&pair.k_xv) {
        return Err(Error::SingularKv);
    }
    pair.validate(k_x)?;
    let kx_inv = spd_inverse(k_x)?;
    let a = project_psd(&(&spd_inverse(&pair.k_xv)? - &kx_inv));
    let b = project_psd(&(&spd_inverse(&pair.k_xu)? - &kx_inv));
    let sd = simultaneous_diagonalize(&a, &b)?;
    let lambda_v = sd.lambda_a.map(|x| x.max(0.0).sqrt());
    let lambda_u = DVector::from_iterator(
        lambda_v.len(),
        sd.lambda_b
            .iter()
            .zip(lambda_v.iter())
            .map(|(&lb, &lv)| lb.max(0.0).sqrt().min(lv)),
    );
    let zero_tol = 1e-12 * lambda_v.amax().max(1.0);
    let lv_pinv = diag_pseudo_inverse(&lambda_v, zero_tol);
    let ratio = DVector::from_iterator(
        lambda_v.len(),
        lambda_u
            .iter()
            .zip(lv_pinv.iter())
            .map(|(&u, &p)| (u * p).min(1.0)),
    );
    let a_v = DMatrix::from_diagonal(&lambda_v) * &sd.w;
    let a_u = DMatrix::from_diagonal(&lambda_u) * &sd.w;
    let a_uv = DMatrix::from_diagonal(&ratio);
    let sigma_tilde_n =
        SymMatrix::from_diagonal(&ratio.iter().map(|r| 1.0 - r * r).collect::<Vec<_>>());
    Ok(GaussianAuxRealization {
        a_v,
        a_u,
        a_uv,
        sigma_tilde_n,
        w: sd.w,
        lambda_v,
        lambda_u,
    })
}

/// `((K_X^{-1} + A_VᵀA_V)^{-1}, (K_X^{-1} + A_UᵀA_U)^{-1})`.
pub fn verify_conditional_covariances(
    k_x: &SymMatrix,
    r: &GaussianAuxRealization,
) -> Result<(SymMatrix, SymMatrix)> {
    let kx_inv = spd_inverse(k_x)?;
    let post = |a: &DMatrix<f64>| -> Result<SymMatrix> {
        let info = &kx_inv + &SymMatrix::symmetrized(a.transpose() * a);
        spd_inverse(&info)
    };
    Ok((post(&r.a_v)?, post(&r.a_u)?))
}

/// Covariance-level test of `U ⊥ X | V`:
/// `‖K_UX − K_UV K_V^{-1} K_VX‖` with `U = A_U X + A_UV N_V + Ñ`.
pub fn verify_markov(k_x: &SymMatrix, r: &GaussianAuxRealization) -> Result<f64> {
    let kx = k_x.as_matrix();
    let k_v = SymMatrix::symmetrized(&r.a_v * kx * r.a_v.transpose())
        .as_matrix()
        .clone()
        + DMatrix::identity(kx.nrows(), kx.nrows());
    let k_v_inv = spd_inverse(&SymMatrix::symmetrized(k_v)).map_err(|_| Error::SingularKv)?;
    let k_ux = &r.a_u * kx;
    let k_uv = &r.a_u * kx * r.a_v.transpose() + &r.a_uv;
    let k_vx = &r.a_v * kx;
    Ok((k_ux - k_uv * k_v_inv.as_matrix() * k_vx).norm())
}

/// Outcome of the sampling check on `Cov(X | V, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub empirical: SymMatrix,
    pub predicted: SymMatrix,
    /// Largest entrywise deviation in units of its standard error.
    pub max_z_score: f64,
}

/// Draws `samples` joint realizations of `(X, V, Y)` with `Y = X + N_Y` and
/// compares the empirical `Cov(X | V, Y)` with the closed form.
pub fn monte_carlo_check(
    k_x: &SymMatrix,
    sigma_y: &SymMatrix,
    pair: &AuxiliaryPair,
    r: &GaussianAuxRealization,
    samples: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    let n = k_x.dim();
    let lx = k_x
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite {
            context: "K_X".into(),
        })?
        .l();
    let ly = sigma_y
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite {
            context: "Sigma_Y".into(),
        })?
        .l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |k: usize| DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
    let dim = 3 * n;
    let mut sum = DVector::zeros(dim);
    let mut outer = DMatrix::zeros(dim, dim);
    for _ in 0..samples {
        let x = &lx * draw(n);
        let v = &r.a_v * &x + draw(n);
        let y = &x + &ly * draw(n);
        let z = DVector::from_iterator(dim, x.iter().chain(v.iter()).chain(y.iter()).copied());
        outer += &z * z.transpose();
        sum += z;
    }
    let s = samples as f64;
    let mean = &sum / s;
    let cov = (outer - &mean * mean.transpose() * s) / (s - 1.0);
    let kxx = cov.view((0, 0), (n, n)).into_owned();
    let kxo = cov.view((0, n), (n, 2 * n)).into_owned();
    let koo = cov.view((n, n), (2 * n, 2 * n)).into_owned();
    let koo_inv = koo
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("empirical observation covariance".into()))?;
    let empirical = SymMatrix::symmetrized(&kxx - &kxo * koo_inv * kxo.transpose());
    let predicted = cond_cov_given_v_and_y(&pair.k_xv, sigma_y)?;
    let mut max_z: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let p = predicted.as_matrix();
            let se = ((p[(i, i)] * p[(j, j)] + p[(i, j)].powi(2)) / s).sqrt();
            max_z = max_z.max((empirical.get(i, j) - p[(i, j)]).abs() / se);
        }
    }
    Ok(MonteCarloReport {
        empirical,
        predicted,
        max_z_score: max_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_construction() {
        let k_x = SymMatrix::scalar(1.0);
        let pair = AuxiliaryPair::new(SymMatrix::scalar(0.5), SymMatrix::scalar(0.8)).unwrap();
        let r = construct(&k_x, &pair).unwrap();
        assert!((r.a_v[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((r.a_u[(0, 0)].abs() - 0.5).abs() < 1e-12);
        assert!((r.a_uv[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((r.sigma_tilde_n.get(0, 0) - 0.75).abs() < 1e-12);
        let (kv, ku) = verify_conditional_covariances(&k_x, &r).unwrap();
        assert!((kv.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((ku.get(0, 0) - 0.8).abs() < 1e-12);
        assert!(verify_markov(&k_x, &r).unwrap() < 1e-14);
    }

    #[test]
    fn trivial_auxiliaries() {
        let k_x = SymMatrix::from_diagonal(&[1.0, 2.0]);
        let pair = AuxiliaryPair::new(k_x.clone(), k_x.clone()).unwrap();
        let r = construct(&k_x, &pair).unwrap();
        assert!(r.a_v.amax() < 1e-12);
        assert!(r.a_u.amax() < 1e-12);
        assert!((r.sigma_tilde_n.as_matrix() - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn equal_auxiliaries() {
        let k_x = SymMatrix::from_diagonal(&[1.0, 2.0]);
        let k = SymMatrix::from_diagonal(&[0.5, 0.7]);
        let pair = AuxiliaryPair::new(k.clone(), k).unwrap();
        let r = construct(&k_x, &pair).unwrap();
        assert!((&r.a_uv - DMatrix::identity(2, 2)).amax() < 1e-9);
        assert!(verify_markov(&k_x, &r).unwrap() < 1e-12);
    }

    #[test]
    fn rejects_bad_pairs() {
        let k_x = SymMatrix::scalar(1.0);
        let bad = AuxiliaryPair::new(SymMatrix::scalar(0.8), SymMatrix::scalar(0.5)).unwrap();
        assert!(matches!(construct(&k_x, &bad), Err(Error::InvalidOrder(_))));
        let sing = AuxiliaryPair::new(SymMatrix::scalar(0.0), SymMatrix::scalar(0.5)).unwrap();
        assert!(matches!(construct(&k_x, &sing), Err(Error::SingularKv)));
    }

    #[test]
    fn sampling_agrees_with_closed_form() {
        let k_x = SymMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.8]]).unwrap();
        let sy = SymMatrix::from_diagonal(&[0.5, 0.7]);
        let pair = AuxiliaryPair::new(
            SymMatrix::from_diagonal(&[0.4, 0.3]),
            SymMatrix::from_rows(&[vec![0.7, 0.1], vec![0.1, 0.5]]).unwrap(),
        )
        .unwrap();
        let r = construct(&k_x, &pair).unwrap();
        let rep = monte_carlo_check(&k_x, &sy, &pair, &r, 100_000, 7).unwrap();
        assert!(rep.max_z_score < 3.0, "{}", rep.max_z_score);
    }
}
