//! Exhaustive grid search for the scalar leakage program.

use crate::error::{Error, Result};

/// Result of [`scalar_grid_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptimum {
    pub s_v: f64,
    pub s_u: f64,
    pub value: f64,
}

/// Scalar leakage objective at `(s_v, s_u)`.
pub fn scalar_objective(sigx2: f64, sigy2: f64, sigz2: f64, s_v: f64, s_u: f64) -> f64 {
    0.5 * (sigx2 / s_v).ln() - 0.5 * ((s_u + sigy2) / (s_v + sigy2)).ln()
        + 0.5 * ((s_u + sigz2) / sigz2).ln()
}

/// `f(d) = σy² d / (σy² − d)`.
pub fn scalar_f(sigy2: f64, d: f64) -> f64 {
    sigy2 * d / (sigy2 - d)
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Minimizes the scalar objective over `s_v ≤ min(f(d), s_u)`, `s_u ≤ σx²`
/// on a log-spaced grid of `grid_n` points per axis spanning
/// `[1e-4·σx², σx²]`, with the constraint boundaries added to each axis.
pub fn scalar_grid_oracle(
    sigx2: f64,
    sigy2: f64,
    sigz2: f64,
    d: f64,
    grid_n: usize,
) -> Result<GridOptimum> {
    if !(sigx2 > 0.0 && sigy2 > 0.0 && sigz2 > 0.0) {
        return Err(Error::Degenerate("variances must be positive".into()));
    }
    let sig_xy = sigx2 * sigy2 / (sigx2 + sigy2);
    if !(d > 0.0) || d > sig_xy * (1.0 + 1e-12) {
        return Err(Error::InfeasibleDistortion(format!(
            "need 0 < d <= {sig_xy}, got {d}"
        )));
    }
    let f = scalar_f(sigy2, d).min(sigx2);
    let base = log_grid(sigx2 * 1e-4, sigx2, grid_n.max(2));
    let mut us = base.clone();
    us.push(f);
    let mut best = GridOptimum {
        s_v: f64::NAN,
        s_u: f64::NAN,
        value: f64::INFINITY,
    };
    for &s_u in &us {
        let cap = f.min(s_u);
        for s_v in base
            .iter()
            .copied()
            .filter(|&v| v <= cap)
            .chain(std::iter::once(cap))
        {
            let value = scalar_objective(sigx2, sigy2, sigz2, s_v, s_u);
            if value < best.value {
                best = GridOptimum { s_v, s_u, value };
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_instance() {
        let g = scalar_grid_oracle(1.0, 0.5, 1.0, 0.25, 400).unwrap();
        assert!((g.value - 0.5 * (8.0f64 / 3.0).ln()).abs() < 2e-3);
        assert!((g.s_v - 0.5).abs() < 1e-9);
        assert!((g.s_u - 1.0).abs() < 1e-9);
    }

    #[test]
    fn loose_distortion() {
        let d = 1.0 / 3.0;
        let g = scalar_grid_oracle(1.0, 0.5, 1.0, d, 400).unwrap();
        assert!((g.value - 0.5 * 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn equal_noises_match_one_dimensional_search() {
        let g = scalar_grid_oracle(1.0, 0.7, 0.7, 0.2, 400).unwrap();
        let f = scalar_f(0.7, 0.2);
        let one_d = 0.5 * (1.0 / f).ln() + 0.5 * ((f + 0.7) / 0.7).ln();
        assert!((g.value - one_d).abs() < 1e-9);
    }

    #[test]
    fn infeasible_distortion_rejected() {
        assert!(scalar_grid_oracle(1.0, 0.5, 1.0, 0.4, 10).is_err());
    }
}
