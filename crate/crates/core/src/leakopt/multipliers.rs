//! Least-squares recovery of PSD multipliers with accelerated projected
//! gradient steps.

use super::Problem;
use crate::matkernel::{project_psd, SymMatrix};
use crate::model::AuxiliaryPair;

pub(crate) type Triple = (SymMatrix, SymMatrix, SymMatrix);

struct Residuals<'a> {
    gv: SymMatrix,
    gu: SymMatrix,
    s: [&'a SymMatrix; 3],
    s2: [SymMatrix; 3],
}

impl Residuals<'_> {
    fn gradient(&self, m: &Triple) -> Triple {
        let (mu, md, mx) = m;
        let rv = &(&self.gv + mu) + md;
        let ru = &(&self.gu - mu) + mx;
        let sym = |a: &SymMatrix, s2: &SymMatrix| {
            SymMatrix::symmetrized(a.as_matrix() * s2.as_matrix() + s2.as_matrix() * a.as_matrix())
        };
        (
            &(&rv - &ru).scale(2.0) + &sym(mu, &self.s2[0]),
            &rv.scale(2.0) + &sym(md, &self.s2[1]),
            &ru.scale(2.0) + &sym(mx, &self.s2[2]),
        )
    }

    fn lipschitz(&self) -> f64 {
        let worst = self
            .s
            .iter()
            .map(|s| s.max_abs_eigenvalue().powi(2))
            .fold(0.0, f64::max);
        8.0 + 2.0 * worst
    }
}

fn combine(a: &Triple, b: &Triple, wa: f64, wb: f64) -> Triple {
    (
        &a.0.scale(wa) + &b.0.scale(wb),
        &a.1.scale(wa) + &b.1.scale(wb),
        &a.2.scale(wa) + &b.2.scale(wb),
    )
}

pub(crate) fn cold_start(gv: &SymMatrix, gu: &SymMatrix) -> Triple {
    let n = gv.dim();
    (SymMatrix::zeros(n), project_psd(&-gv), project_psd(&-gu))
}

/// Minimizes the squared KKT residuals over PSD multipliers.
///
/// `gv`, `gu` are twice the objective gradients at `pair`.
pub(crate) fn least_squares(
    p: &Problem,
    pair: &AuxiliaryPair,
    gv: SymMatrix,
    gu: SymMatrix,
    warm: Option<Triple>,
    max_iters: usize,
) -> Triple {
    let s1 = &pair.k_xu - &pair.k_xv;
    let s2 = &p.f - &pair.k_xv;
    let s3 = &p.k_x - &pair.k_xu;
    let sq = |s: &SymMatrix| SymMatrix::symmetrized(s.as_matrix() * s.as_matrix());
    let s2s = [sq(&s1), sq(&s2), sq(&s3)];
    let init = warm.unwrap_or_else(|| cold_start(&gv, &gu));
    let r = Residuals {
        gv,
        gu,
        s: [&s1, &s2, &s3],
        s2: s2s,
    };
    let step = 1.0 / r.lipschitz();
    let mut x = init.clone();
    let mut y = init;
    let mut theta: f64 = 1.0;
    for _ in 0..max_iters {
        let g = r.gradient(&y);
        let moved = combine(&y, &g, 1.0, -step);
        let xn = (
            project_psd(&moved.0),
            project_psd(&moved.1),
            project_psd(&moved.2),
        );
        let delta = combine(&xn, &x, 1.0, -1.0);
        let change = delta
            .0
            .max_abs()
            .max(delta.1.max_abs())
            .max(delta.2.max_abs());
        let theta_n = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let w = (theta - 1.0) / theta_n;
        y = combine(&xn, &delta, 1.0, w);
        x = xn;
        theta = theta_n;
        if change < 1e-15 {
            break;
        }
    }
    x
}
