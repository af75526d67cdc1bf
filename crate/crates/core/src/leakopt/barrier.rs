//! Log-barrier Newton refinement.
//!
//! The three order constraints are replaced by
//! `−t (log|K_U − K_V| + log|F − K_V| + log|K_X − K_U|)` and the barrier
//! weight `t` is driven towards zero. At the end the scaled inverse slacks
//! are the multiplier estimates `M = 2t · slack^{-1}`.

use nalgebra::{DMatrix, DVector};

use super::program::{pack_pair, unpack_pair, Part, Term, Var};
use super::Problem;
use crate::matkernel::{spd_inverse, SymMatrix};
use crate::model::AuxiliaryPair;

const T_START: f64 = 1e-3;
const T_FINAL: f64 = 1e-10;
const T_FACTOR: f64 = 10.0;
const MAX_NEWTON: usize = 80;

pub(crate) struct Polished {
    pub pair: AuxiliaryPair,
    pub multipliers: (SymMatrix, SymMatrix, SymMatrix),
    pub newton_steps: usize,
    pub converged: bool,
}

fn barrier_terms(p: &Problem, t: f64) -> Vec<Term> {
    let n = p.k_x.dim();
    vec![
        Term {
            coef: -t,
            base: DMatrix::zeros(n, n),
            parts: vec![Part::plain(1.0, Var::U), Part::plain(-1.0, Var::V)],
        },
        Term {
            coef: -t,
            base: p.f.as_matrix().clone(),
            parts: vec![Part::plain(-1.0, Var::V)],
        },
        Term {
            coef: -t,
            base: p.k_x.as_matrix().clone(),
            parts: vec![Part::plain(-1.0, Var::U)],
        },
    ]
}

/// A strictly feasible point well inside the constraint set.
pub(crate) fn center(p: &Problem) -> AuxiliaryPair {
    let n = p.k_x.dim();
    let c = 0.5 * p.f.min_eigenvalue().min(0.5 * p.k_x.min_eigenvalue());
    let k_xv = SymMatrix::identity(n).scale(c);
    let k_xu = (&k_xv + &p.k_x).scale(0.5);
    AuxiliaryPair { k_xv, k_xu }
}

pub(crate) fn strictly_feasible(p: &Problem, x: &AuxiliaryPair) -> bool {
    [
        x.k_xv.clone(),
        &x.k_xu - &x.k_xv,
        &p.f - &x.k_xv,
        &p.k_x - &x.k_xu,
    ]
    .into_iter()
    .all(|m| m.into_inner().cholesky().is_some())
}

fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>) -> DVector<f64> {
    if let Some(ch) = h.clone().cholesky() {
        let d = ch.solve(&(-g));
        if d.iter().all(|v| v.is_finite()) {
            return d;
        }
    }
    let eig = h.clone().symmetric_eigen();
    let floor = 1e-12 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let q = &eig.eigenvectors;
    let qg = q.transpose() * g;
    let scaled = DVector::from_iterator(
        qg.len(),
        qg.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(c, l)| -c / l.abs().max(floor)),
    );
    q * scaled
}

/// Barrier multipliers at the point `x` for weight `t`.
fn multipliers(
    p: &Problem,
    x: &AuxiliaryPair,
    t: f64,
) -> Option<(SymMatrix, SymMatrix, SymMatrix)> {
    let mu = spd_inverse(&(&x.k_xu - &x.k_xv)).ok()?.scale(2.0 * t);
    let md = spd_inverse(&(&p.f - &x.k_xv)).ok()?.scale(2.0 * t);
    let mx = spd_inverse(&(&p.k_x - &x.k_xu)).ok()?.scale(2.0 * t);
    Some((mu, md, mx))
}

fn run(p: &Problem, start: &AuxiliaryPair, t_start: f64) -> Option<Polished> {
    let n = p.k_x.dim();
    let mut x = pack_pair(start);
    let mut t = t_start;
    let mut steps = 0;
    let converged;
    loop {
        let prog = p.program.with_extra(&barrier_terms(p, t));
        let mut level_done = false;
        for _ in 0..MAX_NEWTON {
            let pair = unpack_pair(&x, n);
            let (val, g, h) = prog.second_order(&pair)?;
            let d = newton_direction(&g, &h);
            let slope = g.dot(&d);
            if !(slope < 0.0) {
                level_done = true;
                break;
            }
            let decrement = -slope;
            let gnorm = g.norm();
            let mut s = 1.0;
            let mut accepted = false;
            while s > 1e-14 {
                let xn = &x + &d * s;
                let pn = unpack_pair(&xn, n);
                let vn = prog.value(&pn);
                if vn.is_finite() {
                    let armijo = vn <= val + 1e-4 * s * slope;
                    let tiny = s == 1.0
                        && decrement < 1e-10
                        && prog
                            .second_order(&pn)
                            .map(|(_, gn, _)| gn.norm() < gnorm)
                            .unwrap_or(false);
                    if armijo || tiny {
                        x = xn;
                        accepted = true;
                        break;
                    }
                }
                s *= 0.5;
            }
            steps += 1;
            if !accepted {
                level_done = true;
                break;
            }
            if decrement < 1e-22 {
                level_done = true;
                break;
            }
        }
        if t <= T_FINAL * (1.0 + 1e-9) {
            converged = level_done;
            break;
        }
        t /= T_FACTOR;
    }
    let pair = unpack_pair(&x, n);
    let multipliers = multipliers(p, &pair, t)?;
    Some(Polished {
        pair,
        multipliers,
        newton_steps: steps,
        converged,
    })
}

/// Refines `start` (feasible, possibly on the boundary) towards a KKT point.
pub(crate) fn polish(p: &Problem, start: &AuxiliaryPair) -> Option<Polished> {
    let c = center(p);
    for theta in [1e-3, 1e-2, 1e-1] {
        let x0 = AuxiliaryPair {
            k_xv: &start.k_xv.scale(1.0 - theta) + &c.k_xv.scale(theta),
            k_xu: &start.k_xu.scale(1.0 - theta) + &c.k_xu.scale(theta),
        };
        if strictly_feasible(p, &x0) {
            if let Some(r) = run(p, &x0, T_START) {
                return Some(r);
            }
        }
    }
    run(p, &c, 1.0)
}
