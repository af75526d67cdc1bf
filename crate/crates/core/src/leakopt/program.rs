//! Sums of log-determinants of affine functions of the two unknowns.
//!
//! A [`Program`] is `constant + Σ coef · log|C + Σ_a s_a P_a K_a P_aᵀ|` where
//! each `K_a` is either `K_{X|V}` or `K_{X|U}`. It evaluates the value, the
//! matrix gradient, and the gradient and Hessian in packed coordinates
//! (upper triangle, row by row) used by the Newton polish.

use nalgebra::{DMatrix, DVector};

use crate::matkernel::SymMatrix;
use crate::model::AuxiliaryPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Var {
    V,
    U,
}

#[derive(Debug, Clone)]
pub(crate) struct Part {
    pub sign: f64,
    pub var: Var,
    pub map: Option<DMatrix<f64>>,
}

impl Part {
    pub fn plain(sign: f64, var: Var) -> Self {
        Part {
            sign,
            var,
            map: None,
        }
    }

    pub fn mapped(sign: f64, var: Var, map: DMatrix<f64>) -> Self {
        Part {
            sign,
            var,
            map: Some(map),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Term {
    pub coef: f64,
    pub base: DMatrix<f64>,
    pub parts: Vec<Part>,
}

struct Factored {
    inv: DMatrix<f64>,
    logdet: f64,
}

fn factor(a: DMatrix<f64>) -> Option<Factored> {
    let n = a.nrows();
    let chol = a.cholesky()?;
    let l = chol.l_dirty();
    let mut logdet = 0.0;
    for i in 0..n {
        let p = l[(i, i)];
        if !(p > 0.0 && p.is_finite()) {
            return None;
        }
        logdet += 2.0 * p.ln();
    }
    let inv = chol.inverse();
    Some(Factored { inv, logdet })
}

impl Term {
    fn assemble(&self, pair: &AuxiliaryPair) -> DMatrix<f64> {
        let mut a = self.base.clone();
        for p in &self.parts {
            let k = match p.var {
                Var::V => pair.k_xv.as_matrix(),
                Var::U => pair.k_xu.as_matrix(),
            };
            match &p.map {
                None => a += k * p.sign,
                Some(h) => a += h * k * h.transpose() * p.sign,
            }
        }
        a
    }

    fn factored(&self, pair: &AuxiliaryPair) -> Option<Factored> {
        factor(SymMatrix::symmetrized(self.assemble(pair)).into_inner())
    }

    /// `P_aᵀ A^{-1} P_b`.
    fn sandwich(&self, inv: &DMatrix<f64>, a: usize, b: usize) -> DMatrix<f64> {
        let left = match &self.parts[a].map {
            None => inv.clone(),
            Some(h) => h.transpose() * inv,
        };
        match &self.parts[b].map {
            None => left,
            Some(h) => left * h,
        }
    }
}

/// Packed index of the upper-triangular entry `(i, j)`, `i ≤ j`.
pub(crate) fn packed_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push((i, j));
        }
    }
    out
}

pub(crate) fn pack(m: &SymMatrix) -> DVector<f64> {
    let idx = packed_pairs(m.dim());
    DVector::from_iterator(idx.len(), idx.iter().map(|&(i, j)| m.get(i, j)))
}

pub(crate) fn unpack(x: &[f64], n: usize) -> SymMatrix {
    let mut m = DMatrix::zeros(n, n);
    for (k, &(i, j)) in packed_pairs(n).iter().enumerate() {
        m[(i, j)] = x[k];
        m[(j, i)] = x[k];
    }
    SymMatrix::symmetrized(m)
}

pub(crate) fn pack_pair(p: &AuxiliaryPair) -> DVector<f64> {
    let v = pack(&p.k_xv);
    let u = pack(&p.k_xu);
    DVector::from_iterator(v.len() + u.len(), v.iter().chain(u.iter()).copied())
}

pub(crate) fn unpack_pair(x: &DVector<f64>, n: usize) -> AuxiliaryPair {
    let m = n * (n + 1) / 2;
    AuxiliaryPair {
        k_xv: unpack(&x.as_slice()[..m], n),
        k_xu: unpack(&x.as_slice()[m..], n),
    }
}

/// `tr(B_k X B_l Y)` for packed basis matrices `B_k`, `B_l`.
fn basis_trace(k: (usize, usize), l: (usize, usize), x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let ks: &[(usize, usize)] = &[(k.0, k.1), (k.1, k.0)];
    let ls: &[(usize, usize)] = &[(l.0, l.1), (l.1, l.0)];
    let ks = if k.0 == k.1 { &ks[..1] } else { ks };
    let ls = if l.0 == l.1 { &ls[..1] } else { ls };
    let mut acc = 0.0;
    for &(i, j) in ks {
        for &(p, q) in ls {
            acc += x[(j, p)] * y[(q, i)];
        }
    }
    acc
}

#[derive(Debug, Clone)]
pub(crate) struct Program {
    pub n: usize,
    pub constant: f64,
    pub terms: Vec<Term>,
}

impl Program {
    pub fn new(n: usize, constant: f64) -> Self {
        Program {
            n,
            constant,
            terms: Vec::new(),
        }
    }

    pub fn push(&mut self, coef: f64, base: DMatrix<f64>, parts: Vec<Part>) {
        self.terms.push(Term { coef, base, parts });
    }

    pub fn with_extra(&self, extra: &[Term]) -> Program {
        let mut p = self.clone();
        p.terms.extend_from_slice(extra);
        p
    }

    /// Value, or `+∞` when some log-determinant argument is not PD.
    pub fn value(&self, pair: &AuxiliaryPair) -> f64 {
        let mut acc = self.constant;
        for t in &self.terms {
            match t.factored(pair) {
                Some(f) => acc += t.coef * f.logdet,
                None => return f64::INFINITY,
            }
        }
        acc
    }

    /// Frobenius-sense gradients with respect to `K_{X|V}` and `K_{X|U}`.
    pub fn matrix_gradient(&self, pair: &AuxiliaryPair) -> Option<(SymMatrix, SymMatrix)> {
        let n = self.n;
        let mut gv = DMatrix::zeros(n, n);
        let mut gu = DMatrix::zeros(n, n);
        for t in &self.terms {
            let f = t.factored(pair)?;
            for (a, p) in t.parts.iter().enumerate() {
                let g = t.sandwich(&f.inv, a, a) * (t.coef * p.sign);
                match p.var {
                    Var::V => gv += g,
                    Var::U => gu += g,
                }
            }
        }
        Some((SymMatrix::symmetrized(gv), SymMatrix::symmetrized(gu)))
    }

    /// Value, packed gradient and packed Hessian.
    pub fn second_order(&self, pair: &AuxiliaryPair) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let n = self.n;
        let idx = packed_pairs(n);
        let m = idx.len();
        let offset = |v: Var| if v == Var::V { 0 } else { m };
        let mut value = self.constant;
        let mut grad = DVector::zeros(2 * m);
        let mut hess = DMatrix::zeros(2 * m, 2 * m);
        for t in &self.terms {
            let f = t.factored(pair)?;
            value += t.coef * f.logdet;
            let np = t.parts.len();
            for a in 0..np {
                let pa = &t.parts[a];
                let waa = t.sandwich(&f.inv, a, a);
                let oa = offset(pa.var);
                for (k, &(i, j)) in idx.iter().enumerate() {
                    let g = if i == j {
                        waa[(i, i)]
                    } else {
                        2.0 * waa[(i, j)]
                    };
                    grad[oa + k] += t.coef * pa.sign * g;
                }
                for b in 0..np {
                    let pb = &t.parts[b];
                    let ob = offset(pb.var);
                    let wab = if a == b {
                        waa.clone()
                    } else {
                        t.sandwich(&f.inv, a, b)
                    };
                    let wba = wab.transpose();
                    let c = -t.coef * pa.sign * pb.sign;
                    for (k, &kk) in idx.iter().enumerate() {
                        for (l, &ll) in idx.iter().enumerate() {
                            hess[(oa + k, ob + l)] += c * basis_trace(kk, ll, &wab, &wba);
                        }
                    }
                }
            }
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        Some((value, grad, hess))
    }
}
