//! Dykstra projection onto
//! `{K_V ⪯ K_U, K_U ⪯ K_X, K_V ⪯ F, K_V ⪰ floor·I}`
//! in the Frobenius metric of the product space.

use crate::matkernel::SymMatrix;
use crate::model::AuxiliaryPair;

pub(crate) struct FeasibleSet<'a> {
    pub k_x: &'a SymMatrix,
    pub f: &'a SymMatrix,
    pub floor: f64,
}

impl FeasibleSet<'_> {
    fn project_one(&self, set: usize, p: &AuxiliaryPair) -> AuxiliaryPair {
        match set {
            0 => {
                let (_, neg) = (&p.k_xu - &p.k_xv).split_spectrum();
                let half = neg.scale(0.5);
                AuxiliaryPair {
                    k_xv: &p.k_xv + &half,
                    k_xu: &p.k_xu - &half,
                }
            }
            1 => {
                let (_, neg) = (self.k_x - &p.k_xu).split_spectrum();
                AuxiliaryPair {
                    k_xv: p.k_xv.clone(),
                    k_xu: &p.k_xu + &neg,
                }
            }
            2 => {
                let (_, neg) = (self.f - &p.k_xv).split_spectrum();
                AuxiliaryPair {
                    k_xv: &p.k_xv + &neg,
                    k_xu: p.k_xu.clone(),
                }
            }
            _ => {
                let floor = self.floor;
                AuxiliaryPair {
                    k_xv: p.k_xv.map_spectrum(|v| v.max(floor)),
                    k_xu: p.k_xu.clone(),
                }
            }
        }
    }

    /// Largest eigenvalue violation over the four constraints.
    pub fn violation(&self, p: &AuxiliaryPair) -> f64 {
        let a = -(&p.k_xu - &p.k_xv).min_eigenvalue();
        let b = -(self.k_x - &p.k_xu).min_eigenvalue();
        let c = -(self.f - &p.k_xv).min_eigenvalue();
        let d = self.floor - p.k_xv.min_eigenvalue();
        a.max(b).max(c).max(d).max(0.0)
    }

    pub fn project(&self, p: &AuxiliaryPair, max_sweeps: usize, tol: f64) -> AuxiliaryPair {
        let n = p.k_xv.dim();
        let zero = || AuxiliaryPair {
            k_xv: SymMatrix::zeros(n),
            k_xu: SymMatrix::zeros(n),
        };
        let mut x = p.clone();
        let mut incr: Vec<AuxiliaryPair> = (0..4).map(|_| zero()).collect();
        for _ in 0..max_sweeps {
            let start = x.clone();
            for (s, inc) in incr.iter_mut().enumerate() {
                let y = AuxiliaryPair {
                    k_xv: &x.k_xv + &inc.k_xv,
                    k_xu: &x.k_xu + &inc.k_xu,
                };
                let proj = self.project_one(s, &y);
                *inc = AuxiliaryPair {
                    k_xv: &y.k_xv - &proj.k_xv,
                    k_xu: &y.k_xu - &proj.k_xu,
                };
                x = proj;
            }
            let moved = (&x.k_xv - &start.k_xv)
                .frobenius_norm()
                .max((&x.k_xu - &start.k_xu).frobenius_norm());
            if moved <= tol && self.violation(&x) <= tol {
                break;
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_reaches_the_intersection() {
        let k_x = SymMatrix::from_diagonal(&[2.0, 1.0]);
        let f = SymMatrix::from_diagonal(&[0.5, 0.6]);
        let set = FeasibleSet {
            k_x: &k_x,
            f: &f,
            floor: 1e-6,
        };
        let p = AuxiliaryPair::new(
            SymMatrix::from_rows(&[vec![1.5, 0.4], vec![0.4, -0.2]]).unwrap(),
            SymMatrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 0.1]]).unwrap(),
        )
        .unwrap();
        let q = set.project(&p, 200, 1e-12);
        assert!(set.violation(&q) < 1e-8);
        let feasible = AuxiliaryPair::new(f.scale(0.5), f.clone()).unwrap();
        let q = set.project(&feasible, 50, 1e-12);
        assert!((&q.k_xv - &feasible.k_xv).max_abs() < 1e-12);
    }
}
