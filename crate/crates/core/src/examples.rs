//! Closed-form evaluators for the scalar and two-subchannel examples.
//!
//! All functionals are Gaussian-restricted minima evaluated at the binding
//! distortion point `s = f(d) = σy² d / (σy² − d)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matkernel::SymMatrix;
use crate::model::{AlignedModel, DistortionConstraint};

/// Scalar source with side-information and eavesdropper noise variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarChannel {
    pub sigx2: f64,
    pub sigy2: f64,
    pub sigz2: f64,
    pub d: f64,
}

impl ScalarChannel {
    pub fn new(sigx2: f64, sigy2: f64, sigz2: f64, d: f64) -> Result<Self> {
        if !(sigx2 > 0.0 && sigy2 > 0.0 && sigz2 > 0.0) {
            return Err(Error::Degenerate("variances must be positive".into()));
        }
        let c = ScalarChannel {
            sigx2,
            sigy2,
            sigz2,
            d,
        };
        c.check_distortion()?;
        Ok(c)
    }

    /// `σ²_{x|y} = σx² σy² / (σx² + σy²)`.
    pub fn sig_xy(&self) -> f64 {
        self.sigx2 * self.sigy2 / (self.sigx2 + self.sigy2)
    }

    /// `f(d) = σy² d / (σy² − d)`.
    pub fn f_d(&self) -> f64 {
        self.sigy2 * self.d / (self.sigy2 - self.d)
    }

    fn check_distortion(&self) -> Result<()> {
        let bound = self.sig_xy();
        if !(self.d > 0.0) || self.d > bound * (1.0 + 1e-12) {
            return Err(Error::InfeasibleDistortion(format!(
                "need 0 < d <= {bound}, got {}",
                self.d
            )));
        }
        Ok(())
    }

    pub fn aligned(&self) -> Result<(AlignedModel, DistortionConstraint)> {
        Ok((
            AlignedModel::scalar(self.sigx2, self.sigy2, self.sigz2)?,
            DistortionConstraint::scalar(self.d),
        ))
    }

    /// `I(V;X) − I(V;Y) + I(X;Z)` at `s_v = f(d)`, no degradedness check.
    fn leak_with_y_credit(&self) -> f64 {
        let s = self.f_d().min(self.sigx2);
        0.5 * (self.sigx2 / s).ln() - 0.5 * ((self.sigx2 + self.sigy2) / (s + self.sigy2)).ln()
            + 0.5 * ((self.sigx2 + self.sigz2) / self.sigz2).ln()
    }

    /// `I(V;X) + I(X;Z|V)` at `s_v = f(d)`.
    fn leak_without_credit(&self) -> f64 {
        let s = self.f_d().min(self.sigx2);
        0.5 * (self.sigx2 / s).ln() + 0.5 * ((s + self.sigz2) / self.sigz2).ln()
    }
}

fn require_degraded(c: &ScalarChannel) -> Result<()> {
    if c.sigy2 > c.sigz2 {
        return Err(Error::NotDegraded(format!(
            "need sigma_y^2 <= sigma_z^2, got {} > {}",
            c.sigy2, c.sigz2
        )));
    }
    Ok(())
}

/// Minimum leakage of a scalar channel whose eavesdropper is degraded.
pub fn scalar_ie_min(c: &ScalarChannel) -> Result<f64> {
    c.check_distortion()?;
    require_degraded(c)?;
    Ok(c.leak_with_y_credit())
}

/// Leakage of the best Gaussian instantaneous (symbol-by-symbol) encoder.
pub fn scalar_ie_ins(c: &ScalarChannel) -> Result<f64> {
    c.check_distortion()?;
    require_degraded(c)?;
    Ok(c.leak_without_credit())
}

/// Two independent scalar subchannels: the eavesdropper is degraded on the
/// first and stronger than the legitimate receiver on the second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParallelModel {
    pub sub1: ScalarChannel,
    pub sub2: ScalarChannel,
}

impl ParallelModel {
    pub fn new(sub1: ScalarChannel, sub2: ScalarChannel) -> Result<Self> {
        if !(sub1.sigy2 < sub1.sigz2) {
            return Err(Error::NotDegraded(
                "first subchannel needs sigma_y^2 < sigma_z^2".into(),
            ));
        }
        if !(sub2.sigz2 < sub2.sigy2) {
            return Err(Error::NotDegraded(
                "second subchannel needs sigma_z^2 < sigma_y^2".into(),
            ));
        }
        sub1.check_distortion()?;
        sub2.check_distortion()?;
        Ok(ParallelModel { sub1, sub2 })
    }

    /// The 2×2 diagonal aligned model and distortion.
    pub fn aligned(&self) -> Result<(AlignedModel, DistortionConstraint)> {
        let (a, b) = (&self.sub1, &self.sub2);
        Ok((
            AlignedModel::new(
                SymMatrix::from_diagonal(&[a.sigx2, b.sigx2]),
                SymMatrix::from_diagonal(&[a.sigy2, b.sigy2]),
                SymMatrix::from_diagonal(&[a.sigz2, b.sigz2]),
            )?,
            DistortionConstraint::new(SymMatrix::from_diagonal(&[a.d, b.d])),
        ))
    }
}

/// `(total, term1, term2)` of a per-subchannel decomposition.
pub type Decomposition = (f64, f64, f64);

/// Minimum leakage: the degraded first subchannel uses a single auxiliary,
/// the second pays `I(V;X) + I(X;Z|V)`.
pub fn parallel_ie_min(p: &ParallelModel) -> Result<Decomposition> {
    let t1 = p.sub1.leak_with_y_credit();
    let t2 = p.sub2.leak_without_credit();
    Ok((t1 + t2, t1, t2))
}

/// Leakage when the second auxiliary is dropped on both subchannels.
pub fn parallel_ie_min_phi(p: &ParallelModel) -> Result<Decomposition> {
    let t1 = p.sub1.leak_with_y_credit();
    let t2 = p.sub2.leak_with_y_credit();
    Ok((t1 + t2, t1, t2))
}

/// Leakage when both auxiliaries coincide on both subchannels.
pub fn parallel_ie_min_s(p: &ParallelModel) -> Result<Decomposition> {
    let t1 = p.sub1.leak_without_credit();
    let t2 = p.sub2.leak_without_credit();
    Ok((t1 + t2, t1, t2))
}

/// Named preset instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Preset {
    Scalar(ScalarChannel),
    Parallel(ParallelModel),
}

impl Preset {
    pub fn aligned(&self) -> Result<(AlignedModel, DistortionConstraint)> {
        match self {
            Preset::Scalar(c) => c.aligned(),
            Preset::Parallel(p) => p.aligned(),
        }
    }
}

pub const PRESET_NAMES: [&str; 2] = ["example1-default", "example2-default"];

pub fn example1_default() -> ScalarChannel {
    ScalarChannel {
        sigx2: 1.0,
        sigy2: 0.5,
        sigz2: 1.0,
        d: 0.25,
    }
}

pub fn example2_default() -> ParallelModel {
    ParallelModel {
        sub1: ScalarChannel {
            sigx2: 1.0,
            sigy2: 0.5,
            sigz2: 1.0,
            d: 0.25,
        },
        sub2: ScalarChannel {
            sigx2: 1.0,
            sigy2: 1.0,
            sigz2: 0.5,
            d: 0.25,
        },
    }
}

pub fn preset(name: &str) -> Result<Preset> {
    match name {
        "example1-default" => Ok(Preset::Scalar(example1_default())),
        "example2-default" => Ok(Preset::Parallel(example2_default())),
        _ => Err(Error::UnknownExample {
            name: name.to_string(),
            valid: PRESET_NAMES.join(", "),
        }),
    }
}

/// One line of an example table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRow {
    pub example: String,
    pub functional: String,
    pub value_nats: f64,
    pub gap_vs_min_nats: f64,
    pub strictly_positive: bool,
}

pub const EXAMPLE_NAMES: [&str; 3] = ["example1", "example2", "all"];

fn row(example: &str, functional: &str, value: f64, min: f64) -> ExampleRow {
    let gap = value - min;
    ExampleRow {
        example: example.to_string(),
        functional: functional.to_string(),
        value_nats: value,
        gap_vs_min_nats: gap,
        strictly_positive: gap > 1e-9,
    }
}

/// Rows for `example1`, `example2` or `all`.
pub fn example_rows(name: &str) -> Result<Vec<ExampleRow>> {
    let mut rows = Vec::new();
    let want1 = matches!(name, "example1" | "all");
    let want2 = matches!(name, "example2" | "all");
    if !want1 && !want2 {
        return Err(Error::UnknownExample {
            name: name.to_string(),
            valid: EXAMPLE_NAMES.join(", "),
        });
    }
    if want1 {
        let c = example1_default();
        let min = scalar_ie_min(&c)?;
        rows.push(row("example1", "Ie_min", min, min));
        rows.push(row("example1", "Ie_ins", scalar_ie_ins(&c)?, min));
    }
    if want2 {
        let p = example2_default();
        let min = parallel_ie_min(&p)?.0;
        rows.push(row("example2", "Ie_min", min, min));
        rows.push(row(
            "example2",
            "Ie_min_phi",
            parallel_ie_min_phi(&p)?.0,
            min,
        ));
        rows.push(row("example2", "Ie_min_S", parallel_ie_min_s(&p)?.0, min));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    #[test]
    fn example1_values() {
        let c = example1_default();
        close(scalar_ie_min(&c).unwrap(), 0.5 * (8.0f64 / 3.0).ln(), 1e-14);
        close(scalar_ie_ins(&c).unwrap(), 0.5 * 3f64.ln(), 1e-14);
        close(
            scalar_ie_ins(&c).unwrap() - scalar_ie_min(&c).unwrap(),
            0.0589,
            1e-4,
        );
    }

    #[test]
    fn loose_distortion_collapses() {
        let mut c = example1_default();
        c.d = c.sig_xy();
        let expected = 0.5 * 2f64.ln();
        close(scalar_ie_min(&c).unwrap(), expected, 1e-12);
        close(scalar_ie_ins(&c).unwrap(), expected, 1e-12);
    }

    #[test]
    fn example2_values() {
        let p = example2_default();
        let (t, a, b) = parallel_ie_min(&p).unwrap();
        close(a, 0.49041, 1e-5);
        close(b, 0.5 * 5f64.ln(), 1e-14);
        close(t, 1.29513, 1e-5);
        close(parallel_ie_min_phi(&p).unwrap().0, 2.0 * 2f64.ln(), 1e-14);
        close(parallel_ie_min_s(&p).unwrap().0, 1.35403, 1e-5);
    }

    #[test]
    fn swap_symmetry() {
        let p = example2_default();
        let (t, a, b) = parallel_ie_min(&p).unwrap();
        let swapped = p.sub2.leak_without_credit() + p.sub1.leak_with_y_credit();
        close(t, swapped, 1e-15);
        close(t, a + b, 1e-15);
    }

    #[test]
    fn errors() {
        let mut c = example1_default();
        c.sigy2 = 2.0;
        assert!(matches!(scalar_ie_min(&c), Err(Error::NotDegraded(_))));
        assert!(ScalarChannel::new(1.0, 0.5, 1.0, 0.4).is_err());
        assert!(matches!(preset("nope"), Err(Error::UnknownExample { .. })));
        assert!(example_rows("example3").is_err());
        assert_eq!(example_rows("all").unwrap().len(), 5);
    }
}
