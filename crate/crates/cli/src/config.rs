use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use secleak_core::examples::{self, PRESET_NAMES};
use secleak_core::genmodel::GeneralModel;
use secleak_core::leakopt::SolverOptions;
use secleak_core::matkernel::{MatrixJson, SymMatrix};
use secleak_core::model::{AlignedModel, DistortionConstraint};

use crate::CliError;

const ASYMMETRY_WARN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Aligned(AlignedModel),
    General(GeneralModel),
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Aligned(m) => m.dim(),
            ModelSpec::General(g) => g.dim(),
        }
    }

    pub fn k_x(&self) -> &SymMatrix {
        match self {
            ModelSpec::Aligned(m) => m.k_x(),
            ModelSpec::General(g) => g.k_x(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Aligned(_) => "aligned",
            ModelSpec::General(_) => "general",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepPath {
    #[default]
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub from: SymMatrix,
    pub to: SymMatrix,
    pub steps: usize,
    #[serde(default)]
    pub path: SweepPath,
}

impl SweepSpec {
    /// `D(t) = (1−t)·from + t·to` at `t = k/(steps−1)`.
    pub fn points(&self) -> Vec<DistortionConstraint> {
        if self.steps == 1 {
            return vec![DistortionConstraint::new(self.from.clone())];
        }
        let last = (self.steps - 1) as f64;
        (0..self.steps)
            .map(|k| {
                let t = k as f64 / last;
                DistortionConstraint::new(&self.from.scale(1.0 - t) + &self.to.scale(t))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionSpec {
    Matrix(SymMatrix),
    Sweep(SweepSpec),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub distortion: DistortionSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub outputs: Outputs,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.solver
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let n = self.model.dim();
        let check = |m: &SymMatrix, what: &str| {
            if m.dim() != n {
                return Err(CliError::Config(format!(
                    "{what} has dimension {}, model has {n}",
                    m.dim()
                )));
            }
            Ok(())
        };
        match &self.distortion {
            DistortionSpec::Matrix(d) => check(d, "distortion")?,
            DistortionSpec::Sweep(s) => {
                check(&s.from, "sweep.from")?;
                check(&s.to, "sweep.to")?;
                if s.steps == 0 {
                    return Err(CliError::Config("sweep.steps must be at least 1".into()));
                }
            }
        }
        Ok(())
    }

    pub fn from_preset(name: &str) -> Result<Self, CliError> {
        let p = examples::preset(name).map_err(|e| CliError::Config(e.to_string()))?;
        let (m, d) = p.aligned().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(RunConfig {
            model: ModelSpec::Aligned(m),
            distortion: DistortionSpec::Matrix(d.d().clone()),
            solver: SolverOptions::default(),
            outputs: Outputs::default(),
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        warn_asymmetric(&value, "");
        let cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `arg` as a config file, or as a preset name if no such file exists.
    pub fn load(arg: &str) -> Result<Self, CliError> {
        let path = Path::new(arg);
        if path.exists() {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {arg}: {e}")))?;
            return Self::from_json_str(&text);
        }
        if PRESET_NAMES.contains(&arg) {
            return Self::from_preset(arg);
        }
        Err(CliError::Config(format!(
            "'{arg}' is neither a readable file nor a preset ({})",
            PRESET_NAMES.join(", ")
        )))
    }
}

fn warn_asymmetric(v: &Value, at: &str) {
    match v {
        Value::Object(map) => {
            if map.contains_key("dim") && map.contains_key("rows") {
                if let Ok(m) = serde_json::from_value::<MatrixJson>(v.clone()) {
                    if let Some(a) = m.asymmetry().filter(|&a| a > ASYMMETRY_WARN) {
                        warn!("matrix at '{at}' is asymmetric by {a:.3e}; using (A + A^T)/2");
                    }
                }
            }
            for (k, child) in map {
                warn_asymmetric(child, &format!("{at}/{k}"));
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                warn_asymmetric(child, &format!("{at}/{i}"));
            }
        }
        _ => {}
    }
}
