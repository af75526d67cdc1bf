use serde::Serialize;

use secleak_core::leakopt::KktCertificate;
use secleak_core::matkernel::SymMatrix;
use secleak_core::model::AuxiliaryPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Nats,
    Bits,
}

impl Unit {
    pub fn from_flag(bits: bool) -> Self {
        if bits {
            Unit::Bits
        } else {
            Unit::Nats
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Unit::Nats => "nats",
            Unit::Bits => "bits",
        }
    }

    pub fn convert(self, nats: f64) -> f64 {
        match self {
            Unit::Nats => nats,
            Unit::Bits => nats / std::f64::consts::LN_2,
        }
    }
}

/// Full result of one distortion point, information quantities in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub model_kind: &'static str,
    pub d: SymMatrix,
    pub r_min: f64,
    pub ie_min: f64,
    pub certified: bool,
    pub converged: bool,
    pub kkt_max_residual: f64,
    pub lbar: Option<f64>,
    pub pair: AuxiliaryPair,
    pub certificate: KktCertificate,
    pub sigma_y_tilde: Option<SymMatrix>,
    pub property_residuals: Option<std::collections::BTreeMap<String, f64>>,
}

impl Evaluation {
    pub fn lbar_gap(&self) -> Option<f64> {
        self.lbar.map(|l| self.ie_min - l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationJson<'a> {
    pub model: &'static str,
    pub unit: &'static str,
    pub distortion: &'a SymMatrix,
    pub r_min: f64,
    pub ie_min: f64,
    pub certified: bool,
    pub converged: bool,
    pub kkt_max_residual: f64,
    pub lbar: Option<f64>,
    pub lbar_gap: Option<f64>,
    pub pair: &'a AuxiliaryPair,
    pub certificate: &'a KktCertificate,
    #[serde(rename = "Sigma_Y_tilde")]
    pub sigma_y_tilde: Option<&'a SymMatrix>,
    pub enhancement_residuals: Option<&'a std::collections::BTreeMap<String, f64>>,
}

impl Evaluation {
    pub fn to_json(&self, unit: Unit) -> EvaluationJson<'_> {
        EvaluationJson {
            model: self.model_kind,
            unit: unit.name(),
            distortion: &self.d,
            r_min: unit.convert(self.r_min),
            ie_min: unit.convert(self.ie_min),
            certified: self.certified,
            converged: self.converged,
            kkt_max_residual: self.kkt_max_residual,
            lbar: self.lbar.map(|v| unit.convert(v)),
            lbar_gap: self.lbar_gap().map(|v| unit.convert(v)),
            pair: &self.pair,
            certificate: &self.certificate,
            sigma_y_tilde: self.sigma_y_tilde.as_ref(),
            enhancement_residuals: self.property_residuals.as_ref(),
        }
    }
}

/// One line of a sweep report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub index: usize,
    pub trace_d: f64,
    pub logdet_d: f64,
    pub r_min: f64,
    pub ie_min: f64,
    pub certified: bool,
    pub kkt_residual: f64,
    pub lbar_gap: Option<f64>,
}

impl ReportRow {
    pub fn from_evaluation(index: usize, e: &Evaluation) -> Self {
        ReportRow {
            index,
            trace_d: e.d.trace(),
            logdet_d: logdet_or_neg_inf(&e.d),
            r_min: e.r_min,
            ie_min: e.ie_min,
            certified: e.certified,
            kkt_residual: e.kkt_max_residual,
            lbar_gap: e.lbar_gap(),
        }
    }

    pub fn failed(index: usize, d: &SymMatrix) -> Self {
        ReportRow {
            index,
            trace_d: d.trace(),
            logdet_d: logdet_or_neg_inf(d),
            r_min: f64::NAN,
            ie_min: f64::NAN,
            certified: false,
            kkt_residual: f64::NAN,
            lbar_gap: None,
        }
    }
}

fn logdet_or_neg_inf(d: &SymMatrix) -> f64 {
    secleak_core::matkernel::logdet(d).unwrap_or(f64::NEG_INFINITY)
}

pub fn csv_header(unit: Unit) -> Vec<String> {
    let u = unit.name();
    vec![
        "index".into(),
        "trace_D".into(),
        "logdet_D".into(),
        format!("R_min_{u}"),
        format!("Ie_min_{u}"),
        "certified".into(),
        "kkt_residual".into(),
        "lbar_gap".into(),
    ]
}

pub fn render_csv(rows: &[ReportRow], unit: Unit) -> Result<String, csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(csv_header(unit))?;
    for r in rows {
        w.write_record([
            r.index.to_string(),
            r.trace_d.to_string(),
            r.logdet_d.to_string(),
            unit.convert(r.r_min).to_string(),
            unit.convert(r.ie_min).to_string(),
            r.certified.to_string(),
            r.kkt_residual.to_string(),
            r.lbar_gap
                .map(|g| unit.convert(g).to_string())
                .unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
