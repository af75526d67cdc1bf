use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use secleak_core::auxgauss;
use secleak_core::enhance;
use secleak_core::examples::{self, ExampleRow};
use secleak_core::genmodel::{self, GeneralModel, RectJson};
use secleak_core::leakopt::{self, SolverOptions};
use secleak_core::model::{self, AlignedModel, DistortionConstraint, Instance};
use secleak_core::verify;

use crate::config::{DistortionSpec, ModelSpec, RunConfig};
use crate::report::{render_csv, Evaluation, ReportRow, Unit};
use crate::CliError;

/// Flags shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Flags {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub tol: Option<f64>,
    pub bits: bool,
    pub out_json: Option<PathBuf>,
    pub out_csv: Option<PathBuf>,
}

impl Flags {
    fn unit(&self) -> Unit {
        Unit::from_flag(self.bits)
    }

    fn cert_tol(&self) -> f64 {
        self.tol.unwrap_or(1e-6)
    }

    fn solver(&self, cfg: &RunConfig) -> SolverOptions {
        let mut o = cfg.solver.clone();
        if let Some(s) = self.seed {
            o.seed = s;
        }
        o
    }
}

fn core_err(e: secleak_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

/// Rejects a distortion matrix outside `0 ≺ D ⪯ K_{X|Y}`.
pub fn check_point(model: &ModelSpec, d: &DistortionConstraint) -> Result<(), CliError> {
    let r = match model {
        ModelSpec::Aligned(m) => Instance::bind(m, d).and_then(|_| {
            if d.d().min_eigenvalue() <= 0.0 {
                Err(secleak_core::Error::InfeasibleDistortion(
                    "D must be positive definite".into(),
                ))
            } else {
                Ok(())
            }
        }),
        ModelSpec::General(g) => genmodel::check_distortion(g, d).map(|_| ()),
    };
    r.map_err(core_err)
}

fn evaluate_aligned(
    m: &AlignedModel,
    d: &DistortionConstraint,
    opts: &SolverOptions,
    tol: f64,
) -> secleak_core::Result<Evaluation> {
    let r_min = model::rate_lower_bound(m, d)?;
    let sol = leakopt::minimize_leakage(m, d, opts)?;
    let e = enhance::enhance(m, d, &sol)?;
    let lbar = enhance::closed_form_lbar(m, d, &e)?;
    let certified = leakopt::certify(m, d, &sol, tol)
        && e.max_property_residual() < tol
        && enhance::verify_chain(m, d, &sol, &e, tol);
    Ok(Evaluation {
        model_kind: "aligned",
        d: d.d().clone(),
        r_min,
        ie_min: sol.value,
        certified,
        converged: sol.converged,
        kkt_max_residual: sol.certificate.max_residual(),
        lbar: Some(lbar),
        sigma_y_tilde: Some(e.sigma_y_tilde.clone()),
        property_residuals: Some(e.property_report.clone()),
        pair: sol.pair.clone(),
        certificate: sol.certificate.clone(),
    })
}

fn evaluate_general(
    g: &GeneralModel,
    d: &DistortionConstraint,
    opts: &SolverOptions,
    tol: f64,
) -> secleak_core::Result<Evaluation> {
    let b = genmodel::general_bounds(g, d, opts)?;
    let kkt = b.solution.certificate.max_residual();
    Ok(Evaluation {
        model_kind: "general",
        d: d.d().clone(),
        r_min: b.r_min,
        ie_min: b.ie_min,
        certified: kkt < tol && b.pair.validate(g.k_x()).is_ok(),
        converged: b.solution.converged,
        kkt_max_residual: kkt,
        lbar: None,
        sigma_y_tilde: None,
        property_residuals: None,
        pair: b.pair,
        certificate: b.solution.certificate,
    })
}

pub fn evaluate_point(
    model: &ModelSpec,
    d: &DistortionConstraint,
    opts: &SolverOptions,
    tol: f64,
) -> secleak_core::Result<Evaluation> {
    match model {
        ModelSpec::Aligned(m) => evaluate_aligned(m, d, opts, tol),
        ModelSpec::General(g) => evaluate_general(g, d, opts, tol),
    }
}

fn single_distortion(cfg: &RunConfig) -> Result<DistortionConstraint, CliError> {
    match &cfg.distortion {
        DistortionSpec::Matrix(d) => Ok(DistortionConstraint::new(d.clone())),
        DistortionSpec::Sweep(_) => Err(CliError::Config(
            "this command needs a single distortion matrix; use `sweep` for a sweep spec".into(),
        )),
    }
}

pub fn cmd_evaluate(config: &str, flags: &Flags) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let d = single_distortion(&cfg)?;
    check_point(&cfg.model, &d)?;
    let opts = flags.solver(&cfg);
    let ev = evaluate_point(&cfg.model, &d, &opts, flags.cert_tol()).map_err(core_err)?;
    let text = to_json(&ev.to_json(flags.unit()));
    print!("{text}");
    if let Some(p) = flags.out_json.as_ref().or(cfg.outputs.json_path.as_ref()) {
        write_file(p, &text)?;
    }
    if ev.certified {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "solution not certified (max KKT residual {:.3e})",
            ev.kkt_max_residual
        )))
    }
}

/// Rows of a sweep, computed in parallel and returned in index order.
pub fn sweep_rows(cfg: &RunConfig, flags: &Flags) -> Result<Vec<ReportRow>, CliError> {
    let DistortionSpec::Sweep(spec) = &cfg.distortion else {
        return Err(CliError::Config("config has no sweep spec".into()));
    };
    check_point(&cfg.model, &DistortionConstraint::new(spec.from.clone()))
        .map_err(|e| CliError::Config(format!("sweep.from: {e}")))?;
    check_point(&cfg.model, &DistortionConstraint::new(spec.to.clone()))
        .map_err(|e| CliError::Config(format!("sweep.to: {e}")))?;
    let opts = flags.solver(cfg);
    let tol = flags.cert_tol();
    let points = spec.points();
    Ok(points
        .par_iter()
        .enumerate()
        .map(|(i, d)| match evaluate_point(&cfg.model, d, &opts, tol) {
            Ok(ev) => ReportRow::from_evaluation(i, &ev),
            Err(e) => {
                log::warn!("sweep row {i} failed: {e}");
                ReportRow::failed(i, d.d())
            }
        })
        .collect())
}

pub fn cmd_sweep(config: &str, flags: &Flags) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let rows = sweep_rows(&cfg, flags)?;
    let text = render_csv(&rows, flags.unit()).map_err(|e| CliError::Io(e.to_string()))?;
    match flags.out_csv.as_ref().or(cfg.outputs.csv_path.as_ref()) {
        Some(p) => write_file(p, &text)?,
        None => print!("{text}"),
    }
    if let Some(p) = flags.out_json.as_ref().or(cfg.outputs.json_path.as_ref()) {
        write_file(p, &to_json(&rows))?;
    }
    let failed = rows.iter().filter(|r| !r.certified).count();
    info!("sweep finished: {} rows, {failed} uncertified", rows.len());
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "{failed} of {} sweep rows not certified",
            rows.len()
        )))
    }
}

pub fn cmd_verify(flags: &Flags) -> Result<(), CliError> {
    let seed = flags.seed.unwrap_or(0);
    let trials = flags.trials.unwrap_or(100);
    if trials == 0 {
        println!("no-op: zero trials requested, no suites run");
        return Ok(());
    }
    let outcomes = verify::run_all(seed, trials, flags.tol);
    for o in &outcomes {
        println!(
            "{} {:<24} max_residual={:.3e} tol={:.1e} trials={}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.max_residual,
            o.tolerance,
            o.trials
        );
    }
    if let Some(p) = &flags.out_json {
        write_file(p, &to_json(&outcomes))?;
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::VerificationFailed(format!(
            "{failed} of {} suites failed",
            outcomes.len()
        )))
    }
}

pub fn render_examples(rows: &[ExampleRow], unit: Unit) -> String {
    let u = unit.name();
    let mut out = format!(
        "{:<10} {:<12} {:>12} {:>14} {}\n",
        "example",
        "functional",
        format!("value_{u}"),
        format!("gap_vs_min_{u}"),
        "gap>0"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<10} {:<12} {:>12.5} {:>14.5} {}\n",
            r.example,
            r.functional,
            unit.convert(r.value_nats),
            unit.convert(r.gap_vs_min_nats),
            if r.strictly_positive { "yes" } else { "no" }
        ));
    }
    out
}

#[derive(Serialize)]
struct ExampleJson<'a> {
    unit: &'static str,
    rows: Vec<ExampleJsonRow<'a>>,
}

#[derive(Serialize)]
struct ExampleJsonRow<'a> {
    example: &'a str,
    functional: &'a str,
    value: f64,
    gap_vs_min: f64,
    strictly_positive: bool,
}

pub fn cmd_examples(name: &str, flags: &Flags) -> Result<(), CliError> {
    let rows = examples::example_rows(name).map_err(core_err)?;
    let unit = flags.unit();
    print!("{}", render_examples(&rows, unit));
    let twin = ExampleJson {
        unit: unit.name(),
        rows: rows
            .iter()
            .map(|r| ExampleJsonRow {
                example: &r.example,
                functional: &r.functional,
                value: unit.convert(r.value_nats),
                gap_vs_min: unit.convert(r.gap_vs_min_nats),
                strictly_positive: r.strictly_positive,
            })
            .collect(),
    };
    let path = flags
        .out_json
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("examples-{name}.json")));
    write_file(&path, &to_json(&twin))
}

#[derive(Serialize)]
struct Realization {
    model: &'static str,
    #[serde(rename = "A_V")]
    a_v: RectJson,
    #[serde(rename = "A_U")]
    a_u: RectJson,
    #[serde(rename = "A_UV")]
    a_uv: RectJson,
    #[serde(rename = "Sigma_tilde_N")]
    sigma_tilde_n: RectJson,
    #[serde(rename = "W")]
    w: RectJson,
    lambda_v: Vec<f64>,
    lambda_u: Vec<f64>,
    pair: secleak_core::AuxiliaryPair,
    k_xv_residual: f64,
    k_xu_residual: f64,
    markov_residual: f64,
}

pub fn cmd_construct(config: &str, flags: &Flags) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let d = single_distortion(&cfg)?;
    check_point(&cfg.model, &d)?;
    let opts = flags.solver(&cfg);
    let ev = evaluate_point(&cfg.model, &d, &opts, flags.cert_tol()).map_err(core_err)?;
    let k_x = cfg.model.k_x();
    let r = auxgauss::construct(k_x, &ev.pair).map_err(core_err)?;
    let (kv, ku) = auxgauss::verify_conditional_covariances(k_x, &r).map_err(core_err)?;
    let out = Realization {
        model: cfg.model.kind(),
        a_v: RectJson::from_matrix(&r.a_v),
        a_u: RectJson::from_matrix(&r.a_u),
        a_uv: RectJson::from_matrix(&r.a_uv),
        sigma_tilde_n: RectJson::from_matrix(r.sigma_tilde_n.as_matrix()),
        w: RectJson::from_matrix(&r.w),
        lambda_v: r.lambda_v.iter().copied().collect(),
        lambda_u: r.lambda_u.iter().copied().collect(),
        k_xv_residual: (&kv - &ev.pair.k_xv).frobenius_norm(),
        k_xu_residual: (&ku - &ev.pair.k_xu).frobenius_norm(),
        markov_residual: auxgauss::verify_markov(k_x, &r).map_err(core_err)?,
        pair: ev.pair,
    };
    let text = to_json(&out);
    print!("{text}");
    if let Some(p) = flags.out_json.as_ref().or(cfg.outputs.json_path.as_ref()) {
        write_file(p, &text)?;
    }
    Ok(())
}
