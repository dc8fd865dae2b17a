//! Command drivers. Every command writes `manifest.json` next to its data
//! files; the manifest holds the resolved configuration, so rerunning it
//! reproduces the outputs byte for byte.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use super::config::{ConfigError, DtSpec, RunConfig};
use super::verify::{self, Report, Suite, LAMBDAS};
use crate::algebra::membership_residual;
use crate::flows::{self, FlowError, OutputRecord, StepOptions};
use crate::gauge;
use crate::orbit::OrbitState;
use crate::reductions::{self, SpinField};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Run(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Fixed column order of `observables.csv`.
pub const OBSERVABLE_COLUMNS: [&str; 10] = ["t", "E", "E21", "E22", "E23", "E2", "Etilde", "H", "spectrum_dev", "m_residual"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Completed,
    Aborted,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub program: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: RunConfig,
    pub dt_auto: bool,
    pub stability_bound: f64,
    pub status: Status,
    pub error: Option<String>,
    pub pass: bool,
    pub files: Vec<String>,
    pub summary: Value,
}

/// Result of a command: where it wrote and whether its checks passed.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub pass: bool,
    pub manifest: Manifest,
}

fn prepare(cfg: &RunConfig) -> Result<PathBuf, RunError> {
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let f = File::create(path).map_err(io(path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(io(path))?;
    w.flush().map_err(io(path))
}

#[allow(clippy::too_many_arguments)]
fn finish(cfg: &RunConfig, command: &str, dir: &Path, mut files: Vec<String>, status: Status, error: Option<String>, pass: bool, summary: Value) -> Result<Outcome, RunError> {
    files.insert(0, "manifest.json".into());
    let manifest = Manifest {
        program: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: command.into(),
        config: cfg.resolved(),
        dt_auto: matches!(cfg.dt, DtSpec::Named(_)),
        stability_bound: cfg.stability_bound(),
        status,
        error,
        pass,
        files,
        summary,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(Outcome {
        out_dir: dir.to_path_buf(),
        pass,
        manifest,
    })
}

/// Shortest round-trip decimal, in exponent form outside [1e-4, 1e6).
fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e6).contains(&a) || !a.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// Largest distance of φ from the algebra over the grid.
pub fn m_residual(os: &OrbitState) -> f64 {
    os.phi.values().iter().map(|m| membership_residual(&os.spec, m)).fold(0.0, f64::max)
}

fn observable_row(os: &OrbitState, rec: &OutputRecord) -> [String; 10] {
    let e = &rec.energy;
    [rec.time, e.e, e.e21, e.e22, e.e23, e.e2, e.etilde, e.h, rec.spectrum_deviation, m_residual(os)].map(num)
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let dir = prepare(cfg)?;
    let os = cfg.orbit_initial()?;
    let csv_path = dir.join("observables.csv");
    let mut csv = csv::Writer::from_path(&csv_path)?;
    csv.write_record(OBSERVABLE_COLUMNS)?;
    let mut files = vec!["observables.csv".to_string()];
    let opts = StepOptions {
        form: cfg.generator,
        allow_unstable: false,
    };
    let mut index = 0usize;
    let result = flows::evolve_with(&os, &cfg.params, cfg.kind, cfg.t_end, cfg.resolved_dt(), &cfg.output_times, &opts, |s, rec| {
        let name = format!("snapshot_{index:04}.json");
        let snap = s.snapshot();
        write_json(&dir.join(&name), &snap).map_err(|e| FlowError::BadTimes(e.to_string()))?;
        csv.write_record(observable_row(s, rec)).map_err(|e| FlowError::BadTimes(e.to_string()))?;
        files.push(name);
        index += 1;
        Ok(())
    });
    csv.flush().map_err(io(&csv_path))?;
    match result {
        Ok(traj) => {
            let summary = json!({
                "steps": traj.steps,
                "snapshots": traj.snapshots.len(),
                "relative_hamiltonian_drift": traj.relative_drift(),
                "max_spectrum_deviation": traj.max_spectrum_deviation(),
            });
            finish(cfg, "simulate", &dir, files, Status::Completed, None, true, summary)
        }
        Err(e) => {
            let summary = match &e {
                FlowError::NonFinite { step, time, .. } => json!({ "failed_step": step, "failed_time": time }),
                _ => Value::Null,
            };
            finish(cfg, "simulate", &dir, files, Status::Aborted, Some(e.to_string()), false, summary)
        }
    }
}

pub fn verify(cfg: &RunConfig, suites: &[Suite]) -> Result<(Outcome, Vec<Report>), RunError> {
    let dir = prepare(cfg)?;
    let reports: Vec<Report> = suites.iter().map(|&s| verify::run_suite(cfg, s)).collect();
    let pass = reports.iter().all(|r| r.pass);
    write_json(&dir.join("verify.json"), &reports)?;
    let summary = json!(reports.iter().map(|r| (r.suite.name(), r.pass)).collect::<std::collections::BTreeMap<_, _>>());
    let out = finish(cfg, "verify", &dir, vec!["verify.json".into()], Status::Completed, None, pass, summary)?;
    Ok((out, reports))
}

pub fn gauge_compare(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let dir = prepare(cfg)?;
    let fs = cfg.framed_initial()?;
    let dt = cfg.resolved_dt().min(0.5 * gauge::potential_stability_bound(&cfg.grid, &cfg.params));
    match gauge::gauge_compare(&fs, &cfg.params, cfg.t_end, dt, &cfg.output_times) {
        Ok(rows) => {
            let path = dir.join("gauge_compare.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["t", "max_abs_diff", "interior_linf"])?;
            for r in &rows {
                w.write_record([r.t, r.max_abs_diff, r.interior_linf].map(num))?;
            }
            w.flush().map_err(io(&path))?;
            let worst = rows.iter().map(|r| r.interior_linf).fold(0.0, f64::max);
            let pass = worst <= 1e-4;
            let summary = json!({ "dt": dt, "max_interior_linf": worst, "tolerance": 1e-4 });
            finish(cfg, "gauge-compare", &dir, vec!["gauge_compare.csv".into()], Status::Completed, None, pass, summary)
        }
        Err(e) => finish(cfg, "gauge-compare", &dir, vec![], Status::Aborted, Some(e.to_string()), false, Value::Null),
    }
}

fn write_reduced(path: &Path, matrix: &OrbitState, vector: &SpinField) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "x", "phi00_re", "phi00_im", "phi01_re", "phi01_im", "phi10_re", "phi10_im", "phi11_re", "phi11_im", "s1", "s2", "s3", "v1", "v2", "v3",
    ])?;
    let s = reductions::phi_to_s(matrix).map_err(|e| RunError::Run(e.to_string()))?;
    let grid = matrix.grid();
    for j in 0..grid.len() {
        let m = matrix.phi.at(j);
        let mut row = vec![grid.x(j)];
        for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            row.push(m[(a, b)].re);
            row.push(m[(a, b)].im);
        }
        row.extend(s.at(j));
        row.extend(vector.at(j));
        w.write_record(row.iter().map(|v| num(*v)))?;
    }
    w.flush().map_err(io(path))
}

pub fn reduce(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let dir = prepare(cfg)?;
    let os = cfg.orbit_initial()?;
    let sf = reductions::phi_to_s(&os).map_err(|e| RunError::Run(e.to_string()))?;
    let bound = flows::stability_bound(&cfg.grid, &cfg.params, cfg.kind, flows::GeneratorForm::Simplified);
    let dt = cfg.resolved_dt().min(0.5 * bound);
    let samples = cfg.output_times.len().max(4);
    let rep = match reductions::cross_check_matrix_vs_vector(&sf, &cfg.params, cfg.kind, cfg.t_end, dt, samples) {
        Ok(r) => r,
        Err(e) => return finish(cfg, "reduce", &dir, vec![], Status::Aborted, Some(e.to_string()), false, Value::Null),
    };
    let mut files = Vec::new();
    write_reduced(&dir.join("reduce_initial.csv"), &os, &sf)?;
    files.push("reduce_initial.csv".to_string());
    let last = reductions::s_to_phi(&rep.matrix_final).map_err(|e| RunError::Run(e.to_string()))?;
    write_reduced(&dir.join("reduce_final.csv"), &last, &rep.vector_final)?;
    files.push("reduce_final.csv".to_string());
    let path = dir.join("cross_check.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["t", "deviation"])?;
    for r in &rep.rows {
        w.write_record([r.t, r.deviation].map(num))?;
    }
    w.flush().map_err(io(&path))?;
    files.push("cross_check.csv".into());
    let pass = rep.max_deviation <= 1e-6;
    let summary = json!({ "dt": dt, "max_deviation": rep.max_deviation, "tolerance": 1e-6 });
    finish(cfg, "reduce", &dir, files, Status::Completed, None, pass, summary)
}

pub fn curvature_residual(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let dir = prepare(cfg)?;
    let os = cfg.orbit_initial()?;
    let traj = match verify::residual_trajectory(&os, &cfg.params) {
        Ok(t) => t,
        Err(e) => return finish(cfg, "curvature-residual", &dir, vec![], Status::Aborted, Some(e), false, Value::Null),
    };
    let fake = verify::frozen(&traj);
    let path = dir.join("curvature.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["t", "lambda", "residual", "frozen_residual"])?;
    let mut worst: f64 = 0.0;
    for lam in LAMBDAS {
        let r = gauge::curvature_residual(&traj, &cfg.params, lam).map_err(|e| RunError::Run(e.to_string()))?;
        let f = gauge::curvature_residual(&fake, &cfg.params, lam).map_err(|e| RunError::Run(e.to_string()))?;
        for ((t, a), (_, b)) in r.iter().zip(&f) {
            worst = worst.max(*a);
            w.write_record([*t, lam, *a, *b].map(num))?;
        }
    }
    w.flush().map_err(io(&path))?;
    let pass = worst <= 1e-3;
    let summary = json!({ "max_residual": worst, "tolerance": 1e-3 });
    finish(cfg, "curvature-residual", &dir, vec!["curvature.csv".into()], Status::Completed, None, pass, summary)
}
