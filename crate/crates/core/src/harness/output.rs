//! CSV tables and their JSON metadata sidecars.
//!
//! Floats are written with 17 significant digits and `.` as the decimal
//! separator; every table starts with a header row.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ode::Trajectory;

use super::runner::{RateFit, SummaryRow};
use super::trap::TrapTable;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Modelling conventions recorded with every run.
pub fn conventions() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        ("r0", "polynomial memory uses r_0 = r / gamma_1"),
        (
            "state_scaled_noise",
            "per-coordinate scale sigma * max(|1 + f(x)|, 0.1)",
        ),
        ("divergence", "a replica stops once |x| or |y| exceeds 1e12"),
        (
            "divergence_tolerance",
            "runs fail when more than 1% of replicas diverge",
        ),
        ("nagd_start", "NAGD starts at n = 1 with x_1 = x_0"),
        (
            "avg_sgd_output",
            "averaged SGD is scored on the running mean of x_1..x_n",
        ),
        ("trap_inits", "deterministic evenly spaced grid of starting points"),
        (
            "trap_minimizer",
            "global minimizer taken from the computed critical points",
        ),
        ("streams", "replica k uses the ChaCha8 stream (master_seed, k)"),
    ])
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub master_seed: Option<u64>,
    pub config: serde_json::Value,
    pub conventions: BTreeMap<&'static str, &'static str>,
    pub results: serde_json::Value,
}

impl Metadata {
    pub fn new(subcommand: &str, master_seed: Option<u64>, config: serde_json::Value) -> Self {
        Metadata {
            tool: "heavyball",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            master_seed,
            config,
            conventions: conventions(),
            results: serde_json::Value::Null,
        }
    }
}

/// `out.csv` → `out.meta.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn write_metadata(path: &Path, meta: &Metadata) -> Result<()> {
    let text = serde_json::to_string_pretty(meta)?;
    std::fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

/// `n,replicas,mse_x,mse_y,se_x,se_y,mean_v`.
pub fn write_summary_csv<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["n", "replicas", "mse_x", "mse_y", "se_x", "se_y", "mean_v"])?;
    for r in rows {
        out.write_record([
            r.n.to_string(),
            r.replicas.to_string(),
            fmt_f64(r.mse_x),
            fmt_opt(r.mse_y),
            fmt_f64(r.se_x),
            fmt_opt(r.se_y),
            fmt_opt(r.mean_v),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `n,mse_x,mse_y,se_x,se_y`, followed by a footer row whose first field is
/// `slope` and which holds the fitted slopes of `mse_x` and `mse_y`.
pub fn write_rates_csv<W: Write>(w: W, rows: &[SummaryRow], fit_x: &RateFit, fit_y: Option<&RateFit>) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["n", "mse_x", "mse_y", "se_x", "se_y"])?;
    for r in rows {
        out.write_record([
            r.n.to_string(),
            fmt_f64(r.mse_x),
            fmt_opt(r.mse_y),
            fmt_f64(r.se_x),
            fmt_opt(r.se_y),
        ])?;
    }
    out.write_record([
        "slope".to_string(),
        fmt_f64(fit_x.slope),
        fmt_opt(fit_y.map(|f| f.slope)),
        String::new(),
        String::new(),
    ])?;
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `algorithm,sigma,init,success_rate`; init-averaged rows carry `mean` in
/// the `init` column.
pub fn write_trap_csv<W: Write>(w: W, table: &TrapTable) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["algorithm", "sigma", "init", "success_rate"])?;
    for r in &table.rows {
        out.write_record([
            r.algorithm.clone(),
            fmt_f64(r.sigma),
            fmt_f64(r.init),
            fmt_f64(r.success_rate),
        ])?;
    }
    for a in &table.averages {
        out.write_record([
            a.algorithm.clone(),
            fmt_f64(a.sigma),
            "mean".to_string(),
            fmt_f64(a.success_rate),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `t,x,v` for one-dimensional trajectories; `t,x1..xd,v1..vd` otherwise.
pub fn write_ode_csv<W: Write>(w: W, traj: &Trajectory, stride: usize) -> Result<()> {
    let mut out = writer(w);
    let d = traj.x.first().map_or(1, Vec::len);
    let mut header = vec!["t".to_string()];
    if d == 1 {
        header.push("x".into());
        header.push("v".into());
    } else {
        header.extend((1..=d).map(|i| format!("x{i}")));
        header.extend((1..=d).map(|i| format!("v{i}")));
    }
    out.write_record(&header)?;
    let stride = stride.max(1);
    let last = traj.len().saturating_sub(1);
    for k in (0..traj.len()).filter(|&k| k % stride == 0 || k == last) {
        let mut rec = vec![fmt_f64(traj.t[k])];
        rec.extend(traj.x[k].iter().map(|&v| fmt_f64(v)));
        rec.extend(traj.w[k].iter().map(|&v| fmt_f64(v)));
        out.write_record(&rec)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Generic table writer for already formatted records.
pub fn write_table<W: Write>(w: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(header)?;
    for r in rows {
        out.write_record(r)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}
