use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use heavyball::harness::config::{ExperimentConfig, OdeForm};
use heavyball::harness::output::{
    fmt_f64, sidecar_path, write_metadata, write_ode_csv, write_rates_csv, write_summary_csv, write_table,
    write_trap_csv, Metadata,
};
use heavyball::harness::runner::{
    clt_covariance, fit_rate, last_decade, mc_expected_error, with_pool, Algorithm, Quantity,
};
use heavyball::harness::trap::{init_grid, trap_experiment, TrapMethod, TrapSetup};
use heavyball::linalg::is_symmetric;
use heavyball::ode::{hbf_ode_integrate, memory_ode_integrate};
use heavyball::quad::{block_eigen, limit_cov_beta1_1d, limit_cov_beta_lt1, spectral_reduce};
use heavyball::schedules::{alpha_r, cr_estimate, memory_r};
use heavyball::shb::{Checkpoints, Spacing};
use heavyball::{Error, MemorySchedule, NoiseModel, Result, StepSchedule};
use nalgebra::DMatrix;
use serde_json::json;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "heavyball", version, about = "Stochastic heavy ball experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo estimate of E|X_n - x*|^2 and E|Y_n|^2 at checkpoints.
    Run(ConfigArgs),
    /// Like `run`, plus a log-log slope over the last decade of n.
    Rates(ConfigArgs),
    /// Empirical covariance of the rescaled iterate at n = horizon.
    Clt(ConfigArgs),
    /// Success rate of reaching the global minimizer from a grid of inits.
    Trap(ConfigArgs),
    /// Deterministic ODE trajectory.
    Ode(ConfigArgs),
    /// Limit covariance and drift spectrum for a quadratic.
    Analyze(AnalyzeArgs),
    /// Step sizes, memory and the c_r estimate along a schedule.
    Schedules(SchedulesArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output` from the config; stdout when neither is set.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// One-dimensional curvature.
    #[arg(long, conflicts_with = "matrix")]
    lambda: Option<f64>,
    /// Symmetric matrix, rows separated by `;`, entries by `,`.
    #[arg(long)]
    matrix: Option<String>,
    #[arg(long)]
    r: f64,
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma0: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MemoryArg {
    Exponential,
    Polynomial,
}

#[derive(Args)]
struct SchedulesArgs {
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    beta: f64,
    #[arg(long, value_enum, default_value = "exponential")]
    memory: MemoryArg,
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    #[arg(long, default_value_t = 1_000_000)]
    horizon: u64,
    #[arg(long, default_value_t = 30)]
    count: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_pool(move || dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_divergence() {
        EXIT_DIVERGENCE
    } else if e.is_config() || matches!(e, Error::Io { .. }) {
        EXIT_CONFIG
    } else {
        EXIT_FAILURE
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(a) => cmd_run(&a),
        Command::Rates(a) => cmd_rates(&a),
        Command::Clt(a) => cmd_clt(&a),
        Command::Trap(a) => cmd_trap(&a),
        Command::Ode(a) => cmd_ode(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Schedules(a) => cmd_schedules(&a),
    }
}

/// CSV destination plus the sidecar written next to it.
struct Sink {
    path: Option<PathBuf>,
}

impl Sink {
    fn new(flag: Option<&PathBuf>, config: Option<&PathBuf>) -> Self {
        Sink {
            path: flag.or(config).cloned(),
        }
    }

    fn emit(&self, meta: &Metadata, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        match &self.path {
            Some(p) => {
                let f = File::create(p).map_err(|source| io_err(p, source))?;
                let mut w = BufWriter::new(f);
                write(&mut w)?;
                w.flush().map_err(|source| io_err(p, source))?;
                write_metadata(&sidecar_path(p), meta)
            }
            None => {
                let stdout = io::stdout();
                let mut w = stdout.lock();
                write(&mut w)
            }
        }
    }
}

fn io_err(p: &Path, source: io::Error) -> Error {
    Error::Io {
        path: p.to_path_buf(),
        source,
    }
}

fn load(a: &ConfigArgs) -> Result<(ExperimentConfig, Sink)> {
    let cfg = ExperimentConfig::from_path(&a.config)?;
    let sink = Sink::new(a.output.as_ref(), cfg.output.as_ref());
    Ok((cfg, sink))
}

fn config_json(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null)
}

fn cmd_run(a: &ConfigArgs) -> Result<()> {
    let (cfg, sink) = load(a)?;
    let horizon = cfg.require_horizon()?;
    let problem = cfg.problem()?;
    let cps = cfg.checkpoints.build(horizon);
    let res = mc_expected_error(&problem, &cfg.init.x, cps.indices(), cfg.replicas, cfg.seed.master)?;
    let mut meta = Metadata::new("run", Some(cfg.seed.master), config_json(&cfg));
    meta.results = json!({
        "replicas": res.replicas,
        "diverged": res.diverged,
        "lyapunov_ab": res.lyapunov_ab,
    });
    sink.emit(&meta, |w| write_summary_csv(w, &res.rows))
}

fn cmd_rates(a: &ConfigArgs) -> Result<()> {
    let (cfg, sink) = load(a)?;
    let horizon = cfg.require_horizon()?;
    let problem = cfg.problem()?;
    let cps = cfg.checkpoints.build(horizon);
    let res = mc_expected_error(&problem, &cfg.init.x, cps.indices(), cfg.replicas, cfg.seed.master)?;
    let window = last_decade(horizon);
    let fit_x = fit_rate(&res.rows, window.clone(), Quantity::X)?;
    let fit_y = if res.rows.iter().all(|r| r.mse_y.is_some()) {
        Some(fit_rate(&res.rows, window.clone(), Quantity::Y)?)
    } else {
        None
    };
    eprintln!("slope of E|X_n - x*|^2: {:.4}", fit_x.slope);
    if let Some(f) = &fit_y {
        eprintln!("slope of E|Y_n|^2:      {:.4}", f.slope);
    }
    let mut meta = Metadata::new("rates", Some(cfg.seed.master), config_json(&cfg));
    meta.results = json!({
        "replicas": res.replicas,
        "diverged": res.diverged,
        "fit_window": [window.start(), window.end()],
        "fit_x": fit_x,
        "fit_y": fit_y,
    });
    sink.emit(&meta, |w| write_rates_csv(w, &res.rows, &fit_x, fit_y.as_ref()))
}

/// Limit covariance of `(X, Y)` when one is available in closed form.
fn predicted_covariance(cfg: &ExperimentConfig, problem: &heavyball::harness::Problem) -> Result<Option<DMatrix<f64>>> {
    let (Some(spec), Some(sigma0), Algorithm::Shb(MemorySchedule::Exponential { r })) = (
        problem.pot.quadratic_spec(),
        match problem.noise {
            NoiseModel::IsotropicGaussian { sigma0 } => Some(sigma0),
            _ => None,
        },
        problem.algorithm,
    ) else {
        return Ok(None);
    };
    let beta = cfg.step.beta;
    if beta < 1.0 {
        let dec = spectral_reduce(&spec.matrix)?;
        return Ok(Some(limit_cov_beta_lt1(&dec, r, sigma0).assembled()));
    }
    if beta == 1.0 && problem.pot.dim() == 1 {
        let lambda = spec.matrix[(0, 0)];
        let m = limit_cov_beta1_1d(lambda, r, cfg.step.gamma, sigma0)?;
        return Ok(Some(m.as_covariance().assembled()));
    }
    Ok(None)
}

fn cmd_clt(a: &ConfigArgs) -> Result<()> {
    let (cfg, sink) = load(a)?;
    let n = cfg.require_horizon()?;
    let problem = cfg.problem()?;
    let est = clt_covariance(&problem, &cfg.init.x, n, cfg.replicas, cfg.seed.master)?;
    let predicted = predicted_covariance(&cfg, &problem)?;
    let d2 = est.cov.nrows();
    let mut rows = Vec::with_capacity(d2 * d2);
    for i in 0..d2 {
        for j in 0..d2 {
            rows.push(vec![
                i.to_string(),
                j.to_string(),
                fmt_f64(est.cov[(i, j)]),
                predicted.as_ref().map(|p| fmt_f64(p[(i, j)])).unwrap_or_default(),
            ]);
        }
    }
    let mut meta = Metadata::new("clt", Some(cfg.seed.master), config_json(&cfg));
    meta.results = json!({
        "n": est.n,
        "replicas": est.replicas,
        "diverged": est.diverged,
        "coordinates": "rows and columns index (x_1..x_d, y_1..y_d), both divided by sqrt(gamma_n)",
    });
    sink.emit(&meta, |w| {
        write_table(w, &["row", "col", "empirical", "predicted"], &rows)
    })
}

fn cmd_trap(a: &ConfigArgs) -> Result<()> {
    let (cfg, sink) = load(a)?;
    let horizon = cfg.require_horizon()?;
    let trap = cfg
        .trap
        .as_ref()
        .ok_or_else(|| Error::Config("the trap subcommand needs a [trap] table".into()))?;
    if trap.algorithms.is_empty() {
        return Err(Error::Config("trap.algorithms is empty".into()));
    }
    let methods = trap
        .algorithms
        .iter()
        .map(|m| {
            let mem = m.memory.as_ref().or(cfg.memory.as_ref());
            Ok(TrapMethod {
                name: m.name.clone(),
                algorithm: ExperimentConfig::resolve_algorithm(m.algorithm, mem)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let setup = TrapSetup {
        pot: cfg.potential.build()?,
        sched: cfg.step.build()?,
        noise: cfg.noise.build()?,
        sigmas: trap.sigmas.clone(),
        inits: init_grid(trap.init_lo, trap.init_hi, trap.init_count),
        replicas: cfg.replicas,
        horizon,
        radius: trap.radius,
        master_seed: cfg.seed.master,
        methods,
    };
    let table = trap_experiment(&setup)?;
    for avg in &table.averages {
        eprintln!(
            "{:<16} sigma={:<6} success={:.3}",
            avg.algorithm, avg.sigma, avg.success_rate
        );
    }
    let mut meta = Metadata::new("trap", Some(cfg.seed.master), config_json(&cfg));
    meta.results = json!({
        "minimizer": table.minimizer,
        "critical_points": table.critical_points,
        "averages": table.averages,
    });
    sink.emit(&meta, |w| write_trap_csv(w, &table))
}

fn cmd_ode(a: &ConfigArgs) -> Result<()> {
    let (cfg, sink) = load(a)?;
    let ode = cfg
        .ode
        .as_ref()
        .ok_or_else(|| Error::Config("the ode subcommand needs an [ode] table".into()))?;
    let pot = cfg.potential.build()?;
    if cfg.init.x.len() != pot.dim() {
        return Err(Error::Config("init.x does not match the potential dimension".into()));
    }
    let v0 = ode.v0.clone().unwrap_or_else(|| vec![0.0; pot.dim()]);
    if v0.len() != pot.dim() {
        return Err(Error::Config("ode.v0 does not match the potential dimension".into()));
    }
    let traj = match ode.form {
        OdeForm::Hbf => {
            let damping = ode
                .damping
                .ok_or_else(|| Error::Config("ode.form = \"hbf\" needs ode.damping".into()))?
                .validated()?;
            hbf_ode_integrate(&pot, &damping, &cfg.init.x, &v0, ode.t0, ode.t_end, ode.dt)?
        }
        OdeForm::Memory => {
            let mem = cfg
                .memory
                .as_ref()
                .ok_or_else(|| Error::Config("ode.form = \"memory\" needs a [memory] table".into()))?;
            mem.build()?;
            memory_ode_integrate(&pot, &mem.continuous(), &cfg.init.x, &v0, ode.t0, ode.t_end, ode.dt)?
        }
    };
    let mut meta = Metadata::new("ode", None, config_json(&cfg));
    meta.results = json!({ "points": traj.len() });
    sink.emit(&meta, |w| write_ode_csv(w, &traj, ode.stride))
}

fn parse_matrix(s: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("bad matrix entry {v:?}: {e}")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let d = rows.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Config("--matrix must be square".into()));
    }
    let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
    if !is_symmetric(&m, 1e-12) {
        return Err(Error::Config("--matrix must be symmetric".into()));
    }
    Ok(m)
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let s = match (a.lambda, &a.matrix) {
        (Some(l), None) => DMatrix::from_element(1, 1, l),
        (None, Some(m)) => parse_matrix(m)?,
        _ => return Err(Error::Config("give exactly one of --lambda and --matrix".into())),
    };
    StepSchedule::new(a.gamma, a.beta)?;
    MemorySchedule::exponential(a.r)?;
    if !(a.sigma0 >= 0.0 && a.sigma0.is_finite()) {
        return Err(Error::Config(format!("--sigma0 must be >= 0, got {}", a.sigma0)));
    }
    let dec = spectral_reduce(&s)?;
    let lt1 = (a.beta < 1.0).then(|| limit_cov_beta_lt1(&dec, a.r, a.sigma0));
    let mut rows = Vec::new();
    for (i, &lambda) in dec.eigenvalues.iter().enumerate() {
        let eig = block_eigen(lambda, a.r);
        let (vx, vy, cxy) = match &lt1 {
            Some(_) => (
                a.sigma0 * a.sigma0 / (2.0 * lambda),
                a.r * a.sigma0 * a.sigma0 / 2.0,
                0.0,
            ),
            None => {
                let m = limit_cov_beta1_1d(lambda, a.r, a.gamma, a.sigma0)?;
                (m.var_x, m.var_y, m.cov_xy)
            }
        };
        rows.push(vec![
            i.to_string(),
            fmt_f64(lambda),
            fmt_f64(a.r),
            fmt_f64(a.gamma),
            fmt_f64(a.beta),
            fmt_f64(a.sigma0),
            fmt_f64(alpha_r(a.r, lambda)),
            fmt_f64(eig[0].re),
            fmt_f64(eig[0].im),
            fmt_f64(eig[1].re),
            fmt_f64(eig[1].im),
            fmt_f64(vx),
            fmt_f64(vy),
            fmt_f64(cxy),
        ]);
    }
    let header = [
        "direction",
        "lambda",
        "r",
        "gamma",
        "beta",
        "sigma0",
        "alpha_r",
        "eig1_re",
        "eig1_im",
        "eig2_re",
        "eig2_im",
        "var_x",
        "var_y",
        "cov_xy",
    ];
    let meta = Metadata::new(
        "analyze",
        None,
        json!({
            "matrix": s.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "r": a.r, "gamma": a.gamma, "beta": a.beta, "sigma0": a.sigma0,
            "basis": "one row per eigen-direction of the matrix, ascending eigenvalue",
        }),
    );
    Sink::new(a.output.as_ref(), None).emit(&meta, |w| write_table(w, &header, &rows))
}

fn cmd_schedules(a: &SchedulesArgs) -> Result<()> {
    let sched = StepSchedule::new(a.gamma, a.beta)?;
    let mem = match a.memory {
        MemoryArg::Exponential => MemorySchedule::exponential(a.r)?,
        MemoryArg::Polynomial => MemorySchedule::polynomial(a.r)?,
    };
    if a.horizon == 0 {
        return Err(Error::Config("--horizon must be >= 1".into()));
    }
    let cps = Checkpoints::new(a.horizon, a.count, Spacing::Log);
    let mut rows = Vec::with_capacity(cps.len());
    for &n in cps.indices() {
        rows.push(vec![
            n.to_string(),
            fmt_f64(sched.gamma(n)?),
            fmt_f64(sched.big_gamma(n)),
            fmt_f64(memory_r(&mem, &sched, n)),
            fmt_f64(cr_estimate(&mem, &sched, n)?),
        ]);
    }
    let meta = Metadata::new(
        "schedules",
        None,
        json!({
            "gamma": a.gamma, "beta": a.beta, "memory": mem, "horizon": a.horizon, "count": a.count,
            "c_r_limit": mem.c_r_limit(),
        }),
    );
    Sink::new(a.output.as_ref(), None).emit(&meta, |w| {
        write_table(w, &["n", "gamma", "big_gamma", "r", "c_r"], &rows)
    })
}
