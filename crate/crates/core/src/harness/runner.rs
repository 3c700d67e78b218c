//! Replica execution and Monte-Carlo aggregation.
//!
//! Replica `k` always draws from stream `(master_seed, k)`. Replicas run on a
//! rayon pool and are reduced in index order, so results do not depend on
//! the number of workers. `HEAVYBALL_THREADS` overrides the pool size.

use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{baseline_step, BaselineState, Variant};
use crate::error::{Error, Result};
use crate::noise::{NoiseModel, RngStream};
use crate::potentials::Potential;
use crate::schedules::{MemorySchedule, StepSchedule};
use crate::shb::{shb_step, ShbState};

use super::lyapunov::{lyapunov_ab, lyapunov_value};

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "HEAVYBALL_THREADS";

/// At most this fraction of replicas may diverge before a run fails.
pub const DIVERGENCE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Algorithm {
    Shb(MemorySchedule),
    Baseline(Variant),
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Shb(_) => "shb",
            Algorithm::Baseline(Variant::Sgd) => "sgd",
            Algorithm::Baseline(Variant::AvgSgd) => "avg_sgd",
            Algorithm::Baseline(Variant::Nagd) => "nagd",
        }
    }

    pub fn memory(&self) -> Option<&MemorySchedule> {
        match self {
            Algorithm::Shb(m) => Some(m),
            Algorithm::Baseline(_) => None,
        }
    }
}

/// Everything a replica needs besides its stream and starting point.
#[derive(Debug, Clone)]
pub struct Problem {
    pub pot: Potential,
    pub sched: StepSchedule,
    pub noise: NoiseModel,
    pub algorithm: Algorithm,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplicaState {
    Shb(ShbState),
    Baseline(BaselineState),
}

impl ReplicaState {
    pub fn n(&self) -> u64 {
        match self {
            ReplicaState::Shb(s) => s.n(),
            ReplicaState::Baseline(b) => b.n(),
        }
    }

    /// The point whose error is measured: `X_n`, or the running average for
    /// averaged SGD.
    pub fn output(&self) -> &[f64] {
        match self {
            ReplicaState::Shb(s) => s.x(),
            ReplicaState::Baseline(b) => b.output(),
        }
    }

    pub fn y(&self) -> Option<&[f64]> {
        match self {
            ReplicaState::Shb(s) => Some(s.y()),
            ReplicaState::Baseline(_) => None,
        }
    }
}

impl Problem {
    pub fn new(pot: Potential, sched: StepSchedule, noise: NoiseModel, algorithm: Algorithm) -> Self {
        Problem {
            pot,
            sched,
            noise,
            algorithm,
        }
    }

    pub fn start(&self, x0: &[f64]) -> ReplicaState {
        match self.algorithm {
            Algorithm::Shb(_) => ReplicaState::Shb(ShbState::new(x0.to_vec())),
            Algorithm::Baseline(v) => ReplicaState::Baseline(BaselineState::new(v, x0.to_vec())),
        }
    }

    #[inline]
    pub fn step(&self, state: &mut ReplicaState, rng: &mut RngStream) -> Result<()> {
        match (state, &self.algorithm) {
            (ReplicaState::Shb(s), Algorithm::Shb(mem)) => shb_step(s, &self.pot, &self.sched, mem, &self.noise, rng),
            (ReplicaState::Baseline(b), Algorithm::Baseline(_)) => {
                baseline_step(b, &self.pot, &self.sched, &self.noise, rng)
            }
            _ => unreachable!("replica state does not match the algorithm"),
        }
    }

    /// Runs until the replica reaches index `until`, calling `recorder` at
    /// each index in `checkpoints`.
    pub fn run<F>(
        &self,
        state: &mut ReplicaState,
        until: u64,
        rng: &mut RngStream,
        checkpoints: &[u64],
        mut recorder: F,
    ) -> Result<()>
    where
        F: FnMut(&ReplicaState),
    {
        let mut next = checkpoints.partition_point(|&c| c <= state.n());
        while state.n() < until {
            self.step(state, rng)?;
            if next < checkpoints.len() && checkpoints[next] == state.n() {
                recorder(state);
                next += 1;
            }
        }
        Ok(())
    }
}

/// Worker pool honoring [`THREADS_ENV`].
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

/// Runs `count` independent items in parallel and returns their results in
/// index order.
pub fn par_map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    with_pool(|| (0..count).into_par_iter().map(&f).collect())
}

fn check_divergent(diverged: usize, total: usize) -> Result<()> {
    let tolerance = (DIVERGENCE_TOLERANCE * total as f64).floor() as usize;
    if diverged > tolerance {
        return Err(Error::TooManyDivergent {
            diverged,
            total,
            tolerance,
        });
    }
    Ok(())
}

/// Per-checkpoint Monte-Carlo summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub n: u64,
    /// Mean of `‖X_n - x⋆‖²`.
    pub mse_x: f64,
    /// Mean of `‖Y_n‖²`; `None` for methods without a velocity.
    pub mse_y: Option<f64>,
    pub se_x: f64,
    pub se_y: Option<f64>,
    /// Mean Lyapunov value, when the diagnostics apply.
    pub mean_v: Option<f64>,
    pub replicas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McResult {
    pub rows: Vec<SummaryRow>,
    pub diverged: usize,
    pub replicas: usize,
    /// `(a, b)` used for `mean_v`, if any.
    pub lyapunov_ab: Option<(f64, f64)>,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: usize,
    sum: f64,
    sum2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum2 += v * v;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    /// Sample standard deviation over `√n`.
    fn se(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let m = self.mean();
        let var = ((self.sum2 - n * m * m) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// Per-checkpoint `(‖X - x⋆‖², ‖Y‖², V)` of one replica.
type Record = (f64, Option<f64>, Option<f64>);

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Estimates `E‖X_n - x⋆‖²` and `E‖Y_n‖²` at every checkpoint over
/// `replicas` independent runs from `x0`.
///
/// Divergent replicas are left out of the means; more than 1% of them is an
/// error.
pub fn mc_expected_error(
    problem: &Problem,
    x0: &[f64],
    checkpoints: &[u64],
    replicas: usize,
    master_seed: u64,
) -> Result<McResult> {
    let xstar = problem
        .pot
        .minimizer()
        .ok_or_else(|| Error::Precondition("potential has no known minimizer".into()))?
        .to_vec();
    let horizon = *checkpoints
        .last()
        .ok_or_else(|| Error::InvalidArgument("no checkpoints".into()))?;

    let ab = match problem.algorithm.memory() {
        Some(mem) => lyapunov_ab(&problem.pot, mem).ok(),
        None => None,
    };

    let per_replica: Vec<Result<Vec<Record>>> = par_map_indexed(replicas, |k| {
        let mut rng = RngStream::new(master_seed, k as u64);
        let mut st = problem.start(x0);
        let mut rec = Vec::with_capacity(checkpoints.len());
        problem.run(&mut st, horizon, &mut rng, checkpoints, |s| {
            let ex = sq_dist(s.output(), &xstar);
            let ey = s.y().map(|y| y.iter().map(|v| v * v).sum::<f64>());
            let v = match (s, ab, problem.algorithm.memory()) {
                (ReplicaState::Shb(sh), Some((a, b)), Some(mem)) => {
                    let n = sh.n();
                    let prev_gamma = sh.big_gamma() - problem.sched.gamma_at(n);
                    let r_prev = mem.value(n - 1, prev_gamma, &problem.sched);
                    lyapunov_value(&problem.pot, a, b, r_prev, sh.x(), sh.y()).ok()
                }
                _ => None,
            };
            rec.push((ex, ey, v));
        })?;
        Ok(rec)
    });

    let mut diverged = 0;
    let mut mx = vec![Moments::default(); checkpoints.len()];
    let mut my = vec![Moments::default(); checkpoints.len()];
    let mut mv = vec![Moments::default(); checkpoints.len()];
    let mut has_y = false;
    let mut has_v = true;
    for r in per_replica {
        match r {
            Ok(rec) => {
                for (i, (ex, ey, v)) in rec.into_iter().enumerate() {
                    mx[i].push(ex);
                    if let Some(ey) = ey {
                        has_y = true;
                        my[i].push(ey);
                    }
                    match v {
                        Some(v) => mv[i].push(v),
                        None => has_v = false,
                    }
                }
            }
            Err(e) if e.is_divergence() => diverged += 1,
            Err(e) => return Err(e),
        }
    }
    check_divergent(diverged, replicas)?;
    let kept = replicas - diverged;
    let has_v = has_v && ab.is_some() && kept > 0;
    let rows = checkpoints
        .iter()
        .enumerate()
        .map(|(i, &n)| SummaryRow {
            n,
            mse_x: mx[i].mean(),
            mse_y: has_y.then(|| my[i].mean()),
            se_x: mx[i].se(),
            se_y: has_y.then(|| my[i].se()),
            mean_v: has_v.then(|| mv[i].mean()),
            replicas: kept,
        })
        .collect();
    Ok(McResult {
        rows,
        diverged,
        replicas,
        lyapunov_ab: ab,
    })
}

/// Least-squares fit of `log(value) = intercept + slope · log(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits a power law to `(n, value)` pairs.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 5 points, got {}",
            points.len()
        )));
    }
    if let Some(&(n, v)) = points.iter().find(|&&(n, v)| !(v > 0.0) || !(n > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs positive values, got {v} at n = {n}"
        )));
    }
    let m = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        points: points.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    X,
    Y,
}

/// Log-log slope of the mean error over checkpoints with `n` in `window`.
pub fn fit_rate(rows: &[SummaryRow], window: RangeInclusive<u64>, which: Quantity) -> Result<RateFit> {
    let mut pts = Vec::new();
    for r in rows.iter().filter(|r| window.contains(&r.n)) {
        let v = match which {
            Quantity::X => r.mse_x,
            Quantity::Y => r
                .mse_y
                .ok_or_else(|| Error::InvalidArgument("rows carry no Y means".into()))?,
        };
        pts.push((r.n as f64, v));
    }
    fit_power_law(&pts)
}

/// `[n / 10, n]`, the default fitting window.
pub fn last_decade(horizon: u64) -> RangeInclusive<u64> {
    (horizon / 10).max(1)..=horizon
}

/// Sample mean and covariance of `(X_n, Y_n) / √γ_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltEstimate {
    pub n: u64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub replicas: usize,
    pub diverged: usize,
}

impl CltEstimate {
    pub fn var_x(&self, i: usize) -> f64 {
        self.cov[(i, i)]
    }

    pub fn var_y(&self, i: usize) -> f64 {
        let d = self.mean.len() / 2;
        self.cov[(d + i, d + i)]
    }

    pub fn cov_xy(&self, i: usize) -> f64 {
        let d = self.mean.len() / 2;
        self.cov[(i, d + i)]
    }
}

/// Empirical covariance of the rescaled SHB iterate at index `n`.
pub fn clt_covariance(problem: &Problem, x0: &[f64], n: u64, replicas: usize, master_seed: u64) -> Result<CltEstimate> {
    if !matches!(problem.algorithm, Algorithm::Shb(_)) {
        return Err(Error::InvalidArgument(
            "the CLT estimate is defined for SHB only".into(),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let gn = problem.sched.gamma_at(n);
    if !(gn <= 0.1 * problem.sched.gamma_at(1)) {
        return Err(Error::Precondition(format!(
            "n = {n} is too small: γ_n = {gn} exceeds 0.1 γ_1"
        )));
    }
    if replicas < 2 {
        return Err(Error::InvalidArgument("need at least 2 replicas".into()));
    }
    let scale = 1.0 / gn.sqrt();
    let per: Vec<Result<Vec<f64>>> = par_map_indexed(replicas, |k| {
        let mut rng = RngStream::new(master_seed, k as u64);
        let mut st = problem.start(x0);
        problem.run(&mut st, n, &mut rng, &[], |_| {})?;
        let y = st.y().expect("SHB state has a velocity");
        Ok(st.output().iter().chain(y).map(|v| v * scale).collect())
    });
    let d2 = 2 * problem.pot.dim();
    let mut samples = Vec::with_capacity(replicas);
    let mut diverged = 0;
    for r in per {
        match r {
            Ok(z) => samples.push(z),
            Err(e) if e.is_divergence() => diverged += 1,
            Err(e) => return Err(e),
        }
    }
    check_divergent(diverged, replicas)?;
    let m = samples.len() as f64;
    let mut mean = DVector::zeros(d2);
    for z in &samples {
        for i in 0..d2 {
            mean[i] += z[i];
        }
    }
    mean /= m;
    let mut cov = DMatrix::zeros(d2, d2);
    for z in &samples {
        for i in 0..d2 {
            let di = z[i] - mean[i];
            for j in 0..d2 {
                cov[(i, j)] += di * (z[j] - mean[j]);
            }
        }
    }
    cov /= m - 1.0;
    Ok(CltEstimate {
        n,
        mean,
        cov,
        replicas: samples.len(),
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_problem(noise: NoiseModel) -> Problem {
        Problem::new(
            Potential::quadratic_1d(1.0).unwrap(),
            StepSchedule::new(1.0, 0.75).unwrap(),
            noise,
            Algorithm::Shb(MemorySchedule::exponential(5.0).unwrap()),
        )
    }

    #[test]
    fn exact_power_law_fit() {
        let pts: Vec<(f64, f64)> = (1..=10)
            .map(|k| {
                let n = 10f64.powi(k);
                (n, 3.0 * n.powf(-0.75))
            })
            .collect();
        let f = fit_power_law(&pts).unwrap();
        assert!((f.slope + 0.75).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
        let flat: Vec<(f64, f64)> = (1..=6).map(|k| (k as f64, 2.0)).collect();
        assert!(fit_power_law(&flat).unwrap().slope.abs() < 1e-15);
        assert!(fit_power_law(&pts[..4]).is_err());
        let mut bad = pts.clone();
        bad[2].1 = 0.0;
        assert!(fit_power_law(&bad).is_err());
    }

    #[test]
    fn noiseless_error_vanishes() {
        let p = quad_problem(NoiseModel::Zero);
        let res = mc_expected_error(&p, &[1.0], &[10, 1000, 10_000], 3, 1).unwrap();
        assert!(res.rows.last().unwrap().mse_x <= 1e-6);
        assert_eq!(res.diverged, 0);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let p = quad_problem(NoiseModel::isotropic(1.0).unwrap());
        let cps = [10, 100, 1000];
        let a = mc_expected_error(&p, &[1.0], &cps, 16, 5).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| mc_expected_error(&p, &[1.0], &cps, 16, 5).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_accounting() {
        let p = Problem::new(
            Potential::quadratic_1d(1.0).unwrap(),
            StepSchedule::new(10.0, 1.0).unwrap(),
            NoiseModel::Zero,
            Algorithm::Shb(MemorySchedule::exponential(10.0).unwrap()),
        );
        let err = mc_expected_error(&p, &[1.0], &[10_000], 10, 1).unwrap_err();
        assert!(matches!(
            err,
            Error::TooManyDivergent {
                diverged: 10,
                total: 10,
                ..
            }
        ));
    }

    #[test]
    fn clt_precondition() {
        let p = quad_problem(NoiseModel::isotropic(1.0).unwrap());
        assert!(clt_covariance(&p, &[0.0], 2, 10, 1).is_err());
        let e = clt_covariance(&p, &[0.0], 1000, 50, 1).unwrap();
        assert_eq!(e.cov.nrows(), 2);
        assert!((e.cov[(0, 1)] - e.cov[(1, 0)]).abs() < 1e-15);
    }
}
