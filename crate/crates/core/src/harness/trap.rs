//! Trap-escape study: the fraction of runs ending within a radius of the
//! global minimizer after `T` steps, over a deterministic grid of starting
//! points.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::{NoiseModel, RngStream};
use crate::potentials::{critical_points_1d, global_minimum, Potential};
use crate::schedules::StepSchedule;

use super::runner::{par_map_indexed, Algorithm, Problem};

/// Root search used to locate the global minimizer.
pub const ROOT_GRID: usize = 4001;
pub const ROOT_TOL: f64 = 1e-12;
/// Half-width of the root search interval.
pub const ROOT_BOX: f64 = 20.0;

#[derive(Debug, Clone)]
pub struct TrapMethod {
    pub name: String,
    pub algorithm: Algorithm,
}

#[derive(Debug, Clone)]
pub struct TrapSetup {
    pub pot: Potential,
    pub sched: StepSchedule,
    /// Noise family; its scale is replaced by each entry of `sigmas`.
    pub noise: NoiseModel,
    pub sigmas: Vec<f64>,
    pub inits: Vec<f64>,
    pub replicas: usize,
    pub horizon: u64,
    pub radius: f64,
    pub master_seed: u64,
    pub methods: Vec<TrapMethod>,
}

/// `count` evenly spaced points of `[lo, hi]`, endpoints included.
pub fn init_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrapRow {
    pub algorithm: String,
    pub sigma: f64,
    pub init: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrapAverage {
    pub algorithm: String,
    pub sigma: f64,
    pub success_rate: f64,
    /// Replicas that hit the divergence threshold, over all inits.
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrapTable {
    pub minimizer: f64,
    pub critical_points: Vec<f64>,
    pub rows: Vec<TrapRow>,
    pub averages: Vec<TrapAverage>,
}

impl TrapTable {
    pub fn average(&self, algorithm: &str, sigma: f64) -> Option<f64> {
        self.averages
            .iter()
            .find(|a| a.algorithm == algorithm && a.sigma == sigma)
            .map(|a| a.success_rate)
    }
}

/// Global minimizer of a one-dimensional potential, from its critical points.
pub fn locate_minimizer(pot: &Potential) -> Result<(f64, Vec<f64>)> {
    if pot.dim() != 1 {
        return Err(Error::InvalidArgument(
            "trap study needs a one-dimensional potential".into(),
        ));
    }
    let roots = critical_points_1d(pot, -ROOT_BOX, ROOT_BOX, ROOT_GRID, ROOT_TOL);
    let xstar = global_minimum(pot, &roots)
        .ok_or_else(|| Error::Precondition("no critical point found in the search box".into()))?;
    Ok((xstar, roots))
}

/// Runs every `(method, σ, init, replica)` combination. Replica `k` at init
/// index `i` uses stream `i · replicas + k`, shared across methods and noise
/// levels. Divergent replicas count as failures.
pub fn trap_experiment(setup: &TrapSetup) -> Result<TrapTable> {
    let (xstar, roots) = locate_minimizer(&setup.pot)?;
    let reps = setup.replicas;
    if reps == 0 || setup.inits.is_empty() {
        return Err(Error::InvalidArgument("need at least one init and one replica".into()));
    }
    let mut rows = Vec::new();
    let mut averages = Vec::new();
    for method in &setup.methods {
        for &sigma in &setup.sigmas {
            let noise = setup.noise.with_scale(sigma)?;
            let problem = Problem::new(setup.pot.clone(), setup.sched, noise, method.algorithm);
            let n_items = setup.inits.len() * reps;
            // 0 = failure, 1 = success, 2 = diverged
            let outcomes: Vec<u8> = par_map_indexed(n_items, |item| {
                let init = setup.inits[item / reps];
                let mut rng = RngStream::new(setup.master_seed, item as u64);
                let mut st = problem.start(&[init]);
                match problem.run(&mut st, setup.horizon, &mut rng, &[], |_| {}) {
                    Ok(()) => ((st.output()[0] - xstar).abs() <= setup.radius) as u8,
                    Err(_) => 2,
                }
            });
            let mut total = 0.0;
            let mut diverged = 0;
            for (i, &init) in setup.inits.iter().enumerate() {
                let chunk = &outcomes[i * reps..(i + 1) * reps];
                diverged += chunk.iter().filter(|&&o| o == 2).count();
                let rate = chunk.iter().filter(|&&o| o == 1).count() as f64 / reps as f64;
                total += rate;
                rows.push(TrapRow {
                    algorithm: method.name.clone(),
                    sigma,
                    init,
                    success_rate: rate,
                });
            }
            averages.push(TrapAverage {
                algorithm: method.name.clone(),
                sigma,
                success_rate: total / setup.inits.len() as f64,
                diverged,
            });
        }
    }
    Ok(TrapTable {
        minimizer: xstar,
        critical_points: roots,
        rows,
        averages,
    })
}
