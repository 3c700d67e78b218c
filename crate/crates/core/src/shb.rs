//! The stochastic Heavy Ball recursion
//!
//! ```text
//! X_{n+1} = X_n - γ_{n+1} Y_n
//! Y_{n+1} = Y_n + γ_{n+1} r_n (∇f(X_n) - Y_n) + γ_{n+1} r_n ΔM_{n+1}
//! ```
//!
//! together with checkpointed runs and the normalized views `Y_n / √r_n`
//! and `Z_n / √γ_n`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::{NoiseModel, RngStream};
use crate::potentials::Potential;
use crate::schedules::{KahanSum, MemorySchedule, StepSchedule};

/// A run aborts once `‖x‖` or `‖y‖` exceeds this value.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Default number of checkpoints per run.
pub const DEFAULT_CHECKPOINTS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct ShbState {
    n: u64,
    x: Vec<f64>,
    y: Vec<f64>,
    big_gamma: KahanSum,
    grad: Vec<f64>,
    incr: Vec<f64>,
}

impl ShbState {
    /// State at `n = 0` with `Y_0 = 0`.
    pub fn new(x0: Vec<f64>) -> Self {
        let d = x0.len();
        Self::with_velocity(x0, vec![0.0; d])
    }

    pub fn with_velocity(x0: Vec<f64>, y0: Vec<f64>) -> Self {
        assert_eq!(x0.len(), y0.len(), "x and y must have the same dimension");
        let d = x0.len();
        ShbState {
            n: 0,
            x: x0,
            y: y0,
            big_gamma: KahanSum::default(),
            grad: vec![0.0; d],
            incr: vec![0.0; d],
        }
    }

    /// State at an arbitrary index `n`, with `Γ_n` computed from `sched`.
    pub fn at(n: u64, x: Vec<f64>, y: Vec<f64>, sched: &StepSchedule) -> Self {
        let mut s = Self::with_velocity(x, y);
        s.n = n;
        for k in 1..=n {
            s.big_gamma.add(sched.gamma_at(k));
        }
        s
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// `Γ_n`, accumulated one step at a time.
    pub fn big_gamma(&self) -> f64 {
        self.big_gamma.value()
    }

    /// `ΔM_n` drawn by the most recent step (zeros before the first one).
    pub fn last_increment(&self) -> &[f64] {
        &self.incr
    }

    /// `r_n` for the current index.
    pub fn memory(&self, mem: &MemorySchedule, sched: &StepSchedule) -> f64 {
        mem.value(self.n, self.big_gamma.value(), sched)
    }
}

/// Fails once a squared norm exceeds the threshold squared or is NaN.
#[inline]
pub(crate) fn check_finite(step: u64, vs: &[&[f64]]) -> Result<()> {
    for v in vs {
        let sq: f64 = v.iter().map(|a| a * a).sum();
        if !(sq <= DIVERGENCE_THRESHOLD * DIVERGENCE_THRESHOLD) {
            return Err(Error::Divergence {
                step,
                threshold: DIVERGENCE_THRESHOLD,
            });
        }
    }
    Ok(())
}

/// Advances `state` from `n` to `n + 1`. The gradient is evaluated once, at
/// `X_n`.
#[inline]
pub fn shb_step(
    state: &mut ShbState,
    pot: &Potential,
    sched: &StepSchedule,
    mem: &MemorySchedule,
    noise: &NoiseModel,
    rng: &mut RngStream,
) -> Result<()> {
    let r = mem.value(state.n, state.big_gamma.value(), sched);
    let g = sched.gamma_at(state.n + 1);
    pot.grad_into(&state.x, &mut state.grad);
    noise.sample_into(pot, &state.x, rng, &mut state.incr);
    let gr = g * r;
    for i in 0..state.x.len() {
        let y = state.y[i];
        state.x[i] -= g * y;
        state.y[i] = y + gr * (state.grad[i] - y) + gr * state.incr[i];
    }
    state.n += 1;
    state.big_gamma.add(g);
    check_finite(state.n, &[&state.x, &state.y])
}

/// Checkpoint spacing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Log,
    Linear,
}

/// Sorted, de-duplicated step indices in `[1, horizon]` that always include
/// `horizon`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoints(Vec<u64>);

impl Checkpoints {
    pub fn new(horizon: u64, count: usize, spacing: Spacing) -> Self {
        if horizon == 0 || count == 0 {
            return Checkpoints(Vec::new());
        }
        let mut v: Vec<u64> = match spacing {
            Spacing::Log => {
                let top = (horizon as f64).ln();
                (0..count)
                    .map(|k| {
                        let t = if count == 1 { 1.0 } else { k as f64 / (count - 1) as f64 };
                        ((top * t).exp().round() as u64).clamp(1, horizon)
                    })
                    .collect()
            }
            Spacing::Linear => (1..=count as u64)
                .map(|k| ((horizon as u128 * k as u128) / count as u128) as u64)
                .map(|n| n.max(1))
                .collect(),
        };
        v.push(horizon);
        v.sort_unstable();
        v.dedup();
        Checkpoints(v)
    }

    pub fn log(horizon: u64, count: usize) -> Self {
        Self::new(horizon, count, Spacing::Log)
    }

    pub fn from_indices(mut v: Vec<u64>) -> Self {
        v.retain(|&n| n > 0);
        v.sort_unstable();
        v.dedup();
        Checkpoints(v)
    }

    pub fn indices(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Applies `horizon` steps. `recorder(n, x, y)` is called after every step
/// whose new index appears in `checkpoints`.
#[allow(clippy::too_many_arguments)]
pub fn shb_run<F>(
    state: &mut ShbState,
    horizon: u64,
    pot: &Potential,
    sched: &StepSchedule,
    mem: &MemorySchedule,
    noise: &NoiseModel,
    rng: &mut RngStream,
    checkpoints: &[u64],
    mut recorder: F,
) -> Result<()>
where
    F: FnMut(u64, &[f64], &[f64]),
{
    let end = state.n + horizon;
    let mut next = checkpoints.partition_point(|&c| c <= state.n);
    while state.n < end {
        shb_step(state, pot, sched, mem, noise, rng)?;
        if next < checkpoints.len() && checkpoints[next] == state.n {
            recorder(state.n, &state.x, &state.y);
            next += 1;
        }
    }
    Ok(())
}

/// `(X_n, Y_n / √r_n)`.
pub fn speed_normalized(state: &ShbState, mem: &MemorySchedule, sched: &StepSchedule) -> Result<(Vec<f64>, Vec<f64>)> {
    let r = state.memory(mem, sched);
    if !(r > 0.0) {
        return Err(Error::Precondition(format!("r_n must be > 0, got {r}")));
    }
    let s = r.sqrt();
    Ok((state.x.clone(), state.y.iter().map(|v| v / s).collect()))
}

/// `(X_n / √γ_n, Y_n / √γ_n)`.
pub fn rescaled(state: &ShbState, sched: &StepSchedule) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = sched.gamma(state.n)?;
    let s = g.sqrt();
    Ok((
        state.x.iter().map(|v| v / s).collect(),
        state.y.iter().map(|v| v / s).collect(),
    ))
}
