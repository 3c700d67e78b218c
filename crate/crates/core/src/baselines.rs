//! First-order comparison methods: Robbins–Monro SGD, SGD with Cesàro
//! (Polyak–Ruppert) averaging, and a stochastic Nesterov accelerated gradient.
//!
//! All three consume the noise stream exactly like [`crate::shb::shb_step`]:
//! one increment of `d` normals per step.

use serde::Serialize;

use crate::error::Result;
use crate::noise::{NoiseModel, RngStream};
use crate::potentials::Potential;
use crate::schedules::StepSchedule;
use crate::shb::check_finite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sgd,
    AvgSgd,
    Nagd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    variant: Variant,
    n: u64,
    x: Vec<f64>,
    /// Running average for `AvgSgd`, previous iterate for `Nagd`.
    aux: Vec<f64>,
    grad: Vec<f64>,
    incr: Vec<f64>,
    probe: Vec<f64>,
}

impl BaselineState {
    /// Starting state. SGD variants start at `n = 0`; NAGD starts at `n = 1`
    /// with `x_1 = x_0`, so its first update has zero momentum.
    pub fn new(variant: Variant, x0: Vec<f64>) -> Self {
        let d = x0.len();
        let n = if variant == Variant::Nagd { 1 } else { 0 };
        BaselineState {
            variant,
            n,
            aux: x0.clone(),
            x: x0,
            grad: vec![0.0; d],
            incr: vec![0.0; d],
            probe: vec![0.0; d],
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Current iterate `x_n`.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// The method's output: the running average for `AvgSgd`, `x_n`
    /// otherwise.
    pub fn output(&self) -> &[f64] {
        match self.variant {
            Variant::AvgSgd => &self.aux,
            _ => &self.x,
        }
    }

    /// Running average `x̄_n` (only meaningful for `AvgSgd`).
    pub fn average(&self) -> Option<&[f64]> {
        (self.variant == Variant::AvgSgd).then_some(&self.aux[..])
    }

    /// Increment drawn by the most recent step.
    pub fn last_increment(&self) -> &[f64] {
        &self.incr
    }

    /// Previous iterate `x_{n-1}` (only meaningful for `Nagd`).
    pub fn previous(&self) -> Option<&[f64]> {
        (self.variant == Variant::Nagd).then_some(&self.aux[..])
    }
}

#[inline]
fn sgd_update(
    state: &mut BaselineState,
    pot: &Potential,
    sched: &StepSchedule,
    noise: &NoiseModel,
    rng: &mut RngStream,
) {
    let g = sched.gamma_at(state.n + 1);
    pot.grad_into(&state.x, &mut state.grad);
    noise.sample_into(pot, &state.x, rng, &mut state.incr);
    for i in 0..state.x.len() {
        state.x[i] -= g * (state.grad[i] + state.incr[i]);
    }
    state.n += 1;
}

/// `x_{n+1} = x_n - γ_{n+1} (∇f(x_n) + ΔM_{n+1})`.
pub fn sgd_step(
    state: &mut BaselineState,
    pot: &Potential,
    sched: &StepSchedule,
    noise: &NoiseModel,
    rng: &mut RngStream,
) -> Result<()> {
    sgd_update(state, pot, sched, noise, rng);
    check_finite(state.n, &[&state.x])
}

/// SGD step followed by `x̄_{n+1} = x̄_n + (x_{n+1} - x̄_n) / (n + 1)`, so
/// that `x̄_n` is the mean of `x_1, …, x_n`.
pub fn avg_sgd_step(
    state: &mut BaselineState,
    pot: &Potential,
    sched: &StepSchedule,
    noise: &NoiseModel,
    rng: &mut RngStream,
) -> Result<()> {
    sgd_update(state, pot, sched, noise, rng);
    let w = 1.0 / state.n as f64;
    for i in 0..state.x.len() {
        state.aux[i] += (state.x[i] - state.aux[i]) * w;
    }
    check_finite(state.n, &[&state.x])
}

/// `v_n = x_n + ((n-1)/(n+2)) (x_n - x_{n-1})`,
/// `x_{n+1} = v_n - γ_{n+1} (∇f(v_n) + ΔM_{n+1})`.
pub fn nagd_step(
    state: &mut BaselineState,
    pot: &Potential,
    sched: &StepSchedule,
    noise: &NoiseModel,
    rng: &mut RngStream,
) -> Result<()> {
    let n = state.n as f64;
    let momentum = (n - 1.0) / (n + 2.0);
    for i in 0..state.x.len() {
        state.probe[i] = state.x[i] + momentum * (state.x[i] - state.aux[i]);
    }
    let g = sched.gamma_at(state.n + 1);
    pot.grad_into(&state.probe, &mut state.grad);
    noise.sample_into(pot, &state.probe, rng, &mut state.incr);
    for i in 0..state.x.len() {
        state.aux[i] = state.x[i];
        state.x[i] = state.probe[i] - g * (state.grad[i] + state.incr[i]);
    }
    state.n += 1;
    check_finite(state.n, &[&state.x])
}

/// Dispatches on the state's variant.
#[inline]
pub fn baseline_step(
    state: &mut BaselineState,
    pot: &Potential,
    sched: &StepSchedule,
    noise: &NoiseModel,
    rng: &mut RngStream,
) -> Result<()> {
    match state.variant {
        Variant::Sgd => sgd_step(state, pot, sched, noise, rng),
        Variant::AvgSgd => avg_sgd_step(state, pot, sched, noise, rng),
        Variant::Nagd => nagd_step(state, pot, sched, noise, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> Potential {
        Potential::quadratic_1d(1.0).unwrap()
    }

    fn zero_rng() -> RngStream {
        RngStream::new(0, 0)
    }

    #[test]
    fn sgd_examples() {
        let p = quad();
        let half = StepSchedule::constant(0.5).unwrap();
        let mut s = BaselineState::new(Variant::Sgd, vec![1.0]);
        sgd_step(&mut s, &p, &half, &NoiseModel::Zero, &mut zero_rng()).unwrap();
        assert_eq!(s.x(), &[0.5]);

        let one = StepSchedule::constant(1.0).unwrap();
        let mut s = BaselineState::new(Variant::Sgd, vec![1.0]);
        sgd_step(&mut s, &p, &one, &NoiseModel::Zero, &mut zero_rng()).unwrap();
        assert_eq!(s.x(), &[0.0]);

        let harmonic = StepSchedule::new(1.0, 1.0).unwrap();
        let mut s = BaselineState::new(Variant::Sgd, vec![1.0]);
        for _ in 0..5 {
            sgd_step(&mut s, &p, &harmonic, &NoiseModel::Zero, &mut zero_rng()).unwrap();
            assert_eq!(s.x(), &[0.0]);
        }
    }

    #[test]
    fn average_of_halving_iterates() {
        let p = quad();
        let half = StepSchedule::constant(0.5).unwrap();
        let mut s = BaselineState::new(Variant::AvgSgd, vec![2.0]);
        for _ in 0..3 {
            avg_sgd_step(&mut s, &p, &half, &NoiseModel::Zero, &mut zero_rng()).unwrap();
        }
        // iterates 1, 0.5, 0.25
        assert!((s.average().unwrap()[0] - 0.583_333_333_333_333_3).abs() < 1e-15);
        assert_eq!(s.x(), &[0.25]);
    }

    #[test]
    fn average_matches_direct_mean() {
        let p = quad();
        let sched = StepSchedule::new(1.0, 0.5).unwrap();
        let noise = NoiseModel::isotropic(1.0).unwrap();
        let mut rng = RngStream::new(3, 1);
        let mut s = BaselineState::new(Variant::AvgSgd, vec![4.0]);
        let mut total = 0.0;
        for k in 1..=1000 {
            avg_sgd_step(&mut s, &p, &sched, &noise, &mut rng).unwrap();
            total += s.x()[0];
            let direct = total / k as f64;
            assert!((s.average().unwrap()[0] - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn nagd_hand_iteration() {
        let p = quad();
        let half = StepSchedule::constant(0.5).unwrap();
        let mut s = BaselineState::new(Variant::Nagd, vec![1.0]);
        assert_eq!(s.n(), 1);
        nagd_step(&mut s, &p, &half, &NoiseModel::Zero, &mut zero_rng()).unwrap();
        assert_eq!(s.x(), &[0.5]);
        assert_eq!(s.previous().unwrap(), &[1.0]);
        nagd_step(&mut s, &p, &half, &NoiseModel::Zero, &mut zero_rng()).unwrap();
        assert_eq!(s.x(), &[0.1875]);
    }

    #[test]
    fn nagd_first_step_is_sgd() {
        let p = Potential::double_well(1.0 / 40.0, -0.2).unwrap();
        let sched = StepSchedule::new(1.0, 1.0).unwrap();
        let noise = NoiseModel::isotropic(1.0).unwrap();
        let mut a = BaselineState::new(Variant::Nagd, vec![3.0]);
        nagd_step(&mut a, &p, &sched, &noise, &mut RngStream::new(8, 0)).unwrap();
        // same γ_2 and the same first normal
        let mut rng = RngStream::new(8, 0);
        let xi = rng.standard_normal();
        let g2 = 0.5;
        let expected = 3.0 - g2 * (p.grad(&[3.0])[0] + xi);
        assert!((a.x()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn constant_iterates_keep_average() {
        // started at the minimizer without noise, every iterate is 0
        let p = quad();
        let sched = StepSchedule::new(1.0, 0.5).unwrap();
        let mut s = BaselineState::new(Variant::AvgSgd, vec![0.0]);
        for _ in 0..10 {
            avg_sgd_step(&mut s, &p, &sched, &NoiseModel::Zero, &mut zero_rng()).unwrap();
        }
        assert_eq!(s.average().unwrap(), &[0.0]);
    }
}
