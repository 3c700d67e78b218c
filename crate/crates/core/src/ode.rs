//! Deterministic reference dynamics, integrated with classical RK4:
//!
//! * the heavy-ball ODE `ẍ + γ_t ẋ + ∇f(x) = 0`, as the system
//!   `ẋ = v, v̇ = -γ_t v - ∇f(x)`;
//! * its memory form `ẋ = -y, ẏ = r_t (∇f(x) - y)` with `r_t = r` or `r / t`.
//!
//! Under the time change `τ(s) = s² / (4(α + 1))` the memory form with
//! `r_t = (α + 1)/t` becomes the heavy-ball ODE with damping `(2α + 1)/s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::Potential;
use crate::shb::DIVERGENCE_THRESHOLD;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DampingFamily {
    /// `γ_t = γ̄`. `γ̄ = 0` gives the undamped oscillator.
    Constant { gamma_bar: f64 },
    /// `γ_t = r / t` with `r > 1`.
    Vanishing { r: f64 },
}

impl DampingFamily {
    pub fn constant(gamma_bar: f64) -> Result<Self> {
        if !(gamma_bar >= 0.0) || !gamma_bar.is_finite() {
            return Err(Error::InvalidArgument(format!("damping must be >= 0, got {gamma_bar}")));
        }
        Ok(DampingFamily::Constant { gamma_bar })
    }

    pub fn vanishing(r: f64) -> Result<Self> {
        if !(r > 1.0) || !r.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "vanishing damping needs r > 1, got {r}"
            )));
        }
        Ok(DampingFamily::Vanishing { r })
    }

    /// Re-checks a value that did not go through the constructors.
    pub fn validated(self) -> Result<Self> {
        match self {
            DampingFamily::Constant { gamma_bar } => Self::constant(gamma_bar),
            DampingFamily::Vanishing { r } => Self::vanishing(r),
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        match *self {
            DampingFamily::Constant { gamma_bar } => gamma_bar,
            DampingFamily::Vanishing { r } => r / t,
        }
    }
}

/// Continuous-time memory coefficient `r_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContinuousMemory {
    Exponential {
        r: f64,
    },
    /// `r_t = r / t`.
    Polynomial {
        r: f64,
    },
}

impl ContinuousMemory {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            ContinuousMemory::Exponential { r } => r,
            ContinuousMemory::Polynomial { r } => r / t,
        }
    }
}

/// Memory kernels of the integro-differential form and their time changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeKernel {
    /// `k(t) = λ e^{λt}`, `h(t) = e^{λt}`.
    Exponential { lambda: f64 },
    /// `k(t) = t^{α+1}`, `h(t) = (α + 1) t^α`.
    Polynomial { alpha: f64 },
}

impl TimeKernel {
    /// Damping of the time-changed trajectory: `√λ` or `(2α + 1)/s`.
    pub fn damping(&self) -> Result<DampingFamily> {
        match *self {
            TimeKernel::Exponential { lambda } => DampingFamily::constant(lambda.sqrt()),
            TimeKernel::Polynomial { alpha } => DampingFamily::vanishing(2.0 * alpha + 1.0),
        }
    }

    /// Memory coefficient of the polynomial kernel, `r_t = (α + 1)/t`.
    pub fn polynomial_memory(alpha: f64) -> ContinuousMemory {
        ContinuousMemory::Polynomial { r: alpha + 1.0 }
    }

    /// `τ'(s)`.
    pub fn tau_prime(&self, s: f64) -> f64 {
        match *self {
            TimeKernel::Exponential { lambda } => lambda.sqrt(),
            TimeKernel::Polynomial { alpha } => s / (2.0 * (alpha + 1.0)),
        }
    }
}

/// `√λ s` for the exponential kernel, `s² / (4(α + 1))` for the polynomial one.
pub fn time_change_tau(kernel: &TimeKernel, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::InvalidArgument(format!("time must be >= 0, got {s}")));
    }
    Ok(match *kernel {
        TimeKernel::Exponential { lambda } => lambda.sqrt() * s,
        TimeKernel::Polynomial { alpha } => s * s / (4.0 * (alpha + 1.0)),
    })
}

/// Samples `(t_k, x_k, w_k)` on a uniform grid. `w` is `ẋ` for the heavy-ball
/// ODE and `y` for the memory form.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn last(&self) -> (f64, &[f64], &[f64]) {
        let k = self.t.len() - 1;
        (self.t[k], &self.x[k], &self.w[k])
    }

    /// Cubic Hermite interpolation of `x` at time `t`, given that
    /// `dx/dt = dir · w`.
    pub fn x_at(&self, t: f64, dir: f64) -> Vec<f64> {
        let n = self.t.len();
        let t0 = self.t[0];
        let h = if n > 1 { self.t[1] - self.t[0] } else { 1.0 };
        let k = (((t - t0) / h).floor().max(0.0) as usize).min(n.saturating_sub(2));
        let (ta, tb) = (self.t[k], self.t[k + 1]);
        let h = tb - ta;
        let u = (t - ta) / h;
        let (h00, h10, h01, h11) = (
            2.0 * u * u * u - 3.0 * u * u + 1.0,
            u * u * u - 2.0 * u * u + u,
            -2.0 * u * u * u + 3.0 * u * u,
            u * u * u - u * u,
        );
        (0..self.x[k].len())
            .map(|i| {
                h00 * self.x[k][i]
                    + h10 * h * dir * self.w[k][i]
                    + h01 * self.x[k + 1][i]
                    + h11 * h * dir * self.w[k + 1][i]
            })
            .collect()
    }
}

fn grid(t0: f64, t_end: f64, dt: f64) -> Result<(usize, f64)> {
    if !(dt > 0.0) || !(t_end >= t0) {
        return Err(Error::InvalidArgument(format!(
            "need dt > 0 and t_end >= t0, got dt = {dt}, [{t0}, {t_end}]"
        )));
    }
    let steps = ((t_end - t0) / dt - 1e-9).ceil().max(0.0) as usize;
    let h = if steps == 0 { 0.0 } else { (t_end - t0) / steps as f64 };
    Ok((steps, h))
}

/// RK4 on `(x, w) ↦ field(t, x, w)` over `steps` steps of size `h`.
fn rk4<F>(x0: Vec<f64>, w0: Vec<f64>, t0: f64, steps: usize, h: f64, field: F) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &[f64], &mut [f64], &mut [f64]),
{
    let d = x0.len();
    let mut t = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut ws = Vec::with_capacity(steps + 1);
    t.push(t0);
    xs.push(x0.clone());
    ws.push(w0.clone());
    let (mut x, mut w) = (x0, w0);
    let mut k = [
        (vec![0.0; d], vec![0.0; d]),
        (vec![0.0; d], vec![0.0; d]),
        (vec![0.0; d], vec![0.0; d]),
        (vec![0.0; d], vec![0.0; d]),
    ];
    let mut xt = vec![0.0; d];
    let mut wt = vec![0.0; d];
    for step in 0..steps {
        let tn = t0 + step as f64 * h;
        {
            let (a, b) = &mut k[0];
            field(tn, &x, &w, a, b);
        }
        for (stage, frac) in [(1usize, 0.5), (2, 0.5), (3, 1.0)] {
            for i in 0..d {
                xt[i] = x[i] + frac * h * k[stage - 1].0[i];
                wt[i] = w[i] + frac * h * k[stage - 1].1[i];
            }
            let (a, b) = &mut k[stage];
            field(tn + frac * h, &xt, &wt, a, b);
        }
        for i in 0..d {
            x[i] += h / 6.0 * (k[0].0[i] + 2.0 * k[1].0[i] + 2.0 * k[2].0[i] + k[3].0[i]);
            w[i] += h / 6.0 * (k[0].1[i] + 2.0 * k[1].1[i] + 2.0 * k[2].1[i] + k[3].1[i]);
        }
        let big = x.iter().chain(w.iter()).any(|v| !(v.abs() <= DIVERGENCE_THRESHOLD));
        if big {
            return Err(Error::Divergence {
                step: step as u64 + 1,
                threshold: DIVERGENCE_THRESHOLD,
            });
        }
        t.push(t0 + (step + 1) as f64 * h);
        xs.push(x.clone());
        ws.push(w.clone());
    }
    Ok(Trajectory { t, x: xs, w: ws })
}

/// Integrates `ẍ + γ_t ẋ + ∇f(x) = 0` from `(x0, v0)` at `t0` to `t_end`.
#[allow(clippy::too_many_arguments)]
pub fn hbf_ode_integrate(
    pot: &Potential,
    damping: &DampingFamily,
    x0: &[f64],
    v0: &[f64],
    t0: f64,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    if matches!(damping, DampingFamily::Vanishing { .. }) && !(t0 > 0.0) {
        return Err(Error::InvalidArgument("vanishing damping needs t0 > 0".into()));
    }
    check_dims(pot, x0, v0)?;
    let (steps, h) = grid(t0, t_end, dt)?;
    let damping = *damping;
    let d = pot.dim();
    rk4(x0.to_vec(), v0.to_vec(), t0, steps, h, |t, x, v, dx, dv| {
        pot.grad_into(x, dv);
        let g = damping.at(t);
        for i in 0..d {
            dx[i] = v[i];
            dv[i] = -g * v[i] - dv[i];
        }
    })
}

/// Integrates `ẋ = -y, ẏ = r_t (∇f(x) - y)` from `(x0, y0)` at `t0`.
pub fn memory_ode_integrate(
    pot: &Potential,
    mem: &ContinuousMemory,
    x0: &[f64],
    y0: &[f64],
    t0: f64,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    if matches!(mem, ContinuousMemory::Polynomial { .. }) && !(t0 > 0.0) {
        return Err(Error::InvalidArgument("r_t = r/t needs t0 > 0".into()));
    }
    check_dims(pot, x0, y0)?;
    let (steps, h) = grid(t0, t_end, dt)?;
    let mem = *mem;
    let d = pot.dim();
    rk4(x0.to_vec(), y0.to_vec(), t0, steps, h, |t, x, y, dx, dy| {
        pot.grad_into(x, dy);
        let r = mem.at(t);
        for i in 0..d {
            dx[i] = -y[i];
            dy[i] = r * (dy[i] - y[i]);
        }
    })
}

fn check_dims(pot: &Potential, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != pot.dim() || b.len() != pot.dim() {
        return Err(Error::InvalidArgument(format!(
            "initial state must have dimension {}",
            pot.dim()
        )));
    }
    Ok(())
}
