//! Lyapunov diagnostics
//!
//! ```text
//! V(x, y) = (a + b r_{n-1}) f(x) + (a / (2 r_{n-1})) ‖y‖² - b ⟨∇f(x), y⟩
//! ```

use crate::error::{Error, Result};
use crate::potentials::Potential;
use crate::schedules::MemorySchedule;

pub fn lyapunov_value(pot: &Potential, a: f64, b: f64, r_prev: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if !(r_prev > 0.0) {
        return Err(Error::InvalidArgument(format!("r_prev must be > 0, got {r_prev}")));
    }
    let g = pot.grad(x);
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let gy: f64 = g.iter().zip(y).map(|(u, v)| u * v).sum();
    Ok((a + b * r_prev) * pot.value(x) + a / (2.0 * r_prev) * yy - b * gy)
}

/// `b = 1` and `a = 2 max(1/2, ‖D²f‖∞ / (1 - c_r), r_∞ (c_f - 1))`.
pub fn lyapunov_ab(pot: &Potential, mem: &MemorySchedule) -> Result<(f64, f64)> {
    let c_r = mem.c_r_limit();
    if !(c_r < 1.0) {
        return Err(Error::Precondition(format!("c_r = {c_r} must be < 1")));
    }
    let c_f = pot
        .c_f()
        .ok_or_else(|| Error::Precondition("potential has no quadratic-growth constant c_f".into()))?;
    let h = pot.hess_sup_norm();
    if !h.is_finite() {
        return Err(Error::Precondition("Hessian bound is not available".into()));
    }
    let a = 2.0 * 0.5f64.max(h / (1.0 - c_r)).max(mem.limit() * (c_f - 1.0));
    Ok((a, 1.0))
}
