//! Stochastic heavy ball with exponential or polynomial memory, plus the
//! baselines, quadratic analysis, ODE references and experiment harness
//! built around it.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod noise;
pub mod ode;
pub mod potentials;
pub mod quad;
pub mod schedules;
pub mod shb;

pub use baselines::{baseline_step, BaselineState, Variant};
pub use error::{Error, Result};
pub use noise::{NoiseModel, RngStream};
pub use ode::{hbf_ode_integrate, memory_ode_integrate, time_change_tau, DampingFamily, TimeKernel, Trajectory};
pub use potentials::{Objective, Potential};
pub use schedules::{MemorySchedule, StepSchedule};
pub use shb::{shb_run, shb_step, Checkpoints, ShbState, Spacing};
