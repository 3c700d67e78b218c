//! Experiment harness: configuration, Monte Carlo drivers, trap study and
//! output writers.

pub mod config;
pub mod lyapunov;
pub mod output;
pub mod runner;
pub mod trap;

pub use config::ExperimentConfig;
pub use lyapunov::{lyapunov_ab, lyapunov_value};
pub use runner::{
    clt_covariance, fit_power_law, fit_rate, last_decade, mc_expected_error, Algorithm, CltEstimate, McResult, Problem,
    Quantity, RateFit, ReplicaState, SummaryRow,
};
pub use trap::{trap_experiment, TrapMethod, TrapSetup, TrapTable};
