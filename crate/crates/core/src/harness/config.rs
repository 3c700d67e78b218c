//! Declarative experiment description, read from TOML.
//!
//! ```toml
//! algorithm = "shb"            # shb | sgd | avg_sgd | nagd
//! horizon = 100000
//! replicas = 200
//! output = "rates.csv"
//!
//! [potential]
//! kind = "quadratic"
//! params = { matrix = [[1.0]] }
//!
//! [step]
//! gamma = 1.0
//! beta = 0.75
//!
//! [memory]
//! kind = "exponential"
//! r = 5.0
//!
//! [noise]
//! kind = "isotropic_gaussian"
//! sigma0 = 1.0
//!
//! [seed]
//! master = 42
//!
//! [init]
//! x = [1.0]
//!
//! [checkpoints]
//! count = 30
//! spacing = "log"
//! ```
//!
//! Unknown keys are rejected. The optional `[trap]` and `[ode]` tables drive
//! the corresponding subcommands.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines::Variant;
use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::ode::{ContinuousMemory, DampingFamily};
use crate::potentials::Potential;
use crate::schedules::{MemorySchedule, StepSchedule};
use crate::shb::{Checkpoints, Spacing, DEFAULT_CHECKPOINTS};

use super::runner::{Algorithm, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Shb,
    Sgd,
    AvgSgd,
    Nagd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Quadratic(QuadraticParams),
    Power(PowerParams),
    DoubleWell(DoubleWellParams),
    /// Accepted by the parser so the error can say why it is refused.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticParams {
    /// Row-major matrix `S`.
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerParams {
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleWellParams {
    pub a: f64,
    pub b: f64,
}

impl PotentialSpec {
    pub fn build(&self) -> Result<Potential> {
        match self {
            PotentialSpec::Quadratic(q) => {
                let d = q.matrix.len();
                if d == 0 || q.matrix.iter().any(|row| row.len() != d) {
                    return Err(Error::Config(
                        "potential.params.matrix must be a non-empty square array".into(),
                    ));
                }
                let flat: Vec<f64> = q.matrix.iter().flatten().copied().collect();
                Potential::quadratic(DMatrix::from_row_slice(d, d, &flat))
            }
            PotentialSpec::Power(p) => Potential::power(p.p),
            PotentialSpec::DoubleWell(w) => Potential::double_well(w.a, w.b),
            PotentialSpec::Custom => Err(Error::Config(
                "potential.kind = \"custom\" is only available through the library API".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub gamma: f64,
    pub beta: f64,
}

impl StepSpec {
    pub fn build(&self) -> Result<StepSchedule> {
        StepSchedule::new(self.gamma, self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Exponential,
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySpec {
    pub kind: MemoryKind,
    pub r: f64,
}

impl MemorySpec {
    pub fn build(&self) -> Result<MemorySchedule> {
        match self.kind {
            MemoryKind::Exponential => MemorySchedule::exponential(self.r),
            MemoryKind::Polynomial => MemorySchedule::polynomial(self.r),
        }
    }

    pub fn continuous(&self) -> ContinuousMemory {
        match self.kind {
            MemoryKind::Exponential => ContinuousMemory::Exponential { r: self.r },
            MemoryKind::Polynomial => ContinuousMemory::Polynomial { r: self.r },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Zero,
    IsotropicGaussian,
    StateScaledGaussian,
    GradientPerturbation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Noise scale; 1 when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
}

impl NoiseSpec {
    pub fn build(&self) -> Result<NoiseModel> {
        let s = self.sigma0.unwrap_or(1.0);
        match self.kind {
            NoiseKind::Zero => Ok(NoiseModel::Zero),
            NoiseKind::IsotropicGaussian => NoiseModel::isotropic(s),
            NoiseKind::StateScaledGaussian => NoiseModel::state_scaled(s),
            NoiseKind::GradientPerturbation => NoiseModel::gradient_perturbation(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub master: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointSpec {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_spacing")]
    pub spacing: SpacingSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpacingSpec {
    Log,
    Linear,
}

fn default_count() -> usize {
    DEFAULT_CHECKPOINTS
}

fn default_spacing() -> SpacingSpec {
    SpacingSpec::Log
}

impl Default for CheckpointSpec {
    fn default() -> Self {
        CheckpointSpec {
            count: DEFAULT_CHECKPOINTS,
            spacing: SpacingSpec::Log,
        }
    }
}

impl CheckpointSpec {
    pub fn build(&self, horizon: u64) -> Checkpoints {
        let spacing = match self.spacing {
            SpacingSpec::Log => Spacing::Log,
            SpacingSpec::Linear => Spacing::Linear,
        };
        Checkpoints::new(horizon, self.count, spacing)
    }
}

/// One method in a trap-escape study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapAlgorithmSpec {
    pub name: String,
    pub algorithm: AlgorithmKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<MemorySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSpec {
    pub sigmas: Vec<f64>,
    #[serde(default = "default_init_lo")]
    pub init_lo: f64,
    #[serde(default = "default_init_hi")]
    pub init_hi: f64,
    #[serde(default = "default_init_count")]
    pub init_count: usize,
    /// Success radius around the global minimizer.
    #[serde(default = "default_radius")]
    pub radius: f64,
    pub algorithms: Vec<TrapAlgorithmSpec>,
}

fn default_init_lo() -> f64 {
    -10.0
}
fn default_init_hi() -> f64 {
    10.0
}
fn default_init_count() -> usize {
    100
}
fn default_radius() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeForm {
    Hbf,
    Memory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSpec {
    pub form: OdeForm,
    /// Damping for the heavy-ball form; the memory form reads `[memory]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<DampingFamily>,
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Initial velocity (heavy-ball form) or `y` (memory form); zero when
    /// omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<Vec<f64>>,
    /// Write every k-th grid point.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_algorithm")]
    pub algorithm: AlgorithmKind,
    pub potential: PotentialSpec,
    pub step: StepSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<MemorySpec>,
    pub noise: NoiseSpec,
    pub seed: SeedSpec,
    pub init: InitSpec,
    #[serde(default)]
    pub horizon: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub checkpoints: CheckpointSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trap: Option<TrapSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode: Option<OdeSpec>,
}

fn default_algorithm() -> AlgorithmKind {
    AlgorithmKind::Shb
}

fn default_replicas() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn memory_schedule(&self) -> Result<Option<MemorySchedule>> {
        self.memory.as_ref().map(|m| m.build()).transpose()
    }

    /// Resolved algorithm for a method kind, taking the memory from `mem`.
    pub fn resolve_algorithm(kind: AlgorithmKind, mem: Option<&MemorySpec>) -> Result<Algorithm> {
        Ok(match kind {
            AlgorithmKind::Shb => {
                let m = mem.ok_or_else(|| Error::Config("algorithm \"shb\" needs a [memory] table".into()))?;
                Algorithm::Shb(m.build()?)
            }
            AlgorithmKind::Sgd => Algorithm::Baseline(Variant::Sgd),
            AlgorithmKind::AvgSgd => Algorithm::Baseline(Variant::AvgSgd),
            AlgorithmKind::Nagd => Algorithm::Baseline(Variant::Nagd),
        })
    }

    /// Builds and validates every component of the main experiment.
    pub fn problem(&self) -> Result<Problem> {
        let pot = self.potential.build()?;
        let sched = self.step.build()?;
        let noise = self.noise.build()?;
        let algorithm = Self::resolve_algorithm(self.algorithm, self.memory.as_ref())?;
        if self.init.x.len() != pot.dim() {
            return Err(Error::Config(format!(
                "init.x has length {} but the potential has dimension {}",
                self.init.x.len(),
                pot.dim()
            )));
        }
        Ok(Problem::new(pot, sched, noise, algorithm))
    }

    pub fn require_horizon(&self) -> Result<u64> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.replicas == 0 {
            return Err(Error::Config("replicas must be >= 1".into()));
        }
        Ok(self.horizon)
    }
}
