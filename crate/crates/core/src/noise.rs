//! Martingale increments `ΔM_{n+1}` and the seeded random streams that drive
//! them.
//!
//! Every replica draws from its own [`RngStream`], identified by the pair
//! `(master_seed, stream_id)`. Streams are ChaCha8 keystreams keyed by the
//! master seed and selected by the stream id, so replica `k` never depends on
//! how many numbers other replicas consumed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::potentials::Potential;

/// Lower clamp on `|1 + f(x)|` for [`NoiseModel::StateScaledGaussian`].
pub const STATE_SCALE_FLOOR: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        RngStream {
            master_seed,
            stream_id,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Distribution of the increment `ΔM_{n+1}` given the current iterate.
///
/// Gaussian models consume exactly `d` standard normals per call, so two
/// algorithms sharing a stream see the same increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Zero,
    /// `N(0, σ0² I)`.
    IsotropicGaussian {
        sigma0: f64,
    },
    /// Per-coordinate standard deviation `σ · max(|1 + f(x)|, 0.1)`.
    StateScaledGaussian {
        sigma: f64,
    },
    /// `ΔM = ∇f(x) - (∇f(x) + ξ) = -ξ` with `ξ ~ N(0, σ0² I)`.
    GradientPerturbation {
        sigma0: f64,
    },
}

impl NoiseModel {
    pub fn isotropic(sigma0: f64) -> Result<Self> {
        check_scale(sigma0)?;
        Ok(NoiseModel::IsotropicGaussian { sigma0 })
    }

    pub fn state_scaled(sigma: f64) -> Result<Self> {
        check_scale(sigma)?;
        Ok(NoiseModel::StateScaledGaussian { sigma })
    }

    pub fn gradient_perturbation(sigma0: f64) -> Result<Self> {
        check_scale(sigma0)?;
        Ok(NoiseModel::GradientPerturbation { sigma0 })
    }

    /// Same model with its scale replaced.
    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        match self {
            NoiseModel::Zero => Ok(NoiseModel::Zero),
            NoiseModel::IsotropicGaussian { .. } => Self::isotropic(scale),
            NoiseModel::StateScaledGaussian { .. } => Self::state_scaled(scale),
            NoiseModel::GradientPerturbation { .. } => Self::gradient_perturbation(scale),
        }
    }

    /// `σ0` such that the limit conditional covariance is `σ0² I`, when it
    /// is constant.
    pub fn limit_sigma0(&self) -> Option<f64> {
        match *self {
            NoiseModel::Zero => Some(0.0),
            NoiseModel::IsotropicGaussian { sigma0 } | NoiseModel::GradientPerturbation { sigma0 } => Some(sigma0),
            NoiseModel::StateScaledGaussian { .. } => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            NoiseModel::Zero => true,
            NoiseModel::IsotropicGaussian { sigma0 } | NoiseModel::GradientPerturbation { sigma0 } => sigma0 == 0.0,
            NoiseModel::StateScaledGaussian { sigma } => sigma == 0.0,
        }
    }

    /// Writes one draw of `ΔM_{n+1}` at state `x` into `out`.
    #[inline]
    pub fn sample_into(&self, pot: &Potential, x: &[f64], rng: &mut RngStream, out: &mut [f64]) {
        match *self {
            NoiseModel::Zero => out.fill(0.0),
            NoiseModel::IsotropicGaussian { sigma0 } => {
                for o in out.iter_mut() {
                    *o = sigma0 * rng.standard_normal();
                }
            }
            NoiseModel::GradientPerturbation { sigma0 } => {
                for o in out.iter_mut() {
                    *o = -(sigma0 * rng.standard_normal());
                }
            }
            NoiseModel::StateScaledGaussian { sigma } => {
                let scale = sigma * (1.0 + pot.value(x)).abs().max(STATE_SCALE_FLOOR);
                for o in out.iter_mut() {
                    *o = scale * rng.standard_normal();
                }
            }
        }
    }

    pub fn sample_increment(&self, pot: &Potential, x: &[f64], rng: &mut RngStream) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.sample_into(pot, x, rng, &mut out);
        out
    }
}

fn check_scale(s: f64) -> Result<()> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::InvalidArgument(format!("noise scale must be >= 0, got {s}")));
    }
    Ok(())
}
