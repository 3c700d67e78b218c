//! Closed-form analysis of the quadratic case `f(x) = ½ xᵀ S x`.
//!
//! Writing `S = Pᵀ Λ P`, the recursion splits into `d` independent couples
//! `(x, y)` driven by the 2×2 blocks
//!
//! ```text
//! C(λ, r) = [[0, -1], [rλ, -r]]
//! ```
//!
//! whose spectrum gives the rate constant `α_r`. The module also provides the
//! Gaussian limit of the rescaled iterates `Z_n / √γ_n`, the generator of the
//! limiting Ornstein–Uhlenbeck process, and numeric checks of the step-sum
//! bounds used in the rate proofs.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector3};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::noise::RngStream;
use crate::schedules::{alpha_r, StepSchedule};

/// `S = Pᵀ diag(eigenvalues) P`; the rows of `p` are unit eigenvectors.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub p: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min_eig(&self) -> f64 {
        self.eigenvalues.min()
    }

    /// `Pᵀ diag(values) P`.
    pub fn compose(&self, values: &DVector<f64>) -> DMatrix<f64> {
        self.p.transpose() * DMatrix::from_diagonal(values) * &self.p
    }
}

pub fn spectral_reduce(s: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    if !linalg::is_symmetric(s, 1e-12) {
        return Err(Error::InvalidArgument("matrix is not symmetric".into()));
    }
    let e = linalg::jacobi_eigen(s);
    if let Some(bad) = e.values.iter().find(|&&v| v <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "matrix is not positive definite: eigenvalue {bad} <= 0"
        )));
    }
    Ok(SpectralDecomposition {
        p: e.vectors.transpose(),
        eigenvalues: e.values,
    })
}

/// One 2×2 drift block `C(λ, r)`. Noiseless SHB on a quadratic advances each
/// couple by `z ← (I + γ_{n+1} C(λ, r_n)) z`.
pub fn block_matrix(lambda: f64, r: f64) -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, r * lambda, -r)
}

/// Roots of `t² + r t + rλ`, largest real part first.
pub fn block_eigen(lambda: f64, r: f64) -> [Complex64; 2] {
    let disc = r * (r - 4.0 * lambda);
    if disc >= 0.0 {
        let s = disc.sqrt();
        [Complex64::new((-r + s) / 2.0, 0.0), Complex64::new((-r - s) / 2.0, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [Complex64::new(-r / 2.0, s / 2.0), Complex64::new(-r / 2.0, -s / 2.0)]
    }
}

/// Covariance of the Gaussian limit of `(X_n, Y_n) / √γ_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitCovariance {
    pub x_block: DMatrix<f64>,
    pub y_block: DMatrix<f64>,
    pub xy_block: DMatrix<f64>,
}

impl LimitCovariance {
    pub fn dim(&self) -> usize {
        self.x_block.nrows()
    }

    /// The full `2d × 2d` matrix `[[Σ_x, Σ_xy], [Σ_xyᵀ, Σ_y]]`.
    pub fn assembled(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(2 * d, 2 * d);
        m.view_mut((0, 0), (d, d)).copy_from(&self.x_block);
        m.view_mut((d, d), (d, d)).copy_from(&self.y_block);
        m.view_mut((0, d), (d, d)).copy_from(&self.xy_block);
        m.view_mut((d, 0), (d, d)).copy_from(&self.xy_block.transpose());
        m
    }

    pub fn is_psd(&self) -> bool {
        linalg::is_positive_semidefinite(&self.assembled())
    }
}

/// Limit covariance for `β < 1`: `Σ_x = (σ0²/2) S⁻¹`, `Σ_y = (r σ0²/2) I`,
/// `Σ_xy = 0`.
pub fn limit_cov_beta_lt1(decomp: &SpectralDecomposition, r: f64, sigma0: f64) -> LimitCovariance {
    let d = decomp.dim();
    let s2 = sigma0 * sigma0;
    let inv = decomp.eigenvalues.map(|l| s2 / (2.0 * l));
    LimitCovariance {
        x_block: decomp.compose(&inv),
        y_block: DMatrix::identity(d, d) * (r * s2 / 2.0),
        xy_block: DMatrix::zeros(d, d),
    }
}

/// Limit moments `(σ_x², σ_y², σ_xy)` of the one-dimensional case with
/// `β = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Beta1Moments {
    pub var_x: f64,
    pub var_y: f64,
    pub cov_xy: f64,
}

impl Beta1Moments {
    pub fn as_covariance(&self) -> LimitCovariance {
        LimitCovariance {
            x_block: DMatrix::from_element(1, 1, self.var_x),
            y_block: DMatrix::from_element(1, 1, self.var_y),
            xy_block: DMatrix::from_element(1, 1, self.cov_xy),
        }
    }

    /// Residuals of the three stationarity identities
    ///
    /// ```text
    /// 2γ σ_xy = σ_x²
    /// (r - 1/(2γ)) σ_y² = rλ σ_xy + r² σ0² / 2
    /// σ_y² = rλ σ_x² + (1/γ - r) σ_xy
    /// ```
    pub fn residuals(&self, lambda: f64, r: f64, gamma: f64, sigma0: f64) -> [f64; 3] {
        let Beta1Moments { var_x, var_y, cov_xy } = *self;
        [
            2.0 * gamma * cov_xy - var_x,
            (r - 1.0 / (2.0 * gamma)) * var_y - r * lambda * cov_xy - r * r * sigma0 * sigma0 / 2.0,
            var_y - r * lambda * var_x - (1.0 / gamma - r) * cov_xy,
        ]
    }
}

fn check_beta1(lambda: f64, r: f64, gamma: f64) -> Result<()> {
    if !(lambda > 0.0 && r > 0.0 && gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "λ, r and γ must be > 0, got λ = {lambda}, r = {r}, γ = {gamma}"
        )));
    }
    let ga = gamma * alpha_r(r, lambda);
    if !(ga > 1.0) {
        return Err(Error::Precondition(format!(
            "the β = 1 limit needs γ·α_r > 1, got γ·α_r = {ga}"
        )));
    }
    Ok(())
}

/// Solves the three stationarity identities (see
/// [`Beta1Moments::residuals`]) as a 3×3 linear system. Valid for every
/// `r`, including `r < 4λ`.
pub fn limit_cov_beta1_1d(lambda: f64, r: f64, gamma: f64, sigma0: f64) -> Result<Beta1Moments> {
    check_beta1(lambda, r, gamma)?;
    // unknowns (σ_x², σ_y², σ_xy)
    let a = Matrix3::new(
        -1.0,
        0.0,
        2.0 * gamma,
        0.0,
        r - 1.0 / (2.0 * gamma),
        -r * lambda,
        -r * lambda,
        1.0,
        r - 1.0 / gamma,
    );
    let rhs = Vector3::new(0.0, r * r * sigma0 * sigma0 / 2.0, 0.0);
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Precondition("singular moment system".into()))?;
    Ok(Beta1Moments {
        var_x: sol[0],
        var_y: sol[1],
        cov_xy: sol[2],
    })
}

/// Closed form of [`limit_cov_beta1_1d`] when `r ≥ 4λ`:
///
/// ```text
/// σ_x² = σ0² 2λrγ³ / D,  σ_y² = σ0² λrγ (2λrγ² - rγ + 1) / D,  σ_xy = σ0² λrγ² / D,
/// D = (γr - 1)(2λγ - α̌_-)(2λγ - α̌_+),
/// ```
///
/// where `α̌_± = (1 ± √(1 - 4λ/r)) / 2` are the roots of `t² - t + λ/r`.
/// Returns `None` when `r < 4λ`.
pub fn beta1_closed_form(lambda: f64, r: f64, gamma: f64, sigma0: f64) -> Result<Option<Beta1Moments>> {
    check_beta1(lambda, r, gamma)?;
    if r < 4.0 * lambda {
        return Ok(None);
    }
    let root = (1.0 - 4.0 * lambda / r).sqrt();
    let a_minus = (1.0 - root) / 2.0;
    let a_plus = (1.0 + root) / 2.0;
    let lg = 2.0 * lambda * gamma;
    let denom = (gamma * r - 1.0) * (lg - a_minus) * (lg - a_plus);
    let k = sigma0 * sigma0 * lambda * r / denom;
    Ok(Some(Beta1Moments {
        var_x: k * 2.0 * gamma.powi(3),
        var_y: k * gamma * (2.0 * lambda * r * gamma * gamma - r * gamma + 1.0),
        cov_xy: k * gamma * gamma,
    }))
}

/// Applies the generator of the limiting Ornstein–Uhlenbeck process,
///
/// ```text
/// Lφ(z) = ⟨∇φ(z), (H + 1_{β=1} I/(2γ)) z⟩ + ½ Tr(Σᵀ D²φ(z) Σ),
/// H = [[0, -I], [r D²f(x⋆), -r I]],  Σ = [[0, 0], [0, r σ0 I]],
/// ```
///
/// with `z = (x, y) ∈ R^{2d}` and derivatives of `phi` by central finite
/// differences with step `1e-5`.
#[allow(clippy::too_many_arguments)]
pub fn ou_generator_apply(
    phi: &dyn Fn(&[f64]) -> f64,
    z: &[f64],
    hess: &DMatrix<f64>,
    r: f64,
    gamma: f64,
    beta_is_one: bool,
    sigma0: f64,
) -> f64 {
    const H: f64 = 1e-5;
    let d = hess.nrows();
    assert_eq!(z.len(), 2 * d, "z must have length 2d");
    let (x, y) = z.split_at(d);
    let shift = if beta_is_one { 1.0 / (2.0 * gamma) } else { 0.0 };

    let mut drift = vec![0.0; 2 * d];
    for i in 0..d {
        drift[i] = -y[i] + shift * x[i];
        let hx: f64 = (0..d).map(|j| hess[(i, j)] * x[j]).sum();
        drift[d + i] = r * (hx - y[i]) + shift * y[i];
    }

    let mut w = z.to_vec();
    let mut first = 0.0;
    for k in 0..2 * d {
        if drift[k] == 0.0 {
            continue;
        }
        w[k] = z[k] + H;
        let up = phi(&w);
        w[k] = z[k] - H;
        let dn = phi(&w);
        w[k] = z[k];
        first += drift[k] * (up - dn) / (2.0 * H);
    }

    // Σ only acts on the y-block, so only the y-diagonal of D²φ is needed.
    let mut lap = 0.0;
    let f0 = phi(z);
    for i in d..2 * d {
        w[i] = z[i] + H;
        let up = phi(&w);
        w[i] = z[i] - H;
        let dn = phi(&w);
        w[i] = z[i];
        lap += (up - 2.0 * f0 + dn) / (H * H);
    }
    let s = r * sigma0;
    first + 0.5 * s * s * lap
}

/// Shape of the comparison sequence in [`stepsum_bound_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSumBound {
    /// `(2/a) γ_{n+1}`, for `β < 1`.
    TwiceStepOverA,
    /// `C n^{-1} / (aγ - 1)`, for `β = 1` and `aγ > 1`.
    InverseN { c: f64 },
    /// `C log(n) / n`, for `β = 1` and `aγ = 1`.
    LogOverN { c: f64 },
    /// `C n^{-aγ} / (1 - aγ)`, for `β = 1` and `aγ < 1`.
    PowerN { c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSumReport {
    pub bound: StepSumBound,
    /// Largest `LHS / bound` over `[n0, N]`.
    pub max_ratio: f64,
    pub final_ratio: f64,
    pub final_lhs: f64,
    /// Smallest `m ≥ n0` with `LHS / bound ≤ 1` for every `n ∈ [m, N]`.
    pub settled_from: Option<u64>,
    pub horizon: u64,
}

impl StepSumReport {
    /// The bound holds on the last 90% of the range.
    pub fn passed(&self) -> bool {
        self.settled_from.is_some_and(|m| m <= self.horizon / 10)
    }
}

/// `Σ_{k≤n} γ_k² Π_{l=k+1..n} (1 - aγ_l + bγ_l²)`, computed by the exact
/// recurrence `S_n = S_{n-1} (1 - aγ_n + bγ_n²) + γ_n²`, against the bound
/// selected by `β` and `aγ`. For `β = 1` the constant is
/// `C = γ² exp(b γ² π² / 6)`.
pub fn stepsum_bound_check(a: f64, b: f64, sched: &StepSchedule, n0: u64, horizon: u64) -> Result<StepSumReport> {
    if !(a > 0.0) || !(b >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need a > 0 and b >= 0, got a = {a}, b = {b}"
        )));
    }
    if n0 == 0 || horizon < n0 {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= n0 <= N, got n0 = {n0}, N = {horizon}"
        )));
    }
    let beta = sched.beta();
    let g = sched.scale();
    let ag = a * g;
    let bound = if beta < 1.0 {
        StepSumBound::TwiceStepOverA
    } else {
        let c = g * g * (b * g * g * std::f64::consts::PI.powi(2) / 6.0).exp();
        if (ag - 1.0).abs() <= 1e-12 {
            StepSumBound::LogOverN { c }
        } else if ag > 1.0 {
            StepSumBound::InverseN { c }
        } else {
            StepSumBound::PowerN { c }
        }
    };
    let rhs = |n: u64| -> f64 {
        let nf = n as f64;
        match bound {
            StepSumBound::TwiceStepOverA => 2.0 / a * sched.gamma_at(n + 1),
            StepSumBound::InverseN { c } => c / (ag - 1.0) / nf,
            // log(1) = 0, so the bound is taken as C at n = 1
            StepSumBound::LogOverN { c } => c * nf.ln().max(1.0 / nf.max(1.0)) / nf,
            StepSumBound::PowerN { c } => c / (1.0 - ag) * nf.powf(-ag),
        }
    };

    let mut s = 0.0;
    let mut max_ratio = f64::NEG_INFINITY;
    let mut last_violation: Option<u64> = None;
    let mut ratio = 0.0;
    for n in 1..=horizon {
        let gn = sched.gamma_at(n);
        s = s * (1.0 - a * gn + b * gn * gn) + gn * gn;
        if n < n0 {
            continue;
        }
        ratio = s / rhs(n);
        max_ratio = max_ratio.max(ratio);
        if !(ratio <= 1.0) {
            last_violation = Some(n);
        }
    }
    let settled_from = match last_violation {
        None => Some(n0),
        Some(v) if v < horizon => Some(v + 1),
        Some(_) => None,
    };
    Ok(StepSumReport {
        bound,
        max_ratio,
        final_ratio: ratio,
        final_lhs: s,
        settled_from,
        horizon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubGaussianSup {
    /// Monte-Carlo mean of `max_{n ≤ k ≤ 100n} γ_k² ‖ξ_k‖²`.
    pub mean_sup: f64,
    /// `σ² d γ_n² log(γ_n^{-2})`.
    pub scale: f64,
    pub ratio: f64,
}

/// Estimates `E[sup_{k ≥ n} γ_k² ‖ξ_k‖²]` for `ξ_k ~ N(0, σ² I_d)`, with the
/// supremum truncated at `k ≤ 100 n`.
pub fn subgaussian_sup_stat(
    sigma: f64,
    d: usize,
    sched: &StepSchedule,
    n: u64,
    reps: usize,
    seed: u64,
) -> Result<SubGaussianSup> {
    if n == 0 || reps == 0 || d == 0 {
        return Err(Error::InvalidArgument("need n, reps and d >= 1".into()));
    }
    let gn = sched.gamma_at(n);
    if !(gn < 1.0) {
        return Err(Error::Precondition(format!(
            "the scale σ² d γ_n² log(γ_n⁻²) needs γ_n < 1, got {gn}"
        )));
    }
    let scale = sigma * sigma * d as f64 * gn * gn * (1.0 / (gn * gn)).ln();
    if sigma == 0.0 {
        return Ok(SubGaussianSup {
            mean_sup: 0.0,
            scale,
            ratio: 0.0,
        });
    }
    let mut total = 0.0;
    for rep in 0..reps {
        let mut rng = RngStream::new(seed, rep as u64);
        let mut best: f64 = 0.0;
        for k in n..=100 * n {
            let g = sched.gamma_at(k);
            let mut norm2 = 0.0;
            for _ in 0..d {
                let z = sigma * rng.standard_normal();
                norm2 += z * z;
            }
            best = best.max(g * g * norm2);
        }
        total += best;
    }
    let mean_sup = total / reps as f64;
    Ok(SubGaussianSup {
        mean_sup,
        scale,
        ratio: mean_sup / scale,
    })
}
