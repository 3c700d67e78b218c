//! Objective functions with exact gradient (and optionally Hessian) oracles.
//!
//! A [`Potential`] bundles the function with the growth constants used by the
//! Lyapunov diagnostics: `c_f` with `|∇f|² ≤ c_f f`, a bound on the Frobenius
//! norm of the Hessian over the working box, the strong-convexity modulus and
//! the minimizer when they are known.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// Half-width of the default working box `[-20, 20]^d`.
pub const WORKING_BOX: f64 = 20.0;
/// Number of points sampled when estimating constants over the working box.
pub const BOX_SAMPLES: usize = 10_000;

/// User-supplied objective. Only `value` and `grad_into` are required.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn grad_into(&self, x: &[f64], out: &mut [f64]);
    fn hess(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// `f(x) = ½ xᵀ S x` with `S` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpec {
    pub matrix: DMatrix<f64>,
    pub min_eig: f64,
    pub max_eig: f64,
}

#[derive(Clone)]
pub enum PotentialKind {
    Quadratic(QuadraticSpec),
    /// `|x|^p / p`, one-dimensional.
    Power {
        p: f64,
    },
    /// `a x⁴ + b (x - 1)²`, one-dimensional.
    DoubleWell {
        a: f64,
        b: f64,
    },
    Custom(Arc<dyn Objective>),
}

impl fmt::Debug for PotentialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialKind::Quadratic(q) => f.debug_tuple("Quadratic").field(q).finish(),
            PotentialKind::Power { p } => f.debug_struct("Power").field("p", p).finish(),
            PotentialKind::DoubleWell { a, b } => f.debug_struct("DoubleWell").field("a", a).field("b", b).finish(),
            PotentialKind::Custom(o) => write!(f, "Custom(dim = {})", o.dim()),
        }
    }
}

/// Known constants for a custom objective. Unset bounds are estimated on the
/// working box by [`Potential::custom`].
#[derive(Debug, Clone, Default)]
pub struct CustomConstants {
    pub c_f: Option<f64>,
    pub hess_sup_norm: Option<f64>,
    pub strong_convexity: Option<f64>,
    pub minimizer: Option<Vec<f64>>,
    pub min_hessian_eig_at_minimizer: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Potential {
    dim: usize,
    kind: PotentialKind,
    c_f: Option<f64>,
    hess_sup_norm: f64,
    strong_convexity: Option<f64>,
    minimizer: Option<Vec<f64>>,
    min_hessian_eig_at_minimizer: Option<f64>,
}

impl Potential {
    /// Quadratic potential `½ xᵀ S x`.
    ///
    /// `c_f = 2 λ_max(S)` since `|Sx|² ≤ λ_max xᵀSx`.
    pub fn quadratic(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::InvalidPotential(format!(
                "quadratic matrix must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if !linalg::is_symmetric(&matrix, 1e-12) {
            return Err(Error::InvalidPotential("quadratic matrix is not symmetric".into()));
        }
        let eig = linalg::jacobi_eigen(&matrix);
        let min_eig = eig.values[0];
        let max_eig = eig.values[eig.values.len() - 1];
        if min_eig <= 0.0 {
            return Err(Error::InvalidPotential(format!(
                "quadratic matrix is not positive definite: eigenvalue {min_eig} <= 0"
            )));
        }
        let dim = matrix.nrows();
        Ok(Potential {
            dim,
            c_f: Some(2.0 * max_eig),
            hess_sup_norm: matrix.norm(),
            strong_convexity: Some(min_eig),
            minimizer: Some(vec![0.0; dim]),
            min_hessian_eig_at_minimizer: Some(min_eig),
            kind: PotentialKind::Quadratic(QuadraticSpec {
                matrix,
                min_eig,
                max_eig,
            }),
        })
    }

    /// `f(x) = λ x² / 2` in one dimension.
    pub fn quadratic_1d(lambda: f64) -> Result<Self> {
        Self::quadratic(DMatrix::from_element(1, 1, lambda))
    }

    /// `f(x) = |x|^p / p`. For `p > 2` the minimizer is degenerate and the
    /// potential is flagged as not strongly convex.
    pub fn power(p: f64) -> Result<Self> {
        if !(p >= 2.0) || !p.is_finite() {
            return Err(Error::InvalidPotential(format!(
                "power potential needs p >= 2 (gradient not Lipschitz near 0), got {p}"
            )));
        }
        let growth = WORKING_BOX.powf(p - 2.0);
        let strongly_convex = p == 2.0;
        Ok(Potential {
            dim: 1,
            kind: PotentialKind::Power { p },
            c_f: Some(p * growth),
            hess_sup_norm: (p - 1.0) * growth,
            strong_convexity: strongly_convex.then_some(1.0),
            minimizer: Some(vec![0.0]),
            min_hessian_eig_at_minimizer: Some(if strongly_convex { 1.0 } else { 0.0 }),
        })
    }

    /// `f(x) = a x⁴ + b (x - 1)²`. The minimizer is located numerically.
    ///
    /// `c_f` is left unset: the potential takes negative values, so the
    /// growth condition `|∇f|² ≤ c_f f` cannot hold.
    pub fn double_well(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidPotential(format!(
                "double well needs a > 0 for coercivity, got a = {a}"
            )));
        }
        let edge = (12.0 * a * WORKING_BOX * WORKING_BOX + 2.0 * b).abs();
        let mut pot = Potential {
            dim: 1,
            kind: PotentialKind::DoubleWell { a, b },
            c_f: None,
            hess_sup_norm: edge.max((2.0 * b).abs()),
            strong_convexity: (b > 0.0).then_some(2.0 * b),
            minimizer: None,
            min_hessian_eig_at_minimizer: None,
        };
        let roots = critical_points_1d(&pot, -WORKING_BOX, WORKING_BOX, 4001, 1e-12);
        if let Some(global) = global_minimum(&pot, &roots) {
            pot.min_hessian_eig_at_minimizer = Some(12.0 * a * global * global + 2.0 * b);
            pot.minimizer = Some(vec![global]);
        }
        Ok(pot)
    }

    /// Wraps a user objective. Missing `c_f` and Hessian bounds are estimated
    /// from [`BOX_SAMPLES`] points drawn in the working box with the given RNG.
    pub fn custom<R: Rng + ?Sized>(
        objective: Arc<dyn Objective>,
        constants: CustomConstants,
        rng: &mut R,
    ) -> Result<Self> {
        let dim = objective.dim();
        if dim == 0 {
            return Err(Error::InvalidPotential("custom objective has dim 0".into()));
        }
        if let Some(m) = &constants.minimizer {
            if m.len() != dim {
                return Err(Error::InvalidPotential(format!(
                    "minimizer has length {} but objective has dim {dim}",
                    m.len()
                )));
            }
        }
        let mut pot = Potential {
            dim,
            kind: PotentialKind::Custom(objective),
            c_f: constants.c_f,
            hess_sup_norm: constants.hess_sup_norm.unwrap_or(f64::NAN),
            strong_convexity: constants.strong_convexity,
            minimizer: constants.minimizer,
            min_hessian_eig_at_minimizer: constants.min_hessian_eig_at_minimizer,
        };
        if constants.hess_sup_norm.is_none() || constants.c_f.is_none() {
            let est = estimate_box_constants(&pot, WORKING_BOX, BOX_SAMPLES, rng);
            if constants.hess_sup_norm.is_none() {
                pot.hess_sup_norm = est.hess_sup_norm;
            }
            if constants.c_f.is_none() {
                pot.c_f = est.c_f;
            }
        }
        Ok(pot)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn c_f(&self) -> Option<f64> {
        self.c_f
    }

    /// Upper bound on the Frobenius norm of the Hessian over the working box.
    pub fn hess_sup_norm(&self) -> f64 {
        self.hess_sup_norm
    }

    pub fn strong_convexity(&self) -> Option<f64> {
        self.strong_convexity
    }

    pub fn is_strongly_convex(&self) -> bool {
        self.strong_convexity.is_some_and(|a| a > 0.0)
    }

    pub fn minimizer(&self) -> Option<&[f64]> {
        self.minimizer.as_deref()
    }

    /// Smallest Hessian eigenvalue at the minimizer.
    pub fn min_hessian_eig_at_minimizer(&self) -> Option<f64> {
        self.min_hessian_eig_at_minimizer
    }

    pub fn quadratic_spec(&self) -> Option<&QuadraticSpec> {
        match &self.kind {
            PotentialKind::Quadratic(q) => Some(q),
            _ => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            PotentialKind::Quadratic(q) => {
                let d = self.dim;
                let mut acc = 0.0;
                for i in 0..d {
                    let mut row = 0.0;
                    for j in 0..d {
                        row += q.matrix[(i, j)] * x[j];
                    }
                    acc += x[i] * row;
                }
                0.5 * acc
            }
            PotentialKind::Power { p } => x[0].abs().powf(*p) / p,
            PotentialKind::DoubleWell { a, b } => {
                let x = x[0];
                let x2 = x * x;
                a * x2 * x2 + b * (x - 1.0) * (x - 1.0)
            }
            PotentialKind::Custom(o) => o.value(x),
        }
    }

    #[inline]
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        match &self.kind {
            PotentialKind::Quadratic(q) => {
                let d = self.dim;
                if d == 1 {
                    out[0] = q.matrix[(0, 0)] * x[0];
                    return;
                }
                for i in 0..d {
                    let mut row = 0.0;
                    for j in 0..d {
                        row += q.matrix[(i, j)] * x[j];
                    }
                    out[i] = row;
                }
            }
            PotentialKind::Power { p } => {
                let x = x[0];
                out[0] = if *p == 2.0 {
                    x
                } else {
                    x.signum() * x.abs().powf(p - 1.0)
                };
            }
            PotentialKind::DoubleWell { a, b } => {
                let x = x[0];
                out[0] = 4.0 * a * x * x * x + 2.0 * b * (x - 1.0);
            }
            PotentialKind::Custom(o) => o.grad_into(x, out),
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.grad_into(x, &mut g);
        g
    }

    pub fn hess(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        match &self.kind {
            PotentialKind::Quadratic(q) => Some(q.matrix.clone()),
            PotentialKind::Power { p } => {
                let h = if *p == 2.0 {
                    1.0
                } else {
                    (p - 1.0) * x[0].abs().powf(p - 2.0)
                };
                Some(DMatrix::from_element(1, 1, h))
            }
            PotentialKind::DoubleWell { a, b } => Some(DMatrix::from_element(1, 1, 12.0 * a * x[0] * x[0] + 2.0 * b)),
            PotentialKind::Custom(o) => o.hess(x),
        }
    }
}

/// Constants estimated by sampling the working box.
#[derive(Debug, Clone, Copy)]
pub struct BoxConstants {
    pub hess_sup_norm: f64,
    /// `None` when `f` is nowhere positive on the samples.
    pub c_f: Option<f64>,
}

/// Samples `samples` uniform points of `[-half_width, half_width]^d` and
/// reports the largest Hessian Frobenius norm (finite differences of the
/// gradient when no Hessian is available) and the largest `|∇f|²/f` over
/// points with `f > 0`.
pub fn estimate_box_constants<R: Rng + ?Sized>(
    pot: &Potential,
    half_width: f64,
    samples: usize,
    rng: &mut R,
) -> BoxConstants {
    let d = pot.dim();
    let mut x = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut hess_sup: f64 = 0.0;
    let mut c_f: Option<f64> = None;
    for _ in 0..samples {
        for xi in x.iter_mut() {
            *xi = rng.random_range(-half_width..=half_width);
        }
        let h = pot.hess(&x).unwrap_or_else(|| finite_difference_hessian(pot, &x, 1e-5));
        hess_sup = hess_sup.max(h.norm());
        let fx = pot.value(&x);
        if fx > 0.0 {
            pot.grad_into(&x, &mut g);
            let ratio = g.iter().map(|v| v * v).sum::<f64>() / fx;
            c_f = Some(c_f.map_or(ratio, |c| c.max(ratio)));
        }
    }
    BoxConstants {
        hess_sup_norm: hess_sup,
        c_f,
    }
}

/// Central finite differences of `f`.
pub fn finite_difference_gradient(pot: &Potential, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = pot.value(&probe);
            probe[i] = x[i] - h;
            let down = pot.value(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central finite differences of the gradient, symmetrized.
pub fn finite_difference_hessian(pot: &Potential, x: &[f64], h: f64) -> DMatrix<f64> {
    let d = x.len();
    let mut probe = x.to_vec();
    let mut up = vec![0.0; d];
    let mut down = vec![0.0; d];
    let mut m = DMatrix::zeros(d, d);
    for j in 0..d {
        probe[j] = x[j] + h;
        pot.grad_into(&probe, &mut up);
        probe[j] = x[j] - h;
        pot.grad_into(&probe, &mut down);
        probe[j] = x[j];
        for i in 0..d {
            m[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    (&m + m.transpose()) * 0.5
}

/// Roots of the derivative of a one-dimensional potential on `[lo, hi]`.
///
/// The gradient is sampled at `grid` equally spaced points; each sign change
/// between neighbours is bisected until `|f'(x)| <= tol` or the bracket
/// cannot be split further. Grid points where the gradient vanishes exactly
/// are reported once. The result is sorted ascending.
pub fn critical_points_1d(pot: &Potential, lo: f64, hi: f64, grid: usize, tol: f64) -> Vec<f64> {
    assert!(pot.dim() == 1, "critical_points_1d needs a 1-d potential");
    assert!(lo < hi && grid >= 2, "need lo < hi and grid >= 2");
    let g = |x: f64| {
        let mut out = [0.0];
        pot.grad_into(&[x], &mut out);
        out[0]
    };
    let step = (hi - lo) / (grid - 1) as f64;
    let node = |i: usize| if i == grid - 1 { hi } else { lo + step * i as f64 };

    let mut roots = Vec::new();
    let mut left = node(0);
    let mut g_left = g(left);
    if g_left == 0.0 {
        roots.push(left);
    }
    for i in 1..grid {
        let right = node(i);
        let g_right = g(right);
        if g_right == 0.0 {
            roots.push(right);
        } else if g_left != 0.0 && g_left.signum() != g_right.signum() {
            roots.push(bisect(&g, left, right, g_left, tol));
        }
        left = right;
        g_left = g_right;
    }
    roots.sort_by(f64::total_cmp);
    roots
}

fn bisect(g: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, mut g_lo: f64, tol: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g_mid = g(mid);
        if g_mid.abs() <= tol || mid <= lo || mid >= hi {
            return mid;
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Root with the lowest potential value.
pub fn global_minimum(pot: &Potential, roots: &[f64]) -> Option<f64> {
    roots
        .iter()
        .copied()
        .min_by(|a, b| pot.value(&[*a]).total_cmp(&pot.value(&[*b])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_identity_case() {
        let pot = Potential::quadratic_1d(1.0).unwrap();
        assert_eq!(pot.grad(&[3.0]), vec![3.0]);
        assert_eq!(pot.minimizer(), Some(&[0.0][..]));
    }

    #[test]
    fn quadratic_diagonal_evaluation() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let pot = Potential::quadratic(s).unwrap();
        assert_eq!(pot.value(&[1.0, 1.0]), 1.5);
        assert_eq!(pot.grad(&[1.0, 1.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn quadratic_min_eig_from_characteristic_polynomial() {
        // λ² - 4λ + 3 = 0 → {1, 3}
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let pot = Potential::quadratic(s).unwrap();
        let q = pot.quadratic_spec().unwrap();
        assert!((q.min_eig - 1.0).abs() < 1e-14);
        assert!((q.max_eig - 3.0).abs() < 1e-14);
        assert_eq!(pot.c_f(), Some(2.0 * q.max_eig));
    }

    #[test]
    fn quadratic_rejects_bad_input() {
        let nonsym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(Potential::quadratic(nonsym), Err(Error::InvalidPotential(_))));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -3.0]);
        let err = Potential::quadratic(indefinite).unwrap_err().to_string();
        assert!(err.contains("-3"), "diagnostic should name the eigenvalue: {err}");
    }

    #[test]
    fn power_values() {
        let p2 = Potential::power(2.0).unwrap();
        assert_eq!(p2.value(&[3.0]), 4.5);
        assert_eq!(p2.grad(&[3.0]), vec![3.0]);
        let p4 = Potential::power(4.0).unwrap();
        assert_eq!(p4.value(&[2.0]), 4.0);
        assert_eq!(p4.grad(&[2.0]), vec![8.0]);
        assert_eq!(p4.grad(&[0.0]), vec![0.0]);
        assert!(!p4.is_strongly_convex());
        assert_eq!(p4.min_hessian_eig_at_minimizer(), Some(0.0));
        assert!(Potential::power(1.5).is_err());
    }

    #[test]
    fn double_well_values() {
        let dw = Potential::double_well(1.0 / 40.0, -1.0 / 5.0).unwrap();
        assert!((dw.value(&[0.0]) + 0.2).abs() < 1e-15);
        assert!((dw.value(&[1.0]) - 0.025).abs() < 1e-15);
        assert!((dw.grad(&[1.0])[0] - 0.1).abs() < 1e-15);
        assert!(Potential::double_well(0.0, 1.0).is_err());
        assert!(Potential::double_well(-1.0, 1.0).is_err());
    }

    /// Independent bracket search: scan 0.1x³ - 0.4(x - 1) with a fine grid
    /// and plain bisection.
    fn double_well_root_oracle() -> Vec<f64> {
        let g = |x: f64| 0.1 * x * x * x - 0.4 * (x - 1.0);
        let mut roots = vec![];
        let n = 20_000;
        for i in 0..n {
            let (mut a, mut b) = (
                -10.0 + 20.0 * i as f64 / n as f64,
                -10.0 + 20.0 * (i + 1) as f64 / n as f64,
            );
            if g(a) * g(b) < 0.0 {
                for _ in 0..100 {
                    let m = 0.5 * (a + b);
                    if g(a) * g(m) <= 0.0 {
                        b = m
                    } else {
                        a = m
                    }
                }
                roots.push(0.5 * (a + b));
            }
        }
        roots
    }

    #[test]
    fn double_well_root() {
        let oracle = double_well_root_oracle();
        assert_eq!(oracle.len(), 1);
        assert!((oracle[0] + 2.3830).abs() < 5e-5);
        let dw = Potential::double_well(1.0 / 40.0, -1.0 / 5.0).unwrap();
        let roots = critical_points_1d(&dw, -10.0, 10.0, 1000, 1e-12);
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - oracle[0]).abs() < 1e-10);
        assert!((dw.minimizer().unwrap()[0] - oracle[0]).abs() < 1e-10);
    }

    #[test]
    fn critical_points_simple_cases() {
        let q = Potential::quadratic_1d(1.0).unwrap();
        assert_eq!(critical_points_1d(&q, -1.0, 1.0, 11, 1e-12), vec![0.0]);
        // even grid: 0 is not a node, found by bisection
        let r = critical_points_1d(&q, -1.0, 1.0, 10, 1e-12);
        assert_eq!(r.len(), 1);
        assert!(r[0].abs() <= 1e-12);
        let p4 = Potential::power(4.0).unwrap();
        let r = critical_points_1d(&p4, -1.0, 1.0, 10, 1e-12);
        assert_eq!(r.len(), 1);
        assert!(r[0].abs() < 1e-4);
        // no sign change
        assert!(critical_points_1d(&q, 1.0, 2.0, 10, 1e-12).is_empty());
    }

    #[test]
    fn custom_potential_estimates_constants() {
        struct Shifted;
        impl Objective for Shifted {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, x: &[f64]) -> f64 {
                (x[0] - 1.0).powi(2)
            }
            fn grad_into(&self, x: &[f64], out: &mut [f64]) {
                out[0] = 2.0 * (x[0] - 1.0);
            }
        }
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        use rand::SeedableRng;
        let pot = Potential::custom(Arc::new(Shifted), CustomConstants::default(), &mut rng).unwrap();
        assert!((pot.hess_sup_norm() - 2.0).abs() < 1e-6);
        assert!((pot.c_f().unwrap() - 4.0).abs() < 1e-9);
    }
}
