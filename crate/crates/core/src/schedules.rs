//! Step-size and memory sequences.
//!
//! Steps follow `γ_n = γ n^{-β}` with `β ∈ (0, 1]`. The memory coefficient
//! is either constant (`r_n = r`, exponential memory) or `r_n = r / Γ_n`
//! (polynomial memory), where `Γ_n = γ_1 + … + γ_n`.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepSchedule {
    gamma: f64,
    beta: f64,
}

impl StepSchedule {
    pub fn new(gamma: f64, beta: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidSchedule(format!("step scale must be > 0, got {gamma}")));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "step exponent must lie in (0, 1], got {beta}"
            )));
        }
        Ok(StepSchedule { gamma, beta })
    }

    /// Constant steps `γ_n = γ`. Only meant for comparisons against the
    /// continuous-time dynamics; the stochastic theory needs `β > 0`.
    pub fn constant(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidSchedule(format!("step scale must be > 0, got {gamma}")));
        }
        Ok(StepSchedule { gamma, beta: 0.0 })
    }

    pub fn scale(&self) -> f64 {
        self.gamma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `γ_n`. Index 0 is rejected.
    pub fn gamma(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidArgument("step index starts at 1".into()));
        }
        Ok(self.gamma_at(n))
    }

    /// `γ_n` without the index check, for the inner loops.
    #[inline]
    pub(crate) fn gamma_at(&self, n: u64) -> f64 {
        debug_assert!(n >= 1);
        let nf = n as f64;
        if self.beta == 1.0 {
            self.gamma / nf
        } else if self.beta == 0.5 {
            self.gamma / nf.sqrt()
        } else if self.beta == 0.0 {
            self.gamma
        } else if self.beta == 0.75 {
            let q = nf.sqrt();
            self.gamma / (q * q.sqrt())
        } else {
            self.gamma * nf.powf(-self.beta)
        }
    }

    /// `Γ_n` computed directly with compensated summation; `Γ_0 = 0`.
    pub fn big_gamma(&self, n: u64) -> f64 {
        let mut sum = KahanSum::default();
        for k in 1..=n {
            sum.add(self.gamma_at(k));
        }
        sum.value()
    }

    /// `Γ_n^{(2)} = γ_1² + … + γ_n²`.
    pub fn big_gamma2(&self, n: u64) -> f64 {
        let mut sum = KahanSum::default();
        for k in 1..=n {
            let g = self.gamma_at(k);
            sum.add(g * g);
        }
        sum.value()
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Incrementally extended table of `Γ_n` and `Γ_n^{(2)}`. Lookups past the
/// current end extend the table, so repeated queries cost O(1) amortized.
#[derive(Debug, Clone)]
pub struct PartialSums {
    schedule: StepSchedule,
    first: Vec<f64>,
    second: Vec<f64>,
    acc1: KahanSum,
    acc2: KahanSum,
}

impl PartialSums {
    pub fn new(schedule: StepSchedule) -> Self {
        PartialSums {
            schedule,
            first: vec![0.0],
            second: vec![0.0],
            acc1: KahanSum::default(),
            acc2: KahanSum::default(),
        }
    }

    /// Table pre-filled up to `horizon`; afterwards it can be shared read-only.
    pub fn tabulated(schedule: StepSchedule, horizon: u64) -> Self {
        let mut t = Self::new(schedule);
        t.extend_to(horizon);
        t
    }

    fn extend_to(&mut self, n: u64) {
        while (self.first.len() as u64) <= n {
            let k = self.first.len() as u64;
            let g = self.schedule.gamma_at(k);
            self.acc1.add(g);
            self.acc2.add(g * g);
            self.first.push(self.acc1.value());
            self.second.push(self.acc2.value());
        }
    }

    pub fn big_gamma(&mut self, n: u64) -> f64 {
        self.extend_to(n);
        self.first[n as usize]
    }

    pub fn big_gamma2(&mut self, n: u64) -> f64 {
        self.extend_to(n);
        self.second[n as usize]
    }

    /// Read-only lookup; `None` past the tabulated range.
    pub fn get(&self, n: u64) -> Option<f64> {
        self.first.get(n as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MemorySchedule {
    /// `r_n = r`.
    Exponential { r: f64 },
    /// `r_n = r / Γ_n`, with `r_0 = r / γ_1`.
    Polynomial { r: f64 },
}

impl MemorySchedule {
    pub fn exponential(r: f64) -> Result<Self> {
        Self::check(r)?;
        Ok(MemorySchedule::Exponential { r })
    }

    pub fn polynomial(r: f64) -> Result<Self> {
        Self::check(r)?;
        Ok(MemorySchedule::Polynomial { r })
    }

    fn check(r: f64) -> Result<()> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::InvalidSchedule(format!("memory parameter must be > 0, got {r}")));
        }
        Ok(())
    }

    pub fn r(&self) -> f64 {
        match *self {
            MemorySchedule::Exponential { r } | MemorySchedule::Polynomial { r } => r,
        }
    }

    pub fn is_polynomial(&self) -> bool {
        matches!(self, MemorySchedule::Polynomial { .. })
    }

    /// `r_n` given `Γ_n`. At `n = 0` the polynomial case uses `Γ_0 := γ_1`.
    #[inline]
    pub fn value(&self, n: u64, big_gamma: f64, schedule: &StepSchedule) -> f64 {
        match *self {
            MemorySchedule::Exponential { r } => r,
            MemorySchedule::Polynomial { r } => {
                if n == 0 {
                    r / schedule.gamma_at(1)
                } else {
                    r / big_gamma
                }
            }
        }
    }

    /// `r_∞`: `r` for exponential memory, `0` for polynomial memory.
    pub fn limit(&self) -> f64 {
        match *self {
            MemorySchedule::Exponential { r } => r,
            MemorySchedule::Polynomial { .. } => 0.0,
        }
    }

    /// Limit of [`cr_estimate`]: `0` (exponential) or `1 / (2r)` (polynomial).
    pub fn c_r_limit(&self) -> f64 {
        match *self {
            MemorySchedule::Exponential { .. } => 0.0,
            MemorySchedule::Polynomial { r } => 1.0 / (2.0 * r),
        }
    }

    /// Whether the limit of [`cr_estimate`] is below 1.
    pub fn satisfies_cr_condition(&self) -> bool {
        self.c_r_limit() < 1.0
    }
}

/// `r_n`, computing `Γ_n` from scratch.
pub fn memory_r(mem: &MemorySchedule, sched: &StepSchedule, n: u64) -> f64 {
    mem.value(n, sched.big_gamma(n), sched)
}

/// Spectral-gap constant: `r (1 - √(1 - 4λ/r))` if `r ≥ 4λ`, else `r`.
pub fn alpha_r(r: f64, lambda: f64) -> f64 {
    if r >= 4.0 * lambda {
        r * (1.0 - (1.0 - 4.0 * lambda / r).max(0.0).sqrt())
    } else {
        r
    }
}

/// `(1 + β) / (2 (1 - β))`, the memory threshold above which polynomial
/// memory keeps the `γ_n` rate.
pub fn poly_rate_threshold(beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold defined for β in (0, 1) only, got {beta}"
        )));
    }
    Ok((1.0 + beta) / (2.0 * (1.0 - beta)))
}

/// Finite-`n` value of `(1 / (2 γ_{n+1})) (1/r_n - 1/r_{n-1})`.
pub fn cr_estimate(mem: &MemorySchedule, sched: &StepSchedule, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("c_r estimate needs n >= 1".into()));
    }
    Ok(match mem {
        MemorySchedule::Exponential { .. } => 0.0,
        MemorySchedule::Polynomial { r } => {
            // 1/r_n - 1/r_{n-1} = (Γ_n - Γ_{n-1}) / r = γ_n / r, except at n = 1
            // where r_0 = r / γ_1 makes the difference vanish.
            let diff = if n == 1 { 0.0 } else { sched.gamma_at(n) / r };
            diff / (2.0 * sched.gamma_at(n + 1))
        }
    })
}
