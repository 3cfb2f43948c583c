//! Absolute moments of transmit-signal distributions, either estimated from
//! samples or in closed form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::ComplexSample;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MomentError {
    #[error("cannot estimate moments from an empty sample set")]
    EmptyInput,
    #[error("constellation is empty")]
    EmptyConstellation,
    #[error("invalid moment request: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentKind {
    /// `[μ₂, μ₄, …, μ_{2K}]`
    EvenOnly,
    /// `[μ₁, μ₂, …, μ_K]`
    AllOrders,
}

/// Absolute moments `μ_m = E|x|^m` of a signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    kind: MomentKind,
    values: Vec<f64>,
}

impl MomentVector {
    pub fn new(kind: MomentKind, values: Vec<f64>) -> Result<Self, MomentError> {
        if values.is_empty() {
            return Err(MomentError::Invalid("moment vector must hold at least one value".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(MomentError::Invalid(format!("absolute moment {v} is negative or non-finite")));
        }
        Ok(Self { kind, values })
    }

    pub fn even(values: Vec<f64>) -> Result<Self, MomentError> {
        Self::new(MomentKind::EvenOnly, values)
    }

    pub fn all_orders(values: Vec<f64>) -> Result<Self, MomentError> {
        Self::new(MomentKind::AllOrders, values)
    }

    pub fn kind(&self) -> MomentKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// K: number of stored moments.
    pub fn max_index(&self) -> usize {
        self.values.len()
    }

    /// Highest absolute order `m` for which `μ_m` is available.
    pub fn max_order(&self) -> usize {
        match self.kind {
            MomentKind::EvenOnly => 2 * self.values.len(),
            MomentKind::AllOrders => self.values.len(),
        }
    }

    /// `μ_m`, with `μ₀ = 1`. `None` when the order is not stored.
    pub fn absolute(&self, m: usize) -> Option<f64> {
        if m == 0 {
            return Some(1.0);
        }
        match self.kind {
            MomentKind::EvenOnly if m.is_multiple_of(2) => self.values.get(m / 2 - 1).copied(),
            MomentKind::EvenOnly => None,
            MomentKind::AllOrders => self.values.get(m - 1).copied(),
        }
    }

    /// Signal power `μ₂`.
    pub fn power(&self) -> Option<f64> {
        self.absolute(2)
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Plain sample averages of `|x|^m` for the requested orders.
pub fn estimate_moments(samples: &[ComplexSample], k: usize, kind: MomentKind) -> Result<MomentVector, MomentError> {
    if samples.is_empty() {
        return Err(MomentError::EmptyInput);
    }
    if k == 0 {
        return Err(MomentError::Invalid("K must be at least 1".into()));
    }
    let mut sums = vec![CompensatedSum::default(); k];
    for x in samples {
        match kind {
            MomentKind::EvenOnly => {
                let a2 = x.norm_sqr();
                let mut p = 1.0;
                for s in sums.iter_mut() {
                    p *= a2;
                    s.add(p);
                }
            }
            MomentKind::AllOrders => {
                let a = x.norm();
                let mut p = 1.0;
                for s in sums.iter_mut() {
                    p *= a;
                    s.add(p);
                }
            }
        }
    }
    let n = samples.len() as f64;
    MomentVector::new(kind, sums.iter().map(|s| s.value() / n).collect())
}

/// `μ_{2m} = σ^{2m}·m!` for circularly-symmetric complex Gaussian input.
pub fn gaussian_moments(variance: f64, k: usize) -> MomentVector {
    assert!(variance > 0.0, "variance must be positive");
    let mut values = Vec::with_capacity(k);
    let mut v = 1.0;
    for m in 1..=k {
        v *= variance * m as f64;
        values.push(v);
    }
    MomentVector { kind: MomentKind::EvenOnly, values }
}

/// `μ_{2m} = k^{2m}/(2m+1)` for a real signal uniform on `[-k, k]`.
pub fn uniform_moments(half_width: f64, k: usize) -> MomentVector {
    assert!(half_width > 0.0, "half width must be positive");
    let values = (1..=k)
        .map(|m| half_width.powi(2 * m as i32) / (2 * m + 1) as f64)
        .collect();
    MomentVector { kind: MomentKind::EvenOnly, values }
}

/// Moments `E[X^m] = m!/λ^m` of an exponential variable.
pub fn exponential_moments(rate: f64, k: usize, kind: MomentKind) -> MomentVector {
    assert!(rate > 0.0, "rate must be positive");
    let raw = |m: usize| (1..=m).fold(1.0, |acc, i| acc * i as f64 / rate);
    let values = match kind {
        MomentKind::EvenOnly => (1..=k).map(|m| raw(2 * m)).collect(),
        MomentKind::AllOrders => (1..=k).map(raw).collect(),
    };
    MomentVector { kind, values }
}

/// Even moments of a constellation with equiprobable symbols.
pub fn qam_moments(constellation: &[ComplexSample], k: usize) -> Result<MomentVector, MomentError> {
    if constellation.is_empty() {
        return Err(MomentError::EmptyConstellation);
    }
    estimate_moments(constellation, k, MomentKind::EvenOnly)
}

/// Moments of `σ·x` given the moments of `x`.
pub fn scale_moments(mu: &MomentVector, sigma: f64) -> MomentVector {
    assert!(sigma > 0.0, "scale must be positive");
    let order_of = |i: usize| match mu.kind {
        MomentKind::EvenOnly => 2 * (i + 1),
        MomentKind::AllOrders => i + 1,
    };
    let values = mu
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| v * sigma.powi(order_of(i) as i32))
        .collect();
    MomentVector { kind: mu.kind, values }
}
