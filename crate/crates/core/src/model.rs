//! Time basis, per-actor parameters and the linear map to marginal effects.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default box bound on every parameter coordinate.
pub const BOX_BOUND: f64 = 15.0;

/// Default polynomial order of both trajectory bases.
pub const DEFAULT_ORDER: usize = 2;

/// Which of the two trajectory bases to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// Participation basis (multiplies `alpha`).
    Participation,
    /// Collaboration basis (multiplies `beta`).
    Collaboration,
}

/// Periods, their scaled times and the polynomial orders of both bases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeBasis {
    period_labels: Vec<String>,
    scaled_times: Vec<f64>,
    order1: usize,
    order2: usize,
}

impl TimeBasis {
    /// Builds the basis for `labels` (already in period order), mapping
    /// period `t` (0-based) to `2t/(T-1) - 1`, or to 0 when there is a
    /// single period.
    pub fn new(labels: Vec<String>, order1: usize, order2: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Domain("time basis needs at least one period".into()));
        }
        let t = labels.len();
        let scaled_times = (0..t)
            .map(|k| {
                if t == 1 {
                    0.0
                } else {
                    2.0 * k as f64 / (t - 1) as f64 - 1.0
                }
            })
            .collect();
        Ok(Self {
            period_labels: labels,
            scaled_times,
            order1,
            order2,
        })
    }

    /// Basis with explicit scaled times, used by tests and the simulator.
    pub fn with_scaled_times(
        labels: Vec<String>,
        scaled_times: Vec<f64>,
        order1: usize,
        order2: usize,
    ) -> Result<Self> {
        if labels.len() != scaled_times.len() || labels.is_empty() {
            return Err(Error::Shape(format!(
                "{} labels for {} scaled times",
                labels.len(),
                scaled_times.len()
            )));
        }
        if scaled_times.iter().any(|s| !(-1.0..=1.0).contains(s)) {
            return Err(Error::Domain("scaled times must lie in [-1, 1]".into()));
        }
        if scaled_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("scaled times must be strictly increasing".into()));
        }
        Ok(Self {
            period_labels: labels,
            scaled_times,
            order1,
            order2,
        })
    }

    /// Basis over `periods` unnamed periods labelled `1..=periods`.
    pub fn indexed(periods: usize, order1: usize, order2: usize) -> Result<Self> {
        Self::new((1..=periods).map(|t| t.to_string()).collect(), order1, order2)
    }

    pub fn periods(&self) -> usize {
        self.period_labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.period_labels
    }

    pub fn scaled_times(&self) -> &[f64] {
        &self.scaled_times
    }

    pub fn order1(&self) -> usize {
        self.order1
    }

    pub fn order2(&self) -> usize {
        self.order2
    }

    /// Number of free coordinates per actor (`alpha` then `beta`).
    pub fn param_len(&self) -> usize {
        self.order1 + self.order2 + 2
    }

    /// `(1, s, s^2, ..., s^q)` for the period's scaled time `s`.
    pub fn row(&self, period: usize, which: Basis) -> Result<Vec<f64>> {
        let s = *self.scaled_times.get(period).ok_or_else(|| {
            Error::Range(format!(
                "period {period} outside 0..{}",
                self.scaled_times.len()
            ))
        })?;
        let q = match which {
            Basis::Participation => self.order1,
            Basis::Collaboration => self.order2,
        };
        Ok(powers(s, q))
    }

    /// Human-readable period -> scaled time map for output metadata.
    pub fn scaling_map(&self) -> Vec<(String, f64)> {
        self.period_labels
            .iter()
            .cloned()
            .zip(self.scaled_times.iter().copied())
            .collect()
    }
}

pub(crate) fn powers(s: f64, q: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(q + 1);
    let mut v = 1.0;
    for _ in 0..=q {
        out.push(v);
        v *= s;
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trajectory coefficients of one actor: participation (`alpha`) and
/// collaboration (`beta`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ActorParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        Self { alpha, beta }
    }

    pub fn zeros(basis: &TimeBasis) -> Self {
        Self {
            alpha: vec![0.0; basis.order1() + 1],
            beta: vec![0.0; basis.order2() + 1],
        }
    }

    /// Concatenation `(alpha, beta)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.alpha.clone();
        v.extend_from_slice(&self.beta);
        v
    }

    pub fn from_slice(delta: &[f64], basis: &TimeBasis) -> Result<Self> {
        if delta.len() != basis.param_len() {
            return Err(Error::Shape(format!(
                "parameter vector of length {} for basis needing {}",
                delta.len(),
                basis.param_len()
            )));
        }
        let (a, b) = delta.split_at(basis.order1() + 1);
        Ok(Self::new(a.to_vec(), b.to_vec()))
    }

    pub fn check_shape(&self, basis: &TimeBasis) -> Result<()> {
        if self.alpha.len() != basis.order1() + 1 || self.beta.len() != basis.order2() + 1 {
            return Err(Error::Shape(format!(
                "alpha/beta lengths ({}, {}) do not match orders ({}, {})",
                self.alpha.len(),
                self.beta.len(),
                basis.order1(),
                basis.order2()
            )));
        }
        Ok(())
    }

    /// True when every coordinate is finite and inside `[-bound, bound]`.
    pub fn within_box(&self, bound: f64) -> bool {
        self.alpha
            .iter()
            .chain(&self.beta)
            .all(|v| v.is_finite() && v.abs() <= bound)
    }
}

/// Marginal logits of two actors and their log-odds ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalTriple {
    pub eta_i: f64,
    pub eta_j: f64,
    pub eta_ij: f64,
}

impl MarginalTriple {
    pub fn new(eta_i: f64, eta_j: f64, eta_ij: f64) -> Self {
        Self { eta_i, eta_j, eta_ij }
    }

    pub fn is_finite(&self) -> bool {
        self.eta_i.is_finite() && self.eta_j.is_finite() && self.eta_ij.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.eta_i, self.eta_j, self.eta_ij]
    }
}

/// `eta_i = f1'alpha_i`, `eta_j = f1'alpha_j`, `eta_ij = f2'(beta_i + beta_j)`.
pub fn marginal_triple(
    p_i: &ActorParams,
    p_j: &ActorParams,
    basis: &TimeBasis,
    period: usize,
) -> Result<MarginalTriple> {
    p_i.check_shape(basis)?;
    p_j.check_shape(basis)?;
    let f1 = basis.row(period, Basis::Participation)?;
    let f2 = basis.row(period, Basis::Collaboration)?;
    let beta_sum: Vec<f64> = p_i.beta.iter().zip(&p_j.beta).map(|(a, b)| a + b).collect();
    Ok(MarginalTriple {
        eta_i: dot(&f1, &p_i.alpha),
        eta_j: dot(&f1, &p_j.alpha),
        eta_ij: dot(&f2, &beta_sum),
    })
}
