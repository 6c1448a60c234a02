//! Shared domain values: parameter vectors, stream samples and time indexing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A D-dimensional real parameter (global model, local model, gradient).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("parameter vector must have dimension >= 1"));
        }
        let v = ParameterVector(values);
        v.check_finite()?;
        Ok(v)
    }

    /// Wraps values produced by internal arithmetic without the finiteness scan.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        ParameterVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        ParameterVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.0.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!("coordinate {i} is {}", self.0[i]))),
        }
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                got: self.dim(),
            })
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, scale: f64, other: &ParameterVector) -> Result<()> {
        other.check_dim(self.dim())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParameterVector) -> Result<f64> {
        other.check_dim(self.dim())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn distance(&self, other: &ParameterVector) -> Result<f64> {
        other.check_dim(self.dim())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

impl From<ParameterVector> for Vec<f64> {
    fn from(v: ParameterVector) -> Self {
        v.0
    }
}

/// One `(x, y)` pair delivered to a client at a time step.
///
/// Classification labels are class indices stored as reals; regression labels
/// are normalized to `[0, 1]` by the data layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSample {
    pub features: Vec<f64>,
    pub label: f64,
}

impl StreamSample {
    pub fn new(features: Vec<f64>, label: f64) -> Self {
        StreamSample { features, label }
    }
}

/// Index of the global model in force at step `t` under transmission period `period`:
/// `floor((t-1)/L) * L + 1`.
pub fn psi(t: u64, period: u64) -> Result<u64> {
    if t < 1 {
        return Err(Error::invalid("time step t must be >= 1"));
    }
    if period < 1 {
        return Err(Error::invalid("period L must be >= 1"));
    }
    Ok((t - 1) / period * period + 1)
}

/// A 1-based time step together with the transmission period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeIndex {
    t: u64,
    period: u64,
}

impl TimeIndex {
    pub fn new(t: u64, period: u64) -> Result<Self> {
        psi(t, period)?;
        Ok(TimeIndex { t, period })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn psi(&self) -> u64 {
        (self.t - 1) / self.period * self.period + 1
    }

    /// `t - 1` is a multiple of L (t = 1 included): the client restarts from the broadcast.
    pub fn starts_period(&self) -> bool {
        (self.t - 1).is_multiple_of(self.period)
    }

    /// `t` is a multiple of L: clients may transmit and the server aggregates.
    pub fn is_boundary(&self) -> bool {
        self.t.is_multiple_of(self.period)
    }

    pub fn next(&self) -> TimeIndex {
        TimeIndex {
            t: self.t + 1,
            period: self.period,
        }
    }
}
