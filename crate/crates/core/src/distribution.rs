//! Discrete belief over symbolic states and the divergences used to compare them.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Additive smoothing applied before taking a KL divergence.
pub const KL_SMOOTHING: f64 = 1e-6;

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DistributionError {
    #[error("distribution is empty")]
    Empty,
    #[error("entry {index} is {value}, expected a finite nonnegative number")]
    BadEntry { index: usize, value: f64 },
    #[error("entries sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("total mass is zero")]
    ZeroMass,
    #[error("index {index} out of range for {len} states")]
    OutOfRange { index: usize, len: usize },
}

/// `S_t = [p_1, ..., p_M]`: nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StateDistribution {
    probs: Vec<f64>,
}

impl StateDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, DistributionError> {
        check_entries(&probs)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistributionError::NotNormalized(sum));
        }
        Ok(Self { probs })
    }

    /// Scales nonnegative weights to unit mass.
    pub fn normalized(weights: Vec<f64>) -> Result<Self, DistributionError> {
        check_entries(&weights)?;
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(DistributionError::ZeroMass);
        }
        Ok(Self { probs: weights.into_iter().map(|w| w / sum).collect() })
    }

    pub fn one_hot(len: usize, index: usize) -> Result<Self, DistributionError> {
        if index >= len {
            return Err(DistributionError::OutOfRange { index, len });
        }
        let mut probs = vec![0.0; len];
        probs[index] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform(len: usize) -> Result<Self, DistributionError> {
        if len == 0 {
            return Err(DistributionError::Empty);
        }
        Ok(Self { probs: vec![1.0 / len as f64; len] })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Most probable state; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

fn check_entries(probs: &[f64]) -> Result<(), DistributionError> {
    if probs.is_empty() {
        return Err(DistributionError::Empty);
    }
    for (index, &value) in probs.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(DistributionError::BadEntry { index, value });
        }
    }
    Ok(())
}

impl TryFrom<Vec<f64>> for StateDistribution {
    type Error = DistributionError;

    fn try_from(probs: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(probs)
    }
}

impl From<StateDistribution> for Vec<f64> {
    fn from(d: StateDistribution) -> Self {
        d.probs
    }
}

impl fmt::Display for StateDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, p) in self.probs.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{p:.4}")?;
        }
        f.write_str("]")
    }
}

/// `KL(p || q)` in nats after adding [`KL_SMOOTHING`] to every entry of both
/// inputs and renormalising. Lengths must match.
pub fn kl_div(p: &StateDistribution, q: &StateDistribution) -> f64 {
    assert_eq!(p.len(), q.len(), "kl_div on distributions of different length");
    let zp = 1.0 + KL_SMOOTHING * p.len() as f64;
    let zq = 1.0 + KL_SMOOTHING * q.len() as f64;
    let kl: f64 = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(&a, &b)| {
            let a = (a + KL_SMOOTHING) / zp;
            let b = (b + KL_SMOOTHING) / zq;
            a * (a / b).ln()
        })
        .sum();
    // Rounding can leave a tiny negative value for identical inputs.
    kl.max(0.0)
}
