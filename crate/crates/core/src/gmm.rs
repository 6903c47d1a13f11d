//! Symbolic state space: a diagonal Gaussian per image cluster plus one
//! state per directly symbolised token, and probabilistic grounding into it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::Clustering;
use crate::corpus::{ObsKind, Observation, Symbol};
use crate::distribution::StateDistribution;
use crate::latent::{EncoderModel, LatentError};

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GroundingError {
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
    #[error("{labels} labels for {latents} latents")]
    LabelCount { labels: usize, latents: usize },
    #[error("latent has dimension {found}, model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("latent is too far from every state (best log-density {0})")]
    Underflow(f64),
    #[error("invalid state-space model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Latent(#[from] LatentError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceModel {
    /// Image-derived states, `k` of them.
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// One name per state: `c0..c{k-1}`, then `s0`, `s1`, `s2`.
    pub state_names: Vec<String>,
}

impl StateSpaceModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Total state count `M = k + 3`.
    pub fn m(&self) -> usize {
        self.k() + Symbol::ALL.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn symbol_state(&self, symbol: Symbol) -> usize {
        self.k() + symbol.id()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<(), GroundingError> {
        let k = self.k();
        let invalid = |m: String| Err(GroundingError::Invalid(m));
        if k == 0 {
            return invalid("no image states".into());
        }
        if self.means.len() != k || self.variances.len() != k {
            return invalid(format!(
                "{k} weights but {} means and {} variances",
                self.means.len(),
                self.variances.len()
            ));
        }
        let l = self.latent_dim();
        if self.means.iter().chain(&self.variances).any(|v| v.len() != l) {
            return invalid("means/variances have inconsistent dimensions".into());
        }
        if self.variances.iter().flatten().any(|v| !(*v >= VARIANCE_FLOOR) || !v.is_finite()) {
            return invalid("variance below floor".into());
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return invalid("weights must be nonnegative and sum to 1".into());
        }
        if self.state_names.len() != self.m() {
            return invalid(format!("{} state names for {} states", self.state_names.len(), self.m()));
        }
        Ok(())
    }

    fn log_densities(&self, z: &[f64]) -> Vec<f64> {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(w, (mean, var))| {
                let quad: f64 = z
                    .iter()
                    .zip(mean.iter().zip(var))
                    .map(|(x, (m, v))| (x - m) * (x - m) / v + (ln_2pi + v.ln()))
                    .sum();
                w.ln() - 0.5 * quad
            })
            .collect()
    }

    /// `p_i ∝ w_i N(z; mu_i, diag(var_i))` over image states; symbolic states get 0.
    pub fn ground_latent(&self, z: &[f64]) -> Result<StateDistribution, GroundingError> {
        if z.len() != self.latent_dim() {
            return Err(GroundingError::Dimension { expected: self.latent_dim(), found: z.len() });
        }
        let logs = self.log_densities(z);
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max >= f64::MIN_POSITIVE.ln()) {
            return Err(GroundingError::Underflow(max));
        }
        let mut weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        weights.resize(self.m(), 0.0);
        Ok(StateDistribution::normalized(weights).expect("max term contributes 1"))
    }

    pub fn ground_symbol(&self, symbol: Symbol) -> StateDistribution {
        StateDistribution::one_hot(self.m(), self.symbol_state(symbol)).expect("symbol state in range")
    }

    /// Encodes raw observations with the posterior mean before grounding.
    pub fn ground_observation(
        &self,
        encoder: &EncoderModel,
        obs: &Observation,
    ) -> Result<StateDistribution, GroundingError> {
        match &obs.kind {
            ObsKind::Symbolic(s) => Ok(self.ground_symbol(*s)),
            ObsKind::Raw(x) => self.ground_latent(&encoder.embed(x)?),
        }
    }
}

/// Mixture built from hard cluster memberships.
pub fn fit_gmm(clustering: &Clustering, latents: &[Vec<f64>]) -> Result<StateSpaceModel, GroundingError> {
    if clustering.labels.len() != latents.len() {
        return Err(GroundingError::LabelCount { labels: clustering.labels.len(), latents: latents.len() });
    }
    let k = clustering.k;
    let l = latents.first().map_or(0, Vec::len);
    let mut counts = vec![0usize; k];
    let mut sums = vec![vec![0.0; l]; k];
    for (&c, z) in clustering.labels.iter().zip(latents) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(z) {
            *s += v;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(GroundingError::EmptyCluster(empty));
    }
    let means: Vec<Vec<f64>> =
        sums.iter().zip(&counts).map(|(s, &n)| s.iter().map(|v| v / n as f64).collect()).collect();
    let mut sq = vec![vec![0.0; l]; k];
    for (&c, z) in clustering.labels.iter().zip(latents) {
        for ((acc, v), m) in sq[c].iter_mut().zip(z).zip(&means[c]) {
            *acc += (v - m) * (v - m);
        }
    }
    let variances =
        sq.iter().zip(&counts).map(|(s, &n)| s.iter().map(|v| (v / n as f64).max(VARIANCE_FLOOR)).collect()).collect();
    let total = latents.len() as f64;
    let weights = counts.iter().map(|&n| n as f64 / total).collect();
    let mut state_names: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
    state_names.extend(Symbol::ALL.iter().map(|s| s.name().to_string()));
    Ok(StateSpaceModel { weights, means, variances, state_names })
}
