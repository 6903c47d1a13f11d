//! End-to-end operator learning: encoder training, state-space selection,
//! grounding model and transition model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{k_curve, k_seed, kmeans_fit, select_k, ClusterError, KCurvePoint, SelectKConfig};
use crate::corpus::{DemoCorpus, Observation};
use crate::distribution::StateDistribution;
use crate::executor::Perceive;
use crate::gmm::{fit_gmm, GroundingError, StateSpaceModel};
use crate::groups::extract_groups;
use crate::latent::{train, EncoderModel, LatentError, LossConfig, TrainConfig, TrainReport};
use crate::relation::RelationIndex;
use crate::transition::{build_counts, learn_feasibility, TransitionError, TransitionModel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("corpus has no raw observations")]
    NoRawObservations,
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub latent_dim: usize,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub select: SelectKConfig,
    /// Skip selection and cluster with exactly this many states.
    pub forced_k: Option<usize>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            select: SelectKConfig::default(),
            forced_k: None,
        }
    }
}

impl LearnConfig {
    /// Uses one seed for initialisation, training and clustering.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.select.seed = seed;
        self
    }
}

/// Learned operators: the grounding model (encoder + state space) and the
/// transition model over its states.
#[derive(Debug, Clone, PartialEq)]
pub struct Operators {
    pub encoder: EncoderModel,
    pub states: StateSpaceModel,
    pub transitions: TransitionModel,
}

impl Operators {
    pub fn ground(&self, obs: &Observation) -> Result<StateDistribution, GroundingError> {
        self.states.ground_observation(&self.encoder, obs)
    }

    pub fn goal(&self, state: &str) -> Option<StateDistribution> {
        let i = self.states.state_index(state)?;
        StateDistribution::one_hot(self.states.m(), i).ok()
    }
}

impl Perceive for Operators {
    fn perceive(&self, obs: &Observation) -> Result<StateDistribution, String> {
        self.ground(obs).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnReport {
    pub train: TrainReport,
    pub curve: Vec<KCurvePoint>,
    pub k: usize,
}

/// Posterior means of every raw observation, in corpus order.
pub fn embed_corpus(encoder: &EncoderModel, corpus: &DemoCorpus) -> Result<Vec<Vec<f64>>, LatentError> {
    corpus.raw_observations().map(|(_, x)| encoder.embed(x)).collect()
}

pub fn learn_operators(corpus: &DemoCorpus, cfg: &LearnConfig) -> Result<(Operators, LearnReport), PipelineError> {
    let dim = corpus.feature_dim().ok_or(PipelineError::NoRawObservations)?;
    let index = RelationIndex::build(corpus);
    let init = EncoderModel::random(dim, cfg.latent_dim, cfg.train.seed);
    let (encoder, train_report) = train(&init, corpus, &index, &cfg.loss, &cfg.train)?;
    let latents = embed_corpus(&encoder, corpus)?;

    let (k, clustering, curve) = match cfg.forced_k {
        Some(k) => {
            let (curve, _) = k_curve(corpus, &latents, &cfg.select)?;
            (k, kmeans_fit(&latents, k, k_seed(cfg.select.seed, k), cfg.select.restarts)?, curve)
        }
        None => {
            let sel = select_k(corpus, &latents, &cfg.select)?;
            (sel.k, sel.clustering, sel.curve)
        }
    };
    let states = fit_gmm(&clustering, &latents)?;

    let mut latent_iter = latents.iter();
    let mut labels = Vec::with_capacity(corpus.observation_count());
    for (_, obs) in corpus.observations() {
        let belief = match obs.symbol() {
            Some(s) => states.ground_symbol(s),
            None => states.ground_latent(latent_iter.next().expect("one latent per raw observation"))?,
        };
        labels.push(belief.argmax());
    }
    let groups = extract_groups(corpus);
    let counts = build_counts(corpus, &groups, &labels, states.m())?;
    let feasibility = learn_feasibility(corpus, &groups);
    let transitions = TransitionModel::build(counts, feasibility, states.state_names.clone(), groups.names())?;
    Ok((Operators { encoder, states, transitions }, LearnReport { train: train_report, curve, k }))
}
