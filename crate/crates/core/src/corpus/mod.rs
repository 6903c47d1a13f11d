//! Demonstration corpora: action sequences that alternate observations and
//! action primitives, starting at the `s0` token and ending at `s2`.

mod generate;
mod io;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{sequence_type, ActionPrimitive};

pub use generate::{generate_demos, table1_corpus, CorpusGenConfig, Prototypes, SeqPattern, Situation};
pub use io::{read_corpus, write_corpus};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus is empty")]
    Empty,
    #[error("sequence `{seq_id}` is malformed: {reason}")]
    Malformed { seq_id: String, reason: String },
    #[error("observation id `{0}` appears more than once")]
    DuplicateObsId(String),
    #[error("observation `{obs_id}` has dimension {found}, expected {expected}")]
    DimensionMismatch { obs_id: String, expected: usize, found: usize },
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Directly symbolised sensory tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Symbol {
    /// Coarse bolt position known.
    S0,
    /// Bolt head fitted over by the wrench socket.
    S1,
    /// Bolt removed.
    S2,
}

impl Symbol {
    pub const ALL: [Symbol; 3] = [Symbol::S0, Symbol::S1, Symbol::S2];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Symbol::S0 => "s0",
            Symbol::S1 => "s1",
            Symbol::S2 => "s2",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ObsKind {
    /// Feature vector standing in for a camera image.
    Raw(Vec<f64>),
    Symbolic(Symbol),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: String,
    pub kind: ObsKind,
}

impl Observation {
    pub fn raw(id: impl Into<String>, features: Vec<f64>) -> Self {
        Self { id: id.into(), kind: ObsKind::Raw(features) }
    }

    pub fn symbolic(id: impl Into<String>, symbol: Symbol) -> Self {
        Self { id: id.into(), kind: ObsKind::Symbolic(symbol) }
    }

    pub fn features(&self) -> Option<&[f64]> {
        match &self.kind {
            ObsKind::Raw(v) => Some(v),
            ObsKind::Symbolic(_) => None,
        }
    }

    pub fn symbol(&self) -> Option<Symbol> {
        match self.kind {
            ObsKind::Symbolic(s) => Some(s),
            ObsKind::Raw(_) => None,
        }
    }
}

/// One demonstration. Observation `i` precedes action `i`; observation
/// `i + 1` is what was seen after it.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSequence {
    seq_id: String,
    seq_type: String,
    observations: Vec<Observation>,
    actions: Vec<ActionPrimitive>,
}

impl ActionSequence {
    pub fn new(
        seq_id: impl Into<String>,
        observations: Vec<Observation>,
        actions: Vec<ActionPrimitive>,
    ) -> Result<Self, CorpusError> {
        let seq_id = seq_id.into();
        let malformed = |reason: &str| CorpusError::Malformed { seq_id: seq_id.clone(), reason: reason.into() };
        if actions.is_empty() {
            return Err(malformed("no actions"));
        }
        if observations.len() != actions.len() + 1 {
            return Err(malformed("observations and actions do not alternate"));
        }
        if observations[0].symbol() != Some(Symbol::S0) {
            return Err(malformed("first observation must be the s0 token"));
        }
        if observations.last().and_then(Observation::symbol) != Some(Symbol::S2) {
            return Err(malformed("last observation must be the s2 token"));
        }
        let seq_type = sequence_type(&actions);
        Ok(Self { seq_id, seq_type, observations, actions })
    }

    pub fn seq_id(&self) -> &str {
        &self.seq_id
    }

    pub fn seq_type(&self) -> &str {
        &self.seq_type
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn actions(&self) -> &[ActionPrimitive] {
        &self.actions
    }

    /// Actions executed from observation slot `slot` to the end.
    pub fn suffix(&self, slot: usize) -> &[ActionPrimitive] {
        &self.actions[slot.min(self.actions.len())..]
    }
}

/// Location of an observation: sequence index and observation slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObsLoc {
    pub seq: usize,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoCorpus {
    sequences: Vec<ActionSequence>,
    dim: Option<usize>,
}

impl DemoCorpus {
    /// Checks id uniqueness and that raw features share one dimension.
    pub fn new(sequences: Vec<ActionSequence>) -> Result<Self, CorpusError> {
        if sequences.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut seen = HashSet::new();
        let mut dim = None;
        for obs in sequences.iter().flat_map(|s| s.observations.iter()) {
            if !seen.insert(obs.id.as_str()) {
                return Err(CorpusError::DuplicateObsId(obs.id.clone()));
            }
            if let Some(f) = obs.features() {
                match dim {
                    None => dim = Some(f.len()),
                    Some(d) if d != f.len() => {
                        return Err(CorpusError::DimensionMismatch {
                            obs_id: obs.id.clone(),
                            expected: d,
                            found: f.len(),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(Self { sequences, dim })
    }

    pub fn sequences(&self) -> &[ActionSequence] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Raw feature dimension, `None` if the corpus holds only symbols.
    pub fn feature_dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn get(&self, loc: ObsLoc) -> &Observation {
        &self.sequences[loc.seq].observations[loc.slot]
    }

    /// Every observation in corpus order (sequence by sequence, slot by slot).
    pub fn observations(&self) -> impl Iterator<Item = (ObsLoc, &Observation)> + '_ {
        self.sequences
            .iter()
            .enumerate()
            .flat_map(|(seq, s)| s.observations.iter().enumerate().map(move |(slot, o)| (ObsLoc { seq, slot }, o)))
    }

    /// Raw observations only, in corpus order. Latent matrices and cluster
    /// labels elsewhere are aligned with this order.
    pub fn raw_observations(&self) -> impl Iterator<Item = (ObsLoc, &[f64])> + '_ {
        self.observations().filter_map(|(loc, o)| o.features().map(|f| (loc, f)))
    }

    pub fn raw_count(&self) -> usize {
        self.raw_observations().count()
    }

    pub fn observation_count(&self) -> usize {
        self.sequences.iter().map(|s| s.observations.len()).sum()
    }
}
