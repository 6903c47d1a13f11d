//! Pairwise image relationships derived from demonstrations.
//!
//! * inclusive: both images are followed by the identical action suffix;
//! * exclusive: the images sit at different slots of one demonstration, or
//!   one of them shares a demonstration with an image inclusive with the
//!   other (one hop, then symmetric closure);
//! * independent: neither.
//!
//! Exclusive takes priority over inclusive. Only raw-feature observations
//! take part.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionPrimitive;
use crate::corpus::{DemoCorpus, ObsLoc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationLabel {
    Inclusive,
    Exclusive,
    Independent,
}

impl RelationLabel {
    pub const ALL: [RelationLabel; 3] =
        [RelationLabel::Inclusive, RelationLabel::Exclusive, RelationLabel::Independent];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RelationLabel::Inclusive => "inclusive",
            RelationLabel::Exclusive => "exclusive",
            RelationLabel::Independent => "independent",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RelationError {
    #[error("unknown raw observation `{0}`")]
    UnknownObservation(String),
    #[error("an observation cannot be paired with itself (`{0}`)")]
    SelfPair(String),
    #[error("no {0} pairs exist in the corpus")]
    EmptyClass(RelationLabel),
    #[error("label ratios must be nonnegative and sum to 1, got {0:?}")]
    Ratios([f64; 3]),
}

#[derive(Debug, Clone)]
struct RawEntry {
    id: String,
    loc: ObsLoc,
    suffix: usize,
}

/// Relationship index over the raw observations of a corpus.
///
/// Raw observations are numbered in corpus order (see
/// [`DemoCorpus::raw_observations`]). Membership tests are constant time;
/// the inclusive and exclusive sets are materialised on demand.
#[derive(Debug, Clone)]
pub struct RelationIndex {
    entries: Vec<RawEntry>,
    by_id: HashMap<String, usize>,
    /// Suffix ids of the raw observations of each sequence.
    seq_suffixes: Vec<Vec<usize>>,
    suffixes: Vec<Vec<ActionPrimitive>>,
}

impl RelationIndex {
    pub fn build(corpus: &DemoCorpus) -> Self {
        let mut suffix_ids: HashMap<Vec<ActionPrimitive>, usize> = HashMap::new();
        let mut suffixes = Vec::new();
        let mut entries = Vec::new();
        let mut seq_suffixes = vec![Vec::new(); corpus.len()];
        for (loc, obs) in corpus.observations() {
            if obs.features().is_none() {
                continue;
            }
            let suffix = corpus.sequences()[loc.seq].suffix(loc.slot).to_vec();
            let next = suffix_ids.len();
            let sid = *suffix_ids.entry(suffix.clone()).or_insert_with(|| {
                suffixes.push(suffix);
                next
            });
            seq_suffixes[loc.seq].push(sid);
            entries.push(RawEntry { id: obs.id.clone(), loc, suffix: sid });
        }
        let by_id = entries.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        Self { entries, by_id, seq_suffixes, suffixes }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize, RelationError> {
        self.by_id.get(id).copied().ok_or_else(|| RelationError::UnknownObservation(id.to_string()))
    }

    pub fn obs_id(&self, i: usize) -> &str {
        &self.entries[i].id
    }

    pub fn loc(&self, i: usize) -> ObsLoc {
        self.entries[i].loc
    }

    /// Action suffix following raw observation `i`.
    pub fn suffix(&self, i: usize) -> &[ActionPrimitive] {
        &self.suffixes[self.entries[i].suffix]
    }

    pub fn is_inclusive(&self, a: usize, b: usize) -> bool {
        self.entries[a].suffix == self.entries[b].suffix
    }

    /// Symmetric one-hop exclusivity: `b`'s demonstration holds another image
    /// with `a`'s suffix, or vice versa.
    pub fn is_exclusive(&self, a: usize, b: usize) -> bool {
        let (ea, eb) = (&self.entries[a], &self.entries[b]);
        if ea.suffix == eb.suffix {
            // Slots of one demonstration never share a suffix, so the only
            // image in `b`'s demonstration with `a`'s suffix would be `b`.
            return false;
        }
        self.seq_suffixes[eb.loc.seq].contains(&ea.suffix) || self.seq_suffixes[ea.loc.seq].contains(&eb.suffix)
    }

    /// Label by raw index. Exclusive outranks inclusive.
    pub fn label(&self, a: usize, b: usize) -> RelationLabel {
        if self.is_exclusive(a, b) {
            RelationLabel::Exclusive
        } else if self.is_inclusive(a, b) {
            RelationLabel::Inclusive
        } else {
            RelationLabel::Independent
        }
    }

    /// Raw observations with the same subsequent action suffix (includes `id` itself).
    pub fn inclusive_set(&self, id: &str) -> Result<Vec<&str>, RelationError> {
        let a = self.index_of(id)?;
        Ok((0..self.len()).filter(|&b| self.is_inclusive(a, b)).map(|b| self.obs_id(b)).collect())
    }

    pub fn exclusive_set(&self, id: &str) -> Result<Vec<&str>, RelationError> {
        let a = self.index_of(id)?;
        Ok((0..self.len()).filter(|&b| self.is_exclusive(a, b)).map(|b| self.obs_id(b)).collect())
    }

    /// Groups raw observations that are interchangeable for labelling: same
    /// suffix and same set of suffixes in their demonstration.
    fn profiles(&self) -> Vec<Vec<usize>> {
        let mut map: BTreeMap<(usize, Vec<usize>), Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            let mut set = self.seq_suffixes[e.loc.seq].clone();
            set.sort_unstable();
            set.dedup();
            map.entry((e.suffix, set)).or_default().push(i);
        }
        map.into_values().collect()
    }

    /// Number of ordered pairs `(a, b)`, `a != b`, per label.
    pub fn label_counts(&self) -> [u64; 3] {
        let profiles = self.profiles();
        let mut counts = [0u64; 3];
        for (pi, p) in profiles.iter().enumerate() {
            for (qi, q) in profiles.iter().enumerate() {
                let pairs = pair_count(p.len(), q.len(), pi == qi);
                if pairs > 0 {
                    counts[self.label(p[0], q[0]).index()] += pairs;
                }
            }
        }
        counts
    }
}

fn pair_count(np: usize, nq: usize, same: bool) -> u64 {
    if same {
        (np * np.saturating_sub(1)) as u64
    } else {
        (np * nq) as u64
    }
}

/// Classifies two distinct raw observations by id.
pub fn classify_relation(index: &RelationIndex, a: &str, b: &str) -> Result<RelationLabel, RelationError> {
    let ia = index.index_of(a)?;
    let ib = index.index_of(b)?;
    if ia == ib {
        return Err(RelationError::SelfPair(a.to_string()));
    }
    Ok(index.label(ia, ib))
}

/// A labelled training pair of raw observation indices (see [`RelationIndex`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingPair {
    pub a: usize,
    pub b: usize,
    pub label: RelationLabel,
}

/// Reusable sampler; the pair table is computed once.
#[derive(Debug, Clone)]
pub struct PairSampler {
    ratios: [f64; 3],
    /// Per label: (cumulative weight, profile a, profile b).
    tables: [Vec<(u64, usize, usize)>; 3],
    profiles: Vec<Vec<usize>>,
}

impl PairSampler {
    pub fn new(index: &RelationIndex, ratios: [f64; 3]) -> Result<Self, RelationError> {
        let sum: f64 = ratios.iter().sum();
        if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(RelationError::Ratios(ratios));
        }
        let profiles = index.profiles();
        let mut tables: [Vec<(u64, usize, usize)>; 3] = Default::default();
        for (pi, p) in profiles.iter().enumerate() {
            for (qi, q) in profiles.iter().enumerate() {
                let w = pair_count(p.len(), q.len(), pi == qi);
                if w == 0 {
                    continue;
                }
                let table = &mut tables[index.label(p[0], q[0]).index()];
                let acc = table.last().map_or(0, |t| t.0) + w;
                table.push((acc, pi, qi));
            }
        }
        for label in RelationLabel::ALL {
            if ratios[label.index()] > 0.0 && tables[label.index()].is_empty() {
                return Err(RelationError::EmptyClass(label));
            }
        }
        Ok(Self { ratios, tables, profiles })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TrainingPair {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut label = RelationLabel::ALL.into_iter().rev().find(|l| self.ratios[l.index()] > 0.0).unwrap();
        for l in RelationLabel::ALL {
            acc += self.ratios[l.index()];
            if u < acc && self.ratios[l.index()] > 0.0 {
                label = l;
                break;
            }
        }
        let table = &self.tables[label.index()];
        let total = table.last().expect("non-empty by construction").0;
        let pick = rng.random_range(0..total);
        let slot = table.partition_point(|t| t.0 <= pick);
        let (_, pi, qi) = table[slot];
        let (p, q) = (&self.profiles[pi], &self.profiles[qi]);
        let a = p[rng.random_range(0..p.len())];
        let b = if pi == qi {
            // Uniform over the other members of the shared profile.
            let j = rng.random_range(0..p.len() - 1);
            let ia = p.iter().position(|&x| x == a).unwrap();
            p[if j >= ia { j + 1 } else { j }]
        } else {
            q[rng.random_range(0..q.len())]
        };
        TrainingPair { a, b, label }
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<TrainingPair> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

/// Draws `batch_size` labelled pairs; label proportions follow `ratios`
/// (inclusive, exclusive, independent).
pub fn sample_training_pairs(
    index: &RelationIndex,
    batch_size: usize,
    ratios: [f64; 3],
    seed: u64,
) -> Result<Vec<TrainingPair>, RelationError> {
    let sampler = PairSampler::new(index, ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sampler.sample_batch(batch_size, &mut rng))
}
