//! Synthetic demonstration corpora.
//!
//! Each image slot of a demonstration shows one of four physical situations
//! (clear/blocked x aligned/misaligned). A generated raw observation is the
//! situation prototype plus isotropic Gaussian noise.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ActionSequence, CorpusError, DemoCorpus, Observation, Symbol};
use crate::action::ActionPrimitive;

/// What the eye-in-hand camera sees once the tool has approached the bolt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Situation {
    ClearAligned,
    Misaligned,
    Blocked,
    BlockedMisaligned,
}

impl Situation {
    pub const ALL: [Situation; 4] =
        [Situation::ClearAligned, Situation::Misaligned, Situation::Blocked, Situation::BlockedMisaligned];

    pub fn new(misaligned: bool, blocked: bool) -> Self {
        match (misaligned, blocked) {
            (false, false) => Situation::ClearAligned,
            (true, false) => Situation::Misaligned,
            (false, true) => Situation::Blocked,
            (true, true) => Situation::BlockedMisaligned,
        }
    }

    pub fn is_misaligned(self) -> bool {
        matches!(self, Situation::Misaligned | Situation::BlockedMisaligned)
    }

    pub fn is_blocked(self) -> bool {
        matches!(self, Situation::Blocked | Situation::BlockedMisaligned)
    }

    /// Episode class label, named after the actions needed to reach `s1`.
    pub fn class_label(self) -> &'static str {
        match self {
            Situation::ClearAligned => "AI",
            Situation::Blocked => "API",
            Situation::Misaligned => "AMI",
            Situation::BlockedMisaligned => "APMI",
        }
    }

    /// The demonstration pattern whose post-Approach image shows this situation.
    pub fn pattern(self) -> SeqPattern {
        match self {
            Situation::ClearAligned => SeqPattern::Aid,
            Situation::Misaligned => SeqPattern::Amid,
            Situation::Blocked => SeqPattern::Apid,
            Situation::BlockedMisaligned => SeqPattern::Apmid,
        }
    }
}

impl fmt::Display for Situation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Situation::ClearAligned => "clear-aligned",
            Situation::Misaligned => "misaligned",
            Situation::Blocked => "blocked",
            Situation::BlockedMisaligned => "blocked-misaligned",
        };
        f.write_str(s)
    }
}

/// The four demonstrated sequence types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeqPattern {
    #[serde(rename = "AID")]
    Aid,
    #[serde(rename = "AMID")]
    Amid,
    #[serde(rename = "APID")]
    Apid,
    #[serde(rename = "APMID")]
    Apmid,
}

impl SeqPattern {
    pub const ALL: [SeqPattern; 4] = [SeqPattern::Aid, SeqPattern::Amid, SeqPattern::Apid, SeqPattern::Apmid];

    pub fn actions(self) -> Vec<ActionPrimitive> {
        use ActionPrimitive::*;
        match self {
            SeqPattern::Aid => vec![Approach, Insert, Disassemble],
            SeqPattern::Amid => vec![Approach, Mate, Insert, Disassemble],
            SeqPattern::Apid => vec![Approach, Push, Insert, Disassemble],
            SeqPattern::Apmid => vec![Approach, Push, Mate, Insert, Disassemble],
        }
    }

    /// Situations shown at each image slot (slots 1..=len, between actions).
    pub fn situations(self) -> Vec<Situation> {
        use Situation::*;
        match self {
            SeqPattern::Aid => vec![ClearAligned],
            SeqPattern::Amid => vec![Misaligned, ClearAligned],
            SeqPattern::Apid => vec![Blocked, ClearAligned],
            SeqPattern::Apmid => vec![BlockedMisaligned, Misaligned, ClearAligned],
        }
    }

    pub fn seq_type(self) -> &'static str {
        match self {
            SeqPattern::Aid => "AID",
            SeqPattern::Amid => "AMID",
            SeqPattern::Apid => "APID",
            SeqPattern::Apmid => "APMID",
        }
    }
}

/// Raw feature prototype for each situation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototypes {
    pub clear_aligned: Vec<f64>,
    pub misaligned: Vec<f64>,
    pub blocked: Vec<f64>,
    pub blocked_misaligned: Vec<f64>,
}

impl Prototypes {
    /// Distance between prototypes that share a demonstration.
    pub const DEFAULT_SPACING: f64 = 4.0;

    /// Default layout: the four prototypes lie on an arc in a fixed random
    /// plane, ordered blocked, clear-aligned, misaligned, blocked-misaligned,
    /// with neighbouring points `DEFAULT_SPACING` apart.
    ///
    /// Neighbours on the arc always co-occur in some demonstration, so
    /// collapsing any two adjacent situations is visible to the
    /// incorrect-sequence count used for choosing the number of states.
    /// Blocked and blocked-misaligned never share a demonstration and sit at
    /// the two ends.
    pub fn default_for_dim(dim: usize) -> Self {
        let step = 40f64.to_radians();
        let radius = Self::DEFAULT_SPACING / (2.0 * (step / 2.0).sin());
        let mut rng = ChaCha8Rng::seed_from_u64(0x005E_ED0F_B017);
        let (u, v) = orthonormal_pair(dim, &mut rng);
        let point = |i: usize| -> Vec<f64> {
            if dim == 1 {
                return vec![Self::DEFAULT_SPACING * (i as f64 - 1.0)];
            }
            let theta = step * i as f64;
            let (c, s) = (radius * theta.cos(), radius * theta.sin());
            u.iter().zip(&v).map(|(a, b)| c * a + s * b).collect()
        };
        Self { blocked: point(0), clear_aligned: point(1), misaligned: point(2), blocked_misaligned: point(3) }
    }

    pub fn get(&self, situation: Situation) -> &[f64] {
        match situation {
            Situation::ClearAligned => &self.clear_aligned,
            Situation::Misaligned => &self.misaligned,
            Situation::Blocked => &self.blocked,
            Situation::BlockedMisaligned => &self.blocked_misaligned,
        }
    }

    /// Common dimension, or `None` if the prototypes disagree.
    pub fn dim(&self) -> Option<usize> {
        let d = self.clear_aligned.len();
        Situation::ALL.iter().all(|s| self.get(*s).len() == d).then_some(d)
    }

    /// Smallest Euclidean distance between two prototypes.
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in Situation::ALL.iter().enumerate() {
            for b in &Situation::ALL[i + 1..] {
                let d: f64 = self.get(*a).iter().zip(self.get(*b)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                best = best.min(d);
            }
        }
        best
    }

    /// Prototype plus `N(0, sigma^2 I)` noise.
    pub fn sample<R: Rng + ?Sized>(&self, situation: Situation, sigma: f64, rng: &mut R) -> Vec<f64> {
        self.get(situation)
            .iter()
            .map(|&p| {
                let n: f64 = rng.sample(StandardNormal);
                p + sigma * n
            })
            .collect()
    }
}

fn orthonormal_pair<R: Rng>(dim: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let gauss = |rng: &mut R| -> Vec<f64> { (0..dim).map(|_| rng.sample(StandardNormal)).collect() };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut u = gauss(rng);
    let nu = norm(&u);
    u.iter_mut().for_each(|x| *x /= nu);
    let mut v = gauss(rng);
    if dim > 1 {
        let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(&u).for_each(|(x, a)| *x -= dot * a);
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
    }
    (u, v)
}

/// Generator settings. Counts are keyed by sequence type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusGenConfig {
    pub counts: BTreeMap<SeqPattern, usize>,
    pub dim: usize,
    pub sigma_obs: f64,
    pub prototypes: Prototypes,
}

impl CorpusGenConfig {
    /// Table 1 type mix (AID:AMID:APID:APMID = 2:2:1:1) scaled to `total` sequences.
    pub fn table1_mix(total: usize, dim: usize, sigma_obs: f64) -> Self {
        let weights = [(SeqPattern::Aid, 2), (SeqPattern::Amid, 2), (SeqPattern::Apid, 1), (SeqPattern::Apmid, 1)];
        let mut counts = BTreeMap::new();
        let mut assigned = 0;
        for (i, (p, w)) in weights.iter().enumerate() {
            let n = if i + 1 == weights.len() { total - assigned } else { (total * w + 3) / 6 };
            assigned += n;
            if n > 0 {
                counts.insert(*p, n);
            }
        }
        Self { counts, dim, sigma_obs, prototypes: Prototypes::default_for_dim(dim) }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.dim == 0 {
            return Err(CorpusError::Config("feature dimension must be positive".into()));
        }
        if self.counts.is_empty() || self.total() == 0 {
            return Err(CorpusError::Config("at least one sequence must be requested".into()));
        }
        if let Some((p, _)) = self.counts.iter().find(|(_, n)| **n == 0) {
            return Err(CorpusError::Config(format!("count for {} must be positive", p.seq_type())));
        }
        if !(self.sigma_obs.is_finite() && self.sigma_obs >= 0.0) {
            return Err(CorpusError::Config(format!("sigma_obs must be finite and >= 0, got {}", self.sigma_obs)));
        }
        match self.prototypes.dim() {
            Some(d) if d == self.dim => {}
            _ => return Err(CorpusError::Config(format!("prototypes must all have dimension {}", self.dim))),
        }
        let finite = Situation::ALL.iter().all(|s| self.prototypes.get(*s).iter().all(|x| x.is_finite()));
        if !finite {
            return Err(CorpusError::Config("prototype entries must be finite".into()));
        }
        Ok(())
    }
}

impl Default for CorpusGenConfig {
    fn default() -> Self {
        Self::table1_mix(2000, 16, 0.25)
    }
}

/// Generates a shuffled corpus. Identical `(config, seed)` give identical corpora.
pub fn generate_demos(config: &CorpusGenConfig, seed: u64) -> Result<DemoCorpus, CorpusError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut patterns: Vec<SeqPattern> = config.counts.iter().flat_map(|(p, n)| std::iter::repeat_n(*p, *n)).collect();
    patterns.shuffle(&mut rng);

    let sequences = patterns
        .into_iter()
        .enumerate()
        .map(|(i, pattern)| {
            let seq_id = format!("seq{i}");
            let actions = pattern.actions();
            let mut observations = Vec::with_capacity(actions.len() + 1);
            observations.push(Observation::symbolic(format!("{seq_id}/o0"), Symbol::S0));
            for (slot, situation) in pattern.situations().into_iter().enumerate() {
                let raw = config.prototypes.sample(situation, config.sigma_obs, &mut rng);
                observations.push(Observation::raw(format!("{seq_id}/o{}", slot + 1), raw));
            }
            let n = observations.len();
            observations.push(Observation::symbolic(format!("{seq_id}/o{n}"), Symbol::S1));
            observations.push(Observation::symbolic(format!("{seq_id}/o{}", n + 1), Symbol::S2));
            ActionSequence::new(seq_id, observations, actions)
        })
        .collect::<Result<Vec<_>, _>>()?;
    DemoCorpus::new(sequences)
}

/// The six demonstrations of Table 1, images numbered `img_1`..`img_11`,
/// each image placed exactly at its situation prototype.
pub fn table1_corpus(prototypes: &Prototypes) -> DemoCorpus {
    let rows =
        [SeqPattern::Aid, SeqPattern::Amid, SeqPattern::Aid, SeqPattern::Apid, SeqPattern::Amid, SeqPattern::Apmid];
    let mut img = 0;
    let sequences = rows
        .iter()
        .enumerate()
        .map(|(r, pattern)| {
            let seq_id = format!("{}", r + 1);
            let mut observations = vec![Observation::symbolic(format!("row{}/s0", r + 1), Symbol::S0)];
            for situation in pattern.situations() {
                img += 1;
                observations.push(Observation::raw(format!("img_{img}"), prototypes.get(situation).to_vec()));
            }
            observations.push(Observation::symbolic(format!("row{}/s1", r + 1), Symbol::S1));
            observations.push(Observation::symbolic(format!("row{}/s2", r + 1), Symbol::S2));
            ActionSequence::new(seq_id, observations, pattern.actions()).expect("table rows are well formed")
        })
        .collect();
    DemoCorpus::new(sequences).expect("table ids are unique")
}
