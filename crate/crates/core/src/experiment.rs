//! Batch evaluation of learned operators in the simulator.
//!
//! * `static`: each episode draws a fixed situation from a class mix and
//!   starts right after Approach, so the first plan is made from the image.
//! * `pos-noise`: the bolt offset is drawn from `N(0, sigma^2)`; episodes
//!   start before Approach.
//! * `obstacle`: an obstacle spawns with probability `p_obstacle` at a
//!   distance drawn from `N(0, sigma^2)`; episodes start before Approach.
//!
//! Episode `i` uses the seed `derive_seed(master, i)`, so results do not
//! depend on thread scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionPrimitive;
use crate::corpus::{Prototypes, Situation};
use crate::executor::{execute, EpisodeResult, ExecConfig};
use crate::pipeline::Operators;
use crate::sim::{required_sequence, DisassemblyEnv, EnvConfig, SimError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Static,
    PosNoise,
    Obstacle,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Static => "static",
            Regime::PosNoise => "pos-noise",
            Regime::Obstacle => "obstacle",
        })
    }
}

impl FromStr for Regime {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(Regime::Static),
            "pos-noise" => Ok(Regime::PosNoise),
            "obstacle" => Ok(Regime::Obstacle),
            other => Err(ExperimentError::Config(format!("unknown regime `{other}`"))),
        }
    }
}

/// Static-regime episode counts per situation in the order of
/// [`Situation::ALL`]; only the proportions matter.
pub const TABLE3_MIX: [u32; 4] = [1002, 952, 523, 527];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub regime: Regime,
    pub episodes: usize,
    pub seed: u64,
    /// Position or obstacle-distance spread; unused in the static regime.
    pub sigma: f64,
    pub p_obstacle: f64,
    pub sigma_obs: f64,
    pub alignment_tol: f64,
    pub obstacle_clearance: f64,
    pub static_mix: [u32; 4],
    pub prototypes: Prototypes,
    pub exec: ExecConfig,
}

impl ExperimentConfig {
    pub fn new(regime: Regime, prototypes: Prototypes) -> Self {
        Self {
            regime,
            episodes: 1000,
            seed: 0,
            sigma: 1.0,
            p_obstacle: 0.5,
            sigma_obs: 0.25,
            alignment_tol: 1.0,
            obstacle_clearance: 1.0,
            static_mix: TABLE3_MIX,
            prototypes,
            exec: ExecConfig::default(),
        }
    }

    fn env_config(&self, rng: &mut ChaCha8Rng) -> Result<EnvConfig, ExperimentError> {
        let mut env = EnvConfig::new(self.prototypes.clone());
        env.sigma_obs = self.sigma_obs;
        env.alignment_tol = self.alignment_tol;
        env.obstacle_clearance = self.obstacle_clearance;
        match self.regime {
            Regime::Static => {
                let total: u32 = self.static_mix.iter().sum();
                if total == 0 {
                    return Err(ExperimentError::Config("static class mix is all zero".into()));
                }
                let mut pick = rng.random_range(0..total);
                let mut situation = Situation::ClearAligned;
                for (s, &w) in Situation::ALL.iter().zip(&self.static_mix) {
                    if pick < w {
                        situation = *s;
                        break;
                    }
                    pick -= w;
                }
                if situation.is_misaligned() {
                    env.nominal_offset = 2.0 * self.alignment_tol;
                }
                if situation.is_blocked() {
                    env.p_obstacle = 1.0;
                }
            }
            Regime::PosNoise => env.sigma_pos = self.sigma,
            Regime::Obstacle => {
                env.p_obstacle = self.p_obstacle;
                env.sigma_obstacle = self.sigma;
            }
        }
        Ok(env)
    }
}

/// Stateless splitmix64 stream: the `index`-th output for a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub seed: u64,
    pub situation: Situation,
    /// Minimal action list from the episode's starting point.
    pub oracle: Vec<ActionPrimitive>,
    /// Everything executed, including a harness-issued Approach.
    pub executed: Vec<ActionPrimitive>,
    pub result: EpisodeResult,
}

fn action_counts(actions: &[ActionPrimitive]) -> [usize; 5] {
    let mut c = [0; 5];
    for a in actions {
        c[a.index()] += 1;
    }
    c
}

/// True when some action was executed more often than the oracle needs.
pub fn is_redundant(executed: &[ActionPrimitive], oracle: &[ActionPrimitive]) -> bool {
    let (e, o) = (action_counts(executed), action_counts(oracle));
    e.iter().zip(&o).any(|(x, y)| x > y)
}

pub fn run_episode(ops: &Operators, cfg: &ExperimentConfig, seed: u64) -> Result<EpisodeOutcome, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let env_cfg = cfg.env_config(&mut rng)?;
    let (mut env, _) = DisassemblyEnv::reset(env_cfg, rng.random())?;
    let situation = env.situation();
    let mut oracle = vec![ActionPrimitive::Approach];
    oracle.extend(required_sequence(situation));
    let mut executed = Vec::new();
    if cfg.regime == Regime::Static {
        env.apply(ActionPrimitive::Approach).map_err(|e| ExperimentError::Config(e.to_string()))?;
        executed.push(ActionPrimitive::Approach);
    }
    let goal = ops.goal("s2").ok_or_else(|| ExperimentError::Config("model has no s2 state".into()))?;
    let mut result = execute(&mut env, ops, &ops.transitions, &goal, &cfg.exec);
    executed.extend(&result.actions_executed);
    result.redundant = result.success && is_redundant(&executed, &oracle);
    Ok(EpisodeOutcome { seed, situation, oracle, executed, result })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub num: usize,
    pub first: usize,
    pub rectified: usize,
    /// Successful and no redundant actions.
    pub rigorous: usize,
}

impl ClassMetrics {
    fn add(&mut self, o: &EpisodeOutcome) {
        self.num += 1;
        if o.result.success {
            if o.result.replans == 0 {
                self.first += 1;
            } else {
                self.rectified += 1;
            }
            if !o.result.redundant {
                self.rigorous += 1;
            }
        }
    }

    fn rate(&self, n: usize) -> f64 {
        if self.num == 0 {
            0.0
        } else {
            n as f64 / self.num as f64
        }
    }

    pub fn first_sr(&self) -> f64 {
        self.rate(self.first)
    }

    pub fn rectified_sr(&self) -> f64 {
        self.rate(self.rectified)
    }

    pub fn overall_sr(&self) -> f64 {
        self.rate(self.first + self.rectified)
    }

    /// Standard success rate: any completion.
    pub fn ssr(&self) -> f64 {
        self.overall_sr()
    }

    /// Rigorous success rate: completion without redundant actions.
    pub fn rsr(&self) -> f64 {
        self.rate(self.rigorous)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub regime: Regime,
    pub sigma: f64,
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub overall: ClassMetrics,
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    regime: String,
    sigma: f64,
    class: &'a str,
    first_sr: f64,
    rectified_sr: f64,
    overall_sr: f64,
    ssr: f64,
    rsr: f64,
    num: usize,
}

impl MetricsReport {
    pub fn from_outcomes(regime: Regime, sigma: f64, outcomes: &[EpisodeOutcome]) -> Self {
        let mut per_class: BTreeMap<String, ClassMetrics> = BTreeMap::new();
        let mut overall = ClassMetrics::default();
        for o in outcomes {
            per_class.entry(o.situation.class_label().to_string()).or_default().add(o);
            overall.add(o);
        }
        Self { regime, sigma, per_class, overall }
    }

    /// One row per class plus an `overall` row.
    pub fn write_csv<W: Write>(reports: &[MetricsReport], out: W) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_writer(out);
        for r in reports {
            let rows = r.per_class.iter().map(|(c, m)| (c.as_str(), m)).chain([("overall", &r.overall)]);
            for (class, m) in rows {
                w.serialize(CsvRow {
                    regime: r.regime.to_string(),
                    sigma: r.sigma,
                    class,
                    first_sr: m.first_sr(),
                    rectified_sr: m.rectified_sr(),
                    overall_sr: m.overall_sr(),
                    ssr: m.ssr(),
                    rsr: m.rsr(),
                    num: m.num,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `cfg.episodes` episodes in parallel and aggregates them.
pub fn run_experiment(
    ops: &Operators,
    cfg: &ExperimentConfig,
) -> Result<(MetricsReport, Vec<EpisodeOutcome>), ExperimentError> {
    let dim = cfg.prototypes.dim().ok_or_else(|| ExperimentError::Config("empty prototypes".into()))?;
    if dim != ops.encoder.input_dim() {
        return Err(ExperimentError::Config(format!(
            "simulator observations have dimension {dim}, model expects {}",
            ops.encoder.input_dim()
        )));
    }
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(ExperimentError::Config(format!("sigma must be finite and >= 0, got {}", cfg.sigma)));
    }
    let outcomes = (0..cfg.episodes as u64)
        .into_par_iter()
        .map(|i| run_episode(ops, cfg, derive_seed(cfg.seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((MetricsReport::from_outcomes(cfg.regime, cfg.sigma, &outcomes), outcomes))
}
