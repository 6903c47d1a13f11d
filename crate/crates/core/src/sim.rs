//! A small bolt-disassembly world.
//!
//! The bolt sits at a random offset from where the robot believes it is and
//! an obstacle may lie near it. Neither is visible until the tool has
//! approached; from then on the eye-in-hand camera shows one of four
//! situations as a noisy prototype vector. Fitting the socket yields `s1`,
//! removing the bolt yields `s2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionPrimitive;
use crate::corpus::{Observation, Prototypes, Situation, Symbol};
use crate::executor::{EnvError, Environment};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid environment config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Standard deviation of the bolt offset around `nominal_offset`.
    pub sigma_pos: f64,
    /// Mean bolt offset.
    pub nominal_offset: f64,
    pub p_obstacle: f64,
    /// Standard deviation of a spawned obstacle's distance to the bolt.
    pub sigma_obstacle: f64,
    /// A spawned obstacle blocks the socket when closer than this.
    pub obstacle_clearance: f64,
    /// Feature noise on raw observations.
    pub sigma_obs: f64,
    /// The socket fits only when the offset is within this distance.
    pub alignment_tol: f64,
    pub prototypes: Prototypes,
}

impl EnvConfig {
    pub fn new(prototypes: Prototypes) -> Self {
        Self {
            sigma_pos: 0.0,
            nominal_offset: 0.0,
            p_obstacle: 0.0,
            sigma_obstacle: 0.0,
            obstacle_clearance: 1.0,
            sigma_obs: 0.0,
            alignment_tol: 1.0,
            prototypes,
        }
    }

    /// A config whose post-Approach situation is always `situation`.
    pub fn fixed(prototypes: Prototypes, situation: Situation, sigma_obs: f64) -> Self {
        let mut cfg = Self::new(prototypes);
        cfg.sigma_obs = sigma_obs;
        if situation.is_misaligned() {
            cfg.nominal_offset = 2.0 * cfg.alignment_tol;
        }
        if situation.is_blocked() {
            cfg.p_obstacle = 1.0;
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let nonneg = [
            ("sigma_pos", self.sigma_pos),
            ("sigma_obstacle", self.sigma_obstacle),
            ("obstacle_clearance", self.obstacle_clearance),
            ("sigma_obs", self.sigma_obs),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.nominal_offset.is_finite() {
            return Err(SimError::Config("nominal_offset must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.p_obstacle) {
            return Err(SimError::Config(format!("p_obstacle must be in [0, 1], got {}", self.p_obstacle)));
        }
        if !(self.alignment_tol > 0.0 && self.alignment_tol.is_finite()) {
            return Err(SimError::Config(format!("alignment_tol must be > 0, got {}", self.alignment_tol)));
        }
        if self.prototypes.dim().is_none() {
            return Err(SimError::Config("prototypes must be non-empty and share one dimension".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    PreApproach,
    Approached,
    /// Socket fitted over the bolt head.
    Engaged,
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalState {
    pub phase: Phase,
    pub misaligned: bool,
    pub obstacle_present: bool,
}

#[derive(Debug, Clone)]
pub struct DisassemblyEnv {
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    offset: f64,
    state: PhysicalState,
    last: Observation,
    emitted: usize,
}

impl DisassemblyEnv {
    /// Samples the hidden offset and obstacle; returns the env and its `s0` observation.
    pub fn reset(cfg: EnvConfig, seed: u64) -> Result<(Self, Observation), SimError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offset = cfg.nominal_offset + cfg.sigma_pos * rng.sample::<f64, _>(StandardNormal);
        let spawned = rng.random::<f64>() < cfg.p_obstacle;
        let distance = (cfg.sigma_obstacle * rng.sample::<f64, _>(StandardNormal)).abs();
        let obstacle_present = spawned && distance < cfg.obstacle_clearance;
        let state = PhysicalState { phase: Phase::PreApproach, misaligned: false, obstacle_present };
        let first = Observation::symbolic("obs0", Symbol::S0);
        let env = Self { cfg, rng, offset, state, last: first.clone(), emitted: 1 };
        Ok((env, first))
    }

    pub fn state(&self) -> PhysicalState {
        self.state
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Situation as it currently is (or, before approaching, as it will
    /// appear once approached).
    pub fn situation(&self) -> Situation {
        let misaligned = match self.state.phase {
            Phase::PreApproach => self.offset.abs() > self.cfg.alignment_tol,
            _ => self.state.misaligned,
        };
        Situation::new(misaligned, self.state.obstacle_present)
    }

    fn emit(&mut self) -> Observation {
        let id = format!("obs{}", self.emitted);
        self.emitted += 1;
        let obs = match self.state.phase {
            Phase::PreApproach => Observation::symbolic(id, Symbol::S0),
            Phase::Approached => {
                let situation = self.situation();
                Observation::raw(id, self.cfg.prototypes.sample(situation, self.cfg.sigma_obs, &mut self.rng))
            }
            Phase::Engaged => Observation::symbolic(id, Symbol::S1),
            Phase::Removed => Observation::symbolic(id, Symbol::S2),
        };
        self.last = obs.clone();
        obs
    }

    pub fn apply(&mut self, action: ActionPrimitive) -> Result<Observation, EnvError> {
        use ActionPrimitive::*;
        let s = &mut self.state;
        match (action, s.phase) {
            (_, Phase::Removed) => return Err(EnvError::Finished),
            (Approach, Phase::PreApproach) => {
                s.phase = Phase::Approached;
                s.misaligned = self.offset.abs() > self.cfg.alignment_tol;
            }
            (Push, _) => s.obstacle_present = false,
            (Mate, Phase::Approached) => s.misaligned = false,
            (Insert, Phase::Approached) if !s.misaligned && !s.obstacle_present => s.phase = Phase::Engaged,
            (Disassemble, Phase::Engaged) => s.phase = Phase::Removed,
            _ => {}
        }
        Ok(self.emit())
    }
}

impl Environment for DisassemblyEnv {
    fn observe(&self) -> Observation {
        self.last.clone()
    }

    fn step(&mut self, action: ActionPrimitive) -> Result<Observation, EnvError> {
        self.apply(action)
    }
}

/// Minimal completion from the post-Approach situation.
pub fn required_sequence(situation: Situation) -> Vec<ActionPrimitive> {
    use ActionPrimitive::*;
    let mut seq = Vec::new();
    if situation.is_blocked() {
        seq.push(Push);
    }
    if situation.is_misaligned() {
        seq.push(Mate);
    }
    seq.extend([Insert, Disassemble]);
    seq
}
