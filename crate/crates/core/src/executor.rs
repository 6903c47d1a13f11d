//! Closed-loop execution: ground the current observation, plan, execute one
//! action at a time and compare what is perceived with what the plan
//! predicted. A deviation beyond epsilon triggers a replan from the
//! perceived belief.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionPrimitive;
use crate::corpus::Observation;
use crate::distribution::{kl_div, StateDistribution};
use crate::planner::{goal_satisfied, plan, PlanError, PlanTrace, PlannerConfig};
use crate::transition::TransitionModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("the episode is over; no further actions are accepted")]
    Finished,
}

pub trait Environment {
    /// The most recent observation.
    fn observe(&self) -> Observation;
    fn step(&mut self, action: ActionPrimitive) -> Result<Observation, EnvError>;
}

/// Turns observations into beliefs.
pub trait Perceive {
    fn perceive(&self, obs: &Observation) -> Result<StateDistribution, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecConfig {
    pub planner: PlannerConfig,
    /// KL threshold for the per-step deviation test.
    pub deviation_epsilon: f64,
    pub max_steps: usize,
    pub max_replans: usize,
    /// With replanning off the first plan runs to completion regardless of
    /// what is perceived.
    pub replan: bool,
}

impl Default for ExecConfig {
    fn default() -> Self {
        let planner = PlannerConfig::default();
        Self { planner, deviation_epsilon: planner.epsilon, max_steps: 20, max_replans: 5, replan: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub action: ActionPrimitive,
    pub predicted: StateDistribution,
    pub observed: StateDistribution,
    /// `KL(observed || predicted)`.
    pub deviation: f64,
    /// Whether this step triggered a replan.
    pub replanned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    /// Initial planning or a replan found nothing.
    NoPlan(String),
    StepBudget,
    ReplanBudget,
    /// The plan ran out short of the goal and replanning is disabled.
    PlanExhausted,
    Perception(String),
    Environment(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub outcome: Outcome,
    pub replans: usize,
    pub first_plan: Vec<ActionPrimitive>,
    pub actions_executed: Vec<ActionPrimitive>,
    pub steps: Vec<StepRecord>,
    /// Filled in by callers that know the minimal action multiset.
    pub redundant: bool,
}

impl EpisodeResult {
    fn new() -> Self {
        Self {
            success: false,
            outcome: Outcome::StepBudget,
            replans: 0,
            first_plan: Vec::new(),
            actions_executed: Vec::new(),
            steps: Vec::new(),
            redundant: false,
        }
    }

    fn finish(mut self, outcome: Outcome) -> Self {
        self.success = outcome == Outcome::Success;
        self.outcome = outcome;
        self
    }

    pub fn is_budget_failure(&self) -> bool {
        matches!(self.outcome, Outcome::StepBudget | Outcome::ReplanBudget)
    }
}

fn plan_queue(trace: PlanTrace) -> std::collections::VecDeque<(ActionPrimitive, StateDistribution)> {
    trace.actions.into_iter().zip(trace.predicted_states).collect()
}

fn no_plan(e: PlanError) -> Outcome {
    Outcome::NoPlan(e.to_string())
}

/// Runs one episode in `env` towards `goal`.
pub fn execute<E: Environment + ?Sized, P: Perceive + ?Sized>(
    env: &mut E,
    perception: &P,
    stp: &TransitionModel,
    goal: &StateDistribution,
    cfg: &ExecConfig,
) -> EpisodeResult {
    let mut result = EpisodeResult::new();
    let mut current = match perception.perceive(&env.observe()) {
        Ok(s) => s,
        Err(e) => return result.finish(Outcome::Perception(e)),
    };
    let eps = cfg.planner.epsilon;
    if goal_satisfied(&current, goal, eps) {
        return result.finish(Outcome::Success);
    }
    let mut queue = match plan(stp, &current, goal, &cfg.planner) {
        Ok(trace) => {
            result.first_plan = trace.actions.clone();
            plan_queue(trace)
        }
        Err(e) => return result.finish(no_plan(e)),
    };
    loop {
        if goal_satisfied(&current, goal, eps) {
            return result.finish(Outcome::Success);
        }
        if result.steps.len() >= cfg.max_steps {
            return result.finish(Outcome::StepBudget);
        }
        if queue.is_empty() {
            if !cfg.replan {
                return result.finish(Outcome::PlanExhausted);
            }
            if result.replans >= cfg.max_replans {
                return result.finish(Outcome::ReplanBudget);
            }
            result.replans += 1;
            match plan(stp, &current, goal, &cfg.planner) {
                Ok(trace) => queue = plan_queue(trace),
                Err(e) => return result.finish(no_plan(e)),
            }
            continue;
        }
        let (action, predicted) = queue.pop_front().expect("checked non-empty");
        let obs = match env.step(action) {
            Ok(o) => o,
            Err(e) => return result.finish(Outcome::Environment(e.to_string())),
        };
        result.actions_executed.push(action);
        current = match perception.perceive(&obs) {
            Ok(s) => s,
            Err(e) => return result.finish(Outcome::Perception(e)),
        };
        let deviation = kl_div(&current, &predicted);
        let deviates = deviation > cfg.deviation_epsilon;
        let replanned = deviates && cfg.replan && !goal_satisfied(&current, goal, eps);
        result.steps.push(StepRecord { action, predicted, observed: current.clone(), deviation, replanned });
        if replanned {
            if result.replans >= cfg.max_replans {
                return result.finish(Outcome::ReplanBudget);
            }
            result.replans += 1;
            match plan(stp, &current, goal, &cfg.planner) {
                Ok(trace) => queue = plan_queue(trace),
                Err(e) => return result.finish(no_plan(e)),
            }
        }
    }
}
