//! Breadth-first forward search over belief states.
//!
//! The frontier starts with the null action at the initial belief. Popping a
//! node applies its action, tests the goal, and otherwise enqueues one child
//! per action primitive in canonical order. Children whose action has too
//! little demonstrated support under the current belief are dropped, as are
//! children that repeat a belief already on their own path.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionPrimitive;
use crate::distribution::{kl_div, StateDistribution};
use crate::transition::{TransitionError, TransitionModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// KL threshold (nats) for the goal test.
    pub epsilon: f64,
    pub max_depth: usize,
    /// Total-variation distance under which two beliefs count as the same.
    pub repeat_tolerance: f64,
    /// An action counts as infeasible when less than this much of the
    /// belief supports it.
    pub min_support: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { epsilon: 0.1, max_depth: 8, repeat_tolerance: 1e-9, min_support: 1e-3 }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(PlanError::Config(format!("epsilon must be positive and finite, got {}", self.epsilon)));
        }
        if self.max_depth == 0 {
            return Err(PlanError::Config("max_depth must be at least 1".into()));
        }
        if !(self.repeat_tolerance >= 0.0) {
            return Err(PlanError::Config(format!("repeat_tolerance must be >= 0, got {}", self.repeat_tolerance)));
        }
        if !(0.0..1.0).contains(&self.min_support) {
            return Err(PlanError::Config(format!("min_support must be in [0, 1), got {}", self.min_support)));
        }
        Ok(())
    }
}

/// `predicted_states[t]` is the belief expected after `actions[t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTrace {
    pub actions: Vec<ActionPrimitive>,
    pub predicted_states: Vec<StateDistribution>,
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("invalid planner config: {0}")]
    Config(String),
    #[error("belief has {found} states, model has {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("no plan within depth {max_depth}; closest leaf {:?} at KL {best_kl:.4}", best.actions)]
    NoPlan { max_depth: usize, best: PlanTrace, best_kl: f64 },
}

pub fn goal_satisfied(s: &StateDistribution, goal: &StateDistribution, epsilon: f64) -> bool {
    kl_div(s, goal) < epsilon
}

struct Node {
    parent: Option<usize>,
    action: Option<ActionPrimitive>,
    belief: StateDistribution,
    depth: usize,
}

fn trace(arena: &[Node], mut at: usize) -> PlanTrace {
    let mut actions = Vec::new();
    let mut predicted_states = Vec::new();
    while let Some(a) = arena[at].action {
        actions.push(a);
        predicted_states.push(arena[at].belief.clone());
        at = arena[at].parent.expect("non-root nodes have parents");
    }
    actions.reverse();
    predicted_states.reverse();
    PlanTrace { actions, predicted_states }
}

fn repeats_ancestor(arena: &[Node], parent: usize, belief: &StateDistribution, tol: f64) -> bool {
    let mut at = Some(parent);
    while let Some(i) = at {
        if arena[i].belief.total_variation(belief) < tol {
            return true;
        }
        at = arena[i].parent;
    }
    false
}

/// Shortest action sequence whose predicted belief satisfies the goal.
pub fn plan(
    stp: &TransitionModel,
    init: &StateDistribution,
    goal: &StateDistribution,
    cfg: &PlannerConfig,
) -> Result<PlanTrace, PlanError> {
    cfg.validate()?;
    for s in [init, goal] {
        if s.len() != stp.m() {
            return Err(PlanError::Dimension { expected: stp.m(), found: s.len() });
        }
    }
    let mut arena = vec![Node { parent: None, action: None, belief: init.clone(), depth: 0 }];
    let mut frontier = VecDeque::from([0usize]);
    let mut best = (f64::INFINITY, 0usize);
    while let Some(at) = frontier.pop_front() {
        let kl = kl_div(&arena[at].belief, goal);
        if kl < cfg.epsilon {
            return Ok(trace(&arena, at));
        }
        if kl < best.0 {
            best = (kl, at);
        }
        if arena[at].depth >= cfg.max_depth {
            continue;
        }
        for action in ActionPrimitive::ALL {
            let belief = match stp.predict_with_mass(&arena[at].belief, Some(action)) {
                Ok((b, mass)) if mass >= cfg.min_support => b,
                Ok(_) | Err(TransitionError::Infeasible { .. }) => continue,
                Err(e) => unreachable!("dimensions checked above: {e}"),
            };
            if repeats_ancestor(&arena, at, &belief, cfg.repeat_tolerance) {
                continue;
            }
            let depth = arena[at].depth + 1;
            arena.push(Node { parent: Some(at), action: Some(action), belief, depth });
            frontier.push_back(arena.len() - 1);
        }
    }
    Err(PlanError::NoPlan { max_depth: cfg.max_depth, best: trace(&arena, best.1), best_kl: best.0 })
}
