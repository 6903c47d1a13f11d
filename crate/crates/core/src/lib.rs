//! Learning probabilistic symbolic operators from demonstrations and planning
//! with them.
//!
//! The pipeline runs demonstrations ([`corpus`]) through a relation-aware
//! variational encoder ([`latent`]), clusters the latent space into symbolic
//! states ([`cluster`], [`gmm`]), learns per-action state transition matrices
//! ([`transition`]) and plans over beliefs ([`planner`], [`executor`]). A
//! small bolt-disassembly simulator ([`sim`], [`experiment`]) closes the loop,
//! and [`bundle`] persists learned operators.

// `!(x >= 0.0)` style checks are used on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod bundle;
pub mod cluster;
pub mod corpus;
pub mod distribution;
pub mod executor;
pub mod experiment;
pub mod gmm;
pub mod groups;
pub mod latent;
pub mod pipeline;
pub mod planner;
pub mod relation;
pub mod sim;
pub mod transition;

pub use action::ActionPrimitive;
pub use distribution::{kl_div, StateDistribution};
