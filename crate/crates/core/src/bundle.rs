//! Versioned model bundles: everything needed to ground, predict and plan,
//! stored as one pretty-printed JSON document with decimal arrays.
//!
//! Floats are written with shortest round-trip formatting, so a saved bundle
//! loads back bit for bit. Cached matrices (`Q`, `K`, `P^a`) are stored for
//! reading convenience and checked against the counts on load.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionPrimitive;
use crate::corpus::CorpusGenConfig;
use crate::gmm::StateSpaceModel;
use crate::latent::{EncoderModel, LossConfig};
use crate::pipeline::{LearnConfig, Operators};
use crate::planner::PlannerConfig;
use crate::transition::{Feasibility, TransitionModel};

pub const FORMAT_VERSION: &str = "1.0";

/// Largest absolute difference tolerated between a stored cached matrix and
/// the one recomputed from the counts.
const CACHE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bundle file {0} not found")]
    NotFound(PathBuf),
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bundle parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse { offset: usize, line: usize, column: usize, message: String },
    #[error("bundle format version {found} is not supported (this build reads {FORMAT_VERSION})")]
    Version { found: String },
    #[error("invalid bundle field {field}: {message}")]
    Validation { field: &'static str, message: String },
    #[error("cannot serialise bundle: {0}")]
    Serialize(serde_json::Error),
}

fn invalid(field: &'static str, message: impl Into<String>) -> BundleError {
    BundleError::Validation { field, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderBundle {
    /// Observation dimension `D`.
    pub input_dim: usize,
    /// Latent dimension `L`.
    pub latent_dim: usize,
    pub loss: LossConfig,
    /// Flat parameters: `w_mu` (L x D), `b_mu`, `w_lv` (L x D), `b_lv`,
    /// `w_dec` (D x L), `b_dec`, all row-major.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionBundle {
    pub state_names: Vec<String>,
    pub group_names: Vec<String>,
    /// `N_cs`, M x N.
    pub counts: Vec<Vec<u64>>,
    pub q: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    /// `T^a` (N x N) keyed by action name.
    pub feasibility: BTreeMap<String, Vec<Vec<u8>>>,
    /// `P^a` (M x M) keyed by action name.
    pub action_matrices: BTreeMap<String, Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    /// Seed the training corpus was generated with, when known.
    pub corpus_seed: Option<u64>,
    pub learn: Option<LearnConfig>,
    /// Creation time in seconds since the Unix epoch. Left empty unless
    /// requested so that identical runs give identical files.
    pub created_unix: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: String,
    /// Generator the training corpus came from; its prototypes drive the simulator.
    pub generator: Option<CorpusGenConfig>,
    pub encoder: EncoderBundle,
    pub states: StateSpaceModel,
    pub transitions: TransitionBundle,
    pub planner: PlannerConfig,
    pub provenance: Provenance,
}

fn rows<T: Clone>(a: &Array2<T>) -> Vec<Vec<T>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows<T: Clone>(field: &'static str, rows: &[Vec<T>], shape: (usize, usize)) -> Result<Array2<T>, BundleError> {
    let (r, c) = shape;
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        let found: Vec<usize> = rows.iter().map(Vec::len).collect();
        return Err(invalid(field, format!("expected {r}x{c}, found {} rows of lengths {found:?}", rows.len())));
    }
    let flat: Vec<T> = rows.iter().flatten().cloned().collect();
    Ok(Array2::from_shape_vec((r, c), flat).expect("shape checked"))
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

impl ModelBundle {
    pub fn from_operators(ops: &Operators, generator: Option<CorpusGenConfig>, loss: LossConfig) -> Self {
        let t = &ops.transitions;
        let by_action = |f: &dyn Fn(ActionPrimitive) -> Vec<Vec<f64>>| -> BTreeMap<String, Vec<Vec<f64>>> {
            ActionPrimitive::ALL.iter().map(|&a| (a.name().to_string(), f(a))).collect()
        };
        Self {
            format_version: FORMAT_VERSION.to_string(),
            generator,
            encoder: EncoderBundle {
                input_dim: ops.encoder.input_dim(),
                latent_dim: ops.encoder.latent_dim(),
                loss,
                params: ops.encoder.params().to_vec(),
            },
            states: ops.states.clone(),
            transitions: TransitionBundle {
                state_names: t.state_names.clone(),
                group_names: t.group_names.clone(),
                counts: rows(&t.counts),
                q: rows(&t.purity.q),
                k: rows(&t.purity.k),
                feasibility: ActionPrimitive::ALL
                    .iter()
                    .map(|&a| (a.name().to_string(), rows(t.feasibility.get(a))))
                    .collect(),
                action_matrices: by_action(&|a| rows(t.action_matrix(a))),
            },
            planner: PlannerConfig::default(),
            provenance: Provenance::default(),
        }
    }

    /// Checks the cross-referenced dimensions and rebuilds the operators.
    pub fn to_operators(&self) -> Result<Operators, BundleError> {
        let e = &self.encoder;
        let (d, l) = (e.input_dim, e.latent_dim);
        if d == 0 {
            return Err(invalid("D", "encoder input dimension must be positive"));
        }
        if l == 0 {
            return Err(invalid("L", "encoder latent dimension must be positive"));
        }
        let expected = EncoderModel::param_count(d, l);
        if e.params.len() != expected {
            return Err(invalid(
                "D",
                format!("{} encoder parameters, D={d} and L={l} need {expected}", e.params.len()),
            ));
        }
        let encoder = EncoderModel::from_params(d, l, e.params.clone()).map_err(|err| invalid("D", err.to_string()))?;
        if let Some(g) = &self.generator {
            if g.dim != d {
                return Err(invalid(
                    "D",
                    format!("generator dimension {} differs from encoder input dimension {d}", g.dim),
                ));
            }
        }

        let states = &self.states;
        if states.means.iter().chain(&states.variances).any(|v| v.len() != l) {
            return Err(invalid("L", format!("state means and variances must have length L={l}")));
        }
        states.validate().map_err(|err| invalid("states", err.to_string()))?;

        let t = &self.transitions;
        let m = states.m();
        if t.state_names.len() != m || t.state_names != states.state_names {
            return Err(invalid(
                "M",
                format!("transition state names {:?} differ from the state space's {m} states", t.state_names),
            ));
        }
        if t.counts.len() != m {
            return Err(invalid("M", format!("counts have {} rows, expected M={m}", t.counts.len())));
        }
        let n = t.group_names.len();
        if n == 0 {
            return Err(invalid("N", "no groups"));
        }
        let counts = from_rows("N", &t.counts, (m, n))?;
        let mut feas = Vec::with_capacity(ActionPrimitive::ALL.len());
        for a in ActionPrimitive::ALL {
            let rows =
                t.feasibility.get(a.name()).ok_or_else(|| invalid("feasibility", format!("missing {}", a.name())))?;
            feas.push(from_rows("N", rows, (n, n))?);
        }
        if t.feasibility.len() != ActionPrimitive::ALL.len() {
            return Err(invalid("feasibility", "unknown action name"));
        }
        let feasibility = Feasibility::from_matrices(feas).map_err(|err| invalid("feasibility", err.to_string()))?;
        let transitions = TransitionModel::build(counts, feasibility, t.state_names.clone(), t.group_names.clone())
            .map_err(|err| invalid("N", err.to_string()))?;

        let check = |field: &'static str, stored: &[Vec<f64>], fresh: &Array2<f64>| -> Result<(), BundleError> {
            let stored = from_rows(field, stored, fresh.dim())?;
            let diff = max_abs_diff(&stored, fresh);
            if diff > CACHE_TOLERANCE || stored.iter().any(|v| !v.is_finite()) {
                return Err(invalid(
                    field,
                    format!("cached values disagree with the counts (max difference {diff:e})"),
                ));
            }
            Ok(())
        };
        check("q", &t.q, &transitions.purity.q)?;
        check("k", &t.k, &transitions.purity.k)?;
        if t.action_matrices.len() != ActionPrimitive::ALL.len() {
            return Err(invalid("action_matrices", "expected one matrix per action"));
        }
        for a in ActionPrimitive::ALL {
            let stored = t
                .action_matrices
                .get(a.name())
                .ok_or_else(|| invalid("action_matrices", format!("missing {}", a.name())))?;
            check("action_matrices", stored, transitions.action_matrix(a))?;
        }
        self.planner.validate().map_err(|err| invalid("planner", err.to_string()))?;

        Ok(Operators { encoder, states: states.clone(), transitions })
    }
}

fn major(version: &str) -> Option<&str> {
    version.split('.').next().filter(|m| !m.is_empty())
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let preceding: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    preceding + column.saturating_sub(1)
}

fn parse_error(text: &str, err: serde_json::Error) -> BundleError {
    BundleError::Parse {
        offset: byte_offset(text, err.line(), err.column()),
        line: err.line(),
        column: err.column(),
        message: err.to_string(),
    }
}

pub fn bundle_to_string(bundle: &ModelBundle) -> Result<String, BundleError> {
    bundle.to_operators()?;
    let mut text = serde_json::to_string_pretty(bundle).map_err(BundleError::Serialize)?;
    text.push('\n');
    Ok(text)
}

/// Parses and validates a bundle held in memory.
pub fn bundle_from_str(text: &str) -> Result<ModelBundle, BundleError> {
    // Read the version first so a newer file reports a version error
    // rather than whatever field it no longer matches.
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_error(text, e))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| invalid("format_version", "missing or not a string"))?;
    if major(found) != major(FORMAT_VERSION) {
        return Err(BundleError::Version { found: found.to_string() });
    }
    let bundle: ModelBundle = serde_json::from_str(text).map_err(|e| parse_error(text, e))?;
    bundle.to_operators()?;
    Ok(bundle)
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<(), BundleError> {
    let text = bundle_to_string(bundle)?;
    fs::write(path, text).map_err(|source| BundleError::Io { path: path.to_path_buf(), source })
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle, BundleError> {
    let text = fs::read_to_string(path).map_err(|source| match source.kind() {
        io::ErrorKind::NotFound => BundleError::NotFound(path.to_path_buf()),
        _ => BundleError::Io { path: path.to_path_buf(), source },
    })?;
    bundle_from_str(&text)
}
