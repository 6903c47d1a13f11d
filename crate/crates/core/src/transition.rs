//! State transition prediction.
//!
//! From state/group co-occurrence counts `N_cs` (M states x N groups) we get
//! `Q` (rows normalised, `P(group | state)`) and `K` (columns normalised,
//! `P(state | group)`). Each action has a binary group-to-group feasibility
//! matrix `T^a`, and the state transition matrix is `P^a = Q T^a K^T`.
//!
//! The matrix helpers are generic over the scalar type so the same code can
//! be checked in exact rational arithmetic.

use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView1, LinalgScalar};
use thiserror::Error;

use crate::action::ActionPrimitive;
use crate::corpus::DemoCorpus;
use crate::distribution::StateDistribution;
use crate::groups::GroupTable;

#[derive(Debug, Error, PartialEq)]
pub enum TransitionError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{action} has no demonstrated transition from this belief")]
    Infeasible { action: ActionPrimitive },
    #[error("state label {label} out of range for {m} states")]
    LabelRange { label: usize, m: usize },
}

/// Numeric types the transition algebra runs on (`f64`, exact rationals).
pub trait Scalar: LinalgScalar + PartialOrd + Debug {}

impl<T: LinalgScalar + PartialOrd + Debug> Scalar for T {}

/// Tallies `N_cs[state][group]`; `labels` holds one hard state label per
/// observation in [`DemoCorpus::observations`] order.
pub fn build_counts(
    corpus: &DemoCorpus,
    groups: &GroupTable,
    labels: &[usize],
    m: usize,
) -> Result<Array2<u64>, TransitionError> {
    let total = corpus.observation_count();
    if labels.len() != total {
        return Err(TransitionError::Dimension(format!("{} labels for {total} observations", labels.len())));
    }
    let mut counts = Array2::<u64>::zeros((m, groups.len()));
    for ((loc, _), &label) in corpus.observations().zip(labels) {
        if label >= m {
            return Err(TransitionError::LabelRange { label, m });
        }
        counts[[label, groups.group_of(loc)]] += 1;
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PurityMatrices<T> {
    /// `Q[i][n] = P(group n | state i)`.
    pub q: Array2<T>,
    /// `K[j][n] = P(state j | group n)`.
    pub k: Array2<T>,
}

/// Row- and column-normalises the counts. All-zero rows and columns stay zero.
pub fn purity_matrices<T: Scalar>(counts: &Array2<T>) -> PurityMatrices<T> {
    let mut q = counts.clone();
    for mut row in q.rows_mut() {
        let sum = row.iter().fold(T::zero(), |a, &b| a + b);
        if sum != T::zero() {
            row.mapv_inplace(|v| v / sum);
        }
    }
    let mut k = counts.clone();
    for mut col in k.columns_mut() {
        let sum = col.iter().fold(T::zero(), |a, &b| a + b);
        if sum != T::zero() {
            col.mapv_inplace(|v| v / sum);
        }
    }
    PurityMatrices { q, k }
}

/// Per-action binary group transition matrices, indexed in canonical action order.
#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    matrices: Vec<Array2<u8>>,
}

impl Feasibility {
    pub fn from_matrices(matrices: Vec<Array2<u8>>) -> Result<Self, TransitionError> {
        if matrices.len() != ActionPrimitive::ALL.len() {
            return Err(TransitionError::Dimension(format!("{} feasibility matrices, expected 5", matrices.len())));
        }
        let n = matrices[0].nrows();
        if matrices.iter().any(|t| t.dim() != (n, n) || t.iter().any(|&v| v > 1)) {
            return Err(TransitionError::Dimension(
                "feasibility matrices must be square, equal size and binary".into(),
            ));
        }
        Ok(Self { matrices })
    }

    pub fn get(&self, action: ActionPrimitive) -> &Array2<u8> {
        &self.matrices[action.index()]
    }

    pub fn groups(&self) -> usize {
        self.matrices[0].nrows()
    }
}

/// `T^a[m][n] = 1` iff some demonstration applies `a` at group `m` and lands in group `n`.
pub fn learn_feasibility(corpus: &DemoCorpus, groups: &GroupTable) -> Feasibility {
    let n = groups.len();
    let mut matrices = vec![Array2::<u8>::zeros((n, n)); ActionPrimitive::ALL.len()];
    for (s, seq) in corpus.sequences().iter().enumerate() {
        for (slot, action) in seq.actions().iter().enumerate() {
            let from = groups.group_of(crate::corpus::ObsLoc { seq: s, slot });
            let to = groups.group_of(crate::corpus::ObsLoc { seq: s, slot: slot + 1 });
            matrices[action.index()][[from, to]] = 1;
        }
    }
    Feasibility { matrices }
}

/// `P^a = Q T^a K^T`.
pub fn action_matrix<T: Scalar>(q: &Array2<T>, t: &Array2<T>, k: &Array2<T>) -> Result<Array2<T>, TransitionError> {
    let (m, n) = q.dim();
    if t.dim() != (n, n) || k.dim() != (m, n) {
        return Err(TransitionError::Dimension(format!(
            "Q is {m}x{n}, T is {}x{}, K is {}x{}",
            t.nrows(),
            t.ncols(),
            k.nrows(),
            k.ncols()
        )));
    }
    Ok(q.dot(t).dot(&k.t()))
}

/// Row vector times matrix, rescaled to unit mass. `None` when the product
/// has no mass.
pub fn propagate<T: Scalar>(s: ArrayView1<'_, T>, p: &Array2<T>) -> Result<Option<Array1<T>>, TransitionError> {
    if s.len() != p.nrows() {
        return Err(TransitionError::Dimension(format!("belief of length {} for {} states", s.len(), p.nrows())));
    }
    let raw = s.dot(p);
    let mass = raw.iter().fold(T::zero(), |a, &b| a + b);
    if mass <= T::zero() {
        return Ok(None);
    }
    Ok(Some(raw.mapv(|v| v / mass)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub counts: Array2<u64>,
    pub purity: PurityMatrices<f64>,
    pub feasibility: Feasibility,
    /// Cached `P^a` in canonical action order.
    pub action_matrices: Vec<Array2<f64>>,
    pub state_names: Vec<String>,
    pub group_names: Vec<String>,
}

impl TransitionModel {
    pub fn build(
        counts: Array2<u64>,
        feasibility: Feasibility,
        state_names: Vec<String>,
        group_names: Vec<String>,
    ) -> Result<Self, TransitionError> {
        let (m, n) = counts.dim();
        if feasibility.groups() != n || group_names.len() != n || state_names.len() != m {
            return Err(TransitionError::Dimension(format!(
                "counts are {m}x{n}, feasibility covers {} groups, {} group names, {} state names",
                feasibility.groups(),
                group_names.len(),
                state_names.len()
            )));
        }
        let purity = purity_matrices(&counts.mapv(|c| c as f64));
        let action_matrices = ActionPrimitive::ALL
            .iter()
            .map(|&a| action_matrix(&purity.q, &feasibility.get(a).mapv(f64::from), &purity.k))
            .collect::<Result<_, _>>()?;
        Ok(Self { counts, purity, feasibility, action_matrices, state_names, group_names })
    }

    pub fn m(&self) -> usize {
        self.counts.nrows()
    }

    pub fn n(&self) -> usize {
        self.counts.ncols()
    }

    pub fn action_matrix(&self, action: ActionPrimitive) -> &Array2<f64> {
        &self.action_matrices[action.index()]
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|n| n == name)
    }

    /// Successor belief `S P^a`, renormalised. `None` is the null action and
    /// returns the input unchanged.
    pub fn predict(
        &self,
        s: &StateDistribution,
        action: Option<ActionPrimitive>,
    ) -> Result<StateDistribution, TransitionError> {
        self.predict_with_mass(s, action).map(|(next, _)| next)
    }

    /// Like [`predict`](Self::predict), also returning the mass of `S P^a`
    /// before renormalisation (1 for the null action).
    pub fn predict_with_mass(
        &self,
        s: &StateDistribution,
        action: Option<ActionPrimitive>,
    ) -> Result<(StateDistribution, f64), TransitionError> {
        let Some(action) = action else {
            return Ok((s.clone(), 1.0));
        };
        let p = self.action_matrix(action);
        if s.len() != p.nrows() {
            return Err(TransitionError::Dimension(format!("belief of length {} for {} states", s.len(), p.nrows())));
        }
        let raw = ArrayView1::from(s.probs()).dot(p);
        let mass = raw.sum();
        if !(mass > 0.0) {
            return Err(TransitionError::Infeasible { action });
        }
        let next = StateDistribution::normalized(raw.to_vec()).map_err(|_| TransitionError::Infeasible { action })?;
        Ok((next, mass))
    }
}
