//! Observation groups: observations at the same slot of identical sequence
//! types share a group. Symbolic tokens form corpus-wide groups regardless
//! of the sequence type they appear in.

use std::collections::BTreeMap;
use std::fmt;

use crate::corpus::{DemoCorpus, ObsKind, ObsLoc, Symbol};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupId {
    Slot { seq_type: String, position: usize },
    Symbol(Symbol),
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupId::Slot { seq_type, position } => write!(f, "{seq_type}#{position}"),
            GroupId::Symbol(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub id: GroupId,
    pub members: Vec<ObsLoc>,
}

/// Partition of a corpus' observations into groups.
///
/// Slot groups come first, ordered by `(seq_type, position)`, followed by
/// the symbolic groups in `s0, s1, s2` order (only those that occur).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTable {
    groups: Vec<Group>,
    assignment: Vec<Vec<usize>>,
}

impl GroupTable {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group_of(&self, loc: ObsLoc) -> usize {
        self.assignment[loc.seq][loc.slot]
    }

    pub fn index_of(&self, id: &GroupId) -> Option<usize> {
        self.groups.iter().position(|g| &g.id == id)
    }

    pub fn names(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.id.to_string()).collect()
    }
}

/// Assigns every observation to exactly one group. Corpus construction
/// already guarantees well-formed sequences.
pub fn extract_groups(corpus: &DemoCorpus) -> GroupTable {
    let mut members: BTreeMap<GroupId, Vec<ObsLoc>> = BTreeMap::new();
    for (loc, obs) in corpus.observations() {
        let id = match &obs.kind {
            ObsKind::Symbolic(s) => GroupId::Symbol(*s),
            ObsKind::Raw(_) => {
                GroupId::Slot { seq_type: corpus.sequences()[loc.seq].seq_type().to_string(), position: loc.slot }
            }
        };
        members.entry(id).or_default().push(loc);
    }
    // BTreeMap order puts Slot before Symbol and symbols in s0, s1, s2 order.
    let groups: Vec<Group> = members.into_iter().map(|(id, members)| Group { id, members }).collect();
    let mut assignment: Vec<Vec<usize>> =
        corpus.sequences().iter().map(|s| vec![usize::MAX; s.observations().len()]).collect();
    for (g, group) in groups.iter().enumerate() {
        for loc in &group.members {
            assignment[loc.seq][loc.slot] = g;
        }
    }
    GroupTable { groups, assignment }
}
