use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The five bolt-disassembly skills.
///
/// The derived `Ord` is the canonical order used for deterministic
/// tie-breaking: Approach < Push < Mate < Insert < Disassemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionPrimitive {
    /// Move the nut runner to the rough bolt location.
    Approach,
    /// Push obstacles away from the target.
    Push,
    /// Align the nut runner centre-line with the bolt.
    Mate,
    /// Rotate around the bolt axis until the socket seats.
    Insert,
    /// Unscrew and retract.
    Disassemble,
}

impl ActionPrimitive {
    pub const ALL: [ActionPrimitive; 5] = [
        ActionPrimitive::Approach,
        ActionPrimitive::Push,
        ActionPrimitive::Mate,
        ActionPrimitive::Insert,
        ActionPrimitive::Disassemble,
    ];

    /// Position in the canonical order, usable as an array index.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Single-letter token used in sequence type strings ("AID", "APMID").
    pub fn initial(self) -> char {
        match self {
            ActionPrimitive::Approach => 'A',
            ActionPrimitive::Push => 'P',
            ActionPrimitive::Mate => 'M',
            ActionPrimitive::Insert => 'I',
            ActionPrimitive::Disassemble => 'D',
        }
    }

    pub fn from_initial(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.initial() == c)
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionPrimitive::Approach => "Approach",
            ActionPrimitive::Push => "Push",
            ActionPrimitive::Mate => "Mate",
            ActionPrimitive::Insert => "Insert",
            ActionPrimitive::Disassemble => "Disassemble",
        }
    }
}

impl fmt::Display for ActionPrimitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionPrimitive {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|a| a.name().to_ascii_lowercase() == lower)
            .or_else(|| {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Self::from_initial(c.to_ascii_uppercase()),
                    _ => None,
                }
            })
            .ok_or_else(|| format!("unknown action primitive `{s}`"))
    }
}

/// Concatenated initials of an action list, e.g. `[Approach, Insert, Disassemble]` -> "AID".
pub fn sequence_type(actions: &[ActionPrimitive]) -> String {
    actions.iter().map(|a| a.initial()).collect()
}
