//! Deliberately broken protocol variants used to show that the checkers and
//! the exhaustive explorer catch safety violations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// The faithful protocol.
    #[default]
    None,
    /// Acceptors never attach their highest accepted proposal to pre-acks.
    DropAttachment,
    /// Proposers ignore attachments and always propose their own value.
    DropInheritance,
    /// Acceptors acknowledge regardless of greater numbers already acknowledged.
    DropOrdering,
    /// Proposers count acks for their own superseded numbers toward the
    /// current number's quorum.
    CountStaleAcks,
    /// Proposers treat half of the acceptors as a quorum.
    HalfQuorum,
}

impl Mutation {
    pub const ALL_MUTANTS: [Mutation; 5] = [
        Mutation::DropAttachment,
        Mutation::DropInheritance,
        Mutation::DropOrdering,
        Mutation::CountStaleAcks,
        Mutation::HalfQuorum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mutation::None => "none",
            Mutation::DropAttachment => "drop_attachment",
            Mutation::DropInheritance => "drop_inheritance",
            Mutation::DropOrdering => "drop_ordering",
            Mutation::CountStaleAcks => "count_stale_acks",
            Mutation::HalfQuorum => "half_quorum",
        }
    }

    pub fn is_faithful(self) -> bool {
        self == Mutation::None
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mutation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        std::iter::once(Mutation::None)
            .chain(Mutation::ALL_MUTANTS)
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mutation {s:?}"))
    }
}
