//! Shared protocol vocabulary: agent identifiers, proposal numbers, opaque
//! values, wire messages and strict-majority quorum arithmetic.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Virtual time, in abstract ticks.
pub type Time = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TypeError {
    #[error("value payload must be nonempty")]
    EmptyValue,
    #[error("invalid hex value payload: {0}")]
    BadHex(String),
    #[error("acceptor count must be positive")]
    NoAcceptors,
    #[error("{0} is not an acceptor")]
    NotAnAcceptor(AgentId),
    #[error("acceptor {id} out of range (acceptor count {count})")]
    AcceptorOutOfRange { id: AgentId, count: u32 },
    #[error("malformed agent id {0:?}, expected p<N>, a<N> or l<N>")]
    BadAgentId(String),
    #[error("proposal number must be owned by a proposer, got {0}")]
    NotAProposer(AgentId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgentKind {
    Proposer,
    Acceptor,
    Learner,
}

impl AgentKind {
    fn prefix(self) -> char {
        match self {
            AgentKind::Proposer => 'p',
            AgentKind::Acceptor => 'a',
            AgentKind::Learner => 'l',
        }
    }
}

/// An agent in a scenario, written `p0`, `a2`, `l0` in traces and configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId {
    pub kind: AgentKind,
    pub index: u32,
}

impl AgentId {
    pub const fn proposer(index: u32) -> Self {
        Self { kind: AgentKind::Proposer, index }
    }

    pub const fn acceptor(index: u32) -> Self {
        Self { kind: AgentKind::Acceptor, index }
    }

    pub const fn learner(index: u32) -> Self {
        Self { kind: AgentKind::Learner, index }
    }

    pub fn is_proposer(&self) -> bool {
        self.kind == AgentKind::Proposer
    }

    pub fn is_acceptor(&self) -> bool {
        self.kind == AgentKind::Acceptor
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind.prefix(), self.index)
    }
}

impl FromStr for AgentId {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TypeError::BadAgentId(s.to_string());
        let mut chars = s.chars();
        let kind = match chars.next().ok_or_else(bad)? {
            'p' => AgentKind::Proposer,
            'a' => AgentKind::Acceptor,
            'l' => AgentKind::Learner,
            _ => return Err(bad()),
        };
        let digits = chars.as_str();
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let index = digits.parse().map_err(|_| bad())?;
        Ok(AgentId { kind, index })
    }
}

impl Serialize for AgentId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AgentId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A globally unique proposal sequence number.
///
/// Uniqueness is structural: the owning proposer is part of the number, so
/// two proposers can never produce equal numbers. Numbers are ordered by
/// round first, with the proposer index breaking ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProposalNumber {
    pub round: u64,
    pub proposer: AgentId,
}

impl ProposalNumber {
    pub const fn new(round: u64, proposer_index: u32) -> Self {
        Self { round, proposer: AgentId::proposer(proposer_index) }
    }

    pub fn owned_by(round: u64, proposer: AgentId) -> Result<Self, TypeError> {
        if !proposer.is_proposer() {
            return Err(TypeError::NotAProposer(proposer));
        }
        Ok(Self { round, proposer })
    }
}

impl Ord for ProposalNumber {
    fn cmp(&self, other: &Self) -> Ordering {
        self.round
            .cmp(&other.round)
            .then(self.proposer.index.cmp(&other.proposer.index))
            .then(self.proposer.kind.cmp(&other.proposer.kind))
    }
}

impl PartialOrd for ProposalNumber {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ProposalNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.round, self.proposer)
    }
}

/// Total order on proposal numbers.
pub fn compare_numbers(a: &ProposalNumber, b: &ProposalNumber) -> Ordering {
    a.cmp(b)
}

/// An opaque, nonempty value. The protocols only ever compare values for
/// byte equality.
///
/// Serialized as a plain string when the bytes are UTF-8, otherwise as
/// `0x` followed by lowercase hex.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Value(Arc<[u8]>);

impl Value {
    pub fn new(payload: impl Into<Vec<u8>>) -> Result<Self, TypeError> {
        let payload = payload.into();
        if payload.is_empty() {
            return Err(TypeError::EmptyValue);
        }
        Ok(Self(payload.into()))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    fn encode(&self) -> String {
        match std::str::from_utf8(&self.0) {
            Ok(s) if !s.starts_with("0x") => s.to_string(),
            _ => format!("0x{}", hex::encode(&self.0)),
        }
    }

    fn decode(s: &str) -> Result<Self, TypeError> {
        match s.strip_prefix("0x") {
            Some(digits) => {
                let bytes = hex::decode(digits).map_err(|e| TypeError::BadHex(e.to_string()))?;
                Value::new(bytes)
            }
            None => Value::new(s.as_bytes()),
        }
    }
}

impl FromStr for Value {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Value::decode(s)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.encode())
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Value::decode(&s).map_err(serde::de::Error::custom)
    }
}

/// A full proposal: a number bound to a value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Proposal {
    pub number: ProposalNumber,
    pub value: Value,
}

impl Proposal {
    pub fn new(number: ProposalNumber, value: Value) -> Self {
        Self { number, value }
    }
}

impl fmt::Display for Proposal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{}, {})", self.number.round, self.number.proposer, self.value)
    }
}

/// A decision observed by a proposer, forwarded to learners.
///
/// Paxos decisions carry the winning number; naive decisions carry the slot.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DecisionNotice {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub number: Option<ProposalNumber>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<u64>,
    pub value: Value,
}

impl DecisionNotice {
    pub fn paxos(proposal: Proposal) -> Self {
        Self { number: Some(proposal.number), slot: None, value: proposal.value }
    }

    pub fn naive(slot: u64, value: Value) -> Self {
        Self { number: None, slot: Some(slot), value }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    PreProposal {
        number: ProposalNumber,
    },
    PreAck {
        number: ProposalNumber,
        #[serde(default)]
        attached: Option<Proposal>,
    },
    FullProposal {
        proposal: Proposal,
    },
    FullAck {
        number: ProposalNumber,
    },
    Decided(DecisionNotice),
    NaivePropose {
        slot: u64,
        value: Value,
    },
    NaiveAck {
        slot: u64,
    },
    Heartbeat {
        leader: AgentId,
        epoch: u64,
    },
    LeaderClaim {
        candidate: AgentId,
        epoch: u64,
    },
    LeaseGrant {
        candidate: AgentId,
        epoch: u64,
        expires_at: Time,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::PreProposal { .. } => "pre_proposal",
            Message::PreAck { .. } => "pre_ack",
            Message::FullProposal { .. } => "full_proposal",
            Message::FullAck { .. } => "full_ack",
            Message::Decided(_) => "decided",
            Message::NaivePropose { .. } => "naive_propose",
            Message::NaiveAck { .. } => "naive_ack",
            Message::Heartbeat { .. } => "heartbeat",
            Message::LeaderClaim { .. } => "leader_claim",
            Message::LeaseGrant { .. } => "lease_grant",
        }
    }

    /// Structural well-formedness. A pre-ack may only attach a proposal
    /// strictly older than the pre-proposal it answers.
    pub fn is_well_formed(&self) -> bool {
        match self {
            Message::PreAck { number, attached: Some(p) } => p.number < *number,
            _ => true,
        }
    }
}

/// Strict-majority quorum over a fixed acceptor population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct QuorumConfig {
    acceptor_count: u32,
    quorum_size: u32,
}

impl QuorumConfig {
    pub fn majority(acceptor_count: u32) -> Result<Self, TypeError> {
        if acceptor_count == 0 {
            return Err(TypeError::NoAcceptors);
        }
        Ok(Self { acceptor_count, quorum_size: acceptor_count / 2 + 1 })
    }

    /// Half of the acceptors instead of a strict majority. Only used to
    /// build the half-quorum protocol mutant.
    pub(crate) fn half(self) -> Self {
        Self { quorum_size: (self.acceptor_count / 2).max(1), ..self }
    }

    pub fn acceptor_count(&self) -> u32 {
        self.acceptor_count
    }

    pub fn quorum_size(&self) -> u32 {
        self.quorum_size
    }

    pub fn acceptors(&self) -> impl Iterator<Item = AgentId> {
        (0..self.acceptor_count).map(AgentId::acceptor)
    }

    pub fn contains(&self, id: AgentId) -> bool {
        id.is_acceptor() && id.index < self.acceptor_count
    }

    fn check_member(&self, id: AgentId) -> Result<(), TypeError> {
        if !id.is_acceptor() {
            return Err(TypeError::NotAnAcceptor(id));
        }
        if id.index >= self.acceptor_count {
            return Err(TypeError::AcceptorOutOfRange { id, count: self.acceptor_count });
        }
        Ok(())
    }

    pub fn is_quorum(&self, acks: &BTreeSet<AgentId>) -> Result<bool, TypeError> {
        for id in acks {
            self.check_member(*id)?;
        }
        Ok(self.reaches(acks.len()))
    }

    /// Whether `count` distinct acceptors form a quorum.
    pub fn reaches(&self, count: usize) -> bool {
        count >= self.quorum_size as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn n(round: u64, p: u32) -> ProposalNumber {
        ProposalNumber::new(round, p)
    }

    fn set(ids: &[u32]) -> BTreeSet<AgentId> {
        ids.iter().copied().map(AgentId::acceptor).collect()
    }

    #[test]
    fn number_ordering_examples() {
        assert_eq!(compare_numbers(&n(1, 0), &n(2, 1)), Ordering::Less);
        assert_eq!(compare_numbers(&n(3, 1), &n(3, 1)), Ordering::Equal);
        assert_eq!(compare_numbers(&n(3, 0), &n(3, 1)), Ordering::Less);
    }

    #[test]
    fn quorum_examples() {
        let three = QuorumConfig::majority(3).unwrap();
        assert_eq!(three.quorum_size(), 2);
        assert!(three.is_quorum(&set(&[0, 2])).unwrap());
        assert!(!three.is_quorum(&set(&[1])).unwrap());
        let five = QuorumConfig::majority(5).unwrap();
        assert!(five.is_quorum(&set(&[0, 1, 4])).unwrap());
    }

    #[test]
    fn quorum_rejects_foreign_ids() {
        let three = QuorumConfig::majority(3).unwrap();
        assert_eq!(
            three.is_quorum(&set(&[0, 3])),
            Err(TypeError::AcceptorOutOfRange { id: AgentId::acceptor(3), count: 3 })
        );
        let mut with_proposer = set(&[0]);
        with_proposer.insert(AgentId::proposer(0));
        assert!(matches!(three.is_quorum(&with_proposer), Err(TypeError::NotAnAcceptor(_))));
        assert_eq!(QuorumConfig::majority(0), Err(TypeError::NoAcceptors));
    }

    #[test]
    fn any_two_quorums_intersect_up_to_seven() {
        for count in 1..=7u32 {
            let cfg = QuorumConfig::majority(count).unwrap();
            let quorums: Vec<u32> = (0u32..1 << count)
                .filter(|mask| cfg.reaches(mask.count_ones() as usize))
                .collect();
            for a in &quorums {
                for b in &quorums {
                    assert_ne!(a & b, 0, "disjoint quorums {a:b} {b:b} of {count}");
                }
            }
        }
    }

    #[test]
    fn half_quorum_admits_disjoint_sets() {
        let cfg = QuorumConfig::majority(4).unwrap().half();
        assert!(cfg.reaches(2));
        assert!(cfg.is_quorum(&set(&[0, 1])).unwrap() && cfg.is_quorum(&set(&[2, 3])).unwrap());
    }

    #[test]
    fn agent_id_text_form() {
        assert_eq!("p12".parse::<AgentId>().unwrap(), AgentId::proposer(12));
        assert_eq!(AgentId::acceptor(3).to_string(), "a3");
        assert!("x1".parse::<AgentId>().is_err());
        assert!("a".parse::<AgentId>().is_err());
        assert!("a-1".parse::<AgentId>().is_err());
    }

    #[test]
    fn values_are_nonempty_and_round_trip() {
        assert_eq!(Value::new(Vec::new()), Err(TypeError::EmptyValue));
        let text = Value::new("vA").unwrap();
        assert_eq!(serde_json::to_string(&text).unwrap(), "\"vA\"");
        let binary = Value::new(vec![0xff, 0x00]).unwrap();
        let json = serde_json::to_string(&binary).unwrap();
        assert_eq!(json, "\"0xff00\"");
        assert_eq!(serde_json::from_str::<Value>(&json).unwrap(), binary);
        let tricky = Value::new("0xzz").unwrap();
        let json = serde_json::to_string(&tricky).unwrap();
        assert_eq!(serde_json::from_str::<Value>(&json).unwrap(), tricky);
    }

    #[test]
    fn pre_ack_attachment_must_be_older() {
        let older = Proposal::new(n(1, 0), Value::new("v").unwrap());
        let ok = Message::PreAck { number: n(2, 1), attached: Some(older.clone()) };
        assert!(ok.is_well_formed());
        let bad = Message::PreAck { number: n(1, 0), attached: Some(older) };
        assert!(!bad.is_well_formed());
    }

    #[test]
    fn proposal_numbers_need_a_proposer() {
        assert!(ProposalNumber::owned_by(1, AgentId::acceptor(0)).is_err());
        assert_eq!(ProposalNumber::owned_by(1, AgentId::proposer(2)).unwrap(), n(1, 2));
    }

    fn number() -> impl Strategy<Value = ProposalNumber> {
        (0u64..6, 0u32..4).prop_map(|(r, p)| n(r, p))
    }

    proptest! {
        #[test]
        fn numbers_form_a_total_order(a in number(), b in number(), c in number()) {
            let ab = compare_numbers(&a, &b);
            prop_assert_eq!(ab.reverse(), compare_numbers(&b, &a));
            prop_assert_eq!(ab == Ordering::Equal, a == b);
            if a <= b && b <= c {
                prop_assert!(a <= c);
            }
        }

        #[test]
        fn message_json_round_trip(round in 0u64..100, p in 0u32..5, payload in "[a-z]{1,6}") {
            let msg = Message::PreAck {
                number: n(round + 1, p),
                attached: Some(Proposal::new(n(round, p), Value::new(payload).unwrap())),
            };
            let json = serde_json::to_string(&msg).unwrap();
            prop_assert_eq!(serde_json::from_str::<Message>(&json).unwrap(), msg);
        }
    }
}
