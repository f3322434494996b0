//! Two-phase proposer state machine.
//!
//! A proposer first broadcasts a bare number, waits for pre-acks from a
//! quorum, adopts the highest-numbered value attached to those acks (or its
//! own value when none are attached) and then broadcasts the full proposal.
//! It has won once a quorum acknowledges the full proposal. When it cannot
//! advance, its [`RestartPolicy`] decides whether and when it abandons the
//! attempt and starts over with a higher number.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mutation::Mutation;
use crate::types::{AgentId, Message, Proposal, ProposalNumber, QuorumConfig, Time, Value};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProposerError {
    #[error("proposer {id} can only start a round while idle (currently {phase})")]
    NotIdle { id: AgentId, phase: Phase },
    #[error("proposer {id} already used round {last}; round {requested} must be greater")]
    RoundNotIncreasing { id: AgentId, requested: u64, last: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    PreProposing,
    Proposing,
    Decided,
}

impl Phase {
    pub fn is_active(self) -> bool {
        matches!(self, Phase::PreProposing | Phase::Proposing)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Idle => "idle",
            Phase::PreProposing => "pre_proposing",
            Phase::Proposing => "proposing",
            Phase::Decided => "decided",
        })
    }
}

/// What a stalled proposer does.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartPolicy {
    /// Restart with a higher number as soon as a stall is detected.
    #[default]
    Eager,
    /// Wait this long after detecting a stall, then restart.
    Timed { wait: Time },
    /// Stay stalled.
    Never,
}

/// Directive returned by [`ProposerState::on_stall`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StallAction {
    None,
    /// Ask again at `until`.
    Wait { until: Time },
    /// The attempt was abandoned; call [`ProposerState::start_round`] with `round`.
    Restart { round: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProposerState {
    pub id: AgentId,
    pub phase: Phase,
    pub current_number: Option<ProposalNumber>,
    pub own_value: Value,
    pub active_value: Option<Value>,
    /// Sorted by sender. Small sorted vectors keep cloned states cheap.
    pub pre_acks: Vec<(AgentId, Option<Proposal>)>,
    pub full_acks: Vec<AgentId>,
    pub restart_policy: RestartPolicy,
    pub stall_deadline: Option<Time>,
    /// Highest round seen in own history or any incoming message.
    pub highest_round_seen: u64,
    pub last_round: Option<u64>,
    pub distinguished: bool,
    mutation: Mutation,
}

impl ProposerState {
    pub fn new(id: AgentId, own_value: Value, restart_policy: RestartPolicy) -> Self {
        Self {
            id,
            phase: Phase::Idle,
            current_number: None,
            own_value,
            active_value: None,
            pre_acks: Vec::new(),
            full_acks: Vec::new(),
            restart_policy,
            stall_deadline: None,
            highest_round_seen: 0,
            last_round: None,
            distinguished: false,
            mutation: Mutation::None,
        }
    }

    pub fn with_mutation(mut self, mutation: Mutation) -> Self {
        self.mutation = mutation;
        self
    }

    /// Marks this proposer as the only one allowed to propose. The state
    /// machine is unchanged; scenario validation guarantees there is no
    /// competitor.
    pub fn distinguished_mode(mut self) -> Self {
        self.distinguished = true;
        self
    }

    fn quorum(&self, cfg: &QuorumConfig) -> QuorumConfig {
        match self.mutation {
            Mutation::HalfQuorum => cfg.half(),
            _ => *cfg,
        }
    }

    /// Whether an ack for `number` counts toward the current attempt.
    fn counts(&self, number: ProposalNumber) -> bool {
        match self.current_number {
            Some(current) if self.mutation == Mutation::CountStaleAcks => {
                number.proposer == self.id && number <= current
            }
            Some(current) => number == current,
            None => false,
        }
    }

    fn observe_round(&mut self, round: u64) {
        self.highest_round_seen = self.highest_round_seen.max(round);
    }

    /// The round a restart would use: one past anything seen so far.
    pub fn next_round(&self) -> u64 {
        self.highest_round_seen.max(self.last_round.unwrap_or(0)) + 1
    }

    /// Number of distinct acceptors counted in the current phase.
    pub fn ack_count(&self) -> usize {
        match self.phase {
            Phase::PreProposing => self.pre_acks.len(),
            Phase::Proposing | Phase::Decided => self.full_acks.len(),
            Phase::Idle => 0,
        }
    }

    pub fn start_round(&mut self, round: u64) -> Result<Message, ProposerError> {
        if self.phase != Phase::Idle {
            return Err(ProposerError::NotIdle { id: self.id, phase: self.phase });
        }
        if let Some(last) = self.last_round {
            if round <= last {
                return Err(ProposerError::RoundNotIncreasing { id: self.id, requested: round, last });
            }
        }
        let number = ProposalNumber { round, proposer: self.id };
        self.observe_round(round);
        self.last_round = Some(round);
        self.current_number = Some(number);
        self.phase = Phase::PreProposing;
        self.active_value = None;
        self.pre_acks.clear();
        self.full_acks.clear();
        self.stall_deadline = None;
        Ok(Message::PreProposal { number })
    }

    /// Records a pre-ack. Returns the full proposal to broadcast when the
    /// recorded senders first form a quorum.
    pub fn on_pre_ack(
        &mut self,
        from: AgentId,
        number: ProposalNumber,
        attached: Option<Proposal>,
        cfg: &QuorumConfig,
    ) -> Option<Message> {
        self.observe_round(number.round);
        if let Some(p) = &attached {
            self.observe_round(p.number.round);
        }
        if self.phase != Phase::PreProposing || !self.counts(number) || !cfg.contains(from) {
            return None;
        }
        let Err(slot) = self.pre_acks.binary_search_by_key(&from, |(a, _)| *a) else { return None };
        self.pre_acks.insert(slot, (from, attached));
        self.stall_deadline = None;
        if !self.quorum(cfg).reaches(self.pre_acks.len()) {
            return None;
        }

        let inherited = self
            .pre_acks
            .iter()
            .filter_map(|(_, p)| p.as_ref())
            .max_by_key(|p| p.number)
            .map(|p| p.value.clone());
        let value = match self.mutation {
            Mutation::DropInheritance => self.own_value.clone(),
            _ => inherited.unwrap_or_else(|| self.own_value.clone()),
        };
        let number = self.current_number.expect("pre-proposing without a number");
        self.active_value = Some(value.clone());
        self.phase = Phase::Proposing;
        Some(Message::FullProposal { proposal: Proposal::new(number, value) })
    }

    /// Records a full ack. Returns the winning proposal when a quorum is
    /// first reached.
    pub fn on_full_ack(&mut self, from: AgentId, number: ProposalNumber, cfg: &QuorumConfig) -> Option<Proposal> {
        self.observe_round(number.round);
        if self.phase != Phase::Proposing || !self.counts(number) || !cfg.contains(from) {
            return None;
        }
        let Err(slot) = self.full_acks.binary_search(&from) else { return None };
        self.full_acks.insert(slot, from);
        self.stall_deadline = None;
        if !self.quorum(cfg).reaches(self.full_acks.len()) {
            return None;
        }
        self.phase = Phase::Decided;
        let number = self.current_number.expect("proposing without a number");
        let value = self.active_value.clone().expect("proposing without a value");
        Some(Proposal::new(number, value))
    }

    /// Called when the proposer has made no progress for a while.
    pub fn on_stall(&mut self, now: Time) -> StallAction {
        if !self.phase.is_active() {
            return StallAction::None;
        }
        match self.restart_policy {
            RestartPolicy::Never => StallAction::None,
            RestartPolicy::Eager => StallAction::Restart { round: self.abandon() },
            RestartPolicy::Timed { wait } => match self.stall_deadline {
                None => {
                    let until = now + wait;
                    self.stall_deadline = Some(until);
                    StallAction::Wait { until }
                }
                Some(until) if now >= until => StallAction::Restart { round: self.abandon() },
                Some(until) => StallAction::Wait { until },
            },
        }
    }

    /// Abandons the current attempt and value, returning the round to
    /// restart with.
    pub fn abandon(&mut self) -> u64 {
        self.phase = Phase::Idle;
        self.active_value = None;
        self.pre_acks.clear();
        self.full_acks.clear();
        self.stall_deadline = None;
        self.next_round()
    }

    /// Message for the current phase, used for resends.
    pub fn current_request(&self) -> Option<Message> {
        let number = self.current_number?;
        match self.phase {
            Phase::PreProposing => Some(Message::PreProposal { number }),
            Phase::Proposing => Some(Message::FullProposal {
                proposal: Proposal::new(number, self.active_value.clone()?),
            }),
            _ => None,
        }
    }

    /// Acceptors that have not yet acknowledged the current phase.
    pub fn missing_acks(&self, cfg: &QuorumConfig) -> Vec<AgentId> {
        cfg.acceptors()
            .filter(|a| match self.phase {
                Phase::PreProposing => self.pre_acks.binary_search_by_key(a, |(x, _)| *x).is_err(),
                Phase::Proposing => self.full_acks.binary_search(a).is_err(),
                _ => false,
            })
            .collect()
    }
}
