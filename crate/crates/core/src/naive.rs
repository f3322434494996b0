//! Single-proposer consensus: broadcast a value per slot and keep resending
//! until a quorum of acceptors has acknowledged it.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::types::{AgentId, DecisionNotice, Message, QuorumConfig, Time, Value};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NaiveError {
    #[error("slot {slot} already holds {existing}, cannot propose {requested}")]
    SlotTaken { slot: u64, existing: Value, requested: Value },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotState {
    pub value: Value,
    pub acks: BTreeSet<AgentId>,
    pub decided: bool,
    pub last_sent: Time,
    pub resends: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NaiveProposerState {
    pub id: AgentId,
    pub slots: BTreeMap<u64, SlotState>,
    pub resend_interval: Time,
}

impl NaiveProposerState {
    pub fn new(id: AgentId, resend_interval: Time) -> Self {
        Self { id, slots: BTreeMap::new(), resend_interval }
    }

    /// Registers `value` for `slot` and returns the broadcast. Proposing the
    /// same value again is a no-op resend; a different value is rejected.
    pub fn naive_propose(&mut self, slot: u64, value: Value, now: Time) -> Result<Message, NaiveError> {
        if let Some(existing) = self.slots.get(&slot) {
            if existing.value != value {
                return Err(NaiveError::SlotTaken { slot, existing: existing.value.clone(), requested: value });
            }
            return Ok(Message::NaivePropose { slot, value });
        }
        self.slots.insert(
            slot,
            SlotState { value: value.clone(), acks: BTreeSet::new(), decided: false, last_sent: now, resends: 0 },
        );
        Ok(Message::NaivePropose { slot, value })
    }

    pub fn naive_on_ack(&mut self, from: AgentId, slot: u64, cfg: &QuorumConfig) -> Option<DecisionNotice> {
        if !cfg.contains(from) {
            return None;
        }
        let state = self.slots.get_mut(&slot)?;
        if state.decided || !state.acks.insert(from) {
            return None;
        }
        if !cfg.reaches(state.acks.len()) {
            return None;
        }
        state.decided = true;
        Some(DecisionNotice::naive(slot, state.value.clone()))
    }

    /// Rebroadcasts every undecided slot whose last send is at least
    /// `resend_interval` old.
    pub fn naive_tick(&mut self, now: Time) -> Vec<Message> {
        let interval = self.resend_interval;
        self.slots
            .iter_mut()
            .filter(|(_, s)| !s.decided && now.saturating_sub(s.last_sent) >= interval)
            .map(|(slot, s)| {
                s.last_sent = now;
                s.resends += 1;
                Message::NaivePropose { slot: *slot, value: s.value.clone() }
            })
            .collect()
    }

    /// Earliest time a resend could be due.
    pub fn next_resend(&self) -> Option<Time> {
        self.slots.values().filter(|s| !s.decided).map(|s| s.last_sent + self.resend_interval).min()
    }

    pub fn all_decided(&self) -> bool {
        self.slots.values().all(|s| s.decided)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NaiveAcceptorState {
    pub id: AgentId,
    pub acked_slots: BTreeSet<u64>,
}

impl NaiveAcceptorState {
    pub fn new(id: AgentId) -> Self {
        Self { id, acked_slots: BTreeSet::new() }
    }

    /// Every delivered proposal is acknowledged, including resends.
    pub fn on_propose(&mut self, slot: u64) -> Message {
        self.acked_slots.insert(slot);
        Message::NaiveAck { slot }
    }
}

/// Expected number of broadcast attempts until a quorum has acknowledged,
/// when each propose and each ack is dropped independently with
/// `drop_probability` and acknowledgments accumulate across attempts.
///
/// Each acceptor's first successful round trip is geometric with success
/// probability `(1 - p)^2` per attempt; the slot decides at the attempt where
/// the `quorum`-th acceptor succeeds.
pub fn expected_attempts(drop_probability: f64, acceptors: u32, quorum: u32) -> f64 {
    let success = (1.0 - drop_probability).powi(2);
    if success <= 0.0 {
        return f64::INFINITY;
    }
    let mut expected = 0.0;
    // E[K] = sum over k >= 0 of P(K > k)
    for k in 0..100_000 {
        let q = 1.0 - (1.0 - success).powi(k);
        let below = (0..quorum).map(|j| binomial(acceptors, j) * q.powi(j as i32) * (1.0 - q).powi((acceptors - j) as i32)).sum::<f64>();
        expected += below;
        if below < 1e-15 {
            break;
        }
    }
    expected
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}
