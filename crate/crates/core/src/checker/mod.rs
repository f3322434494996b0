//! Trace analysis: agreement, the induction list, livelock and lease
//! uniqueness, plus the exhaustive explorer in [`oracle`].
//!
//! Every check is a pure function of a [`Trace`] and returns a serializable
//! verdict with a machine-readable outcome and a human-readable explanation.

pub mod oracle;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::leader::Role;
use crate::proposer::Phase;
use crate::trace::{EventBody, Note, Trace};
use crate::types::{AgentId, Message, Proposal, ProposalNumber, QuorumConfig, Time, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AckedList {
    /// The lowest-numbered proposal acknowledged by a quorum.
    pub first_win: Proposal,
    /// Every proposal acknowledged at least once with a number at or above
    /// the first win, ascending.
    pub entries: Vec<Proposal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub passed: bool,
    /// Passed only because there was nothing to check.
    pub vacuous: bool,
    pub explanation: String,
    /// Trace event indices supporting the explanation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acked_list: Option<AckedList>,
}

impl Verdict {
    fn pass(check: &str, explanation: String) -> Self {
        Self { check: check.to_string(), passed: true, vacuous: false, explanation, events: Vec::new(), acked_list: None }
    }

    fn vacuous(check: &str, explanation: &str) -> Self {
        Self { vacuous: true, ..Self::pass(check, explanation.to_string()) }
    }

    fn fail(check: &str, explanation: String, events: Vec<u64>) -> Self {
        Self { check: check.to_string(), passed: false, vacuous: false, explanation, events, acked_list: None }
    }
}

/// Which acceptors acknowledged each full proposal. Shared by the trace
/// checker and the exhaustive explorer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct AckLedger {
    /// Sorted by number; each acceptor list is sorted too. Vectors rather
    /// than maps because the explorer clones ledgers millions of times.
    acks: Vec<(ProposalNumber, Value, Vec<AgentId>)>,
}

impl AckLedger {
    pub fn record(&mut self, acceptor: AgentId, proposal: &Proposal) {
        let i = match self.acks.binary_search_by_key(&proposal.number, |e| e.0) {
            Ok(i) => i,
            Err(i) => {
                self.acks.insert(i, (proposal.number, proposal.value.clone(), Vec::new()));
                i
            }
        };
        let by = &mut self.acks[i].2;
        if let Err(j) = by.binary_search(&acceptor) {
            by.insert(j, acceptor);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.acks.is_empty()
    }

    pub fn acked_list(&self, quorum: &QuorumConfig) -> Option<AckedList> {
        let first = self.acks.iter().position(|(_, _, by)| quorum.reaches(by.len()))?;
        let (n1, v1, _) = &self.acks[first];
        let first_win = Proposal::new(*n1, v1.clone());
        let entries = self.acks[first..].iter().map(|(n, v, _)| Proposal::new(*n, v.clone())).collect();
        Some(AckedList { first_win, entries })
    }

    /// First list entry whose value differs from the first win's.
    pub fn violation(&self, quorum: &QuorumConfig) -> Option<(AckedList, Proposal)> {
        let list = self.acked_list(quorum)?;
        let bad = list.entries.iter().find(|p| p.value != list.first_win.value)?.clone();
        Some((list, bad))
    }
}

/// All decisions carry equal values (per slot, for the naive protocol).
pub fn check_agreement(trace: &Trace) -> Verdict {
    const NAME: &str = "agreement";
    let mut first: BTreeMap<Option<u64>, (u64, &Value)> = BTreeMap::new();
    let mut count = 0;
    for (event, notice) in trace.decisions() {
        count += 1;
        match first.get(&notice.slot) {
            None => {
                first.insert(notice.slot, (event.index, &notice.value));
            }
            Some((idx, value)) if *value != &notice.value => {
                let slot = notice.slot.map(|s| format!(" in slot {s}")).unwrap_or_default();
                return Verdict::fail(
                    NAME,
                    format!(
                        "conflicting decisions{slot}: {value} at event {idx}, {} at event {}",
                        notice.value, event.index
                    ),
                    vec![*idx, event.index],
                );
            }
            Some(_) => {}
        }
    }
    if count == 0 {
        return Verdict::vacuous(NAME, "no decisions (safety holds vacuously; liveness is a separate question)");
    }
    let values: Vec<String> = first
        .iter()
        .map(|(slot, (_, v))| match slot {
            Some(s) => format!("slot {s} = {v}"),
            None => v.to_string(),
        })
        .collect();
    Verdict::pass(NAME, format!("{count} decisions, all agreeing: {}", values.join(", ")))
}

/// Builds the ledger of acknowledged full proposals from FullAck sends,
/// remembering the first event index at which each number was acked.
pub fn ledger_from_trace(trace: &Trace) -> (AckLedger, BTreeMap<ProposalNumber, u64>) {
    let mut values: BTreeMap<ProposalNumber, Value> = BTreeMap::new();
    let mut ledger = AckLedger::default();
    let mut first_ack = BTreeMap::new();
    for event in &trace.events {
        match &event.body {
            EventBody::Deliver { msg: Message::FullProposal { proposal }, .. } => {
                values.insert(proposal.number, proposal.value.clone());
            }
            EventBody::Send { src, msg: Message::FullAck { number }, .. } => {
                if let Some(value) = values.get(number) {
                    ledger.record(*src, &Proposal::new(*number, value.clone()));
                    first_ack.entry(*number).or_insert(event.index);
                }
            }
            _ => {}
        }
    }
    (ledger, first_ack)
}

/// Every proposal acknowledged at least once, numbered at or above the
/// lowest proposal acknowledged by a quorum, carries that proposal's value.
/// A quorum of acknowledgment sends counts as a win whether or not the
/// proposer received them.
pub fn check_induction_list(trace: &Trace) -> Verdict {
    const NAME: &str = "induction";
    let quorum = trace.header.scenario.quorum();
    let (ledger, first_ack) = ledger_from_trace(trace);
    let Some(list) = ledger.acked_list(&quorum) else {
        return Verdict::vacuous(NAME, "no proposal was acknowledged by a quorum");
    };
    let rendered: Vec<String> = list.entries.iter().map(|p| p.to_string()).collect();
    let mut verdict = match list.entries.iter().find(|p| p.value != list.first_win.value) {
        None => Verdict::pass(
            NAME,
            format!("first win {}; all {} listed proposals agree: {}", list.first_win, list.entries.len(), rendered.join(" ")),
        ),
        Some(bad) => Verdict::fail(
            NAME,
            format!("first win {} but {} was acknowledged; list: {}", list.first_win, bad, rendered.join(" ")),
            vec![first_ack[&list.first_win.number], first_ack[&bad.number]],
        ),
    };
    verdict.acked_list = Some(list);
    verdict
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LivelockReport {
    /// Number of events examined.
    pub horizon: usize,
    pub decided: bool,
    /// No decision within the horizon although proposers kept restarting.
    pub livelock: bool,
    pub restarts: BTreeMap<AgentId, usize>,
    /// Proposers in the order they completed phase 1.
    pub phase1_completions: Vec<AgentId>,
    /// No proposer completed phase 1 twice in a row.
    pub strictly_alternating: bool,
}

impl LivelockReport {
    pub fn verdict(&self) -> Verdict {
        let pattern: Vec<String> = self.phase1_completions.iter().map(|a| a.to_string()).collect();
        let restarts: Vec<String> = self.restarts.iter().map(|(a, n)| format!("{a}: {n}")).collect();
        let explanation = format!(
            "{} within {} events; restarts {{{}}}; phase-1 completions {}{}",
            if self.decided { "decided" } else { "no decision" },
            self.horizon,
            restarts.join(", "),
            pattern.join(","),
            if self.strictly_alternating && pattern.len() > 1 { " (strictly alternating)" } else { "" },
        );
        Verdict {
            check: "livelock".to_string(),
            passed: !self.livelock,
            vacuous: false,
            explanation,
            events: Vec::new(),
            acked_list: None,
        }
    }
}

/// Looks at the first `horizon` events (all of them when `None`).
pub fn detect_livelock(trace: &Trace, horizon: Option<usize>) -> LivelockReport {
    let horizon = horizon.unwrap_or(trace.events.len()).min(trace.events.len());
    let events = &trace.events[..horizon];
    let mut restarts: BTreeMap<AgentId, usize> =
        (0..trace.header.scenario.agents.proposers).map(|i| (AgentId::proposer(i), 0)).collect();
    let mut completions = Vec::new();
    let mut decided = false;
    for event in events {
        match &event.body {
            EventBody::Decision { .. } => decided = true,
            EventBody::StateChange { agent, note: Note::Restart { .. } } => *restarts.entry(*agent).or_default() += 1,
            EventBody::StateChange { agent, note: Note::Phase { phase: Phase::Proposing, .. } } => completions.push(*agent),
            _ => {}
        }
    }
    let strictly_alternating = completions.windows(2).all(|w| w[0] != w[1]);
    let total: usize = restarts.values().sum();
    LivelockReport {
        horizon,
        decided,
        livelock: !decided && total > 0,
        restarts,
        phase1_completions: completions,
        strictly_alternating,
    }
}

/// At no instant do two agents both lead with an unexpired quorum of lease
/// grants. Grants come from LeaseGrant deliveries and self-grant notes;
/// leadership from role notes, ended by a crash.
pub fn check_lease_uniqueness(trace: &Trace) -> Verdict {
    const NAME: &str = "lease";
    let quorum = trace.header.scenario.quorum();
    // agent -> epoch while leading
    let mut leading: BTreeMap<AgentId, u64> = BTreeMap::new();
    // candidate -> grantor -> (epoch, expires_at)
    let mut grants: BTreeMap<AgentId, BTreeMap<AgentId, (u64, Time)>> = BTreeMap::new();
    let mut holder_since: BTreeMap<AgentId, u64> = BTreeMap::new();
    let mut elected = 0usize;

    let holds = |leading: &BTreeMap<AgentId, u64>, grants: &BTreeMap<AgentId, BTreeMap<AgentId, (u64, Time)>>, a: AgentId, now: Time| {
        let Some(epoch) = leading.get(&a) else { return false };
        let live = grants
            .get(&a)
            .map_or(0, |g| g.values().filter(|(e, exp)| e == epoch && *exp > now).count());
        quorum.reaches(live)
    };

    for event in &trace.events {
        let now = event.time;
        let mut touched = None;
        match &event.body {
            EventBody::StateChange { agent, note: Note::Role { role, epoch } } => {
                if *role == Role::Leader {
                    leading.insert(*agent, *epoch);
                    elected += 1;
                } else {
                    leading.remove(agent);
                }
                touched = Some(*agent);
            }
            EventBody::StateChange { agent, note: Note::SelfGrant { epoch, expires_at } } => {
                grants.entry(*agent).or_default().insert(*agent, (*epoch, *expires_at));
                touched = Some(*agent);
            }
            EventBody::Deliver { src, dst, msg: Message::LeaseGrant { candidate, epoch, expires_at }, .. } if candidate == dst => {
                grants.entry(*dst).or_default().insert(*src, (*epoch, *expires_at));
                touched = Some(*dst);
            }
            EventBody::Crash { agent } => {
                leading.remove(agent);
            }
            _ => {}
        }
        let Some(agent) = touched else { continue };
        if !holds(&leading, &grants, agent, now) {
            holder_since.remove(&agent);
            continue;
        }
        holder_since.entry(agent).or_insert(event.index);
        let others: Vec<AgentId> =
            leading.keys().copied().filter(|b| *b != agent && holds(&leading, &grants, *b, now)).collect();
        if let Some(other) = others.first() {
            let mut explanation = String::new();
            let _ = write!(
                explanation,
                "at time {now} both {agent} (epoch {}) and {other} (epoch {}) lead with an unexpired quorum of grants",
                leading[&agent], leading[other]
            );
            let since = holder_since.get(other).copied().unwrap_or(event.index);
            return Verdict::fail(NAME, explanation, vec![since, event.index]);
        }
    }
    if elected == 0 {
        return Verdict::vacuous(NAME, "no leader was ever elected");
    }
    Verdict::pass(NAME, format!("{elected} leadership terms, never two overlapping leases"))
}
