//! Exhaustive breadth-first exploration of small Paxos instances.
//!
//! From the initial state (every proposer has broadcast round 1) each step
//! delivers one in-flight message or restarts a proposer (bounded per
//! proposer). Delivery order is unconstrained, which covers every delay and
//! reordering.
//!
//! Losses need no steps of their own. Both checks look only at agent state
//! and the ack ledger, never at the network, and an undelivered message only
//! adds choices later. So deleting the drop steps from any path gives a
//! shorter path to the same agent state. Pruning drops changes neither the
//! verdict nor the length of the shortest counterexample.
//! [`OracleOptions::explicit_drops`] puts them back for cross-checking.
//!
//! States are deduplicated by a 64-bit
//! fingerprint; each layer is expanded in parallel and merged in a fixed
//! order, so the result, including which shortest counterexample is
//! reported, does not depend on thread scheduling.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::hash::{Hash, Hasher};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::AckLedger;
use crate::acceptor::AcceptorState;
use crate::mutation::Mutation;
use crate::proposer::{ProposerState, RestartPolicy};
use crate::scenario::{FaultModel, ScenarioConfig, ScriptStep, StopCondition};
use crate::types::{AgentId, Message, QuorumConfig, Value};

pub const MAX_PROPOSERS: usize = 3;
pub const MAX_ACCEPTORS: u32 = 5;
pub const MAX_VALUES: usize = 2;

const CHUNK: usize = 4096;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("explorer only handles Paxos scenarios")]
    NotPaxos,
    #[error("too large for exhaustive search: {0}")]
    TooLarge(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleOptions {
    pub max_restarts: u32,
    /// Stop with [`OracleOutcome::Incomplete`] after this many distinct states.
    pub max_states: usize,
    /// Also branch on dropping each in-flight message. Never changes the
    /// verdict or the shortest counterexample length (see module docs).
    pub explicit_drops: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { max_restarts: 1, max_states: 5_000_000, explicit_drops: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum OracleOutcome {
    /// No reachable state within the depth violates a safety check.
    Pass { depth: usize, states: usize },
    /// A shortest path to a violation.
    Counterexample { steps: Vec<ScriptStep>, violation: String, states: usize },
    /// The state budget ran out; layers up to `depth_completed` were fully
    /// explored without a violation.
    Incomplete { depth_completed: usize, states: usize },
}

impl OracleOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, OracleOutcome::Pass { .. })
    }

    /// A scripted scenario replaying the counterexample in the simulator.
    pub fn replay_scenario(&self, base: &ScenarioConfig) -> Option<ScenarioConfig> {
        let OracleOutcome::Counterexample { steps, .. } = self else { return None };
        let mut c = base.clone();
        c.name = format!("{}-counterexample", base.name);
        c.faults = FaultModel { script: Some(steps.clone()), ..FaultModel::default() };
        for p in &mut c.proposers {
            p.start_at = 0;
            p.restart = RestartPolicy::Never;
        }
        c.stop = StopCondition::default();
        Some(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct State {
    acceptors: Vec<AcceptorState>,
    proposers: Vec<ProposerState>,
    /// Sorted multiset of (src, dst, message).
    in_flight: Vec<(AgentId, AgentId, Message)>,
    restarts: Vec<u32>,
    ledger: AckLedger,
    decisions: BTreeSet<Value>,
}

fn fingerprint(state: &State) -> u64 {
    let mut h = DefaultHasher::new();
    state.hash(&mut h);
    h.finish()
}

struct Explorer {
    quorum: QuorumConfig,
    acceptor_ids: Vec<AgentId>,
    options: OracleOptions,
}

impl Explorer {
    fn send_all(&self, state: &mut State, src: AgentId, msg: &Message) {
        for a in &self.acceptor_ids {
            state.in_flight.push((src, *a, msg.clone()));
        }
    }

    fn initial(&self, values: &[Value], mutation: Mutation) -> State {
        let mut state = State {
            acceptors: self.acceptor_ids.iter().map(|id| AcceptorState::with_mutation(*id, mutation)).collect(),
            proposers: Vec::new(),
            in_flight: Vec::new(),
            restarts: vec![0; values.len()],
            ledger: AckLedger::default(),
            decisions: BTreeSet::new(),
        };
        for (i, v) in values.iter().enumerate() {
            let id = AgentId::proposer(i as u32);
            let mut p = ProposerState::new(id, v.clone(), RestartPolicy::Never).with_mutation(mutation);
            let msg = p.start_round(p.next_round()).expect("fresh proposer");
            self.send_all(&mut state, id, &msg);
            state.proposers.push(p);
        }
        state.in_flight.sort();
        state
    }

    fn deliver(&self, state: &mut State, src: AgentId, dst: AgentId, msg: &Message) {
        if dst.is_acceptor() {
            let acceptor = &mut state.acceptors[dst.index as usize];
            if let Some(reply) = acceptor.handle(msg) {
                if let (Message::FullAck { .. }, Message::FullProposal { proposal }) = (&reply, msg) {
                    state.ledger.record(dst, proposal);
                }
                state.in_flight.push((dst, src, reply));
            }
            return;
        }
        let p = &mut state.proposers[dst.index as usize];
        match msg {
            Message::PreAck { number, attached } => {
                if let Some(full) = p.on_pre_ack(src, *number, attached.clone(), &self.quorum) {
                    self.send_all(state, dst, &full);
                }
            }
            Message::FullAck { number } => {
                if let Some(won) = p.on_full_ack(src, *number, &self.quorum) {
                    state.decisions.insert(won.value);
                }
            }
            _ => {}
        }
    }

    fn successors(&self, state: &State) -> Vec<(State, ScriptStep)> {
        let mut out = Vec::new();
        for (i, (src, dst, msg)) in state.in_flight.iter().enumerate() {
            if i > 0 && state.in_flight[i - 1] == state.in_flight[i] {
                continue;
            }
            let mut delivered = state.clone();
            delivered.in_flight.remove(i);
            self.deliver(&mut delivered, *src, *dst, msg);
            delivered.in_flight.sort();
            delivered.in_flight.shrink_to_fit();
            out.push((delivered, ScriptStep::Deliver { src: *src, dst: *dst, msg: msg.clone() }));
            if self.options.explicit_drops {
                let mut rest = state.clone();
                rest.in_flight.remove(i);
                out.push((rest, ScriptStep::Drop { src: *src, dst: *dst, msg: msg.clone() }));
            }
        }
        for (i, p) in state.proposers.iter().enumerate() {
            if state.restarts[i] >= self.options.max_restarts || !p.phase.is_active() {
                continue;
            }
            let mut next = state.clone();
            let proposer = &mut next.proposers[i];
            let round = proposer.abandon();
            let msg = proposer.start_round(round).expect("abandoned proposer is idle");
            let id = proposer.id;
            next.restarts[i] += 1;
            self.send_all(&mut next, id, &msg);
            next.in_flight.sort();
            next.in_flight.shrink_to_fit();
            out.push((next, ScriptStep::Restart { proposer: id }));
        }
        out
    }

    fn violation(&self, state: &State) -> Option<String> {
        if state.decisions.len() > 1 {
            let values: Vec<String> = state.decisions.iter().map(|v| v.to_string()).collect();
            return Some(format!("agreement: decided {}", values.join(" and ")));
        }
        let (list, bad) = state.ledger.violation(&self.quorum)?;
        Some(format!("induction: first win {} but {} was acknowledged", list.first_win, bad))
    }
}

fn check_preconditions(config: &ScenarioConfig) -> Result<Vec<Value>, OracleError> {
    if !config.protocol.is_paxos() {
        return Err(OracleError::NotPaxos);
    }
    let values: Vec<Value> = config.proposers.iter().map(|p| p.value.clone()).collect();
    if values.len() > MAX_PROPOSERS {
        return Err(OracleError::TooLarge(format!("{} proposers (at most {MAX_PROPOSERS})", values.len())));
    }
    if config.agents.acceptors > MAX_ACCEPTORS {
        return Err(OracleError::TooLarge(format!("{} acceptors (at most {MAX_ACCEPTORS})", config.agents.acceptors)));
    }
    let distinct: BTreeSet<&Value> = values.iter().collect();
    if distinct.len() > MAX_VALUES {
        return Err(OracleError::TooLarge(format!("{} distinct values (at most {MAX_VALUES})", distinct.len())));
    }
    Ok(values)
}

pub fn oracle_explore(config: &ScenarioConfig, depth: usize) -> Result<OracleOutcome, OracleError> {
    oracle_explore_with(config, depth, OracleOptions::default())
}

/// Uses the scenario's proposers, their values, the acceptor count and the
/// mutation; faults, timing and seed are irrelevant because every
/// interleaving is enumerated.
pub fn oracle_explore_with(
    config: &ScenarioConfig,
    depth: usize,
    options: OracleOptions,
) -> Result<OracleOutcome, OracleError> {
    let values = check_preconditions(config)?;
    let quorum = config.quorum();
    let explorer = Explorer { quorum, acceptor_ids: quorum.acceptors().collect(), options };

    let root = explorer.initial(&values, config.mutation);
    let root_fp = fingerprint(&root);
    let mut parents: HashMap<u64, (u64, ScriptStep)> = HashMap::new();
    let mut visited: HashSet<u64> = HashSet::from([root_fp]);
    let mut layer = vec![(root_fp, root)];

    let path_to = |parents: &HashMap<u64, (u64, ScriptStep)>, mut fp: u64| {
        let mut steps = Vec::new();
        while let Some((parent, step)) = parents.get(&fp) {
            steps.push(step.clone());
            fp = *parent;
        }
        steps.reverse();
        steps
    };

    for level in 0..depth {
        let mut next = Vec::new();
        // Chunked so that only a bounded number of not-yet-deduplicated
        // children exist at once.
        // Popped from the back of the reversed layer so each chunk's states
        // are freed once expanded, while keeping the layer's order.
        layer.reverse();
        while !layer.is_empty() {
            let mut chunk = layer.split_off(layer.len().saturating_sub(CHUNK));
            chunk.reverse();
            let expanded: Vec<Vec<(u64, State, ScriptStep)>> = chunk
                .par_iter()
                .map(|(_, s)| {
                    explorer
                        .successors(s)
                        .into_iter()
                        .map(|(child, step)| (fingerprint(&child), child, step))
                        .filter(|(fp, _, _)| !visited.contains(fp))
                        .collect()
                })
                .collect();
            for ((parent_fp, _), children) in chunk.iter().zip(expanded) {
                for (fp, child, step) in children {
                    if !visited.insert(fp) {
                        continue;
                    }
                    if let Some(violation) = explorer.violation(&child) {
                        let mut steps = path_to(&parents, *parent_fp);
                        steps.push(step);
                        return Ok(OracleOutcome::Counterexample { steps, violation, states: visited.len() });
                    }
                    if visited.len() >= options.max_states {
                        return Ok(OracleOutcome::Incomplete { depth_completed: level, states: visited.len() });
                    }
                    // The last layer is only checked, never expanded.
                    if level + 1 < depth {
                        parents.insert(fp, (*parent_fp, step));
                        next.push((fp, child));
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        layer = next;
    }
    Ok(OracleOutcome::Pass { depth, states: visited.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::check_induction_list;
    use crate::simnet;
    use crate::types::Proposal;

    fn config(values: &[&str], acceptors: u32, mutation: Mutation) -> ScenarioConfig {
        let mut c = ScenarioConfig::paxos("oracle", 0, values, acceptors);
        c.mutation = mutation;
        c
    }

    #[test]
    fn preconditions() {
        assert!(matches!(
            oracle_explore(&config(&["a", "b", "a", "b"], 3, Mutation::None), 2),
            Err(OracleError::TooLarge(_))
        ));
        assert!(matches!(oracle_explore(&config(&["a"], 6, Mutation::None), 2), Err(OracleError::TooLarge(_))));
        assert!(matches!(
            oracle_explore(&config(&["a", "b", "c"], 3, Mutation::None), 2),
            Err(OracleError::TooLarge(_))
        ));
    }

    #[test]
    fn single_proposer_passes_exhaustively() {
        let outcome = oracle_explore(&config(&["vA"], 3, Mutation::None), 16).unwrap();
        assert!(outcome.passed(), "{outcome:?}");
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let outcome = oracle_explore_with(
            &config(&["vA", "vB"], 3, Mutation::None),
            12,
            OracleOptions { max_states: 1000, ..OracleOptions::default() },
        )
        .unwrap();
        assert!(matches!(outcome, OracleOutcome::Incomplete { states: 1000, .. }), "{outcome:?}");
    }

    #[test]
    fn half_quorum_counterexample_replays_in_simulator() {
        let c = config(&["vA", "vB"], 3, Mutation::HalfQuorum);
        let outcome = oracle_explore(&c, 8).unwrap();
        let OracleOutcome::Counterexample { steps, .. } = &outcome else { panic!("{outcome:?}") };
        // Two half-quorum wins on different values: one in-flight delivery
        // short of an agreement violation, already an induction violation.
        assert_eq!(steps.len(), 7);
        let trace = simnet::run(&outcome.replay_scenario(&c).unwrap()).unwrap();
        assert!(!check_induction_list(&trace).passed);
    }

    #[test]
    fn inheritance_counterexample_replays_in_simulator() {
        let c = config(&["vA", "vB"], 3, Mutation::DropInheritance);
        let outcome = oracle_explore(&c, 11).unwrap();
        let OracleOutcome::Counterexample { steps, .. } = &outcome else { panic!("{outcome:?}") };
        assert_eq!(steps.len(), 11);
        let trace = simnet::run(&outcome.replay_scenario(&c).unwrap()).unwrap();
        assert!(!check_induction_list(&trace).passed);
    }

    #[test]
    fn ledger_records_full_acks() {
        let c = config(&["vA"], 3, Mutation::None);
        let explorer = Explorer { quorum: c.quorum(), acceptor_ids: c.quorum().acceptors().collect(), options: OracleOptions::default() };
        let mut s = explorer.initial(&[Value::new("vA").unwrap()], Mutation::None);
        assert_eq!(s.in_flight.len(), 3);
        let p = Proposal::new(crate::types::ProposalNumber::new(1, 0), Value::new("vA").unwrap());
        explorer.deliver(&mut s, AgentId::proposer(0), AgentId::acceptor(0), &Message::FullProposal { proposal: p });
        assert!(!s.ledger.is_empty());
    }
}
