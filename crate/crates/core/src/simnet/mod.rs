//! Deterministic discrete-event network simulator.
//!
//! Messages are delivered in `(deliver_at, seq)` order after a sampled delay,
//! or dropped when they are sent. Timers due at the same instant as a
//! delivery fire after it. Crashed agents lose every later input and
//! emit nothing; stalled agents buffer inputs and process them when the
//! stall ends. All randomness comes from ChaCha8 generators seeded with the
//! scenario seed, one stream per purpose:
//!
//! | stream | purpose            |
//! |--------|--------------------|
//! | 1      | message drops      |
//! | 2      | message delays     |
//! | 3      | candidacy backoffs |
//! | 4      | clock skew         |
//!
//! A scenario with a `faults.script` ignores delays, drops and timers and
//! instead applies one directive per virtual tick.

mod node;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::acceptor::AcceptorState;
use crate::leader::LeaderState;
use crate::naive::{NaiveAcceptorState, NaiveProposerState};
use crate::proposer::ProposerState;
use crate::scenario::{ConfigError, CrashTarget, Delay, Protocol, ScenarioConfig, ScriptStep};
use crate::trace::{DropReason, EventBody, Trace};
use crate::types::{AgentId, Message, QuorumConfig, Time};

pub use node::{Effect, Node};
use node::{LeaderDriver, NaiveDriver, Peers, ProposerDriver};

pub const STREAM_DROPS: u64 = 1;
pub const STREAM_DELAYS: u64 = 2;
pub const STREAM_BACKOFF: u64 = 3;
pub const STREAM_SKEW: u64 = 4;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("script step {step}: {message}")]
    Script { step: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub seq: u64,
    pub src: AgentId,
    pub dst: AgentId,
    pub send_time: Time,
    pub deliver_at: Time,
    pub payload: Message,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Event {
    Deliver(Envelope),
    Timer { agent: usize, generation: u64 },
    Crash(CrashTarget),
    StallStart { agent: usize, until: Time },
    StallEnd { agent: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Queued {
    time: Time,
    seq: u64,
    event: Event,
}

impl Queued {
    /// Timers run after everything else due at the same instant, so a reply
    /// arriving exactly at a deadline still counts as on time.
    fn key(&self) -> (Time, bool, u64) {
        (self.time, matches!(self.event, Event::Timer { .. }), self.seq)
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Creates the generator for one purpose from the scenario seed.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs a scenario to completion. The result is a pure function of the
/// scenario, seed included.
pub fn run(scenario: &ScenarioConfig) -> Result<Trace, SimError> {
    scenario.validate()?;
    let mut sim = Simulator::new(scenario);
    match &scenario.faults.script {
        Some(script) => sim.run_script(script)?,
        None => sim.run_random(),
    }
    Ok(sim.trace)
}

struct Simulator<'a> {
    cfg: &'a ScenarioConfig,
    quorum: QuorumConfig,
    agents: Vec<AgentId>,
    acceptors: Vec<AgentId>,
    learners: Vec<AgentId>,
    electors: Vec<AgentId>,
    nodes: Vec<Node>,
    crashed: Vec<bool>,
    stalled_until: Vec<Option<Time>>,
    buffered: Vec<Vec<Envelope>>,
    timer_generation: Vec<u64>,
    timer_at: Vec<Option<Time>>,
    queue: BinaryHeap<Reverse<Queued>>,
    queue_seq: u64,
    msg_seq: u64,
    drops: ChaCha8Rng,
    delays: ChaCha8Rng,
    backoff: ChaCha8Rng,
    in_flight: BTreeMap<u64, Envelope>,
    decided: bool,
    now: Time,
    trace: Trace,
}

impl<'a> Simulator<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Self {
        let quorum = cfg.quorum();
        let agents = cfg.agent_ids();
        let acceptors: Vec<AgentId> = agents.iter().copied().filter(AgentId::is_acceptor).collect();
        let learners: Vec<AgentId> = agents.iter().copied().filter(|a| a.kind == crate::types::AgentKind::Learner).collect();
        let electors = if cfg.protocol == Protocol::LeaderElection { acceptors.clone() } else { Vec::new() };
        let mut skew = substream(cfg.seed, STREAM_SKEW);
        let nodes = agents.iter().map(|&id| Self::make_node(cfg, quorum, id, &mut skew)).collect();
        let n = agents.len();
        Self {
            cfg,
            quorum,
            agents,
            acceptors,
            learners,
            electors,
            nodes,
            crashed: vec![false; n],
            stalled_until: vec![None; n],
            buffered: vec![Vec::new(); n],
            timer_generation: vec![0; n],
            timer_at: vec![None; n],
            queue: BinaryHeap::new(),
            queue_seq: 0,
            msg_seq: 0,
            drops: substream(cfg.seed, STREAM_DROPS),
            delays: substream(cfg.seed, STREAM_DELAYS),
            backoff: substream(cfg.seed, STREAM_BACKOFF),
            in_flight: BTreeMap::new(),
            decided: false,
            now: 0,
            trace: Trace::new(cfg.clone()),
        }
    }

    fn make_node(cfg: &ScenarioConfig, quorum: QuorumConfig, id: AgentId, skew: &mut ChaCha8Rng) -> Node {
        use crate::types::AgentKind::*;
        match (cfg.protocol, id.kind) {
            (_, Learner) => Node::Learner,
            (Protocol::Naive, Proposer) => {
                let n = cfg.naive.as_ref().expect("validated naive section");
                Node::NaiveProposer(NaiveDriver::new(NaiveProposerState::new(id, n.resend_interval), n.values.clone()))
            }
            (Protocol::Naive, Acceptor) => Node::NaiveAcceptor(NaiveAcceptorState::new(id)),
            (Protocol::LeaderElection, _) => {
                let settings = cfg.leader.as_ref().expect("validated leader section");
                let max = settings.max_skew;
                let offset = if max == 0 { 0 } else { skew.random_range(0..=2 * max) };
                let mut state = LeaderState::new(id, settings.timing(), quorum);
                state.last_heartbeat_seen = offset;
                Node::Elector(LeaderDriver { state, offset })
            }
            (_, Proposer) => {
                let spec = &cfg.proposers[id.index as usize];
                let mut state = ProposerState::new(id, spec.value.clone(), spec.restart).with_mutation(cfg.mutation);
                if cfg.protocol == Protocol::PaxosDistinguished {
                    state = state.distinguished_mode();
                }
                Node::Proposer(ProposerDriver::new(state, spec.start_at, cfg.paxos.stall_timeout, cfg.paxos.resend_interval))
            }
            (_, Acceptor) => Node::Acceptor(AcceptorState::with_mutation(id, cfg.mutation)),
        }
    }

    fn index_of(&self, id: AgentId) -> usize {
        self.agents.iter().position(|a| *a == id).expect("agent exists in scenario")
    }

    fn push(&mut self, time: Time, event: Event) {
        let seq = self.queue_seq;
        self.queue_seq += 1;
        self.queue.push(Reverse(Queued { time, seq, event }));
    }

    fn reschedule(&mut self, agent: usize) {
        if self.crashed[agent] {
            return;
        }
        let wake = self.nodes[agent].next_wakeup(self.now).map(|t| t.max(self.now));
        if wake == self.timer_at[agent] {
            return;
        }
        self.timer_generation[agent] += 1;
        self.timer_at[agent] = wake;
        if let Some(t) = wake {
            let generation = self.timer_generation[agent];
            self.push(t, Event::Timer { agent, generation });
        }
    }

    fn sample_delay(&mut self) -> Time {
        match self.cfg.faults.delay {
            Delay::Fixed(d) => d,
            Delay::Uniform { lo, hi } => self.delays.random_range(lo..=hi),
        }
    }

    fn apply(&mut self, agent: usize, effects: Vec<Effect>, scripted: bool) {
        let id = self.agents[agent];
        for effect in effects {
            match effect {
                Effect::Send(dst, msg) => self.transmit(id, dst, msg, scripted),
                Effect::Note(note) => self.trace.push(self.now, EventBody::StateChange { agent: id, note }),
                Effect::Decision(notice) => {
                    self.decided = true;
                    self.trace.push(self.now, EventBody::Decision { agent: id, notice });
                }
            }
        }
    }

    fn transmit(&mut self, src: AgentId, dst: AgentId, msg: Message, scripted: bool) {
        let seq = self.msg_seq;
        self.msg_seq += 1;
        let (delay, dropped) = if scripted {
            (0, false)
        } else {
            let delay = self.sample_delay();
            let roll: f64 = self.drops.random();
            (delay, roll < self.cfg.faults.drop_probability)
        };
        let deliver_at = self.now + delay;
        self.trace.push(self.now, EventBody::Send { seq, src, dst, deliver_at, msg: msg.clone() });
        if dropped {
            self.trace.push(self.now, EventBody::Drop { seq, src, dst, reason: DropReason::Random, msg });
            return;
        }
        let env = Envelope { seq, src, dst, send_time: self.now, deliver_at, payload: msg };
        if scripted {
            self.in_flight.insert(seq, env);
        } else {
            self.push(deliver_at, Event::Deliver(env));
        }
    }

    fn peers(&self) -> Peers<'_> {
        Peers { acceptors: &self.acceptors, learners: &self.learners, electors: &self.electors, quorum: self.quorum }
    }

    fn deliver(&mut self, agent: usize, env: Envelope, scripted: bool) {
        self.trace.push(
            self.now,
            EventBody::Deliver { seq: env.seq, src: env.src, dst: env.dst, msg: env.payload.clone() },
        );
        let mut effects = Vec::new();
        let mut node = std::mem::replace(&mut self.nodes[agent], Node::Learner);
        node.on_message(env.src, &env.payload, self.now, &self.peers(), &mut effects);
        self.nodes[agent] = node;
        self.apply(agent, effects, scripted);
    }

    fn fire_timer(&mut self, agent: usize) {
        let mut effects = Vec::new();
        let mut node = std::mem::replace(&mut self.nodes[agent], Node::Learner);
        let mut rng = std::mem::replace(&mut self.backoff, ChaCha8Rng::seed_from_u64(0));
        node.on_timer(self.now, &mut rng, &self.peers(), &mut effects);
        self.backoff = rng;
        self.nodes[agent] = node;
        self.apply(agent, effects, false);
    }

    fn is_stalled(&self, agent: usize) -> bool {
        self.stalled_until[agent].is_some_and(|until| self.now < until)
    }

    fn current_leader(&self) -> Option<usize> {
        (0..self.nodes.len())
            .find(|&i| !self.crashed[i] && matches!(&self.nodes[i], Node::Elector(l) if l.is_leader()))
    }

    fn crash(&mut self, target: CrashTarget) {
        let agent = match target {
            CrashTarget::Agent(id) => Some(self.index_of(id)),
            CrashTarget::Leader => self.current_leader(),
        };
        let Some(agent) = agent.filter(|&a| !self.crashed[a]) else { return };
        self.crashed[agent] = true;
        self.timer_generation[agent] += 1;
        self.timer_at[agent] = None;
        self.trace.push(self.now, EventBody::Crash { agent: self.agents[agent] });
        for env in std::mem::take(&mut self.buffered[agent]) {
            self.drop_crashed(env);
        }
    }

    fn drop_crashed(&mut self, env: Envelope) {
        self.trace.push(
            self.now,
            EventBody::Drop { seq: env.seq, src: env.src, dst: env.dst, reason: DropReason::Crashed, msg: env.payload },
        );
    }

    fn should_stop(&self) -> bool {
        self.trace.events.len() as u64 >= self.cfg.stop.max_events || (self.cfg.stop.first_decision && self.decided)
    }

    fn run_random(&mut self) {
        for c in &self.cfg.faults.crashes {
            self.push(c.at, Event::Crash(c.agent));
        }
        for s in &self.cfg.faults.stalls {
            let agent = self.index_of(s.agent);
            self.push(s.from, Event::StallStart { agent, until: s.until });
        }
        for agent in 0..self.nodes.len() {
            self.reschedule(agent);
        }
        while let Some(Reverse(item)) = self.queue.pop() {
            if item.time > self.cfg.stop.max_virtual_time || self.should_stop() {
                break;
            }
            self.now = item.time;
            match item.event {
                Event::Deliver(env) => {
                    let agent = self.index_of(env.dst);
                    if self.crashed[agent] {
                        self.drop_crashed(env);
                    } else if self.is_stalled(agent) {
                        self.buffered[agent].push(env);
                    } else {
                        self.deliver(agent, env, false);
                        self.reschedule(agent);
                    }
                }
                Event::Timer { agent, generation } => {
                    if generation != self.timer_generation[agent] || self.crashed[agent] {
                        continue;
                    }
                    self.timer_at[agent] = None;
                    if self.is_stalled(agent) {
                        continue;
                    }
                    self.fire_timer(agent);
                    self.reschedule(agent);
                }
                Event::Crash(target) => self.crash(target),
                Event::StallStart { agent, until } => {
                    if self.crashed[agent] {
                        continue;
                    }
                    let until = self.stalled_until[agent].map_or(until, |u| u.max(until));
                    self.stalled_until[agent] = Some(until);
                    self.trace.push(self.now, EventBody::Stall { agent: self.agents[agent], until });
                    self.push(until, Event::StallEnd { agent });
                }
                Event::StallEnd { agent } => {
                    if self.crashed[agent] || self.is_stalled(agent) {
                        continue;
                    }
                    self.stalled_until[agent] = None;
                    for env in std::mem::take(&mut self.buffered[agent]) {
                        self.deliver(agent, env, false);
                    }
                    self.timer_at[agent] = None;
                    self.timer_generation[agent] += 1;
                    if self.nodes[agent].next_wakeup(self.now).is_some_and(|t| t <= self.now) {
                        self.fire_timer(agent);
                    }
                    self.reschedule(agent);
                }
            }
        }
    }

    fn take_in_flight(&mut self, step: usize, src: AgentId, dst: AgentId, msg: &Message) -> Result<Envelope, SimError> {
        let seq = self
            .in_flight
            .values()
            .find(|e| e.src == src && e.dst == dst && &e.payload == msg)
            .map(|e| e.seq)
            .ok_or_else(|| SimError::Script { step, message: format!("no {} from {src} to {dst} in flight", msg.kind()) })?;
        Ok(self.in_flight.remove(&seq).expect("found above"))
    }

    /// Every proposer starts round 1 at time 0; step `i` then happens at
    /// time `i + 1`.
    fn run_script(&mut self, script: &[ScriptStep]) -> Result<(), SimError> {
        for agent in 0..self.nodes.len() {
            if let Node::Proposer(p) = &mut self.nodes[agent] {
                let mut effects = Vec::new();
                let peers = Peers {
                    acceptors: &self.acceptors,
                    learners: &self.learners,
                    electors: &self.electors,
                    quorum: self.quorum,
                };
                p.start(0, &peers, &mut effects);
                self.apply(agent, effects, true);
            }
        }
        for (step, directive) in script.iter().enumerate() {
            if self.should_stop() {
                break;
            }
            self.now = step as Time + 1;
            match directive {
                ScriptStep::Deliver { src, dst, msg } => {
                    let env = self.take_in_flight(step, *src, *dst, msg)?;
                    let agent = self.index_of(*dst);
                    self.deliver(agent, env, true);
                }
                ScriptStep::Drop { src, dst, msg } => {
                    let env = self.take_in_flight(step, *src, *dst, msg)?;
                    self.trace.push(
                        self.now,
                        EventBody::Drop { seq: env.seq, src: env.src, dst: env.dst, reason: DropReason::Script, msg: env.payload },
                    );
                }
                ScriptStep::Restart { proposer } => {
                    let agent = self.index_of(*proposer);
                    let mut effects = Vec::new();
                    let peers = Peers {
                        acceptors: &self.acceptors,
                        learners: &self.learners,
                        electors: &self.electors,
                        quorum: self.quorum,
                    };
                    let Node::Proposer(p) = &mut self.nodes[agent] else {
                        return Err(SimError::Script { step, message: format!("{proposer} is not a proposer") });
                    };
                    p.restart(self.now, &peers, &mut effects);
                    self.apply(agent, effects, true);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
