//! Per-agent drivers: wrap the pure state machines with the bookkeeping the
//! simulator needs (start times, stall detection, resend timers).

use rand_chacha::ChaCha8Rng;

use crate::acceptor::AcceptorState;
use crate::leader::{LeaderState, Outgoing, Role};
use crate::naive::{NaiveAcceptorState, NaiveProposerState};
use crate::proposer::{Phase, ProposerState, RestartPolicy, StallAction};
use crate::trace::Note;
use crate::types::{AgentId, DecisionNotice, Message, QuorumConfig, Time, Value};

/// Something a node asks the simulator to do or record.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Send(AgentId, Message),
    Note(Note),
    Decision(DecisionNotice),
}

/// Where messages go: the fixed agent population of a run.
pub struct Peers<'a> {
    pub acceptors: &'a [AgentId],
    pub learners: &'a [AgentId],
    /// Everyone taking part in leader election.
    pub electors: &'a [AgentId],
    pub quorum: QuorumConfig,
}

impl Peers<'_> {
    fn to_acceptors(&self, out: &mut Vec<Effect>, msg: &Message) {
        out.extend(self.acceptors.iter().map(|a| Effect::Send(*a, msg.clone())));
    }

    fn decide(&self, out: &mut Vec<Effect>, notice: DecisionNotice) {
        out.push(Effect::Decision(notice.clone()));
        out.extend(self.learners.iter().map(|l| Effect::Send(*l, Message::Decided(notice.clone()))));
    }
}

#[derive(Debug, Clone)]
pub struct ProposerDriver {
    pub state: ProposerState,
    pub start_at: Time,
    pub started: bool,
    pub stall_timeout: Time,
    pub resend_interval: Option<Time>,
    last_progress: Time,
    last_send: Time,
}

impl ProposerDriver {
    pub fn new(state: ProposerState, start_at: Time, stall_timeout: Time, resend_interval: Option<Time>) -> Self {
        Self { state, start_at, started: false, stall_timeout, resend_interval, last_progress: 0, last_send: 0 }
    }

    fn phase_note(&self) -> Effect {
        Effect::Note(Note::Phase { phase: self.state.phase, number: self.state.current_number })
    }

    fn begin(&mut self, round: u64, now: Time, peers: &Peers, out: &mut Vec<Effect>) {
        let msg = self.state.start_round(round).expect("driver only starts rounds while idle with a fresh round");
        self.last_progress = now;
        self.last_send = now;
        out.push(self.phase_note());
        peers.to_acceptors(out, &msg);
    }

    pub fn start(&mut self, now: Time, peers: &Peers, out: &mut Vec<Effect>) {
        self.started = true;
        let round = self.state.next_round();
        self.begin(round, now, peers, out);
    }

    /// Abandons the current attempt and starts a higher round.
    pub fn restart(&mut self, now: Time, peers: &Peers, out: &mut Vec<Effect>) {
        let abandoned = self.state.current_number;
        let round = self.state.abandon();
        out.push(Effect::Note(Note::Restart { abandoned, next_round: round }));
        self.begin(round, now, peers, out);
    }

    fn stall_check_at(&self) -> Option<Time> {
        if self.state.restart_policy == RestartPolicy::Never {
            return None;
        }
        Some(self.state.stall_deadline.unwrap_or(self.last_progress + self.stall_timeout))
    }

    pub fn on_timer(&mut self, now: Time, peers: &Peers, out: &mut Vec<Effect>) {
        if !self.started {
            if now >= self.start_at {
                self.start(now, peers, out);
            }
            return;
        }
        if !self.state.phase.is_active() {
            return;
        }
        if let Some(interval) = self.resend_interval {
            if now >= self.last_send + interval {
                if let Some(msg) = self.state.current_request() {
                    self.last_send = now;
                    for a in self.state.missing_acks(&peers.quorum) {
                        out.push(Effect::Send(a, msg.clone()));
                    }
                }
            }
        }
        if self.stall_check_at().is_some_and(|t| now >= t) {
            let waiting = self.state.stall_deadline.is_some();
            match self.state.on_stall(now) {
                StallAction::Restart { round } => {
                    // on_stall already abandoned the attempt.
                    out.push(Effect::Note(Note::Restart { abandoned: self.state.current_number, next_round: round }));
                    self.begin(round, now, peers, out);
                }
                StallAction::Wait { until } if !waiting => out.push(Effect::Note(Note::Waiting { until })),
                _ => {}
            }
        }
    }

    pub fn next_wakeup(&self) -> Option<Time> {
        if !self.started {
            return Some(self.start_at);
        }
        if !self.state.phase.is_active() {
            return None;
        }
        let resend = self.resend_interval.map(|i| self.last_send + i);
        match (resend, self.stall_check_at()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn on_message(&mut self, from: AgentId, msg: &Message, now: Time, peers: &Peers, out: &mut Vec<Effect>) {
        let before = (self.state.phase, self.state.ack_count());
        match msg {
            Message::PreAck { number, attached } => {
                if let Some(full) = self.state.on_pre_ack(from, *number, attached.clone(), &peers.quorum) {
                    self.last_send = now;
                    out.push(self.phase_note());
                    peers.to_acceptors(out, &full);
                }
            }
            Message::FullAck { number } => {
                if let Some(won) = self.state.on_full_ack(from, *number, &peers.quorum) {
                    out.push(self.phase_note());
                    peers.decide(out, DecisionNotice::paxos(won));
                }
            }
            _ => {}
        }
        if (self.state.phase, self.state.ack_count()) != before {
            self.last_progress = now;
        }
    }
}

#[derive(Debug, Clone)]
pub struct NaiveDriver {
    pub state: NaiveProposerState,
    pub values: Vec<Value>,
    started: bool,
}

impl NaiveDriver {
    pub fn new(state: NaiveProposerState, values: Vec<Value>) -> Self {
        Self { state, values, started: false }
    }

    pub fn on_timer(&mut self, now: Time, peers: &Peers, out: &mut Vec<Effect>) {
        let msgs = if self.started {
            self.state.naive_tick(now)
        } else {
            self.started = true;
            let values = std::mem::take(&mut self.values);
            let msgs = values
                .iter()
                .enumerate()
                .map(|(slot, v)| self.state.naive_propose(slot as u64, v.clone(), now).expect("fresh slots"))
                .collect();
            self.values = values;
            msgs
        };
        for msg in msgs {
            peers.to_acceptors(out, &msg);
        }
    }

    pub fn next_wakeup(&self) -> Option<Time> {
        if self.started {
            self.state.next_resend()
        } else {
            Some(0)
        }
    }

    pub fn on_message(&mut self, from: AgentId, msg: &Message, peers: &Peers, out: &mut Vec<Effect>) {
        if let Message::NaiveAck { slot } = msg {
            if let Some(notice) = self.state.naive_on_ack(from, *slot, &peers.quorum) {
                peers.decide(out, notice);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LeaderDriver {
    pub state: LeaderState,
    /// Added to global time to get this agent's clock.
    pub offset: Time,
}

impl LeaderDriver {
    fn run(
        &mut self,
        now: Time,
        peers: &Peers,
        out: &mut Vec<Effect>,
        step: impl FnOnce(&mut LeaderState, Time) -> Vec<Outgoing>,
    ) {
        let local = now + self.offset;
        let (role, granted) = (self.state.role, self.state.granted);
        let outgoing = step(&mut self.state, local);
        if self.state.role != role {
            out.push(Effect::Note(Note::Role { role: self.state.role, epoch: self.state.epoch }));
        }
        if let Some(g) = self.state.granted {
            if g.candidate == self.state.id && Some(g) != granted {
                out.push(Effect::Note(Note::SelfGrant { epoch: g.epoch, expires_at: g.expires_at - self.offset }));
            }
        }
        for o in outgoing {
            match o {
                Outgoing::Peers(msg) => out.extend(
                    peers.electors.iter().filter(|a| **a != self.state.id).map(|a| Effect::Send(*a, msg.clone())),
                ),
                Outgoing::To(dst, msg) => out.push(Effect::Send(dst, msg)),
            }
        }
    }

    pub fn on_timer(&mut self, now: Time, rng: &mut ChaCha8Rng, peers: &Peers, out: &mut Vec<Effect>) {
        self.run(now, peers, out, |s, local| s.leader_tick(local, rng));
    }

    pub fn on_message(&mut self, from: AgentId, msg: &Message, now: Time, peers: &Peers, out: &mut Vec<Effect>) {
        self.run(now, peers, out, |s, local| s.handle(from, msg, local));
    }

    pub fn next_wakeup(&self, now: Time) -> Time {
        self.state.next_wakeup().saturating_sub(self.offset).max(now + 1)
    }

    pub fn is_leader(&self) -> bool {
        self.state.role == Role::Leader
    }
}

#[derive(Debug, Clone)]
pub enum Node {
    Proposer(ProposerDriver),
    Acceptor(AcceptorState),
    NaiveProposer(NaiveDriver),
    NaiveAcceptor(NaiveAcceptorState),
    Elector(LeaderDriver),
    Learner,
}

impl Node {
    pub fn on_timer(&mut self, now: Time, rng: &mut ChaCha8Rng, peers: &Peers, out: &mut Vec<Effect>) {
        match self {
            Node::Proposer(p) => p.on_timer(now, peers, out),
            Node::NaiveProposer(p) => p.on_timer(now, peers, out),
            Node::Elector(l) => l.on_timer(now, rng, peers, out),
            Node::Acceptor(_) | Node::NaiveAcceptor(_) | Node::Learner => {}
        }
    }

    pub fn on_message(&mut self, from: AgentId, msg: &Message, now: Time, peers: &Peers, out: &mut Vec<Effect>) {
        match self {
            Node::Proposer(p) => p.on_message(from, msg, now, peers, out),
            Node::Acceptor(a) => {
                if let Some(reply) = a.handle(msg) {
                    out.push(Effect::Send(from, reply));
                }
            }
            Node::NaiveProposer(p) => p.on_message(from, msg, peers, out),
            Node::NaiveAcceptor(a) => {
                if let Message::NaivePropose { slot, .. } = msg {
                    out.push(Effect::Send(from, a.on_propose(*slot)));
                }
            }
            Node::Elector(l) => l.on_message(from, msg, now, peers, out),
            Node::Learner => {}
        }
    }

    pub fn next_wakeup(&self, now: Time) -> Option<Time> {
        match self {
            Node::Proposer(p) => p.next_wakeup(),
            Node::NaiveProposer(p) => p.next_wakeup(),
            Node::Elector(l) => Some(l.next_wakeup(now)),
            Node::Acceptor(_) | Node::NaiveAcceptor(_) | Node::Learner => None,
        }
    }

    pub fn phase(&self) -> Option<Phase> {
        match self {
            Node::Proposer(p) => Some(p.state.phase),
            _ => None,
        }
    }
}
