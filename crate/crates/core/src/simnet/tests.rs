use super::*;
use crate::bundled;
use crate::proposer::RestartPolicy;
use crate::scenario::Stall;
use crate::trace::Note;

fn sends(trace: &Trace) -> usize {
    trace.count(|b| matches!(b, EventBody::Send { .. }))
}

fn delivered(trace: &Trace) -> usize {
    trace.count(|b| matches!(b, EventBody::Deliver { .. }))
}

fn dropped(trace: &Trace) -> usize {
    trace.count(|b| matches!(b, EventBody::Drop { .. }))
}

#[test]
fn failure_free_single_proposer_decides_after_two_round_trips() {
    let mut c = bundled::distinguished();
    c.faults.delay = Delay::Fixed(7);
    c.paxos.stall_timeout = 100;
    let trace = run(&c).unwrap();
    let (event, notice) = trace.decisions().next().expect("decides");
    assert_eq!(event.time, 28);
    assert_eq!(notice.value.to_string(), "vA");
    assert_eq!(trace.decisions().count(), 1);
}

#[test]
fn total_loss_never_decides_and_stops_at_max_events() {
    let mut c = bundled::distinguished();
    c.faults.drop_probability = 1.0;
    c.stop.max_events = 300;
    let trace = run(&c).unwrap();
    assert_eq!(trace.decisions().count(), 0);
    assert!(trace.events.len() >= 300 && trace.events.len() < 320);
    assert_eq!(delivered(&trace), 0);
}

#[test]
fn duel_never_decides() {
    let trace = run(&bundled::duel()).unwrap();
    assert_eq!(trace.decisions().count(), 0);
    assert!(trace.restarts() >= 10);
    assert_eq!(trace.events.len(), 1000);
}

#[test]
fn eager_race_restarts_before_any_reply() {
    let trace = run(&bundled::race()).unwrap();
    assert_eq!(trace.decisions().count(), 0);
    assert_eq!(trace.count(|b| matches!(b, EventBody::StateChange { note: Note::Phase { phase: crate::proposer::Phase::Proposing, .. }, .. })), 0);
}

#[test]
fn race_with_long_enough_wait_decides() {
    let mut c = bundled::race();
    for p in &mut c.proposers {
        p.restart = RestartPolicy::Timed { wait: 40 };
    }
    let trace = run(&c).unwrap();
    assert!(trace.first_decision_time().is_some());
}

#[test]
fn never_restarting_duel_with_crashed_rival_is_blocked() {
    let trace = run(&bundled::blocked_duel()).unwrap();
    assert_eq!(trace.decisions().count(), 0);
    assert_eq!(trace.restarts(), 0);
    // p1 finished phase 1 before crashing and its value was accepted by
    // everyone, but nobody hears about it; p0 got no full ack at all.
    assert!(trace.events.iter().any(|e| matches!(
        &e.body,
        EventBody::StateChange { agent, note: Note::Phase { phase: crate::proposer::Phase::Proposing, .. } }
            if *agent == AgentId::proposer(1)
    )));
    assert_eq!(
        trace.count(|b| matches!(b, EventBody::Send { dst, msg: Message::FullAck { .. }, .. } if *dst == AgentId::proposer(0))),
        0
    );
}

#[test]
fn crashing_a_quorum_prevents_decisions() {
    let c = bundled::distinguished().crash_agent(0, AgentId::acceptor(0)).crash_agent(0, AgentId::acceptor(2));
    let mut c = c;
    c.stop.max_events = 500;
    let trace = run(&c).unwrap();
    assert_eq!(trace.decisions().count(), 0);
    // No delivery ever reaches a crashed agent.
    let crashed = [AgentId::acceptor(0), AgentId::acceptor(2)];
    assert!(!trace.events.iter().any(|e| matches!(&e.body, EventBody::Deliver { dst, .. } if crashed.contains(dst))));
    assert!(!trace.events.iter().any(|e| matches!(&e.body, EventBody::Send { src, .. } if crashed.contains(src))));
}

#[test]
fn crashed_leader_sends_no_more_heartbeats() {
    let mut c = bundled::leader_failover();
    c.faults.drop_probability = 0.0;
    c.faults.crashes[0].at = 100;
    let trace = run(&c).unwrap();
    let crashed = trace
        .events
        .iter()
        .find_map(|e| match e.body {
            EventBody::Crash { agent } => Some((e.time, agent)),
            _ => None,
        })
        .expect("a leader existed at t=100");
    assert_eq!(crashed.0, 100);
    assert!(!trace.events.iter().any(|e| e.time >= 100
        && matches!(&e.body, EventBody::Send { src, msg: Message::Heartbeat { .. }, .. } if *src == crashed.1)));
    // Someone else takes over.
    assert!(trace.events.iter().any(|e| e.time > 100
        && matches!(&e.body, EventBody::StateChange { agent, note: Note::Role { role: crate::leader::Role::Leader, .. } } if *agent != crashed.1)));
}

#[test]
fn stalled_acceptor_buffers_and_resumes() {
    let mut c = bundled::distinguished();
    c.faults.stalls.push(Stall { agent: AgentId::acceptor(0), from: 0, until: 100 });
    c.faults.stalls.push(Stall { agent: AgentId::acceptor(1), from: 0, until: 100 });
    let trace = run(&c).unwrap();
    // Nothing reaches a0 or a1 before 100, and they send nothing meanwhile.
    let stalled = [AgentId::acceptor(0), AgentId::acceptor(1)];
    for e in &trace.events {
        match &e.body {
            EventBody::Deliver { dst, .. } | EventBody::Send { src: dst, .. } if stalled.contains(dst) => {
                assert!(e.time >= 100, "{e:?}");
            }
            _ => {}
        }
    }
    // Their buffered pre-proposals are answered at 100: a slow link, not a loss.
    assert!(trace.first_decision_time().unwrap() > 100);
    assert_eq!(trace.count(|b| matches!(b, EventBody::Stall { .. })), 2);
}

#[test]
fn identical_seeds_give_identical_traces() {
    for c in bundled::all() {
        assert_eq!(run(&c).unwrap().to_jsonl(), run(&c).unwrap().to_jsonl(), "{}", c.name);
    }
    let mut a = bundled::naive_lossy();
    a.stop.first_decision = false;
    let mut b = a.clone();
    b.seed += 1;
    assert_ne!(run(&a).unwrap().to_jsonl(), run(&b).unwrap().to_jsonl());
}

#[test]
fn every_send_is_delivered_dropped_or_in_flight() {
    for seed in 0..20 {
        let mut c = bundled::timeout_recovery();
        c.seed = seed;
        c.faults.drop_probability = 0.2;
        c.stop.max_events = 400;
        let trace = run(&c).unwrap();
        let s = sends(&trace);
        assert!(delivered(&trace) + dropped(&trace) <= s);
        // Each seq is delivered or dropped at most once, and only after being sent.
        let mut seen = std::collections::BTreeMap::new();
        for e in &trace.events {
            match &e.body {
                EventBody::Send { seq, msg, .. } => {
                    seen.insert(*seq, (msg.clone(), 0));
                }
                EventBody::Deliver { seq, msg, .. } | EventBody::Drop { seq, msg, .. } => {
                    let entry = seen.get_mut(seq).expect("sent before");
                    assert_eq!(&entry.0, msg);
                    entry.1 += 1;
                    assert_eq!(entry.1, 1);
                }
                _ => {}
            }
        }
    }
}

#[test]
fn time_never_goes_backwards() {
    let trace = run(&bundled::leader_failover()).unwrap();
    assert!(trace.events.windows(2).all(|w| w[0].time <= w[1].time && w[0].index + 1 == w[1].index));
    assert!(trace.end_time() <= 600);
}

#[test]
fn script_mismatch_is_an_error() {
    let mut c = bundled::distinguished();
    c.faults.script = Some(vec![ScriptStep::Deliver {
        src: AgentId::acceptor(0),
        dst: AgentId::proposer(0),
        msg: Message::FullAck { number: crate::types::ProposalNumber::new(1, 0) },
    }]);
    assert!(matches!(run(&c), Err(SimError::Script { step: 0, .. })));
}

#[test]
fn script_drives_a_decision() {
    let mut c = bundled::distinguished();
    let n = crate::types::ProposalNumber::new(1, 0);
    let (p, a0, a1) = (AgentId::proposer(0), AgentId::acceptor(0), AgentId::acceptor(1));
    let full = Message::FullProposal { proposal: crate::types::Proposal::new(n, crate::types::Value::new("vA").unwrap()) };
    let mut steps = Vec::new();
    for a in [a0, a1] {
        steps.push(ScriptStep::Deliver { src: p, dst: a, msg: Message::PreProposal { number: n } });
        steps.push(ScriptStep::Deliver { src: a, dst: p, msg: Message::PreAck { number: n, attached: None } });
    }
    for a in [a0, a1] {
        steps.push(ScriptStep::Deliver { src: p, dst: a, msg: full.clone() });
        steps.push(ScriptStep::Deliver { src: a, dst: p, msg: Message::FullAck { number: n } });
    }
    steps.push(ScriptStep::Drop { src: p, dst: AgentId::acceptor(2), msg: Message::PreProposal { number: n } });
    c.faults.script = Some(steps);
    let trace = run(&c).unwrap();
    assert_eq!(trace.first_decision_time(), Some(8));
    assert_eq!(trace.count(|b| matches!(b, EventBody::Drop { reason: DropReason::Script, .. })), 1);
}

#[test]
fn invalid_scenarios_are_rejected() {
    let mut c = bundled::duel();
    c.agents.acceptors = 0;
    assert!(matches!(run(&c), Err(SimError::Config(_))));
}
