//! Ready-made scenarios, one per protocol behavior worth reproducing. The
//! same scenarios ship as TOML files under `scenarios/`.

use crate::proposer::RestartPolicy;
use crate::scenario::{
    Crash, CrashTarget, Delay, LeaderSettings, NaiveSettings, Protocol, ScenarioConfig, ScriptStep, StopCondition,
};
use crate::types::{AgentId, Message, Proposal, ProposalNumber, Value};

pub const NAMES: [&str; 5] = ["duel", "timeout-recovery", "distinguished", "naive-lossy", "leader-failover"];

/// Rounds of alternation in the scripted duel, each about 20 events.
const DUEL_CYCLES: u64 = 30;

/// Two eager proposers locked in the alternation that never decides: p0
/// completes phase 1, p1 completes phase 1 with a higher number, p0's full
/// proposal arrives after that and is ignored, p0 restarts and completes
/// phase 1 before p1's full proposal arrives, and so on.
///
/// Fixed delays and stall timeouts cannot sustain this pattern (some full
/// proposal always gets through first), so the schedule is scripted.
/// Without the script it is [`race`].
pub fn duel() -> ScenarioConfig {
    let mut c = race();
    c.name = "duel".to_string();
    c.faults.script = Some(duel_script(&c));
    c
}

fn duel_script(c: &ScenarioConfig) -> Vec<ScriptStep> {
    let acceptors: Vec<AgentId> = c.quorum().acceptors().collect();
    let mut steps = Vec::new();
    let phase1 = |steps: &mut Vec<ScriptStep>, p: AgentId, number: ProposalNumber| {
        for &a in &acceptors {
            steps.push(ScriptStep::Deliver { src: p, dst: a, msg: Message::PreProposal { number } });
        }
        for &a in &acceptors {
            steps.push(ScriptStep::Deliver { src: a, dst: p, msg: Message::PreAck { number, attached: None } });
        }
    };
    let proposers = [AgentId::proposer(0), AgentId::proposer(1)];
    let mut rounds = [1, 1];
    for p in proposers {
        phase1(&mut steps, p, ProposalNumber::owned_by(1, p).expect("proposer id"));
    }
    for _ in 0..DUEL_CYCLES {
        for (i, p) in proposers.into_iter().enumerate() {
            let number = ProposalNumber::owned_by(rounds[i], p).expect("proposer id");
            let proposal = Proposal::new(number, c.proposers[i].value.clone());
            for &a in &acceptors {
                steps.push(ScriptStep::Deliver { src: p, dst: a, msg: Message::FullProposal { proposal: proposal.clone() } });
            }
            steps.push(ScriptStep::Restart { proposer: p });
            // Each proposer only ever hears its own round numbers.
            rounds[i] += 1;
            phase1(&mut steps, p, ProposalNumber::owned_by(rounds[i], p).expect("proposer id"));
        }
    }
    steps
}

/// The same two proposers free-running over fixed delays of 10 with eager
/// restarts after 10 quiet ticks: each restarts before any reply arrives.
pub fn race() -> ScenarioConfig {
    let mut c = ScenarioConfig::paxos("race", 1, &["vA", "vB"], 3);
    c.faults.delay = Delay::Fixed(10);
    c.paxos.stall_timeout = 10;
    c.proposers[1].start_at = 15;
    c.stop = StopCondition { max_events: 1000, ..StopCondition::default() };
    c
}

/// The race, but both proposers wait before restarting and the network
/// jitters, so one of them gets a full two-phase exchange through.
pub fn timeout_recovery() -> ScenarioConfig {
    let mut c = race();
    c.name = "timeout-recovery".to_string();
    c.faults.delay = Delay::Uniform { lo: 9, hi: 11 };
    for p in &mut c.proposers {
        p.restart = RestartPolicy::Timed { wait: 50 };
    }
    c.stop = StopCondition { max_events: 5000, max_virtual_time: 500, first_decision: false };
    c
}

/// A single proposer without faults: two round trips to a decision.
pub fn distinguished() -> ScenarioConfig {
    let mut c = ScenarioConfig::paxos("distinguished", 1, &["vA"], 3);
    c.protocol = Protocol::PaxosDistinguished;
    c.faults.delay = Delay::Fixed(5);
    c
}

/// One slot over a lossy network, resent until a quorum acknowledges.
pub fn naive_lossy() -> ScenarioConfig {
    let mut c = ScenarioConfig::paxos("naive-lossy", 1, &["vA"], 3);
    c.protocol = Protocol::Naive;
    c.proposers.clear();
    c.naive = Some(NaiveSettings { values: vec![Value::new("vA").expect("non-empty")], resend_interval: 5 });
    c.faults.drop_probability = 0.3;
    c.faults.delay = Delay::Fixed(1);
    c.stop.first_decision = true;
    c
}

/// Five agents elect a leader, which crashes at t = 200; the others must
/// take over.
pub fn leader_failover() -> ScenarioConfig {
    let mut c = ScenarioConfig::paxos("leader-failover", 1, &[], 5);
    c.protocol = Protocol::LeaderElection;
    c.agents.learners = 0;
    c.leader = Some(LeaderSettings::new(10, 40, (5, 25)));
    c.faults.delay = Delay::Uniform { lo: 1, hi: 3 };
    c.faults.drop_probability = 0.1;
    c.faults.crashes.push(Crash { agent: CrashTarget::Leader, at: 200 });
    c.stop = StopCondition { max_events: 100_000, max_virtual_time: 600, first_decision: false };
    c
}

/// The scripted duel used to reproduce non-termination.
pub fn script_duel() -> ScenarioConfig {
    duel()
}

/// The race where neither proposer restarts and p1 crashes right after its
/// phase 1: p1's value is accepted but nobody learns it, and p0 can never
/// collect acknowledgments again.
pub fn blocked_duel() -> ScenarioConfig {
    let mut c = race();
    c.name = "blocked-duel".to_string();
    for p in &mut c.proposers {
        p.restart = RestartPolicy::Never;
    }
    c.crash_agent(36, AgentId::proposer(1))
}

pub fn by_name(name: &str) -> Option<ScenarioConfig> {
    match name {
        "duel" => Some(duel()),
        "timeout-recovery" => Some(timeout_recovery()),
        "distinguished" => Some(distinguished()),
        "naive-lossy" => Some(naive_lossy()),
        "leader-failover" => Some(leader_failover()),
        _ => None,
    }
}

pub fn all() -> Vec<ScenarioConfig> {
    NAMES.iter().map(|n| by_name(n).expect("listed")).collect()
}
