//! Acceptance run: one pass/fail line per criterion, exit status 1 if any
//! criterion fails. Runs in a few minutes with optimizations.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use paxlab::bundled;
use paxlab::checker::oracle::{oracle_explore, OracleOutcome};
use paxlab::checker::{check_agreement, check_induction_list, check_lease_uniqueness, detect_livelock};
use paxlab::leader::Role;
use paxlab::mutation::Mutation;
use paxlab::naive::expected_attempts;
use paxlab::proposer::RestartPolicy;
use paxlab::replay::{replay, ReplayOutcome};
use paxlab::scenario::{Crash, CrashTarget, Delay, Protocol, ScenarioConfig, StopCondition};
use paxlab::simnet;
use paxlab::sweep::{self, Axis};
use paxlab::trace::{EventBody, Note, Trace};
use paxlab::types::{AgentId, Message};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 safety at scale", safety_at_scale),
        ("2 exhaustive oracle", exhaustive_oracle),
        ("3 livelock reproduction", livelock_reproduction),
        ("4 timed-restart liveness", timed_restart_liveness),
        ("5 distinguished proposer", distinguished_proposer),
        ("6 naive liveness", naive_liveness),
        ("7 lease safety and failover", lease_safety),
        ("8 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let Outcome { passed, detail } = check();
        failed += usize::from(!passed);
        let status = if passed { "PASS" } else { "FAIL" };
        println!("{status} criterion {name}: {detail} [{:.1}s]", start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

/// A random Paxos scenario drawn from the criterion's ranges.
fn random_scenario(index: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5afe_0000 + index);
    let proposers = rng.random_range(2..=5usize);
    let acceptors = rng.random_range(3..=7u32);
    let values: Vec<String> = (0..proposers).map(|i| format!("v{i}")).collect();
    let refs: Vec<&str> = values.iter().map(String::as_str).collect();
    let mut c = ScenarioConfig::paxos(&format!("random-{index}"), index, &refs, acceptors);
    c.faults.drop_probability = rng.random_range(0.0..=0.5);
    let lo = rng.random_range(1..=5);
    c.faults.delay = Delay::Uniform { lo, hi: lo + rng.random_range(0..=10) };
    let spare = acceptors - c.quorum().quorum_size();
    for _ in 0..rng.random_range(0..=spare.min(2)) {
        let victim = AgentId::acceptor(rng.random_range(0..acceptors));
        if !c.faults.crashes.iter().any(|k| k.agent == CrashTarget::Agent(victim)) {
            c.faults.crashes.push(Crash { agent: CrashTarget::Agent(victim), at: rng.random_range(0..300) });
        }
    }
    c.paxos.stall_timeout = rng.random_range(5..=40);
    if rng.random_bool(0.5) {
        c.paxos.resend_interval = Some(rng.random_range(5..=30));
    }
    for p in &mut c.proposers {
        p.start_at = rng.random_range(0..=50);
        p.restart = if rng.random_bool(0.5) {
            RestartPolicy::Eager
        } else {
            RestartPolicy::Timed { wait: rng.random_range(1..=60) }
        };
    }
    c.stop = StopCondition { max_events: 4000, max_virtual_time: 3000, first_decision: false };
    c
}

fn safety_at_scale() -> Outcome {
    const RUNS: u64 = 10_000;
    let results: Vec<(u64, bool, bool, bool)> = (0..RUNS)
        .into_par_iter()
        .map(|i| {
            let trace = simnet::run(&random_scenario(i)).expect("generated scenarios are valid");
            let decided = trace.decisions().next().is_some();
            (i, check_agreement(&trace).passed, check_induction_list(&trace).passed, decided)
        })
        .collect();
    let bad: Vec<u64> = results.iter().filter(|r| !r.1 || !r.2).map(|r| r.0).collect();
    let decided = results.iter().filter(|r| r.3).count();
    outcome(
        bad.is_empty(),
        format!("{RUNS} random scenarios, {} violations (first: {:?}), {decided} decided", bad.len(), bad.first()),
    )
}

fn exhaustive_oracle() -> Outcome {
    const DEPTH: usize = 12;
    let config = |m: Mutation| {
        let mut c = ScenarioConfig::paxos("oracle", 0, &["vA", "vB"], 3);
        c.mutation = m;
        c
    };
    let mut ok = true;
    let mut parts = Vec::new();
    match oracle_explore(&config(Mutation::None), DEPTH).expect("within limits") {
        OracleOutcome::Pass { states, .. } => parts.push(format!("faithful passes ({states} states)")),
        other => {
            ok = false;
            parts.push(format!("faithful: {other:?}"));
        }
    }
    for m in Mutation::ALL_MUTANTS {
        let c = config(m);
        let found = oracle_explore(&c, DEPTH).expect("within limits");
        let OracleOutcome::Counterexample { steps, .. } = &found else {
            ok = false;
            parts.push(format!("{}: no counterexample", m.name()));
            continue;
        };
        // The counterexample must replay in the simulator and fail there too.
        let trace = simnet::run(&found.replay_scenario(&c).expect("counterexample")).expect("script replays");
        let caught = !check_agreement(&trace).passed || !check_induction_list(&trace).passed;
        ok &= caught;
        parts.push(format!("{} {} steps{}", m.name(), steps.len(), if caught { "" } else { " (replay did not fail)" }));
    }
    outcome(ok, format!("2x3x2 depth {DEPTH}: {}", parts.join(", ")))
}

fn livelock_reproduction() -> Outcome {
    let first = simnet::run(&bundled::duel()).expect("runs");
    let second = simnet::run(&bundled::duel()).expect("runs");
    let report = detect_livelock(&first, Some(500));
    let passed = report.horizon == 500
        && !report.decided
        && report.strictly_alternating
        && report.phase1_completions.len() >= 4
        && first.to_jsonl() == second.to_jsonl();
    outcome(
        passed,
        format!(
            "0 decisions in {} events: {}, {} phase-1 completions, strictly alternating: {}",
            report.horizon,
            !report.decided,
            report.phase1_completions.len(),
            report.strictly_alternating
        ),
    )
}

/// Two-phase round trip: four one-way delays at their maximum.
fn round_trip(c: &ScenarioConfig) -> u64 {
    4 * c.faults.delay.max()
}

fn decided_within(c: &ScenarioConfig, seeds: u64, limit: u64) -> usize {
    (0..seeds)
        .into_par_iter()
        .filter(|k| {
            let mut c = c.clone();
            c.seed = c.seed.wrapping_add(*k);
            let trace = simnet::run(&c).expect("runs");
            trace.first_decision_time().is_some_and(|t| t <= limit)
        })
        .count()
}

fn timed_restart_liveness() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    // The duel without its script, and the same with jittered delays.
    for base in [bundled::duel(), bundled::timeout_recovery()] {
        let rtt = {
            let mut c = base.clone();
            sweep::apply(&mut c, "wait", 0.0).expect("paxos scenario");
            round_trip(&c)
        };
        for t in [rtt, 2 * rtt] {
            let mut c = base.clone();
            sweep::apply(&mut c, "wait", t as f64).expect("paxos scenario");
            c.stop = StopCondition { max_events: 100_000, max_virtual_time: 10 * t, first_decision: true };
            let decided = decided_within(&c, 1000, 10 * t);
            ok &= decided >= 950;
            parts.push(format!("{} t={t}: {decided}/1000", base.name));
        }
        let grid: Axis = format!("wait=0,5,10,20,{rtt},{}", 2 * rtt).parse().expect("grid");
        let cells = sweep::sweep(&base, &[grid], 200).expect("sweep runs");
        let rates: Vec<f64> = cells.iter().map(|c| c.decision_rate).collect();
        let monotone = rates.windows(2).all(|w| w[0] <= w[1]);
        ok &= monotone;
        let rendered: Vec<String> = rates.iter().map(|r| format!("{r:.2}")).collect();
        parts.push(format!("{} sweep rates [{}] monotone: {monotone}", base.name, rendered.join(" ")));
    }
    outcome(ok, parts.join("; "))
}

fn distinguished_proposer() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (acceptors, d) in [(3, 5), (5, 1), (7, 13)] {
        let mut c = bundled::distinguished();
        c.agents.acceptors = acceptors;
        c.faults.delay = Delay::Fixed(d);
        c.paxos.stall_timeout = 2 * d;
        let trace = simnet::run(&c).expect("runs");
        let protocol_msgs = trace.count(|b| matches!(b, EventBody::Send { msg, .. } if !matches!(msg, Message::Decided(_))));
        let notices = trace.count(|b| matches!(b, EventBody::Send { msg: Message::Decided(_), .. }));
        // Two broadcasts and two full waves of acks, each one message per acceptor.
        let expected = 4 * acceptors as usize;
        let time = trace.first_decision_time();
        let good = time == Some(4 * d)
            && trace.decisions().count() == 1
            && protocol_msgs == expected
            && notices == c.agents.learners as usize
            && trace.restarts() == 0;
        ok &= good;
        parts.push(format!("n={acceptors} d={d}: decided at {time:?} (want {}), {protocol_msgs}/{expected} messages", 4 * d));
    }
    outcome(ok, parts.join("; "))
}

/// P(X < k) for X ~ Binomial(n, p).
fn binomial_cdf_below(n: u32, p: f64, k: u32) -> f64 {
    let mut coeff = 1.0;
    let mut total = 0.0;
    for i in 0..k.min(n + 1) {
        if i > 0 {
            coeff *= f64::from(n - i + 1) / f64::from(i);
        }
        total += coeff * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32);
    }
    total
}

/// Expected broadcast attempts until a quorum has acknowledged, each attempt
/// reaching a given acceptor and coming back with probability (1 - drop)^2.
fn attempts_closed_form(drop: f64, acceptors: u32, quorum: u32) -> f64 {
    let s = (1.0 - drop).powi(2);
    (0..10_000).map(|k| binomial_cdf_below(acceptors, 1.0 - (1.0 - s).powi(k), quorum)).take_while(|p| *p > 1e-15).sum()
}

fn naive_liveness() -> Outcome {
    let base = bundled::naive_lossy();
    let n = base.agents.acceptors;
    let q = base.quorum().quorum_size();
    let drop = base.faults.drop_probability;
    let naive = base.naive.as_ref().expect("naive settings");
    assert_eq!((drop, naive.resend_interval, naive.values.len()), (0.3, 5, 1));
    let runs: Vec<Option<usize>> = (0..1000u64)
        .into_par_iter()
        .map(|k| {
            let mut c = base.clone();
            c.seed = base.seed.wrapping_add(k);
            let trace = simnet::run(&c).expect("runs");
            let decided_at = trace.first_decision_time()?;
            // Broadcast rounds after the first one, up to the decision.
            let mut rounds: Vec<u64> = trace
                .events
                .iter()
                .filter(|e| e.time <= decided_at && matches!(e.body, EventBody::Send { msg: Message::NaivePropose { .. }, .. }))
                .map(|e| e.time)
                .collect();
            rounds.dedup();
            Some(rounds.len() - 1)
        })
        .collect();
    let decided = runs.iter().flatten().count();
    let mean = runs.iter().flatten().sum::<usize>() as f64 / decided.max(1) as f64;
    let expected = attempts_closed_form(drop, n, q) - 1.0;
    let library = expected_attempts(drop, n, q) - 1.0;
    let within = (mean - expected).abs() <= 0.2 * expected;
    let agree = (expected - library).abs() < 1e-9;
    outcome(
        decided == 1000 && within && agree,
        format!("{decided}/1000 decided; mean resends {mean:.3} vs closed form {expected:.3} (library {library:.3})"),
    )
}

/// Ticks from the crash to the first leader among the survivors.
fn recovery_time(trace: &Trace) -> Option<Option<u64>> {
    let (at, victim) = trace.events.iter().find_map(|e| match e.body {
        EventBody::Crash { agent } => Some((e.time, agent)),
        _ => None,
    })?;
    Some(trace.events.iter().find_map(|e| match e.body {
        EventBody::StateChange { agent, note: Note::Role { role: Role::Leader, .. } } if e.time >= at && agent != victim => {
            Some(e.time - at)
        }
        _ => None,
    }))
}

fn lease_safety() -> Outcome {
    let base = bundled::leader_failover();
    assert_eq!(base.protocol, Protocol::LeaderElection);
    let leader = base.leader.clone().expect("leader settings");
    let bound = leader.follower_timeout + leader.backoff_max + 2 * base.faults.delay.max();
    let mut ok = true;
    let mut parts = Vec::new();
    for drop in [0.0, 0.1, 0.2] {
        let runs: Vec<(bool, Option<Option<u64>>)> = (0..400u64)
            .into_par_iter()
            .map(|k| {
                let mut c = base.clone();
                c.seed = base.seed.wrapping_add(k);
                c.faults.drop_probability = drop;
                let trace = simnet::run(&c).expect("runs");
                (check_lease_uniqueness(&trace).passed, recovery_time(&trace))
            })
            .collect();
        let unique = runs.iter().filter(|r| r.0).count();
        let crashed: Vec<Option<u64>> = runs.iter().filter_map(|r| r.1).collect();
        let fast = crashed.iter().filter(|t| t.is_some_and(|t| t <= bound)).count();
        let rate = fast as f64 / crashed.len().max(1) as f64;
        ok &= unique == runs.len() && !crashed.is_empty() && rate >= 0.95;
        parts.push(format!(
            "drop {drop}: leases unique {unique}/{}, new leader within {bound} after {fast}/{} crashes",
            runs.len(),
            crashed.len()
        ));
    }
    outcome(ok, parts.join("; "))
}

fn determinism() -> Outcome {
    let mut bad = Vec::new();
    for c in bundled::all() {
        let first = simnet::run(&c).expect("runs").to_jsonl();
        let second = simnet::run(&c).expect("runs").to_jsonl();
        let replayed = replay(&first).expect("header present");
        if first != second || !matches!(replayed, ReplayOutcome::Identical { .. }) {
            bad.push(c.name);
        }
    }
    outcome(bad.is_empty(), format!("{} bundled scenarios replayed byte for byte, diverged: {bad:?}", bundled::NAMES.len()))
}
