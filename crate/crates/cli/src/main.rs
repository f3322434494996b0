//! `paxlab`: run scenarios, check traces, sweep parameters, replay traces and
//! exhaustively explore small configurations.
//!
//! Exit codes: 0 success, 1 a check failed or an expectation was unmet,
//! 2 a usage, configuration or format error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use paxlab::bundled;
use paxlab::checker::oracle::{oracle_explore_with, OracleOptions, OracleOutcome};
use paxlab::checker::{check_agreement, check_induction_list, check_lease_uniqueness, detect_livelock, Verdict};
use paxlab::mutation::Mutation;
use paxlab::replay::{replay, ReplayOutcome};
use paxlab::scenario::{Protocol, ScenarioConfig};
use paxlab::simnet;
use paxlab::sweep::{sweep, to_csv, Axis};
use paxlab::trace::{EventBody, Trace};

#[derive(Parser)]
#[command(name = "paxlab", version, about = "Paxos and leader-election scenarios on a deterministic simulated network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace.
    Run {
        #[command(flatten)]
        source: Source,
        /// Trace file (default: NAME.trace.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run checks over a recorded trace.
    Check {
        trace: PathBuf,
        /// Comma-separated; default is every check.
        #[arg(long, value_delimiter = ',', default_value = "agreement,induction,livelock,lease")]
        checks: Vec<CheckKind>,
        /// Events the livelock check looks at.
        #[arg(long)]
        horizon: Option<usize>,
        /// Fail when the livelock check reports no progress.
        #[arg(long)]
        expect_progress: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run a grid of parameter points over several seeds each.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// KEY=V1,V2,... (repeatable; cells are the cartesian product).
        #[arg(long = "grid", required = true)]
        grid: Vec<String>,
        #[arg(long, default_value_t = 100)]
        seeds_per_cell: usize,
        /// Table file (default: standard output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the scenario embedded in a trace and compare byte for byte.
    Replay {
        trace: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Exhaustively explore every interleaving of a small Paxos scenario.
    Explore {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 12)]
        depth: usize,
        #[arg(long, default_value_t = 1)]
        max_restarts: u32,
        #[arg(long, default_value_t = OracleOptions::default().max_states)]
        max_states: usize,
        /// Also branch on message drops (slower, same verdict).
        #[arg(long)]
        explicit_drops: bool,
        /// Write a counterexample as a replayable scenario file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// List the bundled scenarios, or print one as a config file.
    Scenarios { name: Option<String> },
}

#[derive(Args)]
struct Source {
    /// Scenario config file.
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    config: Option<PathBuf>,
    /// Bundled scenario name.
    #[arg(long)]
    scenario: Option<String>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's protocol mutation.
    #[arg(long)]
    mutation: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckKind {
    Agreement,
    Induction,
    Livelock,
    Lease,
}

enum Failure {
    /// Exit 1.
    Unmet(String),
    /// Exit 2.
    Usage(String),
}

type Outcome = Result<(), Failure>;

fn usage(e: impl ToString) -> Failure {
    Failure::Usage(e.to_string())
}

impl Source {
    fn load(&self) -> Result<ScenarioConfig, Failure> {
        let mut config = match (&self.config, &self.scenario) {
            (Some(path), _) => ScenarioConfig::load(path).map_err(usage)?,
            (None, Some(name)) => bundled::by_name(name).ok_or_else(|| {
                usage(format!("no bundled scenario {name:?} (available: {})", bundled::NAMES.join(", ")))
            })?,
            (None, None) => return Err(usage("give --config or --scenario")),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(m) = &self.mutation {
            config.mutation = m.parse::<Mutation>().map_err(usage)?;
        }
        config.validate().map_err(usage)?;
        Ok(config)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { source, out, json } => cmd_run(&source, out, json),
        Command::Check { trace, checks, horizon, expect_progress, json } => {
            cmd_check(&trace, &checks, horizon, expect_progress, json)
        }
        Command::Sweep { source, grid, seeds_per_cell, out } => cmd_sweep(&source, &grid, seeds_per_cell, out),
        Command::Replay { trace, json } => cmd_replay(&trace, json),
        Command::Explore { source, depth, max_restarts, max_states, explicit_drops, out, json } => {
            let options = OracleOptions { max_restarts, max_states, explicit_drops };
            cmd_explore(&source, depth, options, out, json)
        }
        Command::Scenarios { name } => cmd_scenarios(name.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Unmet(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn write(path: &Path, contents: &str) -> Outcome {
    std::fs::write(path, contents).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn cmd_run(source: &Source, out: Option<PathBuf>, json: bool) -> Outcome {
    let config = source.load()?;
    let trace = simnet::run(&config).map_err(usage)?;
    let out = out.unwrap_or_else(|| PathBuf::from(format!("{}.trace.jsonl", config.name)));
    write(&out, &trace.to_jsonl())?;

    let count = |f: fn(&EventBody) -> bool| trace.count(f);
    let summary = json!({
        "scenario": config.name,
        "seed": config.seed,
        "trace": out.display().to_string(),
        "events": trace.events.len(),
        "virtual_time": trace.end_time(),
        "decisions": trace.decisions().count(),
        "first_decision_at": trace.first_decision_time(),
        "restarts": trace.restarts(),
        "messages": {
            "sent": count(|b| matches!(b, EventBody::Send { .. })),
            "delivered": count(|b| matches!(b, EventBody::Deliver { .. })),
            "dropped": count(|b| matches!(b, EventBody::Drop { .. })),
        },
    });
    if json {
        println!("{summary}");
    } else {
        let m = &summary["messages"];
        println!("scenario     {} (seed {})", config.name, config.seed);
        println!("trace        {}", out.display());
        println!("events       {} over {} ticks", trace.events.len(), trace.end_time());
        match trace.first_decision_time() {
            Some(t) => println!("decisions    {} (first at t={t})", trace.decisions().count()),
            None => println!("decisions    0"),
        }
        println!("restarts     {}", trace.restarts());
        println!("messages     {} sent, {} delivered, {} dropped", m["sent"], m["delivered"], m["dropped"]);
    }
    Ok(())
}

fn cmd_check(path: &Path, checks: &[CheckKind], horizon: Option<usize>, expect_progress: bool, json: bool) -> Outcome {
    let trace = Trace::parse(&read(path)?).map_err(usage)?;
    let is_leader = trace.header.scenario.protocol == Protocol::LeaderElection;
    let mut verdicts: Vec<Verdict> = Vec::new();
    let mut failed = false;
    for kind in checks {
        let verdict = match kind {
            CheckKind::Agreement => check_agreement(&trace),
            CheckKind::Induction => check_induction_list(&trace),
            CheckKind::Livelock => {
                let verdict = detect_livelock(&trace, horizon).verdict();
                // Only a failure when progress was asked for.
                failed |= expect_progress && !verdict.passed;
                verdicts.push(verdict);
                continue;
            }
            CheckKind::Lease if !is_leader && checks.len() > 1 => continue,
            CheckKind::Lease => check_lease_uniqueness(&trace),
        };
        failed |= !verdict.passed;
        verdicts.push(verdict);
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&verdicts).expect("verdicts serialize"));
    } else {
        for v in &verdicts {
            let status = match (v.passed, v.vacuous) {
                (true, false) => "pass",
                (true, true) => "pass (vacuous)",
                (false, _) if v.check == "livelock" && !expect_progress => "livelock",
                (false, _) => "FAIL",
            };
            println!("{:<10} {status}: {}", v.check, v.explanation);
            if !v.events.is_empty() {
                let events: Vec<String> = v.events.iter().map(u64::to_string).collect();
                println!("{:<10} events {}", "", events.join(", "));
            }
        }
    }
    if failed {
        return Err(Failure::Unmet(format!("{}: checks failed", path.display())));
    }
    Ok(())
}

fn cmd_sweep(source: &Source, grid: &[String], seeds_per_cell: usize, out: Option<PathBuf>) -> Outcome {
    let config = source.load()?;
    let axes = grid.iter().map(|g| g.parse::<Axis>()).collect::<Result<Vec<_>, _>>().map_err(usage)?;
    let results = sweep(&config, &axes, seeds_per_cell).map_err(usage)?;
    let table = to_csv(&results);
    match out {
        Some(path) => write(&path, &table)?,
        None => print!("{table}"),
    }
    for r in results.iter().filter(|r| r.error.is_some()) {
        let point: Vec<String> = r.point.iter().map(|(k, v)| format!("{k}={v}")).collect();
        eprintln!("cell {} failed: {}", point.join(" "), r.error.as_deref().unwrap_or_default());
    }
    Ok(())
}

fn cmd_replay(path: &Path, json: bool) -> Outcome {
    let outcome = replay(&read(path)?).map_err(usage)?;
    if json {
        println!("{}", serde_json::to_string(&outcome).expect("outcome serializes"));
    }
    match outcome {
        ReplayOutcome::Identical { lines } => {
            if !json {
                println!("identical: {lines} lines reproduced byte for byte");
            }
            Ok(())
        }
        ReplayOutcome::Diverged { line, recorded, replayed } => Err(Failure::Unmet(format!(
            "diverged at line {line}\n  recorded: {recorded}\n  replayed: {replayed}"
        ))),
    }
}

fn cmd_explore(source: &Source, depth: usize, options: OracleOptions, out: Option<PathBuf>, json: bool) -> Outcome {
    let config = source.load()?;
    let outcome = oracle_explore_with(&config, depth, options).map_err(usage)?;
    if let (Some(path), Some(replay)) = (&out, outcome.replay_scenario(&config)) {
        write(path, &replay.to_toml())?;
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&outcome).expect("outcome serializes"));
    }
    match &outcome {
        OracleOutcome::Pass { depth, states } => {
            if !json {
                println!("pass: no violation within {depth} steps ({states} states)");
            }
            Ok(())
        }
        OracleOutcome::Counterexample { steps, violation, states } => {
            if !json {
                println!("counterexample after {} steps ({states} states): {violation}", steps.len());
                for (i, step) in steps.iter().enumerate() {
                    println!("  {:>2}. {}", i + 1, serde_json::to_string(step).expect("step serializes"));
                }
                if let Some(path) = &out {
                    println!("replay with: paxlab run --config {}", path.display());
                }
            }
            Err(Failure::Unmet(format!("{} violates safety", config.name)))
        }
        OracleOutcome::Incomplete { depth_completed, states } => Err(Failure::Unmet(format!(
            "incomplete: state budget of {states} exhausted; only depth {depth_completed} fully explored"
        ))),
    }
}

fn cmd_scenarios(name: Option<&str>) -> Outcome {
    match name {
        None => {
            for c in bundled::all() {
                let protocol = serde_json::to_value(c.protocol).expect("protocol serializes");
                println!(
                    "{:<18} {:<20} proposers={} acceptors={}",
                    c.name,
                    protocol.as_str().unwrap_or_default(),
                    c.agents.proposers,
                    c.agents.acceptors
                );
            }
            Ok(())
        }
        Some(name) => {
            let c = bundled::by_name(name).ok_or_else(|| usage(format!("no bundled scenario {name:?}")))?;
            print!("{}", c.to_toml());
            Ok(())
        }
    }
}
