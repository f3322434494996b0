//! Parameter sweeps: run a base scenario over a grid of parameter values
//! and a range of seeds, and tabulate decision rates.

use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::proposer::RestartPolicy;
use crate::scenario::{Delay, Protocol, ScenarioConfig};
use crate::simnet;

pub const KEYS: [&str; 8] = [
    "drop",
    "wait",
    "stall_timeout",
    "resend_interval",
    "delay",
    "follower_timeout",
    "heartbeat_interval",
    "lease_duration",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SweepError {
    #[error("empty grid: give at least one KEY=V1,V2,... axis")]
    EmptyGrid,
    #[error("grid axis {0:?} is not of the form KEY=V1,V2,...")]
    Syntax(String),
    #[error("unknown sweep key {0:?} (known: {keys})", keys = KEYS.join(", "))]
    UnknownKey(String),
    #[error("{key}: {value:?} is not a valid value")]
    BadValue { key: String, value: String },
    #[error("seeds per cell must be positive")]
    NoSeeds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<f64>,
}

impl FromStr for Axis {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (key, list) = s.split_once('=').ok_or_else(|| SweepError::Syntax(s.to_string()))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(SweepError::UnknownKey(key.to_string()));
        }
        let values = list
            .split(',')
            .map(|v| {
                let v = v.trim();
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite() && *x >= 0.0)
                    .filter(|x| key == "drop" || x.fract() == 0.0)
                    .ok_or_else(|| SweepError::BadValue { key: key.to_string(), value: v.to_string() })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { key: key.to_string(), values })
    }
}

/// Sets one grid parameter on a scenario. A script overrides drops, delays
/// and timers, so setting any of those turns a scripted scenario into a
/// free-running one.
pub fn apply(config: &mut ScenarioConfig, key: &str, value: f64) -> Result<(), String> {
    let ticks = value as u64;
    if matches!(key, "drop" | "wait" | "stall_timeout" | "resend_interval" | "delay") {
        config.faults.script = None;
    }
    fn leader<'c>(c: &'c mut ScenarioConfig, key: &str) -> Result<&'c mut crate::scenario::LeaderSettings, String> {
        c.leader.as_mut().ok_or_else(|| format!("{key} needs a leader election scenario"))
    }
    match key {
        "drop" => config.faults.drop_probability = value,
        "wait" => {
            let policy = if ticks == 0 { RestartPolicy::Eager } else { RestartPolicy::Timed { wait: ticks } };
            for p in &mut config.proposers {
                p.restart = policy;
            }
        }
        "stall_timeout" => config.paxos.stall_timeout = ticks,
        "resend_interval" => match (config.protocol, config.naive.as_mut()) {
            (Protocol::Naive, Some(n)) => n.resend_interval = ticks,
            _ => config.paxos.resend_interval = Some(ticks),
        },
        "delay" => config.faults.delay = Delay::Fixed(ticks),
        "follower_timeout" => leader(config, key)?.follower_timeout = ticks,
        "heartbeat_interval" => leader(config, key)?.heartbeat_interval = ticks,
        "lease_duration" => leader(config, key)?.lease_duration = Some(ticks),
        other => return Err(format!("unknown sweep key {other:?}")),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub point: Vec<(String, f64)>,
    pub runs: usize,
    pub decided: usize,
    pub decision_rate: f64,
    /// Over runs that decided.
    pub mean_time_to_decision: Option<f64>,
    pub mean_restarts: f64,
    /// Set when the cell's scenario could not run.
    pub error: Option<String>,
}

fn cells(axes: &[Axis]) -> Vec<Vec<(String, f64)>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut point = prefix.clone();
                    point.push((axis.key.clone(), *v));
                    point
                })
            })
            .collect()
    })
}

/// Runs every grid point with seeds `base.seed .. base.seed + seeds_per_cell`.
/// Cells whose scenario is invalid are reported, not fatal.
pub fn sweep(base: &ScenarioConfig, axes: &[Axis], seeds_per_cell: usize) -> Result<Vec<CellResult>, SweepError> {
    if axes.is_empty() || axes.iter().any(|a| a.values.is_empty()) {
        return Err(SweepError::EmptyGrid);
    }
    if seeds_per_cell == 0 {
        return Err(SweepError::NoSeeds);
    }
    let results = cells(axes)
        .into_par_iter()
        .map(|point| {
            let mut config = base.clone();
            let configured = point
                .iter()
                .try_for_each(|(k, v)| apply(&mut config, k, *v))
                .and_then(|()| config.validate().map_err(|e| e.to_string()));
            if let Err(error) = configured {
                return CellResult {
                    point,
                    runs: 0,
                    decided: 0,
                    decision_rate: 0.0,
                    mean_time_to_decision: None,
                    mean_restarts: 0.0,
                    error: Some(error),
                };
            }
            let runs: Vec<(Option<u64>, usize)> = (0..seeds_per_cell as u64)
                .into_par_iter()
                .map(|k| {
                    let mut c = config.clone();
                    c.seed = base.seed.wrapping_add(k);
                    let trace = simnet::run(&c).expect("validated scenario runs");
                    (trace.first_decision_time(), trace.restarts())
                })
                .collect();
            let times: Vec<u64> = runs.iter().filter_map(|r| r.0).collect();
            CellResult {
                point,
                runs: runs.len(),
                decided: times.len(),
                decision_rate: times.len() as f64 / runs.len() as f64,
                mean_time_to_decision: (!times.is_empty())
                    .then(|| times.iter().sum::<u64>() as f64 / times.len() as f64),
                mean_restarts: runs.iter().map(|r| r.1 as f64).sum::<f64>() / runs.len() as f64,
                error: None,
            }
        })
        .collect();
    Ok(results)
}

/// Comma-separated table with a header row.
pub fn to_csv(results: &[CellResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(first) = results.first() {
        let mut header: Vec<&str> = first.point.iter().map(|(k, _)| k.as_str()).collect();
        header.extend(["runs", "decided", "decision_rate", "mean_time_to_decision", "mean_restarts", "error"]);
        w.write_record(&header).expect("in-memory write");
    }
    for r in results {
        let mut row: Vec<String> = r.point.iter().map(|(_, v)| v.to_string()).collect();
        row.push(r.runs.to_string());
        row.push(r.decided.to_string());
        row.push(format!("{:.4}", r.decision_rate));
        row.push(r.mean_time_to_decision.map(|t| format!("{t:.2}")).unwrap_or_default());
        row.push(format!("{:.3}", r.mean_restarts));
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
}
