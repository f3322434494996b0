//! Re-executes the scenario embedded in a trace and compares the output
//! byte for byte.

use serde::Serialize;
use thiserror::Error;

use crate::simnet::{self, SimError};
use crate::trace::{parse_header, TraceError};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("embedded scenario does not run: {0}")]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ReplayOutcome {
    Identical { lines: usize },
    /// First differing line, 1-based. A missing line is reported as empty.
    Diverged { line: usize, recorded: String, replayed: String },
}

pub fn replay(recorded: &str) -> Result<ReplayOutcome, ReplayError> {
    let first = recorded.lines().next().ok_or(TraceError::Empty)?;
    let header = parse_header(first)?;
    let replayed = simnet::run(&header.scenario)?.to_jsonl();
    if replayed == recorded {
        return Ok(ReplayOutcome::Identical { lines: replayed.lines().count() });
    }
    let mut old = recorded.split_inclusive('\n');
    let mut new = replayed.split_inclusive('\n');
    let mut line = 1;
    loop {
        match (old.next(), new.next()) {
            (Some(a), Some(b)) if a == b => line += 1,
            (a, b) => {
                return Ok(ReplayOutcome::Diverged {
                    line,
                    recorded: a.unwrap_or_default().trim_end().to_string(),
                    replayed: b.unwrap_or_default().trim_end().to_string(),
                })
            }
        }
    }
}
