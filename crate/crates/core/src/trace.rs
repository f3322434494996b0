//! Line-delimited JSON traces.
//!
//! The first line is a header naming the format, its version and the full
//! scenario (seed included), so every trace can be re-executed. Each later
//! line is one [`TraceEvent`]. Field names are part of the format:
//!
//! ```text
//! {"format":"paxlab-trace","version":1,"scenario":{...}}
//! {"index":0,"time":0,"kind":"send","seq":0,"src":"p0","dst":"a0","deliver_at":10,"msg":{"type":"pre_proposal",...}}
//! {"index":1,"time":10,"kind":"deliver","seq":0,"src":"p0","dst":"a0","msg":{...}}
//! {"index":2,"time":10,"kind":"drop","seq":1,"src":"p0","dst":"a1","reason":"random","msg":{...}}
//! {"index":3,"time":50,"kind":"crash","agent":"a2"}
//! {"index":4,"time":60,"kind":"stall","agent":"a1","until":90}
//! {"index":5,"time":20,"kind":"state_change","agent":"p0","note":{"type":"phase","phase":"proposing","number":{...}}}
//! {"index":6,"time":40,"kind":"decision","agent":"p0","notice":{"number":{...},"value":"vA"}}
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::leader::Role;
use crate::proposer::Phase;
use crate::scenario::ScenarioConfig;
use crate::types::{AgentId, DecisionNotice, Message, ProposalNumber, Time};

pub const TRACE_FORMAT: &str = "paxlab-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error("line 1: missing trace header: {0}")]
    MissingHeader(String),
    #[error("line 1: unsupported trace format version {found} (this build reads version {TRACE_VERSION})")]
    Version { found: u32 },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub scenario: ScenarioConfig,
}

impl TraceHeader {
    pub fn new(scenario: ScenarioConfig) -> Self {
        Self { format: TRACE_FORMAT.to_string(), version: TRACE_VERSION, scenario }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Random,
    Crashed,
    Script,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Note {
    Phase {
        phase: Phase,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        number: Option<ProposalNumber>,
    },
    /// A stalled proposer starts waiting before it restarts.
    Waiting { until: Time },
    Restart {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        abandoned: Option<ProposalNumber>,
        next_round: u64,
    },
    Role { role: Role, epoch: u64 },
    /// A candidate or leader granting a lease to itself.
    SelfGrant { epoch: u64, expires_at: Time },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventBody {
    Send { seq: u64, src: AgentId, dst: AgentId, deliver_at: Time, msg: Message },
    Deliver { seq: u64, src: AgentId, dst: AgentId, msg: Message },
    Drop { seq: u64, src: AgentId, dst: AgentId, reason: DropReason, msg: Message },
    Crash { agent: AgentId },
    Stall { agent: AgentId, until: Time },
    StateChange { agent: AgentId, note: Note },
    Decision { agent: AgentId, notice: DecisionNotice },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub index: u64,
    pub time: Time,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(scenario: ScenarioConfig) -> Self {
        Self { header: TraceHeader::new(scenario), events: Vec::new() }
    }

    pub fn push(&mut self, time: Time, body: EventBody) {
        let index = self.events.len() as u64;
        self.events.push(TraceEvent { index, time, body });
    }

    pub fn decisions(&self) -> impl Iterator<Item = (&TraceEvent, &DecisionNotice)> {
        self.events.iter().filter_map(|e| match &e.body {
            EventBody::Decision { notice, .. } => Some((e, notice)),
            _ => None,
        })
    }

    pub fn first_decision_time(&self) -> Option<Time> {
        self.decisions().next().map(|(e, _)| e.time)
    }

    pub fn restarts(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.body, EventBody::StateChange { note: Note::Restart { .. }, .. }))
            .count()
    }

    pub fn count(&self, pred: impl Fn(&EventBody) -> bool) -> usize {
        self.events.iter().filter(|e| pred(&e.body)).count()
    }

    pub fn end_time(&self) -> Time {
        self.events.last().map_or(0, |e| e.time)
    }

    /// Serializes to the line-delimited form, one trailing newline per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(TraceError::Empty)?;
        let header = parse_header(first)?;
        let mut events = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let event: TraceEvent = serde_json::from_str(line)
                .map_err(|e| TraceError::Malformed { line: i + 1, message: e.to_string() })?;
            if let Some(prev) = events.last() {
                let prev: &TraceEvent = prev;
                if event.index <= prev.index || event.time < prev.time {
                    return Err(TraceError::Malformed {
                        line: i + 1,
                        message: format!(
                            "event {} at time {} does not follow event {} at time {}",
                            event.index, event.time, prev.index, prev.time
                        ),
                    });
                }
            }
            events.push(event);
        }
        Ok(Self { header, events })
    }
}

/// Reads only the header line, checking format and version before the
/// scenario itself is decoded.
pub fn parse_header(line: &str) -> Result<TraceHeader, TraceError> {
    let raw: serde_json::Value =
        serde_json::from_str(line).map_err(|e| TraceError::MissingHeader(e.to_string()))?;
    if raw.get("format").and_then(|f| f.as_str()) != Some(TRACE_FORMAT) {
        return Err(TraceError::MissingHeader(format!("first line is not a {TRACE_FORMAT} header")));
    }
    let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != TRACE_VERSION {
        return Err(TraceError::Version { found: version });
    }
    serde_json::from_value(raw).map_err(|e| TraceError::Malformed { line: 1, message: e.to_string() })
}
