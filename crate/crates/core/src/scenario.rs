//! Scenario files: which protocol to run, with how many agents, under which
//! faults, for how long. Stored as TOML with a `version` field.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::leader::LeaderTiming;
use crate::mutation::Mutation;
use crate::proposer::RestartPolicy;
use crate::types::{AgentId, AgentKind, Message, QuorumConfig, Time, Value};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Naive,
    PaxosMulti,
    PaxosDistinguished,
    LeaderElection,
}

impl Protocol {
    pub fn is_paxos(self) -> bool {
        matches!(self, Protocol::PaxosMulti | Protocol::PaxosDistinguished)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentCounts {
    #[serde(default)]
    pub proposers: u32,
    pub acceptors: u32,
    #[serde(default = "one")]
    pub learners: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delay {
    Fixed(Time),
    Uniform { lo: Time, hi: Time },
}

impl Default for Delay {
    fn default() -> Self {
        Delay::Fixed(1)
    }
}

impl Delay {
    pub fn max(self) -> Time {
        match self {
            Delay::Fixed(d) => d,
            Delay::Uniform { hi, .. } => hi,
        }
    }
}

/// What a crash entry targets: a fixed agent or whoever leads at that time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CrashTarget {
    Agent(AgentId),
    Leader,
}

impl FromStr for CrashTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "leader" {
            return Ok(CrashTarget::Leader);
        }
        s.parse().map(CrashTarget::Agent).map_err(|e| format!("{e}"))
    }
}

impl TryFrom<String> for CrashTarget {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<CrashTarget> for String {
    fn from(t: CrashTarget) -> String {
        t.to_string()
    }
}

impl fmt::Display for CrashTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CrashTarget::Agent(id) => id.fmt(f),
            CrashTarget::Leader => f.write_str("leader"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crash {
    pub agent: CrashTarget,
    pub at: Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stall {
    pub agent: AgentId,
    pub from: Time,
    pub until: Time,
}

/// One directive of a scripted run. Scripted runs ignore delays, drops and
/// timers: each step happens at virtual time `step + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ScriptStep {
    Deliver { src: AgentId, dst: AgentId, msg: Message },
    Drop { src: AgentId, dst: AgentId, msg: Message },
    /// The proposer abandons its attempt and starts a higher round.
    Restart { proposer: AgentId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FaultModel {
    #[serde(default)]
    pub drop_probability: f64,
    #[serde(default)]
    pub delay: Delay,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub crashes: Vec<Crash>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stalls: Vec<Stall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<Vec<ScriptStep>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaxosSettings {
    /// A proposer without progress for this long is stalled.
    #[serde(default = "default_stall_timeout")]
    pub stall_timeout: Time,
    /// Resend the current phase's request to silent acceptors this often.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resend_interval: Option<Time>,
}

fn default_stall_timeout() -> Time {
    10
}

impl Default for PaxosSettings {
    fn default() -> Self {
        Self { stall_timeout: default_stall_timeout(), resend_interval: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposerSpec {
    pub value: Value,
    #[serde(default)]
    pub start_at: Time,
    #[serde(default)]
    pub restart: RestartPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NaiveSettings {
    /// One value per slot, proposed at time zero.
    pub values: Vec<Value>,
    pub resend_interval: Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderSettings {
    pub heartbeat_interval: Time,
    pub follower_timeout: Time,
    pub backoff_min: Time,
    pub backoff_max: Time,
    /// Defaults to three heartbeat intervals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lease_duration: Option<Time>,
    /// Defaults to two heartbeat intervals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_timeout: Option<Time>,
    /// Defaults to half a heartbeat interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim_resend: Option<Time>,
    /// Defaults to a quarter heartbeat interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grant_window: Option<Time>,
    /// Each agent's clock is offset by a seeded amount in `[-max_skew, max_skew]`.
    #[serde(default)]
    pub max_skew: Time,
}

impl LeaderSettings {
    pub fn new(heartbeat_interval: Time, follower_timeout: Time, backoff: (Time, Time)) -> Self {
        Self {
            heartbeat_interval,
            follower_timeout,
            backoff_min: backoff.0,
            backoff_max: backoff.1,
            lease_duration: None,
            candidate_timeout: None,
            claim_resend: None,
            grant_window: None,
            max_skew: 0,
        }
    }

    pub fn timing(&self) -> LeaderTiming {
        let defaults = LeaderTiming::from_heartbeat(self.heartbeat_interval);
        LeaderTiming {
            heartbeat_interval: self.heartbeat_interval,
            follower_timeout: self.follower_timeout,
            backoff_min: self.backoff_min,
            backoff_max: self.backoff_max,
            lease_duration: self.lease_duration.unwrap_or(defaults.lease_duration),
            candidate_timeout: self.candidate_timeout.unwrap_or(defaults.candidate_timeout),
            claim_resend: self.claim_resend.unwrap_or(defaults.claim_resend),
            grant_window: self.grant_window.unwrap_or(defaults.grant_window),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopCondition {
    #[serde(default = "default_max_events")]
    pub max_events: u64,
    #[serde(default = "default_max_time")]
    pub max_virtual_time: Time,
    /// Stop right after the first decision event.
    #[serde(default)]
    pub first_decision: bool,
}

fn default_max_events() -> u64 {
    100_000
}

fn default_max_time() -> Time {
    1_000_000
}

impl Default for StopCondition {
    fn default() -> Self {
        Self { max_events: default_max_events(), max_virtual_time: default_max_time(), first_decision: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub name: String,
    pub protocol: Protocol,
    pub seed: u64,
    #[serde(default)]
    pub mutation: Mutation,
    pub agents: AgentCounts,
    #[serde(default)]
    pub faults: FaultModel,
    #[serde(default)]
    pub paxos: PaxosSettings,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub proposers: Vec<ProposerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub naive: Option<NaiveSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader: Option<LeaderSettings>,
    #[serde(default)]
    pub stop: StopCondition,
}

impl ScenarioConfig {
    /// A Paxos scenario with one proposer per value, all starting at time 0
    /// with eager restarts and no faults.
    pub fn paxos(name: &str, seed: u64, values: &[&str], acceptors: u32) -> Self {
        let proposers: Vec<ProposerSpec> = values
            .iter()
            .map(|v| ProposerSpec { value: Value::new(*v).expect("non-empty value"), start_at: 0, restart: RestartPolicy::Eager })
            .collect();
        Self {
            version: CONFIG_VERSION,
            name: name.to_string(),
            protocol: if proposers.len() == 1 { Protocol::PaxosDistinguished } else { Protocol::PaxosMulti },
            seed,
            mutation: Mutation::None,
            agents: AgentCounts { proposers: proposers.len() as u32, acceptors, learners: 1 },
            faults: FaultModel::default(),
            paxos: PaxosSettings::default(),
            proposers,
            naive: None,
            leader: None,
            stop: StopCondition::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    pub fn quorum(&self) -> QuorumConfig {
        QuorumConfig::majority(self.agents.acceptors.max(1)).expect("at least one acceptor")
    }

    /// All agents in scheduling order: proposers, acceptors, learners.
    pub fn agent_ids(&self) -> Vec<AgentId> {
        let a = &self.agents;
        (0..a.proposers)
            .map(AgentId::proposer)
            .chain((0..a.acceptors).map(AgentId::acceptor))
            .chain((0..a.learners).map(AgentId::learner))
            .collect()
    }

    pub fn has_agent(&self, id: AgentId) -> bool {
        let bound = match id.kind {
            AgentKind::Proposer => self.agents.proposers,
            AgentKind::Acceptor => self.agents.acceptors,
            AgentKind::Learner => self.agents.learners,
        };
        id.index < bound
    }

    pub fn crash_agent(mut self, at: Time, id: AgentId) -> Self {
        self.faults.crashes.push(Crash { agent: CrashTarget::Agent(id), at });
        self
    }

    pub fn stall_agent(mut self, id: AgentId, from: Time, until: Time) -> Self {
        self.faults.stalls.push(Stall { agent: id, from, until });
        self
    }

    pub fn is_scripted(&self) -> bool {
        self.faults.script.is_some()
    }

    /// Every problem with the scenario, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.version != CONFIG_VERSION {
            out.push(format!("version: expected {CONFIG_VERSION}, found {}", self.version));
        }
        if self.agents.acceptors == 0 {
            out.push("agents.acceptors: at least one acceptor is required".to_string());
        }
        let p = self.faults.drop_probability;
        if !(0.0..=1.0).contains(&p) {
            out.push(format!("faults.drop_probability: {p} is outside [0, 1]"));
        }
        if let Delay::Uniform { lo, hi } = self.faults.delay {
            if lo > hi {
                out.push(format!("faults.delay: uniform range [{lo}, {hi}] is empty"));
            }
        }
        if self.stop.max_events == 0 {
            out.push("stop.max_events must be positive".to_string());
        }
        if !self.protocol.is_paxos() && !self.mutation.is_faithful() {
            out.push(format!("mutation: {} only applies to Paxos protocols", self.mutation));
        }
        self.check_protocol_sections(&mut out);
        self.check_faults(&mut out);
        out
    }

    fn check_protocol_sections(&self, out: &mut Vec<String>) {
        let proposers = self.agents.proposers;
        match self.protocol {
            Protocol::PaxosMulti | Protocol::PaxosDistinguished => {
                if proposers == 0 {
                    out.push("agents.proposers: Paxos needs at least one proposer".to_string());
                }
                if self.protocol == Protocol::PaxosDistinguished && proposers != 1 {
                    out.push(format!("agents.proposers: a distinguished proposer runs alone, found {proposers}"));
                }
                if self.proposers.len() != proposers as usize {
                    out.push(format!(
                        "proposers: {} entries for agents.proposers = {proposers}",
                        self.proposers.len()
                    ));
                }
                if self.paxos.stall_timeout == 0 {
                    out.push("paxos.stall_timeout must be positive".to_string());
                }
                if self.paxos.resend_interval == Some(0) {
                    out.push("paxos.resend_interval must be positive".to_string());
                }
            }
            Protocol::Naive => {
                if proposers != 1 {
                    out.push(format!("agents.proposers: the naive protocol has exactly one proposer, found {proposers}"));
                }
                match &self.naive {
                    None => out.push("naive: section is required for the naive protocol".to_string()),
                    Some(n) => {
                        if n.values.is_empty() {
                            out.push("naive.values: at least one slot value is required".to_string());
                        }
                        if n.resend_interval == 0 {
                            out.push("naive.resend_interval must be positive".to_string());
                        }
                    }
                }
            }
            Protocol::LeaderElection => {
                if proposers != 0 {
                    out.push(format!("agents.proposers: leader election runs on acceptors only, found {proposers}"));
                }
                match &self.leader {
                    None => out.push("leader: section is required for leader election".to_string()),
                    Some(l) => out.extend(l.timing().violations()),
                }
            }
        }
        if self.protocol != Protocol::Naive && self.naive.is_some() {
            out.push("naive: section only applies to the naive protocol".to_string());
        }
        if self.protocol != Protocol::LeaderElection && self.leader.is_some() {
            out.push("leader: section only applies to leader election".to_string());
        }
    }

    fn check_faults(&self, out: &mut Vec<String>) {
        for (i, c) in self.faults.crashes.iter().enumerate() {
            match c.agent {
                CrashTarget::Agent(id) if !self.has_agent(id) => {
                    out.push(format!("faults.crashes[{i}]: no agent {id}"));
                }
                CrashTarget::Leader if self.protocol != Protocol::LeaderElection => {
                    out.push(format!("faults.crashes[{i}]: \"leader\" only applies to leader election"));
                }
                _ => {}
            }
        }
        for (i, s) in self.faults.stalls.iter().enumerate() {
            if !self.has_agent(s.agent) {
                out.push(format!("faults.stalls[{i}]: no agent {}", s.agent));
            }
            if s.from >= s.until {
                out.push(format!("faults.stalls[{i}]: from ({}) must precede until ({})", s.from, s.until));
            }
        }
        if let Some(script) = &self.faults.script {
            if !self.protocol.is_paxos() {
                out.push("faults.script: scripted runs are only supported for Paxos".to_string());
            }
            for (i, step) in script.iter().enumerate() {
                let agents: Vec<AgentId> = match step {
                    ScriptStep::Deliver { src, dst, .. } | ScriptStep::Drop { src, dst, .. } => vec![*src, *dst],
                    ScriptStep::Restart { proposer } => vec![*proposer],
                };
                for id in agents.into_iter().filter(|id| !self.has_agent(*id)) {
                    out.push(format!("faults.script[{i}]: no agent {id}"));
                }
                if let ScriptStep::Restart { proposer } = step {
                    if !proposer.is_proposer() {
                        out.push(format!("faults.script[{i}]: {proposer} is not a proposer"));
                    }
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DUEL: &str = r#"
version = 1
name = "duel"
protocol = "paxos_multi"
seed = 7

[agents]
proposers = 2
acceptors = 3

[faults]
delay = { fixed = 10 }
crashes = [{ agent = "a2", at = 500 }]

[[proposers]]
value = "vA"

[[proposers]]
value = "vB"
start_at = 15
restart = { timed = { wait = 40 } }
"#;

    #[test]
    fn parses_documented_shape() {
        let c = ScenarioConfig::from_toml_str(DUEL).unwrap();
        assert_eq!(c.agents.learners, 1);
        assert_eq!(c.faults.delay, Delay::Fixed(10));
        assert_eq!(c.proposers[1].restart, RestartPolicy::Timed { wait: 40 });
        assert_eq!(c.paxos.stall_timeout, 10);
        assert_eq!(c.quorum().quorum_size(), 2);
        assert_eq!(c.faults.crashes[0].agent, CrashTarget::Agent(AgentId::acceptor(2)));
    }

    #[test]
    fn toml_round_trip() {
        let c = ScenarioConfig::from_toml_str(DUEL).unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&c.to_toml()).unwrap(), c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ScenarioConfig>(&json).unwrap(), c);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = DUEL.replace("seed = 7", "seed = 7\nsed = 8");
        let err = ScenarioConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("sed"), "{err}");
    }

    #[test]
    fn all_violations_are_listed() {
        let text = DUEL
            .replace("version = 1", "version = 2")
            .replace("proposers = 2", "proposers = 3")
            .replace("\"a2\"", "\"a9\"");
        let Err(ConfigError::Invalid(v)) = ScenarioConfig::from_toml_str(&text) else { panic!() };
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(v.iter().any(|m| m.starts_with("version")));
        assert!(v.iter().any(|m| m.contains("no agent a9")));
    }

    #[test]
    fn protocol_specific_rules() {
        let mut c = ScenarioConfig::paxos("x", 0, &["vA", "vB"], 3);
        c.protocol = Protocol::PaxosDistinguished;
        assert_eq!(c.violations().len(), 1);

        c.protocol = Protocol::LeaderElection;
        let v = c.violations();
        assert!(v.iter().any(|m| m.contains("leader: section is required")));
        assert!(v.iter().any(|m| m.contains("acceptors only")));

        let mut c = ScenarioConfig::paxos("x", 0, &["vA"], 3);
        c.faults.drop_probability = 1.5;
        c.faults.stalls.push(Stall { agent: AgentId::acceptor(0), from: 5, until: 5 });
        c.faults.crashes.push(Crash { agent: CrashTarget::Leader, at: 1 });
        assert_eq!(c.violations().len(), 3);
    }

    #[test]
    fn crash_target_text() {
        assert_eq!("leader".parse::<CrashTarget>().unwrap(), CrashTarget::Leader);
        assert_eq!("a3".parse::<CrashTarget>().unwrap(), CrashTarget::Agent(AgentId::acceptor(3)));
        assert!("boss".parse::<CrashTarget>().is_err());
    }

    #[test]
    fn builders_append_faults() {
        let c = ScenarioConfig::paxos("x", 0, &["vA"], 3)
            .crash_agent(50, AgentId::acceptor(1))
            .stall_agent(AgentId::acceptor(2), 10, 20);
        assert_eq!(c.faults.crashes.len(), 1);
        assert_eq!(c.faults.stalls[0].until, 20);
        assert!(c.validate().is_ok());
    }
}
