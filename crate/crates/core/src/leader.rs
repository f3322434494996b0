//! Heartbeat and lease based leader election.
//!
//! Every agent is both a potential candidate and a lease grantor. A leader
//! broadcasts heartbeats; grantors that hold its lease answer each heartbeat
//! with a renewed grant. A follower that hears nothing for longer than its
//! timeout waits a random backoff and then claims the next epoch. A grantor
//! grants at most one unexpired lease at a time, and only for an epoch newer
//! than any it has seen, so two agents can never hold unexpired quorums at
//! the same instant.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::types::{AgentId, Message, QuorumConfig, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Follower,
    Candidate,
    Leader,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Follower => "follower",
            Role::Candidate => "candidate",
            Role::Leader => "leader",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderTiming {
    pub heartbeat_interval: Time,
    pub follower_timeout: Time,
    pub backoff_min: Time,
    pub backoff_max: Time,
    pub lease_duration: Time,
    /// How long a candidate waits for a quorum of grants before retrying.
    pub candidate_timeout: Time,
    /// A candidate rebroadcasts its claim this often until it wins or
    /// gives up.
    pub claim_resend: Time,
    /// A grantor collects concurrent claims this long, then grants to the
    /// highest (epoch, id) among them. Zero grants at once.
    pub grant_window: Time,
}

impl LeaderTiming {
    /// Timing derived from a heartbeat interval: a lease of three intervals
    /// survives two lost heartbeats.
    pub fn from_heartbeat(heartbeat_interval: Time) -> Self {
        Self {
            heartbeat_interval,
            follower_timeout: 4 * heartbeat_interval,
            backoff_min: heartbeat_interval / 2,
            backoff_max: 2 * heartbeat_interval,
            lease_duration: 3 * heartbeat_interval,
            candidate_timeout: 2 * heartbeat_interval,
            claim_resend: (heartbeat_interval / 2).max(1),
            grant_window: heartbeat_interval / 4,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.heartbeat_interval == 0 {
            out.push("leader.heartbeat_interval must be positive".to_string());
        }
        if self.follower_timeout <= self.heartbeat_interval {
            out.push(format!(
                "leader.follower_timeout ({}) must exceed leader.heartbeat_interval ({})",
                self.follower_timeout, self.heartbeat_interval
            ));
        }
        if self.backoff_min > self.backoff_max {
            out.push(format!("leader.backoff range [{}, {}] is empty", self.backoff_min, self.backoff_max));
        }
        if self.lease_duration == 0 {
            out.push("leader.lease_duration must be positive".to_string());
        }
        if self.candidate_timeout == 0 {
            out.push("leader.candidate_timeout must be positive".to_string());
        }
        if self.claim_resend == 0 {
            out.push("leader.claim_resend must be positive".to_string());
        }
        out
    }
}

/// A lease this agent has granted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    pub candidate: AgentId,
    pub epoch: u64,
    pub expires_at: Time,
}

/// Destination of an outgoing leader-election message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outgoing {
    /// Every other agent.
    Peers(Message),
    To(AgentId, Message),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeaderState {
    pub id: AgentId,
    pub role: Role,
    pub epoch: u64,
    pub last_heartbeat_seen: Time,
    pub timing: LeaderTiming,
    pub quorum: QuorumConfig,
    /// When a scheduled candidacy fires.
    pub candidacy_at: Option<Time>,
    /// When a candidate stops waiting for grants.
    pub claim_deadline: Option<Time>,
    pub next_claim_at: Option<Time>,
    pub next_heartbeat_at: Option<Time>,
    /// Grants received for the current epoch, by grantor.
    pub lease_grants: BTreeMap<AgentId, Time>,
    pub lease_expires_at: Option<Time>,
    /// The most recent lease this agent granted.
    pub granted: Option<Grant>,
    /// Best claim seen during an open grant window, decided at `expires_at`.
    pub pending: Option<Grant>,
}

impl LeaderState {
    pub fn new(id: AgentId, timing: LeaderTiming, quorum: QuorumConfig) -> Self {
        Self {
            id,
            role: Role::Follower,
            epoch: 0,
            last_heartbeat_seen: 0,
            timing,
            quorum,
            candidacy_at: None,
            claim_deadline: None,
            next_claim_at: None,
            next_heartbeat_at: None,
            lease_grants: BTreeMap::new(),
            lease_expires_at: None,
            granted: None,
            pending: None,
        }
    }

    /// Leader with an unexpired quorum of grants.
    pub fn holds_lease(&self, now: Time) -> bool {
        self.role == Role::Leader && self.lease_expires_at.is_some_and(|t| now < t)
    }

    fn may_grant_to(&self, candidate: AgentId, now: Time) -> bool {
        self.granted.is_none_or(|g| g.candidate == candidate || g.expires_at <= now)
    }

    fn backoff(&self, rng: &mut impl Rng) -> Time {
        rng.random_range(self.timing.backoff_min..=self.timing.backoff_max)
    }

    fn become_follower(&mut self, now: Time) {
        self.role = Role::Follower;
        self.last_heartbeat_seen = now;
        self.candidacy_at = None;
        self.claim_deadline = None;
        self.next_claim_at = None;
        self.next_heartbeat_at = None;
        self.pending = None;
        self.lease_grants.clear();
        self.lease_expires_at = None;
    }

    /// Recomputes the lease end: the time until which a quorum of grants
    /// remains unexpired.
    fn refresh_lease(&mut self, now: Time) {
        let mut expiries: Vec<Time> = self.lease_grants.values().copied().filter(|&t| t > now).collect();
        expiries.sort_unstable_by(|a, b| b.cmp(a));
        let q = self.quorum.quorum_size() as usize;
        self.lease_expires_at = expiries.get(q - 1).copied();
    }

    fn self_grant(&mut self, now: Time) {
        let expires_at = now + self.timing.lease_duration;
        self.granted = Some(Grant { candidate: self.id, epoch: self.epoch, expires_at });
        self.lease_grants.insert(self.id, expires_at);
        self.refresh_lease(now);
    }

    fn heartbeat(&mut self, now: Time) -> Outgoing {
        if self.may_grant_to(self.id, now) {
            self.self_grant(now);
        }
        self.next_heartbeat_at = Some(now + self.timing.heartbeat_interval);
        Outgoing::Peers(Message::Heartbeat { leader: self.id, epoch: self.epoch })
    }

    fn try_win(&mut self, now: Time) -> Vec<Outgoing> {
        if self.role == Role::Candidate && self.lease_expires_at.is_some_and(|t| now < t) {
            self.role = Role::Leader;
            self.claim_deadline = None;
            self.next_claim_at = None;
            vec![self.heartbeat(now)]
        } else {
            Vec::new()
        }
    }

    pub fn leader_tick(&mut self, now: Time, rng: &mut impl Rng) -> Vec<Outgoing> {
        match self.role {
            Role::Leader => {
                self.refresh_lease(now);
                if !self.holds_lease(now) {
                    self.become_follower(now);
                    return Vec::new();
                }
                match self.next_heartbeat_at {
                    Some(t) if now < t => Vec::new(),
                    _ => vec![self.heartbeat(now)],
                }
            }
            Role::Candidate => {
                if self.claim_deadline.is_some_and(|t| now >= t) {
                    self.become_follower(now);
                    self.candidacy_at = Some(now + self.backoff(rng));
                    return Vec::new();
                }
                match self.next_claim_at {
                    Some(t) if now >= t => {
                        self.next_claim_at = Some(now + self.timing.claim_resend);
                        vec![Outgoing::Peers(Message::LeaderClaim { candidate: self.id, epoch: self.epoch })]
                    }
                    _ => Vec::new(),
                }
            }
            Role::Follower if self.pending.is_some_and(|p| now >= p.expires_at) => {
                let p = self.pending.take().expect("checked");
                self.grant(p.candidate, p.epoch, now).map(|m| Outgoing::To(p.candidate, m)).into_iter().collect()
            }
            Role::Follower => match self.candidacy_at {
                Some(t) if now >= t => self.claim(now),
                Some(_) => Vec::new(),
                None => {
                    if now.saturating_sub(self.last_heartbeat_seen) > self.timing.follower_timeout {
                        self.candidacy_at = Some(now + self.backoff(rng));
                    }
                    Vec::new()
                }
            },
        }
    }

    fn claim(&mut self, now: Time) -> Vec<Outgoing> {
        self.candidacy_at = None;
        self.pending = None;
        self.epoch += 1;
        self.role = Role::Candidate;
        self.lease_grants.clear();
        self.lease_expires_at = None;
        self.claim_deadline = Some(now + self.timing.candidate_timeout);
        self.next_claim_at = Some(now + self.timing.claim_resend);
        if self.may_grant_to(self.id, now) {
            self.self_grant(now);
        }
        let mut out = vec![Outgoing::Peers(Message::LeaderClaim { candidate: self.id, epoch: self.epoch })];
        out.extend(self.try_win(now));
        out
    }

    /// Earliest time [`leader_tick`](Self::leader_tick) has something to do.
    pub fn next_wakeup(&self) -> Time {
        match self.role {
            Role::Leader => {
                let hb = self.next_heartbeat_at.unwrap_or(0);
                self.lease_expires_at.map_or(hb, |t| t.min(hb))
            }
            Role::Candidate => {
                let deadline = self.claim_deadline.unwrap_or(0);
                self.next_claim_at.map_or(deadline, |t| t.min(deadline))
            }
            Role::Follower => {
                let idle = self.candidacy_at.unwrap_or(self.last_heartbeat_seen + self.timing.follower_timeout + 1);
                self.pending.map_or(idle, |p| p.expires_at.min(idle))
            }
        }
    }

    /// A repeated claim from the candidate already holding this agent's grant
    /// for that epoch is answered again, so lost grants can be recovered.
    /// A candidate yields to a rival claim with a higher (epoch, id), which
    /// breaks split votes between candidates that started together.
    pub fn on_leader_claim(&mut self, candidate: AgentId, epoch: u64, now: Time) -> Option<Message> {
        if let Some(g) = &mut self.granted {
            if g.candidate == candidate && g.epoch == epoch && candidate != self.id {
                g.expires_at = now + self.timing.lease_duration;
                return Some(Message::LeaseGrant { candidate, epoch, expires_at: g.expires_at });
            }
        }
        if self.role == Role::Candidate && (epoch, candidate) > (self.epoch, self.id) {
            // Never led under its own grant, so it can hand that grant over.
            if self.granted.is_some_and(|g| g.candidate == self.id) {
                self.granted = None;
            }
            self.become_follower(now);
        }
        if !self.may_grant(candidate, epoch, now) {
            return None;
        }
        if self.timing.grant_window == 0 {
            return self.grant(candidate, epoch, now);
        }
        let closes = self.pending.map_or(now + self.timing.grant_window, |p| p.expires_at);
        if self.pending.is_none_or(|p| (epoch, candidate) > (p.epoch, p.candidate)) {
            self.pending = Some(Grant { candidate, epoch, expires_at: closes });
        }
        self.last_heartbeat_seen = now;
        self.candidacy_at = None;
        None
    }

    /// Newer than anything this agent has granted in, and no live grant to
    /// someone else.
    fn may_grant(&self, candidate: AgentId, epoch: u64, now: Time) -> bool {
        let fresh = epoch > self.epoch || (epoch == self.epoch && self.granted.is_none_or(|g| g.epoch < epoch));
        fresh && self.may_grant_to(candidate, now)
    }

    fn grant(&mut self, candidate: AgentId, epoch: u64, now: Time) -> Option<Message> {
        if !self.may_grant(candidate, epoch, now) {
            return None;
        }
        self.epoch = epoch;
        if self.role != Role::Follower {
            self.become_follower(now);
        }
        self.last_heartbeat_seen = now;
        self.candidacy_at = None;
        let expires_at = now + self.timing.lease_duration;
        self.granted = Some(Grant { candidate, epoch, expires_at });
        Some(Message::LeaseGrant { candidate, epoch, expires_at })
    }

    /// Returns a lease renewal when the heartbeat comes from the agent this
    /// one currently grants to.
    pub fn on_heartbeat(&mut self, leader: AgentId, epoch: u64, now: Time) -> Option<Message> {
        if epoch < self.epoch || leader == self.id {
            return None;
        }
        self.epoch = epoch;
        if self.role != Role::Follower {
            self.become_follower(now);
        }
        self.last_heartbeat_seen = now;
        self.candidacy_at = None;
        match &mut self.granted {
            Some(g) if g.candidate == leader && g.epoch == epoch => {
                g.expires_at = now + self.timing.lease_duration;
                Some(Message::LeaseGrant { candidate: leader, epoch, expires_at: g.expires_at })
            }
            _ => None,
        }
    }

    pub fn on_lease_grant(
        &mut self,
        from: AgentId,
        candidate: AgentId,
        epoch: u64,
        expires_at: Time,
        now: Time,
    ) -> Vec<Outgoing> {
        if candidate != self.id || epoch != self.epoch || self.role == Role::Follower {
            return Vec::new();
        }
        self.lease_grants.insert(from, expires_at);
        self.refresh_lease(now);
        self.try_win(now)
    }

    pub fn handle(&mut self, from: AgentId, msg: &Message, now: Time) -> Vec<Outgoing> {
        match msg {
            Message::LeaderClaim { candidate, epoch } => self
                .on_leader_claim(*candidate, *epoch, now)
                .map(|m| Outgoing::To(*candidate, m))
                .into_iter()
                .collect(),
            Message::Heartbeat { leader, epoch } => self
                .on_heartbeat(*leader, *epoch, now)
                .map(|m| Outgoing::To(*leader, m))
                .into_iter()
                .collect(),
            Message::LeaseGrant { candidate, epoch, expires_at } => {
                self.on_lease_grant(from, *candidate, *epoch, *expires_at, now)
            }
            _ => Vec::new(),
        }
    }
}
