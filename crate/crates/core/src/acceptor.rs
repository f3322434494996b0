//! Acceptor state machine.
//!
//! An acceptor acknowledges a pre-proposal or a full proposal only if it has
//! not already acknowledged a strictly greater number in either phase. Every
//! pre-ack carries the highest-numbered full proposal the acceptor has
//! acknowledged so far. Anything else is ignored silently.

use crate::mutation::Mutation;
use crate::types::{AgentId, Message, Proposal, ProposalNumber};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AcceptorState {
    pub id: AgentId,
    /// Highest number acknowledged in either phase.
    pub max_acked: Option<ProposalNumber>,
    /// Highest-numbered full proposal acknowledged.
    pub max_accepted: Option<Proposal>,
    mutation: Mutation,
}

impl AcceptorState {
    pub fn new(id: AgentId) -> Self {
        Self::with_mutation(id, Mutation::None)
    }

    pub fn with_mutation(id: AgentId, mutation: Mutation) -> Self {
        Self { id, max_acked: None, max_accepted: None, mutation }
    }

    fn may_acknowledge(&self, number: ProposalNumber) -> bool {
        self.mutation == Mutation::DropOrdering || self.max_acked.is_none_or(|max| max <= number)
    }

    fn raise_max_acked(&mut self, number: ProposalNumber) {
        self.max_acked = Some(self.max_acked.map_or(number, |max| max.max(number)));
    }

    pub fn on_pre_proposal(&mut self, number: ProposalNumber) -> Option<Message> {
        if !self.may_acknowledge(number) {
            return None;
        }
        self.raise_max_acked(number);
        // A proposal accepted under this very number was already fixed by
        // its proposer, so only strictly older proposals are attached.
        let attached = match self.mutation {
            Mutation::DropAttachment => None,
            _ => self.max_accepted.clone().filter(|p| p.number < number),
        };
        Some(Message::PreAck { number, attached })
    }

    pub fn on_full_proposal(&mut self, proposal: Proposal) -> Option<Message> {
        let number = proposal.number;
        if !self.may_acknowledge(number) {
            return None;
        }
        self.raise_max_acked(number);
        if self.max_accepted.as_ref().is_none_or(|p| p.number <= number) {
            self.max_accepted = Some(proposal);
        }
        Some(Message::FullAck { number })
    }

    /// Dispatches an incoming message; non-acceptor messages are ignored.
    pub fn handle(&mut self, msg: &Message) -> Option<Message> {
        match msg {
            Message::PreProposal { number } => self.on_pre_proposal(*number),
            Message::FullProposal { proposal } => self.on_full_proposal(proposal.clone()),
            _ => None,
        }
    }
}
