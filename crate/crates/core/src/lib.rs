//! A laboratory for single-decree consensus protocols: the two-phase
//! protocol with its acceptor and proposer state machines, a naive
//! resend-until-quorum protocol, heartbeat and lease leader election, a
//! deterministic network simulator, and checkers that read its traces.

pub mod acceptor;
pub mod bundled;
pub mod checker;
pub mod leader;
pub mod mutation;
pub mod naive;
pub mod proposer;
pub mod replay;
pub mod scenario;
pub mod simnet;
pub mod sweep;
pub mod trace;
pub mod types;
