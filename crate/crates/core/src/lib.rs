//! Seeded, replayable social-platform simulation.
//!
//! User agents (scripted or backed by a chat-completion endpoint) act on a
//! dynamic follow graph. The platform shapes what they see through a
//! three-channel recommender and per-author exposure control, and a neural
//! contextual bandit learns intervention actions from in-simulation rewards.
//! Every state transition is written to an append-only event log so a run can
//! be replayed without touching any backend.

pub mod agent;
pub mod bandit;
pub mod dataprep;
pub mod embed;
pub mod error;
pub mod graph;
pub mod http;
pub mod intervention;
pub mod memory;
pub mod seed;
pub mod sim;
pub mod stance;
pub mod toxicity;

pub use error::{Error, Result};

/// Index of a user in the fixed, sorted node ordering of a run.
pub type NodeIdx = usize;

/// Monotone post identifier, assigned in creation order.
pub type PostId = u64;
