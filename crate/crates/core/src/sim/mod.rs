//! Deterministic discrete-event simulation of the two-tier network.
//!
//! Time is integer microseconds; events are ordered by time, then node id,
//! then insertion order. Traffic and MAC randomness come from separate
//! ChaCha8 streams of the scenario seed, so a fixed `(config, seed)` gives
//! byte-identical reports.

pub mod aloha;
pub mod channel;
pub mod config;
pub mod engine;
pub mod metrics;
pub mod rounds;
pub mod traffic;

use thiserror::Error;

pub use config::{ConfigError, ScenarioConfig};
pub use engine::{run_scenario, Simulation};
pub use metrics::{Fate, LatencyBucket, MessageClass, MessageRecord, MetricsReport};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}
