//! Dual-radio BLE/LoRa hierarchical mesh.
//!
//! * [`analytics`]: closed-form traffic, energy, capacity and lifetime models.
//! * [`protocol`]: bit-exact frame codecs, fragmentation and the RAM budget.
//! * [`mesh`]: BLE tier: beacons, neighbor tables, AODV-style routing.
//! * [`cluster`]: implicit cluster-head election from beacon state.
//! * [`backbone`]: LoRa tier at cluster heads: aggregation, listen windows,
//!   flooding and the membership directory.
//! * [`node`]: one node's complete protocol state.
//! * [`sim`]: deterministic discrete-event simulator and metrics.
//! * [`report`] and [`validate`]: table reproduction and theory-vs-simulation
//!   checks used by the CLI.

pub mod analytics;
pub mod backbone;
pub mod cluster;
pub mod mesh;
pub mod node;
pub mod protocol;
pub mod report;
pub mod sim;
pub mod time;
pub mod validate;

pub use protocol::NodeId;
pub use time::SimTime;
