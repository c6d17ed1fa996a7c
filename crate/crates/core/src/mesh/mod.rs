//! BLE tier: neighbor discovery from beacons, a two-hop cache and
//! AODV-style on-demand routing with expanding-ring search.
//!
//! [`MeshState`] is a pure state machine. Every entry point takes the
//! current time and returns [`MeshAction`]s; the host owns radios, timers
//! and randomness.

mod neighbors;
mod routing;

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::protocol::{BleFrame, DataFragment, NodeId, Reassembler};
use crate::time::SimTime;

pub use neighbors::{NeighborEntry, NeighborStatus, TwoHopEntry};
pub use routing::{FragmentKind, PendingDiscovery, RouteDecision, RouteEntry};

/// Maps RSSI in dBm to an 8-bit link quality: `clamp(4·(rssi + 110), 0, 255)`.
pub fn link_quality(rssi_dbm: i32) -> u8 {
    (4 * (rssi_dbm + 110)).clamp(0, 255) as u8
}

/// Per-hop routing cost.
pub fn hop_cost(lq: u8) -> u16 {
    256 - u16::from(lq)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MeshError {
    #[error("path has no links")]
    EmptyPath,
    #[error("destination {0} is not a unicast address")]
    BadDestination(NodeId),
    #[error(transparent)]
    Protocol(#[from] crate::protocol::ProtocolError),
}

/// Sum of per-hop costs along a path given as per-link qualities.
pub fn path_cost(lqs: &[u8]) -> Result<u16, MeshError> {
    if lqs.is_empty() {
        return Err(MeshError::EmptyPath);
    }
    Ok(lqs.iter().fold(0u16, |acc, &lq| acc.saturating_add(hop_cost(lq))))
}

/// True when sequence number `a` is fresher than `b`. Comparison is
/// half-range so it survives wraparound; `0` means unknown and is older
/// than any known value.
pub fn seq_newer(a: u16, b: u16) -> bool {
    if a == b {
        false
    } else if b == 0 {
        true
    } else if a == 0 {
        false
    } else {
        (a.wrapping_sub(b) as i16) > 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeshConfig {
    pub beacon_interval: SimTime,
    pub ring_ttls: [u8; 3],
    pub ring_timeouts: [SimTime; 3],
    pub route_lifetime: SimTime,
    pub reverse_route_lifetime: SimTime,
    pub data_ttl: u8,
    /// Fragments parked per outstanding discovery.
    pub discovery_queue_fragments: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            beacon_interval: SimTime::from_secs(3),
            ring_ttls: [3, 6, 12],
            ring_timeouts: [SimTime::from_secs(1), SimTime::from_secs(2), SimTime::from_secs(4)],
            route_lifetime: SimTime::from_secs(120),
            reverse_route_lifetime: SimTime::from_secs(10),
            data_ttl: 16,
            discovery_queue_fragments: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkTarget {
    Broadcast,
    Unicast(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropReason {
    /// Hop budget exhausted.
    Ttl,
    /// Every discovery ring failed and no escalation was possible.
    NoRoute,
    /// Discovery queue overflow.
    QueueFull,
    /// A partially reassembled message was evicted or timed out.
    Reassembly,
}

/// When the host should put a frame on the air.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendTiming {
    Now,
    /// After a random relay delay.
    Jitter,
    /// After the relays of the discovery flood that found the route have
    /// had time to finish.
    AfterFlood,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MeshAction {
    Send {
        target: LinkTarget,
        frame: BleFrame,
        timing: SendTiming,
    },
    Deliver {
        src: NodeId,
        msg_seq: u16,
        payload: Vec<u8>,
    },
    /// Hand fragments to the local backbone (cluster heads only).
    Escalate(Vec<DataFragment>),
    Drop {
        reason: DropReason,
        src: NodeId,
        msg_seq: u16,
    },
}

/// Role information the mesh needs from the cluster layer.
#[derive(Clone, Copy)]
pub struct MeshContext<'a> {
    pub is_ch: bool,
    pub cluster_head: NodeId,
    /// True when the membership directory places the node in another cluster.
    pub remote_member: &'a dyn Fn(NodeId) -> bool,
}

impl std::fmt::Debug for MeshContext<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MeshContext")
            .field("is_ch", &self.is_ch)
            .field("cluster_head", &self.cluster_head)
            .finish_non_exhaustive()
    }
}

fn never(_: NodeId) -> bool {
    false
}

impl MeshContext<'static> {
    /// A member of the cluster headed by `ch`.
    pub fn member(ch: NodeId) -> Self {
        Self { is_ch: false, cluster_head: ch, remote_member: &never }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MeshCounters {
    pub rreq_originated: u64,
    pub rreq_forwarded: u64,
    pub rrep_sent: u64,
    pub rrep_proxied: u64,
    pub rrep_no_reverse_route: u64,
    pub data_forwarded: u64,
    pub data_duplicates: u64,
    pub escalated: u64,
}

#[derive(Debug, Clone)]
pub struct MeshState {
    id: NodeId,
    cfg: MeshConfig,
    own_seq: u16,
    next_rreq_id: u8,
    beacon_rotation: usize,
    neighbors: BTreeMap<NodeId, NeighborEntry>,
    two_hop: Vec<TwoHopEntry>,
    routes: BTreeMap<NodeId, RouteEntry>,
    pending: Vec<PendingDiscovery>,
    rreq_seen: VecDeque<(NodeId, u8, u16)>,
    data_seen: VecDeque<(NodeId, u16, u8, bool)>,
    reassembler: Reassembler,
    next_msg_seq: u16,
    pub counters: MeshCounters,
}

impl MeshState {
    pub fn new(id: NodeId, cfg: MeshConfig) -> Self {
        Self {
            id,
            cfg,
            own_seq: 0,
            next_rreq_id: 0,
            beacon_rotation: 0,
            neighbors: BTreeMap::new(),
            two_hop: Vec::new(),
            routes: BTreeMap::new(),
            pending: Vec::new(),
            rreq_seen: VecDeque::new(),
            data_seen: VecDeque::new(),
            reassembler: Reassembler::new(),
            next_msg_seq: 0,
            counters: MeshCounters::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn config(&self) -> &MeshConfig {
        &self.cfg
    }

    pub fn own_seq(&self) -> u16 {
        self.own_seq
    }

    pub fn neighbor_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn duplicate_entries(&self) -> usize {
        self.rreq_seen.len() + self.data_seen.len()
    }

    pub fn reassembly_buffers(&self) -> usize {
        self.reassembler.len()
    }

    /// Earliest time at which [`MeshState::on_tick`] has work to do.
    pub fn next_deadline(&self) -> Option<SimTime> {
        self.pending.iter().map(|p| p.deadline).chain(self.reassembler.next_deadline()).min()
    }
}
