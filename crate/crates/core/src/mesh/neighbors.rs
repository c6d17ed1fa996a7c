use crate::protocol::budget::{NEIGHBOR_TABLE, TWO_HOP_CACHE};
use crate::protocol::{Beacon, BeaconFlags, BeaconNeighbor, NodeId, MAX_BEACON_NEIGHBORS};
use crate::time::SimTime;

use super::{link_quality, MeshState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborStatus {
    Present,
    Stale,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborEntry {
    pub id: NodeId,
    pub lq: u8,
    pub last_seen: SimTime,
    pub advertised_key: u16,
    pub flags: BeaconFlags,
    pub battery_pct: u8,
    pub cluster: NodeId,
    pub their_neighbors: Vec<NodeId>,
    /// Set once this neighbor's beacon has listed us; cleared only when the
    /// entry is removed.
    pub mutual: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwoHopEntry {
    pub via: NodeId,
    pub target: NodeId,
    /// Link quality of via→target as advertised by `via`.
    pub lq: u8,
    pub last_seen: SimTime,
}

impl MeshState {
    pub fn presence_window(&self) -> SimTime {
        SimTime::from_micros(2 * self.cfg.beacon_interval.as_micros())
    }

    pub fn removal_age(&self) -> SimTime {
        SimTime::from_micros(4 * self.cfg.beacon_interval.as_micros())
    }

    pub fn neighbor_status(&self, entry: &NeighborEntry, now: SimTime) -> NeighborStatus {
        if now - entry.last_seen < self.presence_window() {
            NeighborStatus::Present
        } else {
            NeighborStatus::Stale
        }
    }

    pub fn neighbor(&self, id: NodeId) -> Option<&NeighborEntry> {
        self.neighbors.get(&id)
    }

    pub fn neighbors(&self) -> impl Iterator<Item = &NeighborEntry> {
        self.neighbors.values()
    }

    pub fn two_hop(&self) -> &[TwoHopEntry] {
        &self.two_hop
    }

    pub fn is_present(&self, id: NodeId, now: SimTime) -> bool {
        self.neighbors.get(&id).is_some_and(|e| self.neighbor_status(e, now) == NeighborStatus::Present)
    }

    /// PRESENT neighbors whose own beacons have listed this node.
    pub fn mutual_present(&self, now: SimTime) -> impl Iterator<Item = &NeighborEntry> {
        self.neighbors.values().filter(move |e| e.mutual && self.neighbor_status(e, now) == NeighborStatus::Present)
    }

    /// Records a received beacon: refreshes the sender's entry with the
    /// RSSI-derived link quality and learns the sender's advertised
    /// neighbors as two-hop destinations.
    pub fn process_beacon(&mut self, beacon: &Beacon, rssi_dbm: i32, now: SimTime) {
        let sender = beacon.node;
        if sender == self.id || !sender.is_unicast() {
            return;
        }
        let lq = link_quality(rssi_dbm);
        let lists_us = beacon.neighbors.iter().any(|n| n.id == self.id);
        if !self.neighbors.contains_key(&sender) && self.neighbors.len() >= NEIGHBOR_TABLE.capacity {
            self.evict_neighbor(now);
        }
        let entry = self.neighbors.entry(sender).or_insert_with(|| NeighborEntry {
            id: sender,
            lq,
            last_seen: now,
            advertised_key: beacon.advertised_key,
            flags: beacon.flags,
            battery_pct: beacon.battery_pct,
            cluster: beacon.cluster,
            their_neighbors: Vec::new(),
            mutual: false,
        });
        entry.lq = lq;
        entry.last_seen = now;
        entry.advertised_key = beacon.advertised_key;
        entry.flags = beacon.flags;
        entry.battery_pct = beacon.battery_pct;
        entry.cluster = beacon.cluster;
        entry.their_neighbors = beacon.neighbors.iter().map(|n| n.id).collect();
        entry.mutual |= lists_us;

        for n in &beacon.neighbors {
            if n.id == self.id || n.id == sender || !n.id.is_unicast() {
                continue;
            }
            if let Some(e) = self.two_hop.iter_mut().find(|e| e.via == sender && e.target == n.id) {
                e.lq = n.lq;
                e.last_seen = now;
                continue;
            }
            if self.two_hop.len() >= TWO_HOP_CACHE.capacity {
                let oldest = self
                    .two_hop
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, e)| (e.last_seen, e.via, e.target))
                    .map(|(i, _)| i)
                    .expect("non-empty");
                self.two_hop.swap_remove(oldest);
            }
            self.two_hop.push(TwoHopEntry { via: sender, target: n.id, lq: n.lq, last_seen: now });
        }
    }

    /// Drops the lowest-LQ STALE entry, or failing that the lowest-LQ
    /// PRESENT one.
    fn evict_neighbor(&mut self, now: SimTime) {
        let victim = self
            .neighbors
            .values()
            .min_by_key(|e| {
                let present = self.neighbor_status(e, now) == NeighborStatus::Present;
                (present, e.lq, e.id)
            })
            .map(|e| e.id);
        if let Some(id) = victim {
            self.remove_neighbor(id);
        }
    }

    fn remove_neighbor(&mut self, id: NodeId) {
        self.neighbors.remove(&id);
        self.two_hop.retain(|e| e.via != id);
        for r in self.routes.values_mut() {
            if r.next_hop == id {
                r.valid = false;
            }
        }
    }

    /// Ages the neighbor table: entries unseen for four beacon intervals are
    /// removed together with routes through them. Two-hop entries age out on
    /// the same schedule.
    pub fn expire_neighbors(&mut self, now: SimTime) {
        let removal = self.removal_age();
        let gone: Vec<NodeId> =
            self.neighbors.values().filter(|e| now - e.last_seen >= removal).map(|e| e.id).collect();
        for id in gone {
            self.remove_neighbor(id);
        }
        self.two_hop.retain(|e| now - e.last_seen < removal);
        for r in self.routes.values_mut() {
            if r.valid && r.expires <= now {
                r.valid = false;
            }
        }
    }

    /// Beacon neighbor list: up to four PRESENT neighbors, rotating through
    /// the table so every neighbor is advertised within a few intervals.
    pub fn beacon_neighbors(&mut self, now: SimTime) -> Vec<BeaconNeighbor> {
        let present: Vec<BeaconNeighbor> = self
            .neighbors
            .values()
            .filter(|e| self.neighbor_status(e, now) == NeighborStatus::Present)
            .map(|e| BeaconNeighbor { id: e.id, lq: e.lq })
            .collect();
        if present.len() <= MAX_BEACON_NEIGHBORS {
            return present;
        }
        let start = self.beacon_rotation % present.len();
        self.beacon_rotation = self.beacon_rotation.wrapping_add(MAX_BEACON_NEIGHBORS);
        (0..MAX_BEACON_NEIGHBORS).map(|i| present[(start + i) % present.len()].clone()).collect()
    }
}
