//! Implicit cluster-head election. Every node ranks itself against its
//! mutual PRESENT neighbors using `(advertised_key, node_id)`; no election
//! messages are exchanged.

use serde::{Deserialize, Serialize};

use crate::protocol::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Member,
    ClusterHead,
}

/// Ordering key for election: higher wins.
pub type Rank = (u16, NodeId);

pub fn rank(key: u16, id: NodeId) -> Rank {
    (key, id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElectionConfig {
    /// A cluster head below this battery percentage demotes itself.
    pub demotion_threshold_pct: u8,
    /// Extra headroom required before a demoted node restores its key.
    pub hysteresis_pct: u8,
}

impl Default for ElectionConfig {
    fn default() -> Self {
        Self { demotion_threshold_pct: 20, hysteresis_pct: 10 }
    }
}

/// What a node knows about one mutual PRESENT neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub id: NodeId,
    pub key: u16,
    pub claims_ch: bool,
    pub cluster: NodeId,
}

impl Candidate {
    pub fn rank(&self) -> Rank {
        rank(self.key, self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElectionState {
    id: NodeId,
    cfg: ElectionConfig,
    key: u16,
    role: Role,
    cluster: NodeId,
    battery_pct: u8,
    demoted: bool,
}

impl ElectionState {
    /// A fresh node is an unassigned member until its first evaluation.
    pub fn new(id: NodeId, cfg: ElectionConfig) -> Self {
        Self { id, cfg, key: id.0, role: Role::Member, cluster: NodeId::UNASSIGNED, battery_pct: 100, demoted: false }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn is_ch(&self) -> bool {
        self.role == Role::ClusterHead
    }

    pub fn cluster(&self) -> NodeId {
        self.cluster
    }

    pub fn advertised_key(&self) -> u16 {
        self.key
    }

    pub fn battery_pct(&self) -> u8 {
        self.battery_pct
    }

    pub fn demoted(&self) -> bool {
        self.demoted
    }

    pub fn rank(&self) -> Rank {
        rank(self.key, self.id)
    }

    /// Recomputes role and cluster from the current mutual neighbors.
    /// Returns true when either changed.
    pub fn evaluate_role(&mut self, mutual_present: &[Candidate]) -> bool {
        let before = (self.role, self.cluster);
        let own = self.rank();
        let best = mutual_present.iter().filter(|c| c.id != self.id).max_by_key(|c| c.rank());
        match best {
            None => {
                self.role = Role::ClusterHead;
                self.cluster = self.id;
            }
            Some(b) if own > b.rank() => {
                self.role = Role::ClusterHead;
                self.cluster = self.id;
            }
            Some(b) => {
                self.role = Role::Member;
                let head = mutual_present.iter().filter(|c| c.claims_ch && c.id != self.id).max_by_key(|c| c.rank());
                self.cluster = match head {
                    Some(h) => h.id,
                    None if b.cluster.is_unicast() && b.cluster != self.id => b.cluster,
                    None => b.id,
                };
            }
        }
        before != (self.role, self.cluster)
    }

    /// Applies the battery policy. A cluster head below the threshold drops
    /// its key to zero; the key comes back once the battery recovers past
    /// threshold plus hysteresis. Returns true when the key changed.
    pub fn apply_battery_policy(&mut self, battery_pct: u8) -> bool {
        self.battery_pct = battery_pct.min(100);
        if !self.demoted && self.is_ch() && self.battery_pct < self.cfg.demotion_threshold_pct {
            self.demoted = true;
            self.key = 0;
            return true;
        }
        let restore = self.cfg.demotion_threshold_pct.saturating_add(self.cfg.hysteresis_pct);
        if self.demoted && self.battery_pct >= restore {
            self.demoted = false;
            self.key = self.id.0;
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: u16, claims_ch: bool, cluster: u16) -> Candidate {
        Candidate { id: NodeId(id), key: id, claims_ch, cluster: NodeId(cluster) }
    }

    #[test]
    fn isolated_node_is_head() {
        let mut e = ElectionState::new(NodeId(5), ElectionConfig::default());
        e.evaluate_role(&[]);
        assert_eq!((e.role(), e.cluster()), (Role::ClusterHead, NodeId(5)));
    }

    #[test]
    fn highest_rank_wins() {
        let mut e = ElectionState::new(NodeId(5), ElectionConfig::default());
        e.evaluate_role(&[cand(3, false, 9), cand(4, false, 9)]);
        assert!(e.is_ch());
        assert!(e.evaluate_role(&[cand(3, false, 9), cand(8, true, 8)]));
        assert_eq!((e.role(), e.cluster()), (Role::Member, NodeId(8)));
    }

    #[test]
    fn member_joins_highest_claiming_head() {
        let mut e = ElectionState::new(NodeId(2), ElectionConfig::default());
        e.evaluate_role(&[cand(6, true, 6), cand(7, true, 7), cand(9, false, 7)]);
        assert_eq!(e.cluster(), NodeId(7));
    }

    #[test]
    fn without_a_head_adopt_neighbors_cluster() {
        let mut e = ElectionState::new(NodeId(2), ElectionConfig::default());
        e.evaluate_role(&[cand(6, false, 11)]);
        assert_eq!(e.cluster(), NodeId(11));
        e.evaluate_role(&[cand(6, false, 0)]);
        assert_eq!(e.cluster(), NodeId(6));
        e.evaluate_role(&[cand(6, false, 2)]);
        assert_eq!(e.cluster(), NodeId(6));
    }

    #[test]
    fn ties_on_key_break_by_id() {
        let mut e = ElectionState::new(NodeId(5), ElectionConfig::default());
        e.evaluate_role(&[Candidate { id: NodeId(4), key: 5, claims_ch: false, cluster: NodeId(4) }]);
        assert!(e.is_ch());
        e.evaluate_role(&[Candidate { id: NodeId(6), key: 5, claims_ch: true, cluster: NodeId(6) }]);
        assert!(!e.is_ch());
    }

    #[test]
    fn demotion_and_restore() {
        let mut e = ElectionState::new(NodeId(0x0042), ElectionConfig::default());
        e.evaluate_role(&[cand(3, false, 66)]);
        assert!(e.is_ch());
        assert!(e.apply_battery_policy(15));
        assert!(e.demoted());
        assert!(e.advertised_key() < 0x0042);
        e.evaluate_role(&[cand(3, false, 66)]);
        assert_eq!(e.role(), Role::Member);
        assert!(!e.apply_battery_policy(25));
        assert!(e.demoted());
        assert!(e.apply_battery_policy(30));
        assert_eq!(e.advertised_key(), 0x0042);
        e.evaluate_role(&[cand(3, false, 66)]);
        assert!(e.is_ch());
    }

    #[test]
    fn members_do_not_demote() {
        let mut e = ElectionState::new(NodeId(2), ElectionConfig::default());
        e.evaluate_role(&[cand(9, true, 9)]);
        assert!(!e.apply_battery_policy(5));
        assert_eq!(e.advertised_key(), 2);
    }
}
