//! Synchronous beacon rounds over an explicit adjacency, used to check
//! election convergence exhaustively on small graphs.

use crate::cluster::rank;
use crate::node::{NodeConfig, NodeState};
use crate::protocol::{BleFrame, NodeId};
use crate::time::SimTime;

const RSSI: i32 = -60;

/// Nodes `1..=n` exchanging beacons once per round over symmetric links.
pub struct Rounds {
    nodes: Vec<NodeState>,
    adjacency: Vec<Vec<usize>>,
    round: u64,
    interval: SimTime,
}

impl Rounds {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Self {
        let cfg = NodeConfig::default();
        let nodes = (1..=n).map(|i| NodeState::new(NodeId(i as u16), &cfg)).collect();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        Self { nodes, adjacency, round: 0, interval: cfg.mesh.beacon_interval }
    }

    pub fn now(&self) -> SimTime {
        SimTime::from_micros(self.round * self.interval.as_micros())
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    /// Every node beacons, then every beacon reaches the sender's neighbors.
    pub fn step(&mut self) {
        let now = self.now();
        let beacons: Vec<_> = self.nodes.iter_mut().map(|n| n.beacon(now).0).collect();
        for (i, b) in beacons.into_iter().enumerate() {
            for &j in &self.adjacency[i] {
                let sender = self.nodes[i].id();
                self.nodes[j].on_ble(&BleFrame::Beacon(b.clone()), sender, RSSI, now);
            }
        }
        self.round += 1;
    }

    /// Rounds until every node lists all its neighbors as mutual.
    pub fn run_to_quiescence(&mut self, max_rounds: u64) -> Option<u64> {
        for _ in 0..max_rounds {
            if self.tables_complete() {
                return Some(self.round);
            }
            self.step();
        }
        self.tables_complete().then_some(self.round)
    }

    fn tables_complete(&self) -> bool {
        let now = self.now();
        self.nodes.iter().enumerate().all(|(i, n)| {
            let mut mutual: Vec<NodeId> = n.mesh().mutual_present(now).map(|e| e.id).collect();
            let mut want: Vec<NodeId> = self.adjacency[i].iter().map(|&j| self.nodes[j].id()).collect();
            mutual.sort_unstable();
            want.sort_unstable();
            mutual == want
        })
    }

    pub fn set_battery(&mut self, idx: usize, pct: u8) {
        let now = self.now();
        self.nodes[idx].set_battery(pct, now);
    }

    /// Whether every member has a head among its direct neighbors.
    pub fn one_hop_clusters(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(i, n)| n.is_ch() || self.adjacency[i].iter().any(|&j| self.nodes[j].is_ch()))
    }

    /// Checks only the head set: heads are exactly the nodes whose rank
    /// beats every neighbor, so no two heads are adjacent.
    pub fn check_heads(&self) -> Result<(), String> {
        for (i, n) in self.nodes.iter().enumerate() {
            let local_max = self.adjacency[i].iter().all(|&j| self.rank_of(i) > self.rank_of(j));
            if n.is_ch() != local_max {
                return Err(format!("node {} head={} but local maximum={local_max}", n.id(), n.is_ch()));
            }
        }
        Ok(())
    }

    fn rank_of(&self, i: usize) -> crate::cluster::Rank {
        let e = self.nodes[i].election();
        rank(e.advertised_key(), e.id())
    }

    /// Checks the settled election: heads are exactly the local rank
    /// maxima, every cluster id names a head heading itself, and a node
    /// adjacent to a head belongs to its highest-ranked adjacent head.
    pub fn check(&self) -> Result<(), String> {
        self.check_heads()?;
        let r = |i: usize| self.rank_of(i);
        for (i, n) in self.nodes.iter().enumerate() {
            let c = n.cluster();
            let head = self.nodes.iter().find(|h| h.id() == c);
            match head {
                Some(h) if h.is_ch() && h.cluster() == c => {}
                _ => return Err(format!("node {} names cluster {c}, which is not a head", n.id())),
            }
            if !n.is_ch() {
                let best = self.adjacency[i].iter().filter(|&&j| self.nodes[j].is_ch()).max_by_key(|&&j| r(j));
                if let Some(&b) = best {
                    if c != self.nodes[b].id() {
                        return Err(format!(
                            "node {} joined {c}, highest adjacent head is {}",
                            n.id(),
                            self.nodes[b].id()
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// All connected simple graphs on vertices `0..n`, as edge lists.
pub fn connected_graphs(n: usize) -> Vec<Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let mut out = Vec::new();
    for mask in 0u32..(1 << pairs.len()) {
        let edges: Vec<(usize, usize)> =
            pairs.iter().enumerate().filter(|(k, _)| mask & (1 << k) != 0).map(|(_, &e)| e).collect();
        if is_connected(n, &edges) {
            out.push(edges);
        }
    }
    out
}

fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut x = x;
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra] = rb;
    }
    let root = find(&mut parent, 0);
    (0..n).all(|v| find(&mut parent, v) == root)
}

/// Outcome of the election check on one graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElectionCheck {
    pub quiescent_round: u64,
    /// Rounds after quiescence until the head set was correct.
    pub head_rounds: u64,
    /// Rounds after quiescence until the full check first held.
    pub settle_rounds: u64,
    /// Rounds after demoting the top head until the head set was correct.
    pub demotion_head_rounds: Option<u64>,
    /// Rounds after demoting the top head until the full check held again.
    pub demotion_rounds: Option<u64>,
    /// Every member sat next to its head after formation.
    pub one_hop: bool,
    /// Every member sat next to its head after demotion.
    pub one_hop_after_demotion: bool,
}

/// Runs one graph through formation and, for two or more nodes, demotion
/// of the highest-ranked head, allowing `budget` rounds for each.
pub fn check_election(n: usize, edges: &[(usize, usize)], budget: u64) -> Result<ElectionCheck, String> {
    let mut h = Rounds::new(n, edges);
    let quiescent_round = h.run_to_quiescence(4 + 2 * n as u64).ok_or("neighbor tables never completed")?;
    // Returns (rounds until the head set held, rounds until the full check held).
    let settle = |h: &mut Rounds| -> Result<(u64, u64), String> {
        let mut heads = None;
        let mut last = Err(String::new());
        for k in 0..=budget {
            if heads.is_none() && h.check_heads().is_ok() {
                heads = Some(k);
            }
            last = h.check();
            if last.is_ok() {
                return Ok((heads.unwrap_or(k), k));
            }
            h.step();
        }
        Err(last.unwrap_err())
    };
    let (head_rounds, settle_rounds) = settle(&mut h)?;
    let one_hop = h.one_hop_clusters();
    let (demotion_head_rounds, demotion_rounds) = if n >= 2 {
        h.set_battery(n - 1, 15);
        let (a, b) = settle(&mut h).map_err(|e| format!("after demotion: {e}"))?;
        if h.nodes()[n - 1].is_ch() {
            return Err("demoted node kept the head role".into());
        }
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    Ok(ElectionCheck {
        quiescent_round,
        head_rounds,
        settle_rounds,
        demotion_head_rounds,
        demotion_rounds,
        one_hop,
        one_hop_after_demotion: h.one_hop_clusters(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_counts_match_known_sequence() {
        let counts: Vec<usize> = (1..=5).map(|n| connected_graphs(n).len()).collect();
        assert_eq!(counts, vec![1, 1, 4, 38, 728]);
    }

    #[test]
    fn path_of_four_settles() {
        let c = check_election(4, &[(0, 1), (1, 2), (2, 3)], 6).unwrap();
        assert!(c.head_rounds <= 2 && c.settle_rounds <= 2);
        assert!(c.demotion_head_rounds.unwrap() <= 2);
        // Node 1 ends two hops from head 3 and learns its label one round late.
        assert!(!c.one_hop_after_demotion);
        assert_eq!(c.demotion_rounds, Some(3));
    }

    #[test]
    fn star_settles_within_two_rounds() {
        let c = check_election(5, &[(4, 0), (4, 1), (4, 2), (4, 3)], 2).unwrap();
        assert!(c.one_hop && c.one_hop_after_demotion);
        assert!(c.demotion_rounds.unwrap() <= 2);
    }

    #[test]
    fn single_node_heads_itself() {
        let c = check_election(1, &[], 2).unwrap();
        assert_eq!(c.demotion_rounds, None);
    }
}
