//! Backbone flooding over every connected head topology of up to six
//! heads: each head decapsulates a frame at most once, and exactly the
//! heads within reach of the hop limit receive it.

use std::collections::VecDeque;

use dualmesh::backbone::{BackboneConfig, BackboneState};
use dualmesh::protocol::{fragment_message, LoraFrame, NodeId};
use dualmesh::sim::rounds::connected_graphs;
use dualmesh::time::SimTime;

fn hops_from(n: usize, adj: &[Vec<usize>], src: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; n];
    dist[src] = Some(0);
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                q.push_back(v);
            }
        }
    }
    dist
}

/// Floods one frame from head 0 and returns how often each head handed
/// fragments to its cluster, plus the number of transmissions.
fn flood(n: usize, edges: &[(usize, usize)], unicast_to_last: bool) -> (Vec<usize>, usize) {
    let cfg = BackboneConfig::default();
    let mut heads: Vec<BackboneState> = (0..n).map(|i| BackboneState::new(NodeId(i as u16 + 1), cfg)).collect();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let dest_member = NodeId(500);
    if unicast_to_last {
        heads[0].directory_mut().learn(dest_member, NodeId(n as u16), SimTime::ZERO);
    }
    let frags = fragment_message(NodeId(100), dest_member, 1, 16, b"flood").unwrap();
    heads[0].enqueue_for_backbone(true, frags, SimTime::ZERO).unwrap();
    let first = heads[0].flush_aggregate(SimTime::from_secs(1)).remove(0);
    let mut air: VecDeque<(usize, LoraFrame)> = VecDeque::from([(0, first)]);
    let mut delivered = vec![0; n];
    let mut transmissions = 0;
    while let Some((sender, frame)) = air.pop_front() {
        transmissions += 1;
        for &r in &adj[sender] {
            let out = heads[r].handle_lora_frame(&frame, SimTime::from_secs(1));
            if !out.deliver.is_empty() {
                delivered[r] += 1;
            }
            if let Some(f) = out.rebroadcast {
                air.push_back((r, f));
            }
        }
    }
    (delivered, transmissions)
}

#[test]
fn broadcast_floods_reach_each_head_once() {
    let reach = usize::from(BackboneConfig::default().hop_limit) + 1;
    for n in 1..=6 {
        for edges in connected_graphs(n) {
            let mut adj = vec![Vec::new(); n];
            for &(a, b) in &edges {
                adj[a].push(b);
                adj[b].push(a);
            }
            let dist = hops_from(n, &adj, 0);
            let (delivered, transmissions) = flood(n, &edges, false);
            assert!(transmissions <= n, "{edges:?}: {transmissions} transmissions");
            assert_eq!(delivered[0], 0, "{edges:?}");
            for v in 1..n {
                let want = usize::from(dist[v].unwrap() <= reach);
                assert_eq!(delivered[v], want, "{n} heads {edges:?}, head {v} at {:?} hops", dist[v]);
            }
        }
    }
}

#[test]
fn unicast_floods_deliver_only_at_the_destination() {
    let reach = usize::from(BackboneConfig::default().hop_limit) + 1;
    for n in 2..=6 {
        for edges in connected_graphs(n) {
            let mut adj = vec![Vec::new(); n];
            for &(a, b) in &edges {
                adj[a].push(b);
                adj[b].push(a);
            }
            let dist = hops_from(n, &adj, 0);
            let (delivered, _) = flood(n, &edges, true);
            for (v, &d) in delivered.iter().enumerate() {
                let want = usize::from(v == n - 1 && dist[v].unwrap() <= reach);
                assert_eq!(d, want, "{n} heads {edges:?}, head {v}");
            }
        }
    }
}
