//! Poisson message generation with locality bias.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::protocol::NodeId;
use crate::time::SimTime;

use super::metrics::MessageClass;

/// Time to the next Poisson arrival at `rate` per second.
pub fn next_arrival<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> Option<SimTime> {
    let exp = Exp::new(rate).ok().filter(|_| rate > 0.0)?;
    Some(SimTime::from_secs_f64(exp.sample(rng)).max(SimTime::from_micros(1)))
}

fn others_in_cluster(clusters: &[NodeId], src: usize) -> Vec<usize> {
    let own = clusters[src];
    if !own.is_unicast() {
        return Vec::new();
    }
    (0..clusters.len()).filter(|&j| j != src && clusters[j] == own).collect()
}

/// Picks a destination index for a message from `src`.
///
/// With probability `beta` the destination is uniform over the sender's
/// other cluster members. Otherwise it is uniform over all nodes; drawing
/// the sender itself redirects to a uniform own-cluster member. A sender
/// with no cluster peers falls back to a uniform draw over all other nodes.
/// For equal clusters the inter-cluster fraction is `(1 − β)(1 − 1/C)`.
pub fn draw_destination<R: Rng + ?Sized>(rng: &mut R, clusters: &[NodeId], src: usize, beta: f64) -> usize {
    let n = clusters.len();
    assert!(n >= 2, "destination draw needs at least two nodes");
    let peers = others_in_cluster(clusters, src);
    let global_other = |rng: &mut R| {
        let j = rng.random_range(0..n - 1);
        if j >= src {
            j + 1
        } else {
            j
        }
    };
    if peers.is_empty() {
        return global_other(rng);
    }
    if rng.random_bool(beta) {
        return peers[rng.random_range(0..peers.len())];
    }
    let j = rng.random_range(0..n);
    if j == src {
        peers[rng.random_range(0..peers.len())]
    } else {
        j
    }
}

pub fn classify(clusters: &[NodeId], src: usize, dst: usize) -> MessageClass {
    if clusters[src].is_unicast() && clusters[src] == clusters[dst] {
        MessageClass::Intra
    } else {
        MessageClass::Inter
    }
}
