use crate::protocol::budget::{DATA_DUP_ENTRIES, PENDING_RREQ, ROUTE_TABLE, RREQ_DUP_ENTRIES};
use crate::protocol::{fragment_message, BleFrame, DataFragment, NodeId, Reassembly, Rrep, Rreq};
use crate::time::SimTime;

use super::{
    hop_cost, link_quality, seq_newer, DropReason, LinkTarget, MeshAction, MeshContext, MeshError, MeshState,
    SendTiming,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteEntry {
    pub dest: NodeId,
    pub next_hop: NodeId,
    pub path_cost: u16,
    pub hop_count: u8,
    pub dest_seq: u16,
    pub expires: SimTime,
    /// Invalid entries are kept for their sequence number.
    pub valid: bool,
}

/// How a fragment entered this node's forwarding path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FragmentKind {
    /// Ordinary data, originated here or relayed.
    Local,
    /// Travelling to the sender's cluster head after discovery failed.
    Escalated,
    /// Injected by the local backbone; never escalated again.
    FromBackbone,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingDiscovery {
    pub target: NodeId,
    pub ring: usize,
    pub rreq_id: u8,
    pub deadline: SimTime,
    pub queue: Vec<(DataFragment, FragmentKind)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteDecision {
    Direct(NodeId),
    TwoHop { via: NodeId, cost: u16 },
    Table(NodeId),
    Discover,
}

impl RouteDecision {
    pub fn next_hop(self) -> Option<NodeId> {
        match self {
            RouteDecision::Direct(n) | RouteDecision::Table(n) => Some(n),
            RouteDecision::TwoHop { via, .. } => Some(via),
            RouteDecision::Discover => None,
        }
    }
}

fn lifetime_secs(t: SimTime) -> u8 {
    (t.as_micros() / 1_000_000).min(u64::from(u8::MAX)) as u8
}

impl MeshState {
    pub fn routes(&self) -> impl Iterator<Item = &RouteEntry> {
        self.routes.values()
    }

    pub fn route(&self, dest: NodeId) -> Option<&RouteEntry> {
        self.routes.get(&dest)
    }

    pub fn route_count(&self) -> usize {
        self.routes.len()
    }

    pub fn pending(&self) -> &[PendingDiscovery] {
        &self.pending
    }

    fn usable(&self, r: &RouteEntry, now: SimTime) -> bool {
        r.valid && r.expires > now && self.is_present(r.next_hop, now)
    }

    /// Next-hop choice: direct neighbor, then the cheapest two-hop entry,
    /// then a live route-table entry.
    pub fn resolve_route(&self, dst: NodeId, now: SimTime) -> RouteDecision {
        if self.is_present(dst, now) {
            return RouteDecision::Direct(dst);
        }
        let two_hop = self
            .two_hop
            .iter()
            .filter(|e| e.target == dst)
            .filter_map(|e| {
                let n = self.neighbors.get(&e.via)?;
                if !self.is_present(e.via, now) {
                    return None;
                }
                Some((hop_cost(n.lq) + hop_cost(e.lq), e.via))
            })
            .min();
        if let Some((cost, via)) = two_hop {
            return RouteDecision::TwoHop { via, cost };
        }
        match self.routes.get(&dst) {
            Some(r) if self.usable(r, now) => RouteDecision::Table(r.next_hop),
            _ => RouteDecision::Discover,
        }
    }

    /// Installs or replaces a route when the offer is fresher, or equally
    /// fresh and cheaper.
    pub fn update_route(&mut self, offer: RouteEntry, now: SimTime) -> bool {
        if offer.dest == self.id || !offer.dest.is_unicast() {
            return false;
        }
        if let Some(cur) = self.routes.get_mut(&offer.dest) {
            let live = cur.valid && cur.expires > now;
            let better = !live
                || seq_newer(offer.dest_seq, cur.dest_seq)
                || (offer.dest_seq == cur.dest_seq
                    && (offer.path_cost, offer.hop_count, offer.next_hop)
                        < (cur.path_cost, cur.hop_count, cur.next_hop));
            if better {
                *cur = offer;
                return true;
            }
            if offer.dest_seq == cur.dest_seq && offer.next_hop == cur.next_hop && offer.path_cost == cur.path_cost {
                cur.expires = cur.expires.max(offer.expires);
            }
            return false;
        }
        if self.routes.len() >= ROUTE_TABLE.capacity {
            let victim = self
                .routes
                .values()
                .min_by_key(|r| (r.valid && r.expires > now, r.expires, r.dest))
                .map(|r| r.dest)
                .expect("non-empty");
            self.routes.remove(&victim);
        }
        self.routes.insert(offer.dest, offer);
        true
    }

    fn bump_own_seq(&mut self) -> u16 {
        self.own_seq = self.own_seq.wrapping_add(1);
        if self.own_seq == 0 {
            self.own_seq = 1;
        }
        self.own_seq
    }

    fn remember_data(&mut self, frag: &DataFragment, escalated: bool) -> bool {
        let key = (frag.src, frag.msg_seq, frag.frag_index, escalated);
        if self.data_seen.contains(&key) {
            return false;
        }
        if self.data_seen.len() >= DATA_DUP_ENTRIES {
            self.data_seen.pop_front();
        }
        self.data_seen.push_back(key);
        true
    }

    /// Fragments a new message and starts it on its way.
    pub fn originate(
        &mut self,
        dst: NodeId,
        payload: &[u8],
        now: SimTime,
        ctx: &MeshContext<'_>,
    ) -> Result<(u16, Vec<MeshAction>), MeshError> {
        if !dst.is_unicast() {
            return Err(MeshError::BadDestination(dst));
        }
        let msg_seq = self.next_msg_seq;
        let frags = fragment_message(self.id, dst, msg_seq, self.cfg.data_ttl, payload)?;
        self.next_msg_seq = self.next_msg_seq.wrapping_add(1);
        let mut out = Vec::new();
        if dst == self.id {
            out.push(MeshAction::Deliver { src: self.id, msg_seq, payload: payload.to_vec() });
            return Ok((msg_seq, out));
        }
        for f in frags {
            self.remember_data(&f, false);
            self.dispatch(f, FragmentKind::Local, now, ctx, &mut out);
        }
        Ok((msg_seq, out))
    }

    /// Handles a data or escalated fragment heard from a neighbor.
    pub fn on_data(
        &mut self,
        frag: DataFragment,
        escalated: bool,
        now: SimTime,
        ctx: &MeshContext<'_>,
    ) -> Vec<MeshAction> {
        let mut out = Vec::new();
        if !self.remember_data(&frag, escalated) {
            self.counters.data_duplicates += 1;
            return out;
        }
        if frag.dst == self.id {
            self.deliver(&frag, now, &mut out);
            return out;
        }
        let kind = if escalated { FragmentKind::Escalated } else { FragmentKind::Local };
        if escalated && ctx.is_ch {
            self.counters.escalated += 1;
            out.push(MeshAction::Escalate(vec![frag]));
            return out;
        }
        if frag.ttl == 0 {
            out.push(MeshAction::Drop { reason: DropReason::Ttl, src: frag.src, msg_seq: frag.msg_seq });
            return out;
        }
        let mut frag = frag;
        frag.ttl -= 1;
        self.counters.data_forwarded += 1;
        self.dispatch(frag, kind, now, ctx, &mut out);
        out
    }

    /// Fragments handed down by the backbone for delivery in this cluster.
    pub fn inject_from_backbone(
        &mut self,
        frags: Vec<DataFragment>,
        now: SimTime,
        ctx: &MeshContext<'_>,
    ) -> Vec<MeshAction> {
        let mut out = Vec::new();
        for f in frags {
            self.remember_data(&f, false);
            if f.dst == self.id {
                self.deliver(&f, now, &mut out);
            } else {
                self.dispatch(f, FragmentKind::FromBackbone, now, ctx, &mut out);
            }
        }
        out
    }

    fn deliver(&mut self, frag: &DataFragment, now: SimTime, out: &mut Vec<MeshAction>) {
        match self.reassembler.push(frag, now) {
            Ok(Reassembly::Complete(payload)) => {
                out.push(MeshAction::Deliver { src: frag.src, msg_seq: frag.msg_seq, payload })
            }
            Ok(Reassembly::Pending) => {}
            Err(_) => {
                out.push(MeshAction::Drop { reason: DropReason::Reassembly, src: frag.src, msg_seq: frag.msg_seq })
            }
        }
        for (src, msg_seq) in self.reassembler.take_evicted() {
            out.push(MeshAction::Drop { reason: DropReason::Reassembly, src, msg_seq });
        }
    }

    fn send_via(&mut self, dst: NodeId, frame: BleFrame, now: SimTime) -> Option<MeshAction> {
        let decision = self.resolve_route(dst, now);
        let nh = decision.next_hop()?;
        if let RouteDecision::Table(_) = decision {
            let lifetime = self.cfg.route_lifetime;
            if let Some(r) = self.routes.get_mut(&dst) {
                r.expires = r.expires.max(now + lifetime);
            }
        }
        Some(MeshAction::Send { target: LinkTarget::Unicast(nh), frame, timing: SendTiming::Now })
    }

    fn dispatch(
        &mut self,
        frag: DataFragment,
        kind: FragmentKind,
        now: SimTime,
        ctx: &MeshContext<'_>,
        out: &mut Vec<MeshAction>,
    ) {
        match kind {
            FragmentKind::Escalated => {
                if ctx.is_ch {
                    self.counters.escalated += 1;
                    out.push(MeshAction::Escalate(vec![frag]));
                    return;
                }
                let ch = ctx.cluster_head;
                if !ch.is_unicast() || ch == self.id {
                    out.push(MeshAction::Drop { reason: DropReason::NoRoute, src: frag.src, msg_seq: frag.msg_seq });
                    return;
                }
                if let Some(a) = self.send_via(ch, BleFrame::Escalated(frag.clone()), now) {
                    out.push(a);
                } else {
                    self.park(ch, frag, kind, now, ctx, out);
                }
            }
            FragmentKind::Local | FragmentKind::FromBackbone => {
                let dst = frag.dst;
                if let Some(a) = self.send_via(dst, BleFrame::Data(frag.clone()), now) {
                    out.push(a);
                } else if kind == FragmentKind::Local && ctx.is_ch && (ctx.remote_member)(dst) {
                    self.counters.escalated += 1;
                    out.push(MeshAction::Escalate(vec![frag]));
                } else {
                    self.park(dst, frag, kind, now, ctx, out);
                }
            }
        }
    }

    fn park(
        &mut self,
        target: NodeId,
        frag: DataFragment,
        kind: FragmentKind,
        now: SimTime,
        ctx: &MeshContext<'_>,
        out: &mut Vec<MeshAction>,
    ) {
        let cap = self.cfg.discovery_queue_fragments;
        if let Some(p) = self.pending.iter_mut().find(|p| p.target == target) {
            if p.queue.len() < cap {
                p.queue.push((frag, kind));
            } else {
                out.push(MeshAction::Drop { reason: DropReason::QueueFull, src: frag.src, msg_seq: frag.msg_seq });
            }
            return;
        }
        if self.pending.len() >= PENDING_RREQ.capacity {
            self.give_up(frag, kind, now, ctx, out);
            return;
        }
        let rreq_id = self.next_rreq_id;
        self.next_rreq_id = self.next_rreq_id.wrapping_add(1);
        self.pending.push(PendingDiscovery {
            target,
            ring: 0,
            rreq_id,
            deadline: now + self.cfg.ring_timeouts[0],
            queue: vec![(frag, kind)],
        });
        self.counters.rreq_originated += 1;
        out.push(self.rreq_for(target, rreq_id, self.cfg.ring_ttls[0]));
    }

    fn rreq_for(&mut self, target: NodeId, rreq_id: u8, ttl: u8) -> MeshAction {
        let origin_seq = self.bump_own_seq();
        let dest_seq = match self.routes.get(&target) {
            Some(r) if r.dest_seq != 0 => r.dest_seq.wrapping_add(1).max(1),
            _ => 0,
        };
        self.remember_rreq(self.id, rreq_id, 0);
        MeshAction::Send {
            target: LinkTarget::Broadcast,
            frame: BleFrame::Rreq(Rreq {
                rreq_id,
                origin: self.id,
                origin_seq,
                dest: target,
                dest_seq,
                hop_count: 0,
                path_cost: 0,
                ttl,
            }),
            timing: SendTiming::Now,
        }
    }

    fn give_up(
        &mut self,
        frag: DataFragment,
        kind: FragmentKind,
        now: SimTime,
        ctx: &MeshContext<'_>,
        out: &mut Vec<MeshAction>,
    ) {
        match kind {
            FragmentKind::Local if ctx.is_ch => {
                self.counters.escalated += 1;
                out.push(MeshAction::Escalate(vec![frag]));
            }
            FragmentKind::Local => {
                self.remember_data(&frag, true);
                self.dispatch(frag, FragmentKind::Escalated, now, ctx, out);
            }
            FragmentKind::Escalated if ctx.is_ch => {
                self.counters.escalated += 1;
                out.push(MeshAction::Escalate(vec![frag]));
            }
            FragmentKind::Escalated | FragmentKind::FromBackbone => {
                out.push(MeshAction::Drop { reason: DropReason::NoRoute, src: frag.src, msg_seq: frag.msg_seq })
            }
        }
    }

    /// Discovery ring timeouts and reassembly expiry.
    pub fn on_tick(&mut self, now: SimTime, ctx: &MeshContext<'_>) -> Vec<MeshAction> {
        let mut out = Vec::new();
        self.reassembler.expire(now);
        for (src, msg_seq) in self.reassembler.take_evicted() {
            out.push(MeshAction::Drop { reason: DropReason::Reassembly, src, msg_seq });
        }
        let mut i = 0;
        while i < self.pending.len() {
            if self.pending[i].deadline > now {
                i += 1;
                continue;
            }
            let target = self.pending[i].target;
            if self.resolve_route(target, now) != RouteDecision::Discover {
                let p = self.pending.remove(i);
                self.flush(p, now, ctx, &mut out);
                continue;
            }
            if self.pending[i].ring + 1 < self.cfg.ring_ttls.len() {
                let ring = self.pending[i].ring + 1;
                let rreq_id = self.next_rreq_id;
                self.next_rreq_id = self.next_rreq_id.wrapping_add(1);
                let p = &mut self.pending[i];
                p.ring = ring;
                p.rreq_id = rreq_id;
                p.deadline = now + self.cfg.ring_timeouts[ring];
                self.counters.rreq_originated += 1;
                let ttl = self.cfg.ring_ttls[ring];
                let action = self.rreq_for(target, rreq_id, ttl);
                out.push(action);
                i += 1;
            } else {
                let p = self.pending.remove(i);
                for (frag, kind) in p.queue {
                    self.give_up(frag, kind, now, ctx, &mut out);
                }
            }
        }
        out
    }

    fn flush(&mut self, p: PendingDiscovery, now: SimTime, ctx: &MeshContext<'_>, out: &mut Vec<MeshAction>) {
        let first = out.len();
        for (frag, kind) in p.queue {
            self.dispatch(frag, kind, now, ctx, out);
        }
        for a in &mut out[first..] {
            if let MeshAction::Send { timing, .. } = a {
                *timing = SendTiming::AfterFlood;
            }
        }
    }

    fn remember_rreq(&mut self, origin: NodeId, rreq_id: u8, cost: u16) {
        if let Some(e) = self.rreq_seen.iter_mut().find(|(o, id, _)| *o == origin && *id == rreq_id) {
            e.2 = cost;
            return;
        }
        if self.rreq_seen.len() >= RREQ_DUP_ENTRIES {
            self.rreq_seen.pop_front();
        }
        self.rreq_seen.push_back((origin, rreq_id, cost));
    }

    pub fn handle_rreq(
        &mut self,
        rreq: &Rreq,
        sender: NodeId,
        rssi_dbm: i32,
        now: SimTime,
        ctx: &MeshContext<'_>,
    ) -> Vec<MeshAction> {
        let mut out = Vec::new();
        if rreq.origin == self.id || !rreq.origin.is_unicast() {
            return out;
        }
        let cost = rreq.path_cost.saturating_add(hop_cost(link_quality(rssi_dbm)));
        let hops = rreq.hop_count.saturating_add(1);
        let seen = self.rreq_seen.iter().find(|(o, id, _)| *o == rreq.origin && *id == rreq.rreq_id).map(|e| e.2);
        if matches!(seen, Some(best) if cost >= best) {
            return out;
        }
        self.remember_rreq(rreq.origin, rreq.rreq_id, cost);
        let reverse_lifetime = self.cfg.reverse_route_lifetime;
        self.update_route(
            RouteEntry {
                dest: rreq.origin,
                next_hop: sender,
                path_cost: cost,
                hop_count: hops,
                dest_seq: rreq.origin_seq,
                expires: now + reverse_lifetime,
                valid: true,
            },
            now,
        );
        let Some(back) = self.routes.get(&rreq.origin).map(|r| r.next_hop) else {
            return out;
        };
        let lifetime = lifetime_secs(self.cfg.route_lifetime);

        let reply = if rreq.dest == self.id {
            if seq_newer(rreq.dest_seq, self.own_seq) {
                self.own_seq = rreq.dest_seq;
            }
            if self.own_seq == 0 {
                self.own_seq = 1;
            }
            Some(Rrep {
                origin: rreq.origin,
                dest: self.id,
                dest_seq: self.own_seq,
                hop_count: 0,
                path_cost: 0,
                lifetime,
            })
        } else if let Some(r) = self
            .routes
            .get(&rreq.dest)
            .filter(|r| self.usable(r, now))
            .filter(|r| r.next_hop != sender)
            .filter(|r| rreq.dest_seq == 0 || !seq_newer(rreq.dest_seq, r.dest_seq))
        {
            Some(Rrep {
                origin: rreq.origin,
                dest: rreq.dest,
                dest_seq: r.dest_seq,
                hop_count: r.hop_count,
                path_cost: r.path_cost,
                lifetime: lifetime_secs(r.expires - now).max(1),
            })
        } else if ctx.is_ch && rreq.dest.is_unicast() && (ctx.remote_member)(rreq.dest) {
            self.counters.rrep_proxied += 1;
            Some(Rrep { origin: rreq.origin, dest: rreq.dest, dest_seq: 0, hop_count: 0, path_cost: 0, lifetime })
        } else {
            None
        };

        if let Some(rrep) = reply {
            self.counters.rrep_sent += 1;
            out.push(MeshAction::Send {
                target: LinkTarget::Unicast(back),
                frame: BleFrame::Rrep(rrep),
                timing: SendTiming::Now,
            });
        } else if rreq.ttl > 1 {
            self.counters.rreq_forwarded += 1;
            out.push(MeshAction::Send {
                target: LinkTarget::Broadcast,
                frame: BleFrame::Rreq(Rreq { hop_count: hops, path_cost: cost, ttl: rreq.ttl - 1, ..*rreq }),
                timing: SendTiming::Jitter,
            });
        }
        out
    }

    pub fn handle_rrep(
        &mut self,
        rrep: &Rrep,
        sender: NodeId,
        rssi_dbm: i32,
        now: SimTime,
        ctx: &MeshContext<'_>,
    ) -> Vec<MeshAction> {
        let mut out = Vec::new();
        let cost = rrep.path_cost.saturating_add(hop_cost(link_quality(rssi_dbm)));
        let hops = rrep.hop_count.saturating_add(1);
        self.update_route(
            RouteEntry {
                dest: rrep.dest,
                next_hop: sender,
                path_cost: cost,
                hop_count: hops,
                dest_seq: rrep.dest_seq,
                expires: now + SimTime::from_secs(u64::from(rrep.lifetime)),
                valid: true,
            },
            now,
        );
        if rrep.origin == self.id {
            if let Some(pos) = self.pending.iter().position(|p| p.target == rrep.dest) {
                let p = self.pending.remove(pos);
                self.flush(p, now, ctx, &mut out);
            }
            return out;
        }
        let Some(fwd) = self.routes.get(&rrep.dest).copied() else {
            return out;
        };
        match self.routes.get(&rrep.origin) {
            Some(back) if self.usable(back, now) => {
                self.counters.rrep_sent += 1;
                out.push(MeshAction::Send {
                    target: LinkTarget::Unicast(back.next_hop),
                    frame: BleFrame::Rrep(Rrep {
                        dest_seq: fwd.dest_seq,
                        hop_count: fwd.hop_count,
                        path_cost: fwd.path_cost,
                        lifetime: lifetime_secs(fwd.expires - now).max(1),
                        ..*rrep
                    }),
                    timing: SendTiming::Now,
                });
            }
            _ => self.counters.rrep_no_reverse_route += 1,
        }
        out
    }

    /// Drops every route entry (used when a node restarts).
    pub fn clear_routes(&mut self) {
        self.routes.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MeshConfig;
    use crate::protocol::{Beacon, BeaconFlags, BeaconNeighbor, PROTOCOL_VERSION};

    fn beacon(node: u16, neighbors: &[(u16, u8)]) -> Beacon {
        Beacon {
            version: PROTOCOL_VERSION,
            node: NodeId(node),
            advertised_key: node,
            flags: BeaconFlags::default(),
            battery_pct: 100,
            cluster: NodeId::UNASSIGNED,
            neighbors: neighbors.iter().map(|&(id, lq)| BeaconNeighbor { id: NodeId(id), lq }).collect(),
        }
    }

    fn mesh(id: u16) -> MeshState {
        MeshState::new(NodeId(id), MeshConfig::default())
    }

    fn ctx() -> MeshContext<'static> {
        MeshContext::member(NodeId(99))
    }

    fn sends(out: &[MeshAction]) -> Vec<(LinkTarget, &BleFrame)> {
        out.iter()
            .filter_map(|a| match a {
                MeshAction::Send { target, frame, .. } => Some((*target, frame)),
                _ => None,
            })
            .collect()
    }

    fn rssi_for(lq: u8) -> i32 {
        i32::from(lq) / 4 - 110
    }

    #[test]
    fn direct_beats_two_hop_beats_table() {
        let mut m = mesh(1);
        let t = SimTime::ZERO;
        m.process_beacon(&beacon(2, &[(5, 200)]), rssi_for(200), t);
        m.process_beacon(&beacon(3, &[(5, 252)]), rssi_for(200), t);
        assert_eq!(m.resolve_route(NodeId(2), t), RouteDecision::Direct(NodeId(2)));
        assert_eq!(m.resolve_route(NodeId(5), t), RouteDecision::TwoHop { via: NodeId(3), cost: 56 + 4 });
        assert_eq!(m.resolve_route(NodeId(9), t), RouteDecision::Discover);
        m.update_route(
            RouteEntry {
                dest: NodeId(9),
                next_hop: NodeId(2),
                path_cost: 300,
                hop_count: 3,
                dest_seq: 4,
                expires: SimTime::from_secs(100),
                valid: true,
            },
            t,
        );
        assert_eq!(m.resolve_route(NodeId(9), t), RouteDecision::Table(NodeId(2)));
    }

    #[test]
    fn two_hop_ties_break_on_lower_id() {
        let mut m = mesh(1);
        let t = SimTime::ZERO;
        m.process_beacon(&beacon(4, &[(5, 200)]), rssi_for(200), t);
        m.process_beacon(&beacon(3, &[(5, 200)]), rssi_for(200), t);
        assert_eq!(m.resolve_route(NodeId(5), t).next_hop(), Some(NodeId(3)));
    }

    #[test]
    fn unknown_destination_floods_first_ring() {
        let mut m = mesh(1);
        let (_, out) = m.originate(NodeId(9), b"hello", SimTime::ZERO, &ctx()).unwrap();
        let s = sends(&out);
        assert_eq!(s.len(), 1);
        let BleFrame::Rreq(r) = s[0].1 else { panic!("{:?}", s[0]) };
        assert_eq!(s[0].0, LinkTarget::Broadcast);
        assert_eq!((r.ttl, r.dest, r.dest_seq, r.hop_count, r.path_cost), (3, NodeId(9), 0, 0, 0));
        assert_eq!(m.pending().len(), 1);
        assert_eq!(m.next_deadline(), Some(SimTime::from_secs(1)));
    }

    #[test]
    fn rings_expand_then_escalate() {
        let mut m = mesh(1);
        let c = ctx();
        m.process_beacon(&beacon(99, &[]), rssi_for(200), SimTime::ZERO);
        m.originate(NodeId(9), b"x", SimTime::ZERO, &c).unwrap();
        let mut ttls = vec![];
        let mut t = SimTime::from_secs(1);
        for step in [2u64, 4] {
            let out = m.on_tick(t, &c);
            let s = sends(&out);
            let BleFrame::Rreq(r) = s[0].1 else { panic!() };
            ttls.push(r.ttl);
            t += SimTime::from_secs(step);
            m.process_beacon(&beacon(99, &[]), rssi_for(200), t);
        }
        assert_eq!(ttls, vec![6, 12]);
        assert_eq!(t, SimTime::from_secs(7));
        let out = m.on_tick(t, &c);
        let s = sends(&out);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].0, LinkTarget::Unicast(NodeId(99)));
        assert!(matches!(s[0].1, BleFrame::Escalated(f) if f.dst == NodeId(9)));
        assert!(m.pending().is_empty());
    }

    #[test]
    fn cluster_head_escalates_to_backbone_on_failure() {
        let mut m = mesh(1);
        let remote = |_: NodeId| false;
        let c = MeshContext { is_ch: true, cluster_head: NodeId(1), remote_member: &remote };
        m.originate(NodeId(9), b"x", SimTime::ZERO, &c).unwrap();
        m.on_tick(SimTime::from_secs(1), &c);
        m.on_tick(SimTime::from_secs(3), &c);
        let out = m.on_tick(SimTime::from_secs(7), &c);
        assert!(matches!(&out[..], [MeshAction::Escalate(f)] if f.len() == 1));
    }

    #[test]
    fn backbone_fragments_are_not_escalated_again() {
        let mut m = mesh(1);
        let remote = |_: NodeId| true;
        let c = MeshContext { is_ch: true, cluster_head: NodeId(1), remote_member: &remote };
        let f = fragment_message(NodeId(50), NodeId(9), 0, 16, b"x").unwrap();
        m.inject_from_backbone(f, SimTime::ZERO, &c);
        m.on_tick(SimTime::from_secs(1), &c);
        m.on_tick(SimTime::from_secs(3), &c);
        let out = m.on_tick(SimTime::from_secs(7), &c);
        assert_eq!(out, vec![MeshAction::Drop { reason: DropReason::NoRoute, src: NodeId(50), msg_seq: 0 }]);
    }

    #[test]
    fn destination_replies_and_origin_flushes() {
        let t = SimTime::ZERO;
        let c = ctx();
        let mut a = mesh(1);
        let mut b = mesh(2);
        let (_, out) = a.originate(NodeId(2), b"hi", t, &c).unwrap();
        let BleFrame::Rreq(rreq) = sends(&out)[0].1.clone() else { panic!() };
        let out = b.handle_rreq(&rreq, NodeId(1), rssi_for(160), t, &c);
        let s = sends(&out);
        assert_eq!(s[0].0, LinkTarget::Unicast(NodeId(1)));
        let BleFrame::Rrep(rrep) = s[0].1.clone() else { panic!() };
        assert_eq!((rrep.hop_count, rrep.path_cost, rrep.dest), (0, 0, NodeId(2)));
        assert_eq!(b.route(NodeId(1)).unwrap().path_cost, 96);
        // a has not heard a beacon from b, so the flush goes through the table
        a.process_beacon(&beacon(2, &[]), rssi_for(160), t);
        let out = a.handle_rrep(&rrep, NodeId(2), rssi_for(160), t, &c);
        let r = a.route(NodeId(2)).unwrap();
        assert_eq!((r.next_hop, r.path_cost, r.hop_count), (NodeId(2), 96, 1));
        assert!(matches!(sends(&out)[..], [(LinkTarget::Unicast(NodeId(2)), BleFrame::Data(_))]));
        assert!(a.pending().is_empty());
    }

    #[test]
    fn duplicate_rreq_suppressed_unless_cheaper() {
        let t = SimTime::ZERO;
        let c = ctx();
        let mut m = mesh(5);
        let rreq = Rreq {
            rreq_id: 7,
            origin: NodeId(1),
            origin_seq: 3,
            dest: NodeId(9),
            dest_seq: 0,
            hop_count: 1,
            path_cost: 100,
            ttl: 3,
        };
        assert_eq!(sends(&m.handle_rreq(&rreq, NodeId(2), rssi_for(200), t, &c)).len(), 1);
        assert!(m.handle_rreq(&rreq, NodeId(3), rssi_for(200), t, &c).is_empty());
        let cheaper = Rreq { path_cost: 10, ..rreq };
        let out = m.handle_rreq(&cheaper, NodeId(3), rssi_for(200), t, &c);
        let BleFrame::Rreq(fwd) = sends(&out)[0].1.clone() else { panic!() };
        assert_eq!((fwd.ttl, fwd.hop_count, fwd.path_cost), (2, 2, 66));
        assert_eq!(m.route(NodeId(1)).unwrap().next_hop, NodeId(3));
    }

    #[test]
    fn ttl_one_rreq_not_forwarded() {
        let c = ctx();
        let mut m = mesh(5);
        let rreq = Rreq {
            rreq_id: 1,
            origin: NodeId(1),
            origin_seq: 1,
            dest: NodeId(9),
            dest_seq: 0,
            hop_count: 2,
            path_cost: 100,
            ttl: 1,
        };
        assert!(m.handle_rreq(&rreq, NodeId(2), -60, SimTime::ZERO, &c).is_empty());
    }

    #[test]
    fn intermediate_reply_respects_freshness_and_split_horizon() {
        let t = SimTime::ZERO;
        let c = ctx();
        let mut m = mesh(5);
        m.process_beacon(&beacon(6, &[]), -60, t);
        m.update_route(
            RouteEntry {
                dest: NodeId(9),
                next_hop: NodeId(6),
                path_cost: 80,
                hop_count: 2,
                dest_seq: 10,
                expires: SimTime::from_secs(60),
                valid: true,
            },
            t,
        );
        let base = Rreq {
            rreq_id: 1,
            origin: NodeId(1),
            origin_seq: 1,
            dest: NodeId(9),
            dest_seq: 10,
            hop_count: 1,
            path_cost: 50,
            ttl: 3,
        };
        let out = m.handle_rreq(&base, NodeId(2), -60, t, &c);
        assert!(matches!(sends(&out)[0].1, BleFrame::Rrep(r) if r.dest_seq == 10 && r.path_cost == 80));
        let fresher = Rreq { rreq_id: 2, dest_seq: 11, ..base };
        let out = m.handle_rreq(&fresher, NodeId(2), -60, t, &c);
        assert!(matches!(sends(&out)[0].1, BleFrame::Rreq(_)));
        let from_next_hop = Rreq { rreq_id: 3, ..base };
        let out = m.handle_rreq(&from_next_hop, NodeId(6), -60, t, &c);
        assert!(matches!(sends(&out)[0].1, BleFrame::Rreq(_)));
    }

    #[test]
    fn cluster_head_proxies_remote_destination() {
        let t = SimTime::ZERO;
        let remote = |n: NodeId| n == NodeId(9);
        let c = MeshContext { is_ch: true, cluster_head: NodeId(5), remote_member: &remote };
        let mut m = mesh(5);
        let rreq = Rreq {
            rreq_id: 1,
            origin: NodeId(1),
            origin_seq: 1,
            dest: NodeId(9),
            dest_seq: 0,
            hop_count: 0,
            path_cost: 0,
            ttl: 3,
        };
        let out = m.handle_rreq(&rreq, NodeId(1), -60, t, &c);
        let BleFrame::Rrep(r) = sends(&out)[0].1.clone() else { panic!() };
        assert_eq!((r.dest, r.dest_seq, r.path_cost), (NodeId(9), 0, 0));
        assert_eq!(m.counters.rrep_proxied, 1);
    }

    #[test]
    fn rrep_without_reverse_route_is_counted() {
        let c = ctx();
        let mut m = mesh(5);
        let rrep = Rrep { origin: NodeId(1), dest: NodeId(9), dest_seq: 3, hop_count: 0, path_cost: 0, lifetime: 120 };
        assert!(m.handle_rrep(&rrep, NodeId(9), -60, SimTime::ZERO, &c).is_empty());
        assert_eq!(m.counters.rrep_no_reverse_route, 1);
    }

    #[test]
    fn fresher_sequence_replaces_cheaper_route() {
        let t = SimTime::ZERO;
        let mut m = mesh(1);
        let base = RouteEntry {
            dest: NodeId(9),
            next_hop: NodeId(2),
            path_cost: 50,
            hop_count: 2,
            dest_seq: 5,
            expires: SimTime::from_secs(100),
            valid: true,
        };
        assert!(m.update_route(base, t));
        assert!(!m.update_route(RouteEntry { next_hop: NodeId(3), path_cost: 60, ..base }, t));
        assert!(m.update_route(RouteEntry { next_hop: NodeId(3), path_cost: 40, ..base }, t));
        assert!(m.update_route(RouteEntry { next_hop: NodeId(4), path_cost: 500, dest_seq: 6, ..base }, t));
        assert_eq!(m.route(NodeId(9)).unwrap().next_hop, NodeId(4));
    }

    #[test]
    fn removed_neighbor_invalidates_routes() {
        let t = SimTime::ZERO;
        let mut m = mesh(1);
        m.process_beacon(&beacon(2, &[]), -60, t);
        m.update_route(
            RouteEntry {
                dest: NodeId(9),
                next_hop: NodeId(2),
                path_cost: 50,
                hop_count: 2,
                dest_seq: 5,
                expires: SimTime::from_secs(200),
                valid: true,
            },
            t,
        );
        m.expire_neighbors(SimTime::from_secs(12));
        assert!(!m.route(NodeId(9)).unwrap().valid);
        assert_eq!(m.route(NodeId(9)).unwrap().dest_seq, 5);
    }

    #[test]
    fn ttl_exhaustion_drops() {
        let c = ctx();
        let mut m = mesh(1);
        let mut f = fragment_message(NodeId(7), NodeId(9), 3, 0, b"x").unwrap().remove(0);
        f.ttl = 0;
        let out = m.on_data(f, false, SimTime::ZERO, &c);
        assert_eq!(out, vec![MeshAction::Drop { reason: DropReason::Ttl, src: NodeId(7), msg_seq: 3 }]);
    }

    #[test]
    fn relayed_fragment_loses_one_ttl_and_duplicates_are_dropped() {
        let t = SimTime::ZERO;
        let c = ctx();
        let mut m = mesh(1);
        m.process_beacon(&beacon(9, &[]), -60, t);
        let f = fragment_message(NodeId(7), NodeId(9), 3, 16, b"x").unwrap().remove(0);
        let out = m.on_data(f.clone(), false, t, &c);
        assert!(matches!(sends(&out)[..], [(LinkTarget::Unicast(NodeId(9)), BleFrame::Data(d))] if d.ttl == 15));
        assert!(m.on_data(f, false, t, &c).is_empty());
        assert_eq!(m.counters.data_duplicates, 1);
    }

    #[test]
    fn multi_fragment_delivery() {
        let t = SimTime::ZERO;
        let c = ctx();
        let mut m = mesh(9);
        let msg: Vec<u8> = (0..40).collect();
        let frags = fragment_message(NodeId(7), NodeId(9), 3, 16, &msg).unwrap();
        let mut delivered = vec![];
        for f in frags.into_iter().rev() {
            delivered.extend(m.on_data(f, false, t, &c));
        }
        assert_eq!(delivered, vec![MeshAction::Deliver { src: NodeId(7), msg_seq: 3, payload: msg }]);
    }
}
