//! One node's complete protocol state: BLE mesh, election and, while it
//! is cluster head, the LoRa backbone.

use crate::backbone::{BackboneConfig, BackboneState};
use crate::cluster::{Candidate, ElectionConfig, ElectionState, Role};
use crate::mesh::{DropReason, LinkTarget, MeshAction, MeshConfig, MeshContext, MeshError, MeshState, SendTiming};
use crate::protocol::budget::{footprint, Occupancy};
use crate::protocol::{Beacon, BeaconFlags, BleFrame, LoraFrame, NodeId, PROTOCOL_VERSION};
use crate::time::SimTime;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeConfig {
    pub mesh: MeshConfig,
    pub election: ElectionConfig,
    pub backbone: BackboneConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeAction {
    Ble { target: LinkTarget, frame: BleFrame, timing: SendTiming },
    Lora(LoraFrame),
    Deliver { src: NodeId, msg_seq: u16, payload: Vec<u8> },
    Drop { reason: DropReason, src: NodeId, msg_seq: u16 },
    RoleChanged { role: Role, cluster: NodeId },
}

#[derive(Debug, Clone)]
pub struct NodeState {
    id: NodeId,
    mesh: MeshState,
    election: ElectionState,
    backbone: BackboneState,
}

impl NodeState {
    pub fn new(id: NodeId, cfg: &NodeConfig) -> Self {
        Self {
            id,
            mesh: MeshState::new(id, cfg.mesh.clone()),
            election: ElectionState::new(id, cfg.election),
            backbone: BackboneState::new(id, cfg.backbone),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn mesh(&self) -> &MeshState {
        &self.mesh
    }

    pub fn election(&self) -> &ElectionState {
        &self.election
    }

    pub fn backbone(&self) -> &BackboneState {
        &self.backbone
    }

    pub fn is_ch(&self) -> bool {
        self.election.is_ch()
    }

    pub fn cluster(&self) -> NodeId {
        self.election.cluster()
    }

    pub fn occupancy(&self) -> Occupancy {
        let pending = self.mesh.pending().len();
        Occupancy {
            neighbors: self.mesh.neighbor_count(),
            two_hop: self.mesh.two_hop().len(),
            routes: self.mesh.route_count(),
            pending_rreq: pending,
            duplicates: self.mesh.duplicate_entries() + self.backbone.duplicate_entries(),
            reassembly: self.mesh.reassembly_buffers(),
            backbone_queues: self.backbone.queues().len(),
            discovery_queues: pending,
            directory: self.backbone.directory().len(),
        }
    }

    /// Accounted protocol-state bytes.
    pub fn state_footprint(&self) -> usize {
        footprint(&self.occupancy())
    }

    /// Earliest time at which [`NodeState::on_tick`] has work.
    pub fn next_deadline(&self) -> Option<SimTime> {
        [self.mesh.next_deadline(), self.backbone.next_deadline()].into_iter().flatten().min()
    }

    fn reevaluate(&mut self, now: SimTime, out: &mut Vec<NodeAction>) {
        let before = (self.election.role(), self.election.cluster());
        let candidates: Vec<Candidate> = self
            .mesh
            .mutual_present(now)
            .map(|e| Candidate { id: e.id, key: e.advertised_key, claims_ch: e.flags.is_ch, cluster: e.cluster })
            .collect();
        self.election.evaluate_role(&candidates);
        if self.election.apply_battery_policy(self.election.battery_pct()) {
            self.election.evaluate_role(&candidates);
        }
        let after = (self.election.role(), self.election.cluster());
        if before.0 != after.0 {
            if self.election.is_ch() {
                self.backbone.schedule_digest(now);
            } else {
                self.backbone.cancel_digest();
                out.extend(self.backbone.drain().into_iter().map(NodeAction::Lora));
            }
        }
        if before != after {
            out.push(NodeAction::RoleChanged { role: after.0, cluster: after.1 });
        }
    }

    /// Runs housekeeping and builds this node's next beacon.
    pub fn beacon(&mut self, now: SimTime) -> (Beacon, Vec<NodeAction>) {
        let mut out = Vec::new();
        self.mesh.expire_neighbors(now);
        self.reevaluate(now, &mut out);
        let beacon = Beacon {
            version: PROTOCOL_VERSION,
            node: self.id,
            advertised_key: self.election.advertised_key(),
            flags: BeaconFlags { is_ch: self.election.is_ch(), demoting: self.election.demoted() },
            battery_pct: self.election.battery_pct(),
            cluster: self.election.cluster(),
            neighbors: self.mesh.beacon_neighbors(now),
        };
        (beacon, out)
    }

    fn run_mesh<F>(&mut self, now: SimTime, f: F) -> Vec<NodeAction>
    where
        F: FnOnce(&mut MeshState, &MeshContext<'_>) -> Vec<MeshAction>,
    {
        let id = self.id;
        let directory = self.backbone.directory();
        let remote = move |n: NodeId| directory.lookup(n).is_some_and(|ch| ch != id);
        let ctx =
            MeshContext { is_ch: self.election.is_ch(), cluster_head: self.election.cluster(), remote_member: &remote };
        let actions = f(&mut self.mesh, &ctx);
        self.convert(actions, now)
    }

    fn convert(&mut self, actions: Vec<MeshAction>, now: SimTime) -> Vec<NodeAction> {
        let mut out = Vec::new();
        let mut escalated = Vec::new();
        for a in actions {
            match a {
                MeshAction::Send { target, frame, timing } => out.push(NodeAction::Ble { target, frame, timing }),
                MeshAction::Deliver { src, msg_seq, payload } => {
                    out.push(NodeAction::Deliver { src, msg_seq, payload })
                }
                MeshAction::Drop { reason, src, msg_seq } => out.push(NodeAction::Drop { reason, src, msg_seq }),
                MeshAction::Escalate(frags) => escalated.extend(frags),
            }
        }
        if !escalated.is_empty() {
            match self.backbone.enqueue_for_backbone(self.election.is_ch(), escalated.clone(), now) {
                Ok(frames) => {
                    out.extend(frames.into_iter().map(NodeAction::Lora));
                    out.extend(self.backbone.flush_aggregate(now).into_iter().map(NodeAction::Lora));
                }
                Err(_) => out.extend(escalated.into_iter().map(|f| NodeAction::Drop {
                    reason: DropReason::NoRoute,
                    src: f.src,
                    msg_seq: f.msg_seq,
                })),
            }
        }
        out
    }

    pub fn originate(
        &mut self,
        dst: NodeId,
        payload: &[u8],
        now: SimTime,
    ) -> Result<(u16, Vec<NodeAction>), MeshError> {
        let mut seq = None;
        let mut err = None;
        let out = self.run_mesh(now, |m, ctx| match m.originate(dst, payload, now, ctx) {
            Ok((s, a)) => {
                seq = Some(s);
                a
            }
            Err(e) => {
                err = Some(e);
                Vec::new()
            }
        });
        match (seq, err) {
            (Some(s), _) => Ok((s, out)),
            (None, Some(e)) => Err(e),
            (None, None) => unreachable!("originate returns either a sequence or an error"),
        }
    }

    /// A BLE frame heard from `sender` at the given RSSI.
    pub fn on_ble(&mut self, frame: &BleFrame, sender: NodeId, rssi_dbm: i32, now: SimTime) -> Vec<NodeAction> {
        match frame {
            BleFrame::Beacon(b) => {
                self.mesh.process_beacon(b, rssi_dbm, now);
                let mut out = Vec::new();
                self.reevaluate(now, &mut out);
                out
            }
            BleFrame::Rreq(r) => self.run_mesh(now, |m, ctx| m.handle_rreq(r, sender, rssi_dbm, now, ctx)),
            BleFrame::Rrep(r) => self.run_mesh(now, |m, ctx| m.handle_rrep(r, sender, rssi_dbm, now, ctx)),
            BleFrame::Data(f) => self.run_mesh(now, |m, ctx| m.on_data(f.clone(), false, now, ctx)),
            BleFrame::Escalated(f) => self.run_mesh(now, |m, ctx| m.on_data(f.clone(), true, now, ctx)),
        }
    }

    /// A LoRa frame received inside this node's listen window.
    pub fn on_lora(&mut self, frame: &LoraFrame, now: SimTime) -> Vec<NodeAction> {
        if !self.election.is_ch() {
            return Vec::new();
        }
        let outcome = self.backbone.handle_lora_frame(frame, now);
        let mut out: Vec<NodeAction> = outcome.rebroadcast.into_iter().map(NodeAction::Lora).collect();
        if !outcome.deliver.is_empty() {
            let deliver = outcome.deliver;
            out.extend(self.run_mesh(now, |m, ctx| m.inject_from_backbone(deliver, now, ctx)));
        }
        out
    }

    /// Timer-driven work: discovery rings, reassembly and aggregation
    /// timeouts, directory expiry.
    pub fn on_tick(&mut self, now: SimTime) -> Vec<NodeAction> {
        let mut out = self.run_mesh(now, |m, ctx| m.on_tick(now, ctx));
        out.extend(self.backbone.flush_aggregate(now).into_iter().map(NodeAction::Lora));
        self.backbone.expire_directory(now);
        out
    }

    /// Called at the start of each LoRa listen window.
    pub fn on_window_start(&mut self, now: SimTime) -> Vec<NodeAction> {
        let members = self.cluster_members(now);
        self.backbone
            .emit_membership_digest(self.election.is_ch(), &members, now)
            .into_iter()
            .map(NodeAction::Lora)
            .collect()
    }

    /// Members this cluster head can vouch for: one-hop neighbors that
    /// name it as cluster, plus two-hop nodes reached through them.
    pub fn cluster_members(&self, now: SimTime) -> Vec<NodeId> {
        let mut members: Vec<NodeId> =
            self.mesh.mutual_present(now).filter(|e| e.cluster == self.id).map(|e| e.id).collect();
        let via: Vec<NodeId> = members.clone();
        for e in self.mesh.two_hop() {
            if !via.contains(&e.via) || e.target == self.id {
                continue;
            }
            let elsewhere = self.mesh.neighbor(e.target).is_some_and(|n| n.cluster != self.id);
            if !elsewhere {
                members.push(e.target);
            }
        }
        members.sort_unstable();
        members.dedup();
        members
    }

    pub fn set_battery(&mut self, pct: u8, now: SimTime) -> Vec<NodeAction> {
        self.election.apply_battery_policy(pct);
        let mut out = Vec::new();
        self.reevaluate(now, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::budget::{FIXED_OVERHEAD, RAM_BUDGET};

    #[test]
    fn fresh_node_footprint_is_overhead() {
        let n = NodeState::new(NodeId(1), &NodeConfig::default());
        assert_eq!(n.state_footprint(), FIXED_OVERHEAD);
        assert!(n.state_footprint() <= RAM_BUDGET);
    }

    #[test]
    fn lone_node_heads_its_own_cluster() {
        let mut n = NodeState::new(NodeId(7), &NodeConfig::default());
        let (b, _) = n.beacon(SimTime::ZERO);
        assert!(b.flags.is_ch);
        assert_eq!(b.cluster, NodeId(7));
        assert!(b.neighbors.is_empty());
    }

    #[test]
    fn two_nodes_elect_higher_id() {
        let cfg = NodeConfig::default();
        let mut a = NodeState::new(NodeId(1), &cfg);
        let mut b = NodeState::new(NodeId(2), &cfg);
        for r in 0..3u64 {
            let t = SimTime::from_secs(3 * r);
            let (ba, _) = a.beacon(t);
            let (bb, _) = b.beacon(t);
            b.on_ble(&BleFrame::Beacon(ba), NodeId(1), -60, t);
            a.on_ble(&BleFrame::Beacon(bb), NodeId(2), -60, t);
        }
        assert!(b.is_ch());
        assert!(!a.is_ch());
        assert_eq!(a.cluster(), NodeId(2));
        assert_eq!(b.cluster_members(SimTime::from_secs(6)), vec![NodeId(1)]);
    }

    #[test]
    fn member_cannot_use_backbone() {
        let cfg = NodeConfig::default();
        let mut a = NodeState::new(NodeId(1), &cfg);
        let mut b = NodeState::new(NodeId(2), &cfg);
        for r in 0..3u64 {
            let t = SimTime::from_secs(3 * r);
            let (ba, _) = a.beacon(t);
            let (bb, _) = b.beacon(t);
            b.on_ble(&BleFrame::Beacon(ba), NodeId(1), -60, t);
            a.on_ble(&BleFrame::Beacon(bb), NodeId(2), -60, t);
        }
        assert!(a.on_window_start(SimTime::from_secs(30)).is_empty());
        let digest = b.on_window_start(SimTime::from_secs(30));
        assert!(matches!(&digest[..], [NodeAction::Lora(f)] if f.header.is_digest()));
    }
}
