//! Frame generators shared by the codec properties and the acceptance
//! suite.

use proptest::collection::vec;
use proptest::prelude::*;
use proptest::sample::Index;

use dualmesh::protocol::{
    Beacon, BeaconFlags, BeaconNeighbor, BleFrame, DataFragment, Frame, InterClusterHeader, LoraBody, LoraFrame,
    NodeId, Rrep, Rreq, HEADER_FLAG_DIGEST, MAX_BEACON_NEIGHBORS, MAX_DIGEST_MEMBERS, MAX_FRAGMENTS,
    MAX_FRAGMENT_PAYLOAD,
};

/// Frames per generated batch; 1000 cases give 10⁵ frames.
pub const BATCH: usize = 100;

pub fn node() -> impl Strategy<Value = NodeId> {
    any::<u16>().prop_map(NodeId)
}

pub fn beacon() -> impl Strategy<Value = Beacon> {
    (
        0u8..=0x0F,
        node(),
        any::<u16>(),
        any::<(bool, bool)>(),
        0u8..=100,
        node(),
        vec((node(), any::<u8>()).prop_map(|(id, lq)| BeaconNeighbor { id, lq }), 0..=MAX_BEACON_NEIGHBORS),
    )
        .prop_map(|(version, node, advertised_key, (is_ch, demoting), battery_pct, cluster, neighbors)| Beacon {
            version,
            node,
            advertised_key,
            flags: BeaconFlags { is_ch, demoting },
            battery_pct,
            cluster,
            neighbors,
        })
}

pub fn fragment() -> impl Strategy<Value = DataFragment> {
    (
        node(),
        node(),
        any::<u16>(),
        any::<u8>(),
        1u8..=MAX_FRAGMENTS,
        any::<Index>(),
        vec(any::<u8>(), 0..=MAX_FRAGMENT_PAYLOAD),
    )
        .prop_map(|(src, dst, msg_seq, ttl, frag_count, idx, payload)| DataFragment {
            src,
            dst,
            msg_seq,
            ttl,
            frag_index: idx.index(usize::from(frag_count)) as u8,
            frag_count,
            payload,
        })
}

pub fn ble_frame() -> impl Strategy<Value = BleFrame> {
    prop_oneof![
        beacon().prop_map(BleFrame::Beacon),
        any::<(u8, u16, u16, u16, u16, u8, u16, u8)>().prop_map(
            |(rreq_id, o, origin_seq, d, dest_seq, hop_count, path_cost, ttl)| {
                BleFrame::Rreq(Rreq {
                    rreq_id,
                    origin: NodeId(o),
                    origin_seq,
                    dest: NodeId(d),
                    dest_seq,
                    hop_count,
                    path_cost,
                    ttl,
                })
            }
        ),
        any::<(u16, u16, u16, u8, u16, u8)>().prop_map(|(o, d, dest_seq, hop_count, path_cost, lifetime)| {
            BleFrame::Rrep(Rrep { origin: NodeId(o), dest: NodeId(d), dest_seq, hop_count, path_cost, lifetime })
        }),
        fragment().prop_map(BleFrame::Data),
        fragment().prop_map(BleFrame::Escalated),
    ]
}

pub fn lora_frame() -> impl Strategy<Value = LoraFrame> {
    let body = prop_oneof![
        vec(fragment(), 1..=usize::from(MAX_FRAGMENTS)).prop_map(LoraBody::Fragments),
        vec(node(), 0..=MAX_DIGEST_MEMBERS).prop_map(LoraBody::Digest),
    ];
    (node(), 0u8..=0x0F, 0u8..=0x07, any::<u8>(), node(), body).prop_map(
        |(dest_ch, hop_limit, flags, seq, src_ch, body)| {
            let digest = matches!(body, LoraBody::Digest(_));
            let flags = (flags << 1) | if digest { HEADER_FLAG_DIGEST } else { 0 };
            LoraFrame { header: InterClusterHeader { dest_ch, hop_limit, flags, backbone_seq: seq }, src_ch, body }
        },
    )
}

pub fn frame() -> impl Strategy<Value = Frame> {
    prop_oneof![ble_frame().prop_map(Frame::Ble), lora_frame().prop_map(Frame::Lora)]
}
