//! Wire formats. All multi-byte integers are big-endian.
//!
//! BLE-borne frames start with a one-byte type tag and must fit the 31-byte
//! advertising payload:
//!
//! | frame       | layout                                                                          | size     |
//! |-------------|---------------------------------------------------------------------------------|----------|
//! | beacon      | `tag ver/flags node:2 key:2 battery cluster:2 n [id:2 lq]*n`                     | 10 + 3n  |
//! | RREQ        | `tag rreq_id origin:2 origin_seq:2 dest:2 dest_seq:2 hops cost:2 ttl`            | 14       |
//! | RREP        | `tag origin:2 dest:2 dest_seq:2 hops cost:2 lifetime`                            | 11       |
//! | data        | `tag src:2 dst:2 msg_seq:2 ttl idx/count len payload`                            | 10 + len |
//!
//! The escalated-data frame (tag 0x05) shares the data layout; it marks a
//! fragment that is travelling to the sender's cluster head for bridging.
//!
//! LoRa frames carry no tag; the first four bytes are the inter-cluster
//! header `dest_ch:2 hop_limit/flags backbone_seq`, followed by
//! `src_ch:2 count` and either `count` length-prefixed encoded data
//! fragments or, when flag bit 0 (digest) is set, `count` member ids.

use super::{NodeId, ProtocolError};

pub const BLE_MAX_FRAME: usize = 31;
pub const LORA_MAX_FRAME: usize = 255;
pub const PROTOCOL_VERSION: u8 = 1;
pub const MAX_BEACON_NEIGHBORS: usize = 4;
pub const MAX_FRAGMENT_PAYLOAD: usize = 15;
pub const MAX_FRAGMENTS: u8 = 8;
pub const MAX_DIGEST_MEMBERS: usize = 60;

pub const TAG_BEACON: u8 = 0x01;
pub const TAG_RREQ: u8 = 0x02;
pub const TAG_RREP: u8 = 0x03;
pub const TAG_DATA: u8 = 0x04;
pub const TAG_ESCALATED: u8 = 0x05;

pub const BEACON_HEADER_LEN: usize = 10;
pub const RREQ_LEN: usize = 14;
pub const RREP_LEN: usize = 11;
pub const DATA_HEADER_LEN: usize = 10;
pub const LORA_HEADER_LEN: usize = 4;
pub const LORA_PREFIX_LEN: usize = 7;

/// Header flag marking a membership digest frame.
pub const HEADER_FLAG_DIGEST: u8 = 0x1;

/// Which radio a frame travels on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Radio {
    Ble,
    Lora,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct BeaconFlags {
    pub is_ch: bool,
    pub demoting: bool,
}

impl BeaconFlags {
    fn bits(self) -> u8 {
        u8::from(self.is_ch) | (u8::from(self.demoting) << 1)
    }

    fn from_bits(bits: u8) -> Result<Self, ProtocolError> {
        if bits & !0b11 != 0 {
            return Err(ProtocolError::FieldOutOfRange { field: "beacon.flags", value: u32::from(bits) });
        }
        Ok(Self { is_ch: bits & 0b01 != 0, demoting: bits & 0b10 != 0 })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BeaconNeighbor {
    pub id: NodeId,
    pub lq: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Beacon {
    pub version: u8,
    pub node: NodeId,
    pub advertised_key: u16,
    pub flags: BeaconFlags,
    pub battery_pct: u8,
    pub cluster: NodeId,
    pub neighbors: Vec<BeaconNeighbor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rreq {
    pub rreq_id: u8,
    pub origin: NodeId,
    pub origin_seq: u16,
    pub dest: NodeId,
    /// Zero means the originator knows no sequence number for `dest`.
    pub dest_seq: u16,
    pub hop_count: u8,
    pub path_cost: u16,
    pub ttl: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rrep {
    pub origin: NodeId,
    pub dest: NodeId,
    pub dest_seq: u16,
    pub hop_count: u8,
    pub path_cost: u16,
    /// Route lifetime in seconds.
    pub lifetime: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DataFragment {
    pub src: NodeId,
    pub dst: NodeId,
    pub msg_seq: u16,
    pub ttl: u8,
    pub frag_index: u8,
    pub frag_count: u8,
    pub payload: Vec<u8>,
}

impl DataFragment {
    pub fn encoded_len(&self) -> usize {
        DATA_HEADER_LEN + self.payload.len()
    }

    fn validate(&self) -> Result<(), ProtocolError> {
        if !(1..=MAX_FRAGMENTS).contains(&self.frag_count) {
            return Err(ProtocolError::FragmentCount(self.frag_count));
        }
        if self.frag_index >= self.frag_count {
            return Err(ProtocolError::FragmentIndex { index: self.frag_index, count: self.frag_count });
        }
        if self.payload.len() > MAX_FRAGMENT_PAYLOAD {
            return Err(ProtocolError::PayloadTooLarge(self.payload.len()));
        }
        Ok(())
    }

    fn write(&self, tag: u8, out: &mut Vec<u8>) -> Result<(), ProtocolError> {
        self.validate()?;
        out.push(tag);
        put_id(out, self.src);
        put_id(out, self.dst);
        out.extend_from_slice(&self.msg_seq.to_be_bytes());
        out.push(self.ttl);
        out.push((self.frag_index << 4) | self.frag_count);
        out.push(self.payload.len() as u8);
        out.extend_from_slice(&self.payload);
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, ProtocolError> {
        let src = r.id()?;
        let dst = r.id()?;
        let msg_seq = r.u16()?;
        let ttl = r.u8()?;
        let idx_count = r.u8()?;
        let len = usize::from(r.u8()?);
        if len > MAX_FRAGMENT_PAYLOAD {
            return Err(ProtocolError::PayloadTooLarge(len));
        }
        let payload = r.take(len)?.to_vec();
        let frag = Self { src, dst, msg_seq, ttl, frag_index: idx_count >> 4, frag_count: idx_count & 0x0F, payload };
        frag.validate()?;
        Ok(frag)
    }
}

/// A frame on the BLE advertising channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BleFrame {
    Beacon(Beacon),
    Rreq(Rreq),
    Rrep(Rrep),
    Data(DataFragment),
    Escalated(DataFragment),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InterClusterHeader {
    pub dest_ch: NodeId,
    /// 4 bits.
    pub hop_limit: u8,
    /// 4 bits; bit 0 is [`HEADER_FLAG_DIGEST`].
    pub flags: u8,
    pub backbone_seq: u8,
}

impl InterClusterHeader {
    pub fn encode(&self) -> Result<[u8; LORA_HEADER_LEN], ProtocolError> {
        if self.hop_limit > 0x0F {
            return Err(ProtocolError::FieldOutOfRange { field: "header.hop_limit", value: u32::from(self.hop_limit) });
        }
        if self.flags > 0x0F {
            return Err(ProtocolError::FieldOutOfRange { field: "header.flags", value: u32::from(self.flags) });
        }
        let id = self.dest_ch.0.to_be_bytes();
        Ok([id[0], id[1], (self.hop_limit << 4) | self.flags, self.backbone_seq])
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(bytes);
        let header = Self::read(&mut r)?;
        r.finish()?;
        Ok(header)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, ProtocolError> {
        let dest_ch = r.id()?;
        let b = r.u8()?;
        let backbone_seq = r.u8()?;
        Ok(Self { dest_ch, hop_limit: b >> 4, flags: b & 0x0F, backbone_seq })
    }

    pub fn is_digest(&self) -> bool {
        self.flags & HEADER_FLAG_DIGEST != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LoraBody {
    Fragments(Vec<DataFragment>),
    Digest(Vec<NodeId>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LoraFrame {
    pub header: InterClusterHeader,
    pub src_ch: NodeId,
    pub body: LoraBody,
}

impl LoraFrame {
    pub fn fragment_count(&self) -> usize {
        match &self.body {
            LoraBody::Fragments(f) => f.len(),
            LoraBody::Digest(_) => 0,
        }
    }

    pub fn fragments(&self) -> &[DataFragment] {
        match &self.body {
            LoraBody::Fragments(f) => f,
            LoraBody::Digest(_) => &[],
        }
    }

    pub fn encoded_len(&self) -> usize {
        LORA_PREFIX_LEN
            + match &self.body {
                LoraBody::Fragments(f) => f.iter().map(|f| 1 + f.encoded_len()).sum::<usize>(),
                LoraBody::Digest(ids) => 2 * ids.len(),
            }
    }

    pub fn encode(&self) -> Result<Vec<u8>, ProtocolError> {
        let digest = matches!(self.body, LoraBody::Digest(_));
        if digest != self.header.is_digest() {
            return Err(ProtocolError::DigestFlagMismatch);
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.header.encode()?);
        put_id(&mut out, self.src_ch);
        match &self.body {
            LoraBody::Fragments(frags) => {
                if frags.is_empty() || frags.len() > usize::from(MAX_FRAGMENTS) {
                    return Err(ProtocolError::FragmentCount(frags.len().min(255) as u8));
                }
                out.push(frags.len() as u8);
                for f in frags {
                    out.push(f.encoded_len() as u8);
                    f.write(TAG_DATA, &mut out)?;
                }
            }
            LoraBody::Digest(ids) => {
                if ids.len() > MAX_DIGEST_MEMBERS {
                    return Err(ProtocolError::TooManyMembers(ids.len()));
                }
                out.push(ids.len() as u8);
                for id in ids {
                    put_id(&mut out, *id);
                }
            }
        }
        if out.len() > LORA_MAX_FRAME {
            return Err(ProtocolError::FrameTooLarge(out.len()));
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        if bytes.len() > LORA_MAX_FRAME {
            return Err(ProtocolError::FrameTooLarge(bytes.len()));
        }
        let mut r = Reader::new(bytes);
        let header = InterClusterHeader::read(&mut r)?;
        let src_ch = r.id()?;
        let count = usize::from(r.u8()?);
        let body = if header.is_digest() {
            if count > MAX_DIGEST_MEMBERS {
                return Err(ProtocolError::TooManyMembers(count));
            }
            let ids = (0..count).map(|_| r.id()).collect::<Result<Vec<_>, _>>()?;
            LoraBody::Digest(ids)
        } else {
            if count == 0 || count > usize::from(MAX_FRAGMENTS) {
                return Err(ProtocolError::FragmentCount(count as u8));
            }
            let mut frags = Vec::with_capacity(count);
            for _ in 0..count {
                let len = usize::from(r.u8()?);
                let mut inner = Reader::new(r.take(len)?);
                let tag = inner.u8()?;
                if tag != TAG_DATA {
                    return Err(ProtocolError::UnknownTag(tag));
                }
                let f = DataFragment::read(&mut inner)?;
                inner.finish()?;
                frags.push(f);
            }
            LoraBody::Fragments(frags)
        };
        r.finish()?;
        Ok(Self { header, src_ch, body })
    }
}

/// Any frame on either radio.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Frame {
    Ble(BleFrame),
    Lora(LoraFrame),
}

impl Frame {
    pub fn radio(&self) -> Radio {
        match self {
            Frame::Ble(_) => Radio::Ble,
            Frame::Lora(_) => Radio::Lora,
        }
    }
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, ProtocolError> {
    match frame {
        Frame::Ble(f) => f.encode(),
        Frame::Lora(f) => f.encode(),
    }
}

/// LoRa frames carry no tag, so the caller names the radio the bytes came
/// from.
pub fn decode_frame(radio: Radio, bytes: &[u8]) -> Result<Frame, ProtocolError> {
    match radio {
        Radio::Ble => BleFrame::decode(bytes).map(Frame::Ble),
        Radio::Lora => LoraFrame::decode(bytes).map(Frame::Lora),
    }
}

impl BleFrame {
    pub fn encode(&self) -> Result<Vec<u8>, ProtocolError> {
        let mut out = Vec::with_capacity(BLE_MAX_FRAME);
        match self {
            BleFrame::Beacon(b) => {
                if b.version > 0x0F {
                    return Err(ProtocolError::FieldOutOfRange {
                        field: "beacon.version",
                        value: u32::from(b.version),
                    });
                }
                if b.battery_pct > 100 {
                    return Err(ProtocolError::FieldOutOfRange {
                        field: "beacon.battery_pct",
                        value: u32::from(b.battery_pct),
                    });
                }
                if b.neighbors.len() > MAX_BEACON_NEIGHBORS {
                    return Err(ProtocolError::TooManyNeighbors(b.neighbors.len()));
                }
                out.push(TAG_BEACON);
                out.push((b.version << 4) | b.flags.bits());
                put_id(&mut out, b.node);
                out.extend_from_slice(&b.advertised_key.to_be_bytes());
                out.push(b.battery_pct);
                put_id(&mut out, b.cluster);
                out.push(b.neighbors.len() as u8);
                for n in &b.neighbors {
                    put_id(&mut out, n.id);
                    out.push(n.lq);
                }
            }
            BleFrame::Rreq(q) => {
                out.push(TAG_RREQ);
                out.push(q.rreq_id);
                put_id(&mut out, q.origin);
                out.extend_from_slice(&q.origin_seq.to_be_bytes());
                put_id(&mut out, q.dest);
                out.extend_from_slice(&q.dest_seq.to_be_bytes());
                out.push(q.hop_count);
                out.extend_from_slice(&q.path_cost.to_be_bytes());
                out.push(q.ttl);
            }
            BleFrame::Rrep(p) => {
                out.push(TAG_RREP);
                put_id(&mut out, p.origin);
                put_id(&mut out, p.dest);
                out.extend_from_slice(&p.dest_seq.to_be_bytes());
                out.push(p.hop_count);
                out.extend_from_slice(&p.path_cost.to_be_bytes());
                out.push(p.lifetime);
            }
            BleFrame::Data(f) => f.write(TAG_DATA, &mut out)?,
            BleFrame::Escalated(f) => f.write(TAG_ESCALATED, &mut out)?,
        }
        debug_assert!(out.len() <= BLE_MAX_FRAME);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        if bytes.len() > BLE_MAX_FRAME {
            return Err(ProtocolError::FrameTooLarge(bytes.len()));
        }
        let mut r = Reader::new(bytes);
        let frame = match r.u8()? {
            TAG_BEACON => {
                let vf = r.u8()?;
                let node = r.id()?;
                let advertised_key = r.u16()?;
                let battery_pct = r.u8()?;
                if battery_pct > 100 {
                    return Err(ProtocolError::FieldOutOfRange {
                        field: "beacon.battery_pct",
                        value: u32::from(battery_pct),
                    });
                }
                let cluster = r.id()?;
                let n = usize::from(r.u8()?);
                if n > MAX_BEACON_NEIGHBORS {
                    return Err(ProtocolError::TooManyNeighbors(n));
                }
                let neighbors = (0..n)
                    .map(|_| Ok(BeaconNeighbor { id: r.id()?, lq: r.u8()? }))
                    .collect::<Result<Vec<_>, ProtocolError>>()?;
                BleFrame::Beacon(Beacon {
                    version: vf >> 4,
                    node,
                    advertised_key,
                    flags: BeaconFlags::from_bits(vf & 0x0F)?,
                    battery_pct,
                    cluster,
                    neighbors,
                })
            }
            TAG_RREQ => BleFrame::Rreq(Rreq {
                rreq_id: r.u8()?,
                origin: r.id()?,
                origin_seq: r.u16()?,
                dest: r.id()?,
                dest_seq: r.u16()?,
                hop_count: r.u8()?,
                path_cost: r.u16()?,
                ttl: r.u8()?,
            }),
            TAG_RREP => BleFrame::Rrep(Rrep {
                origin: r.id()?,
                dest: r.id()?,
                dest_seq: r.u16()?,
                hop_count: r.u8()?,
                path_cost: r.u16()?,
                lifetime: r.u8()?,
            }),
            TAG_DATA => BleFrame::Data(DataFragment::read(&mut r)?),
            TAG_ESCALATED => BleFrame::Escalated(DataFragment::read(&mut r)?),
            other => return Err(ProtocolError::UnknownTag(other)),
        };
        r.finish()?;
        Ok(frame)
    }
}

fn put_id(out: &mut Vec<u8>, id: NodeId) {
    out.extend_from_slice(&id.0.to_be_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(ProtocolError::Truncated { needed: end, got: self.buf.len() });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn id(&mut self) -> Result<NodeId, ProtocolError> {
        self.u16().map(NodeId)
    }

    fn finish(&self) -> Result<(), ProtocolError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(ProtocolError::TrailingBytes(self.buf.len() - self.pos))
        }
    }
}
