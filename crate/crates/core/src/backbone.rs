//! LoRa tier, run by cluster heads: fragment aggregation, duty-cycled
//! listen windows, hop-limited flooding and the membership directory.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::protocol::budget::{BACKBONE_DUP_ENTRIES, BACKBONE_QUEUE, MEMBERSHIP_DIRECTORY};
use crate::protocol::{
    DataFragment, InterClusterHeader, LoraBody, LoraFrame, NodeId, HEADER_FLAG_DIGEST, MAX_DIGEST_MEMBERS,
    MAX_FRAGMENTS,
};
use crate::time::SimTime;

pub const MAX_AGGREGATE_PAYLOAD: usize = 120;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackboneError {
    #[error("node {0} is not a cluster head")]
    NotClusterHead(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ListenSchedule {
    pub period: SimTime,
    pub window: SimTime,
    pub offset: SimTime,
}

impl Default for ListenSchedule {
    fn default() -> Self {
        Self { period: SimTime::from_secs(30), window: SimTime::from_secs(2), offset: SimTime::ZERO }
    }
}

impl ListenSchedule {
    pub fn duty(&self) -> f64 {
        self.window.as_secs_f64() / self.period.as_secs_f64()
    }

    fn phase(&self, now: SimTime) -> Option<u64> {
        if now < self.offset {
            return None;
        }
        Some((now - self.offset).as_micros() % self.period.as_micros())
    }

    pub fn in_listen_window(&self, now: SimTime) -> bool {
        self.phase(now).is_some_and(|p| p < self.window.as_micros())
    }

    /// Start of the window containing `now`, if any.
    pub fn window_start(&self, now: SimTime) -> Option<SimTime> {
        let p = self.phase(now)?;
        (p < self.window.as_micros()).then(|| SimTime::from_micros(now.as_micros() - p))
    }

    /// First window start strictly after `now`.
    pub fn next_window_start(&self, now: SimTime) -> SimTime {
        match self.phase(now) {
            None => self.offset,
            Some(p) => SimTime::from_micros(now.as_micros() - p + self.period.as_micros()),
        }
    }

    /// True when `[start, start + len]` lies inside a single window.
    pub fn covers(&self, start: SimTime, len: SimTime) -> bool {
        match self.window_start(start) {
            Some(ws) => start + len <= ws + self.window,
            None => false,
        }
    }

    /// Total listening time within `[0, until)`.
    pub fn active_time(&self, until: SimTime) -> SimTime {
        if until <= self.offset {
            return SimTime::ZERO;
        }
        let span = (until - self.offset).as_micros();
        let period = self.period.as_micros();
        let full = span / period;
        let rest = (span % period).min(self.window.as_micros());
        SimTime::from_micros(full * self.window.as_micros() + rest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneConfig {
    pub schedule: ListenSchedule,
    pub aggregation_timeout: SimTime,
    pub hop_limit: u8,
    pub digest_period: SimTime,
    pub directory_expiry_periods: u32,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            schedule: ListenSchedule::default(),
            aggregation_timeout: SimTime::from_millis(200),
            hop_limit: 3,
            digest_period: SimTime::from_secs(60),
            directory_expiry_periods: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregationQueue {
    pub dest_ch: NodeId,
    pub fragments: Vec<DataFragment>,
    pub oldest: SimTime,
}

impl AggregationQueue {
    pub fn payload_bytes(&self) -> usize {
        self.fragments.iter().map(|f| f.payload.len()).sum()
    }

    fn full(&self) -> bool {
        self.fragments.len() >= usize::from(MAX_FRAGMENTS) || self.payload_bytes() >= MAX_AGGREGATE_PAYLOAD
    }

    fn fits(&self, frag: &DataFragment) -> bool {
        self.fragments.len() < usize::from(MAX_FRAGMENTS)
            && self.payload_bytes() + frag.payload.len() <= MAX_AGGREGATE_PAYLOAD
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MembershipDirectory {
    entries: BTreeMap<NodeId, (NodeId, SimTime)>,
}

impl MembershipDirectory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, node: NodeId) -> Option<NodeId> {
        self.entries.get(&node).map(|e| e.0)
    }

    pub fn learn(&mut self, node: NodeId, ch: NodeId, now: SimTime) {
        if !node.is_unicast() || !ch.is_unicast() {
            return;
        }
        if !self.entries.contains_key(&node) && self.entries.len() >= MEMBERSHIP_DIRECTORY.capacity {
            let oldest =
                self.entries.iter().min_by_key(|(id, (_, t))| (*t, **id)).map(|(id, _)| *id).expect("non-empty");
            self.entries.remove(&oldest);
        }
        self.entries.insert(node, (ch, now));
    }

    pub fn expire(&mut self, now: SimTime, max_age: SimTime) {
        self.entries.retain(|_, (_, t)| now - *t < max_age);
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.entries.iter().map(|(n, (ch, _))| (*n, *ch))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BackboneCounters {
    pub frames_sent: u64,
    pub frames_received: u64,
    pub duplicates: u64,
    pub rebroadcasts: u64,
    pub digests_sent: u64,
    pub digest_truncations: u64,
}

/// Result of handling one received LoRa frame.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoraOutcome {
    /// Fragments to hand to the local BLE mesh.
    pub deliver: Vec<DataFragment>,
    pub rebroadcast: Option<LoraFrame>,
}

#[derive(Debug, Clone)]
pub struct BackboneState {
    id: NodeId,
    cfg: BackboneConfig,
    queues: Vec<AggregationQueue>,
    directory: MembershipDirectory,
    seen: VecDeque<(NodeId, u8)>,
    next_seq: u8,
    next_digest_at: Option<SimTime>,
    pub counters: BackboneCounters,
}

impl BackboneState {
    pub fn new(id: NodeId, cfg: BackboneConfig) -> Self {
        Self {
            id,
            cfg,
            queues: Vec::new(),
            directory: MembershipDirectory::default(),
            seen: VecDeque::new(),
            next_seq: 0,
            next_digest_at: None,
            counters: BackboneCounters::default(),
        }
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn directory(&self) -> &MembershipDirectory {
        &self.directory
    }

    pub fn directory_mut(&mut self) -> &mut MembershipDirectory {
        &mut self.directory
    }

    pub fn queues(&self) -> &[AggregationQueue] {
        &self.queues
    }

    pub fn duplicate_entries(&self) -> usize {
        self.seen.len()
    }

    fn remember(&mut self, src_ch: NodeId, seq: u8) -> bool {
        if self.seen.contains(&(src_ch, seq)) {
            return false;
        }
        if self.seen.len() >= BACKBONE_DUP_ENTRIES {
            self.seen.pop_front();
        }
        self.seen.push_back((src_ch, seq));
        true
    }

    fn next_header(&mut self, dest_ch: NodeId, flags: u8) -> InterClusterHeader {
        let seq = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        self.remember(self.id, seq);
        InterClusterHeader { dest_ch, hop_limit: self.cfg.hop_limit, flags, backbone_seq: seq }
    }

    fn seal(&mut self, q: AggregationQueue) -> LoraFrame {
        self.counters.frames_sent += 1;
        LoraFrame { header: self.next_header(q.dest_ch, 0), src_ch: self.id, body: LoraBody::Fragments(q.fragments) }
    }

    /// Appends fragments to the queue for the destination's cluster head
    /// (broadcast when the directory has no entry). Frames forced out by a
    /// full queue are returned.
    pub fn enqueue_for_backbone(
        &mut self,
        is_ch: bool,
        fragments: Vec<DataFragment>,
        now: SimTime,
    ) -> Result<Vec<LoraFrame>, BackboneError> {
        if !is_ch {
            return Err(BackboneError::NotClusterHead(self.id));
        }
        let mut out = Vec::new();
        for frag in fragments {
            let dest_ch = self.directory.lookup(frag.dst).unwrap_or(NodeId::BROADCAST);
            let pos = match self.queues.iter().position(|q| q.dest_ch == dest_ch) {
                Some(pos) if self.queues[pos].fits(&frag) => pos,
                Some(pos) => {
                    let q = self.queues.remove(pos);
                    out.push(self.seal(q));
                    self.new_queue(dest_ch, now, &mut out)
                }
                None => self.new_queue(dest_ch, now, &mut out),
            };
            self.queues[pos].fragments.push(frag);
        }
        Ok(out)
    }

    fn new_queue(&mut self, dest_ch: NodeId, now: SimTime, out: &mut Vec<LoraFrame>) -> usize {
        while self.queues.len() >= BACKBONE_QUEUE.capacity {
            let q = self.queues.remove(0);
            out.push(self.seal(q));
        }
        self.queues.push(AggregationQueue { dest_ch, fragments: Vec::new(), oldest: now });
        self.queues.len() - 1
    }

    /// Emits frames for queues that are full or whose oldest entry has
    /// waited the aggregation timeout.
    pub fn flush_aggregate(&mut self, now: SimTime) -> Vec<LoraFrame> {
        let timeout = self.cfg.aggregation_timeout;
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.queues.len() {
            let q = &self.queues[i];
            if q.full() || now - q.oldest >= timeout {
                let q = self.queues.remove(i);
                out.push(self.seal(q));
            } else {
                i += 1;
            }
        }
        out
    }

    /// When the next aggregation timer fires, if any queue is non-empty.
    pub fn next_deadline(&self) -> Option<SimTime> {
        self.queues.iter().map(|q| q.oldest + self.cfg.aggregation_timeout).min()
    }

    /// Emits every queued fragment immediately (used when a node loses the
    /// cluster-head role).
    pub fn drain(&mut self) -> Vec<LoraFrame> {
        let qs = std::mem::take(&mut self.queues);
        qs.into_iter().map(|q| self.seal(q)).collect()
    }

    pub fn handle_lora_frame(&mut self, frame: &LoraFrame, now: SimTime) -> LoraOutcome {
        let mut outcome = LoraOutcome::default();
        if frame.src_ch == self.id || !self.remember(frame.src_ch, frame.header.backbone_seq) {
            self.counters.duplicates += 1;
            return outcome;
        }
        self.counters.frames_received += 1;
        self.directory.learn(frame.src_ch, frame.src_ch, now);
        let for_us = frame.header.dest_ch == self.id || frame.header.dest_ch == NodeId::BROADCAST;
        match &frame.body {
            LoraBody::Digest(members) => {
                for &m in members {
                    self.directory.learn(m, frame.src_ch, now);
                }
            }
            LoraBody::Fragments(frags) => {
                for f in frags {
                    self.directory.learn(f.src, frame.src_ch, now);
                }
                if for_us {
                    outcome.deliver = frags.clone();
                }
            }
        }
        if frame.header.dest_ch != self.id && frame.header.hop_limit > 0 {
            self.counters.rebroadcasts += 1;
            let mut fwd = frame.clone();
            fwd.header.hop_limit -= 1;
            outcome.rebroadcast = Some(fwd);
        }
        outcome
    }

    /// Arms the digest timer so the first digest goes out at the next
    /// opportunity; called when the node becomes cluster head.
    pub fn schedule_digest(&mut self, now: SimTime) {
        self.next_digest_at = Some(now);
    }

    pub fn cancel_digest(&mut self) {
        self.next_digest_at = None;
    }

    pub fn emit_membership_digest(&mut self, is_ch: bool, members: &[NodeId], now: SimTime) -> Option<LoraFrame> {
        if !is_ch {
            return None;
        }
        let due = self.next_digest_at.get_or_insert(now);
        if *due > now {
            return None;
        }
        *due = now + self.cfg.digest_period;
        let mut members: Vec<NodeId> = members.iter().copied().filter(|m| m.is_unicast() && *m != self.id).collect();
        members.sort_unstable();
        members.dedup();
        if members.len() > MAX_DIGEST_MEMBERS {
            members.truncate(MAX_DIGEST_MEMBERS);
            self.counters.digest_truncations += 1;
        }
        self.counters.digests_sent += 1;
        Some(LoraFrame {
            header: self.next_header(NodeId::BROADCAST, HEADER_FLAG_DIGEST),
            src_ch: self.id,
            body: LoraBody::Digest(members),
        })
    }

    pub fn expire_directory(&mut self, now: SimTime) {
        let max_age =
            SimTime::from_micros(self.cfg.digest_period.as_micros() * u64::from(self.cfg.directory_expiry_periods));
        self.directory.expire(now, max_age);
    }
}
