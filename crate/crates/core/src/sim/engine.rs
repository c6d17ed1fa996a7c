//! Single-threaded discrete-event engine driving one [`NodeState`] per
//! placed node over BLE and LoRa channels.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::ListenSchedule;
use crate::cluster::Role;
use crate::mesh::{DropReason, LinkTarget, RouteDecision, SendTiming};
use crate::node::{NodeAction, NodeState};
use crate::protocol::budget::RAM_BUDGET;
use crate::protocol::{BleFrame, DataFragment, LoraFrame, NodeId, Radio, MAX_FRAGMENT_PAYLOAD};
use crate::time::SimTime;

use super::channel::{rssi_at, AirLog, Airing, LinkModel};
use super::config::ScenarioConfig;
use super::metrics::{ChannelMetrics, Fate, MessageRecord, MetricsReport, NodeMetrics, RoleChange};
use super::traffic::{classify, draw_destination, next_arrival};
use super::SimError;

/// Beacons go out early by up to this fraction of the interval, so two
/// nodes drift apart within a few intervals after colliding.
const BEACON_JITTER_FRACTION: u64 = 10;
const FORWARD_JITTER: SimTime = SimTime::from_millis(50);
/// Relay levels of the first discovery ring that a released fragment waits
/// out.
const SETTLE_RELAYS: u64 = 2;
const TRAFFIC_STREAM: u64 = 1;
const MAC_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    WindowStart,
    Battery(usize),
    Scripted(usize),
    TxEnd(u64),
    LoraAttempt(usize),
    BleEnqueue(usize, u64),
    Beacon(usize),
    Traffic(usize),
    Tick(usize, u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    time: SimTime,
    node_key: u16,
    seq: u64,
    kind: EventKind,
}

#[derive(Debug, Clone)]
struct Transmission {
    airing: Airing,
    bytes: Vec<u8>,
    target: LinkTarget,
}

#[derive(Debug, Clone)]
struct LoraOut {
    frame: LoraFrame,
    /// Spread over the listen window instead of sending at once.
    contend: bool,
    planned: Option<SimTime>,
}

#[derive(Debug, Clone, Default)]
struct Ledger {
    ble_frames: u64,
    lora_frames: u64,
    ble_tx_nj: u64,
    lora_tx_nj: u64,
    lora_listen_nj: u64,
    listen_windows: u64,
    peak_footprint: usize,
}

#[derive(Debug, Clone)]
struct SimNode {
    state: NodeState,
    x: f64,
    y: f64,
    ble_queue: VecDeque<(LinkTarget, BleFrame)>,
    ble_busy: bool,
    lora_queue: VecDeque<LoraOut>,
    lora_busy: bool,
    tick_version: u64,
    tick_at: Option<SimTime>,
    ledger: Ledger,
}

#[derive(Debug, Clone)]
struct MessageTrack {
    record: MessageRecord,
    payload: Vec<u8>,
    per_fragment: Vec<(u32, u32)>,
    collided: bool,
    ttl: bool,
    undeliverable: bool,
}

/// A running scenario.
pub struct Simulation {
    cfg: ScenarioConfig,
    schedule: ListenSchedule,
    nodes: Vec<SimNode>,
    index: BTreeMap<NodeId, usize>,
    ble_audible: Vec<Vec<bool>>,
    lora_audible: Vec<Vec<bool>>,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    now: SimTime,
    air: AirLog,
    air_horizon: SimTime,
    flood_settle: SimTime,
    next_tx: u64,
    transmissions: HashMap<u64, Transmission>,
    pending_ble: HashMap<u64, (LinkTarget, BleFrame)>,
    traffic_rng: ChaCha8Rng,
    mac_rng: ChaCha8Rng,
    messages: Vec<MessageTrack>,
    message_index: HashMap<(NodeId, u16), usize>,
    channels: BTreeMap<(Radio, u8), ChannelMetrics>,
    roles: Vec<RoleChange>,
    counters: BTreeMap<&'static str, u64>,
    ble_packet_nj: u64,
}

fn key_of(kind: EventKind, nodes: &[SimNode], tx_sender: Option<usize>) -> u16 {
    let idx = match kind {
        EventKind::WindowStart | EventKind::Battery(_) | EventKind::Scripted(_) => return 0,
        EventKind::TxEnd(_) => tx_sender.expect("transmission sender"),
        EventKind::LoraAttempt(i)
        | EventKind::BleEnqueue(i, _)
        | EventKind::Beacon(i)
        | EventKind::Traffic(i)
        | EventKind::Tick(i, _) => i,
    };
    nodes[idx].state.id().0
}

fn energy_nj(power_mw: f64, t: SimTime) -> u64 {
    (power_mw * t.as_micros() as f64).round() as u64
}

fn data_fragment(frame: &BleFrame) -> Option<&DataFragment> {
    match frame {
        BleFrame::Data(f) | BleFrame::Escalated(f) => Some(f),
        _ => None,
    }
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let node_cfg = cfg.node_config();
        let mut specs = cfg.nodes.clone();
        specs.sort_by_key(|n| n.id);
        let nodes: Vec<SimNode> = specs
            .iter()
            .map(|s| SimNode {
                state: NodeState::new(NodeId(s.id), &node_cfg),
                x: s.x,
                y: s.y,
                ble_queue: VecDeque::new(),
                ble_busy: false,
                lora_queue: VecDeque::new(),
                lora_busy: false,
                tick_version: 0,
                tick_at: None,
                ledger: Ledger::default(),
            })
            .collect();
        let index = nodes.iter().enumerate().map(|(i, n)| (n.state.id(), i)).collect();
        let link = LinkModel::from_radio(&cfg.radio);
        let dist = |a: &SimNode, b: &SimNode| (a.x - b.x).hypot(a.y - b.y);
        let audible = |radio: Radio| -> Vec<Vec<bool>> {
            nodes
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    nodes.iter().enumerate().map(|(j, b)| i != j && link.in_range(radio, dist(a, b))).collect()
                })
                .collect()
        };
        let ble_audible = audible(Radio::Ble);
        let lora_audible = audible(Radio::Lora);

        let mut traffic_rng = ChaCha8Rng::seed_from_u64(cfg.scenario.seed);
        traffic_rng.set_stream(TRAFFIC_STREAM);
        let mut mac_rng = ChaCha8Rng::seed_from_u64(cfg.scenario.seed);
        mac_rng.set_stream(MAC_STREAM);

        let max_lora = cfg.lora_airtime(crate::protocol::LORA_MAX_FRAME);
        let air_horizon = max_lora.max(cfg.ble_airtime()) + SimTime::from_secs(1);
        let ble_packet_nj = energy_nj(cfg.radio.ble_tx_power_mw, cfg.ble_airtime());

        let mut sim = Self {
            cfg: cfg.clone(),
            schedule: cfg.schedule(),
            nodes,
            index,
            ble_audible,
            lora_audible,
            queue: BinaryHeap::new(),
            seq: 0,
            now: SimTime::ZERO,
            air: AirLog::default(),
            air_horizon,
            flood_settle: SimTime::from_micros(SETTLE_RELAYS * (FORWARD_JITTER + cfg.ble_airtime()).as_micros()),
            next_tx: 0,
            transmissions: HashMap::new(),
            pending_ble: HashMap::new(),
            traffic_rng,
            mac_rng,
            messages: Vec::new(),
            message_index: HashMap::new(),
            channels: BTreeMap::new(),
            roles: Vec::new(),
            counters: BTreeMap::new(),
            ble_packet_nj,
        };
        sim.seed_events();
        Ok(sim)
    }

    fn seed_events(&mut self) {
        let interval = self.nodes[0].state.mesh().config().beacon_interval;
        for i in 0..self.nodes.len() {
            let phase = SimTime::from_micros(self.mac_rng.random_range(0..interval.as_micros().max(1)));
            self.push(phase, EventKind::Beacon(i));
        }
        self.push(self.schedule.offset, EventKind::WindowStart);
        if self.cfg.traffic.rate_per_node > 0.0 && self.nodes.len() >= 2 {
            let start = SimTime::from_secs_f64(self.cfg.traffic.start_s);
            for i in 0..self.nodes.len() {
                if let Some(dt) = next_arrival(&mut self.traffic_rng, self.cfg.traffic.rate_per_node) {
                    self.push(start + dt, EventKind::Traffic(i));
                }
            }
        }
        for k in 0..self.cfg.messages.len() {
            self.push(SimTime::from_secs_f64(self.cfg.messages[k].at_s), EventKind::Scripted(k));
        }
        for k in 0..self.cfg.battery.len() {
            self.push(SimTime::from_secs_f64(self.cfg.battery[k].at_s), EventKind::Battery(k));
        }
    }

    fn push(&mut self, time: SimTime, kind: EventKind) {
        let sender = match kind {
            EventKind::TxEnd(id) => Some(self.transmissions[&id].airing.sender),
            _ => None,
        };
        let node_key = key_of(kind, &self.nodes, sender);
        self.seq += 1;
        self.queue.push(Reverse(Event { time, node_key, seq: self.seq, kind }));
    }

    fn bump(&mut self, name: &'static str, by: u64) {
        *self.counters.entry(name).or_default() += by;
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeState> {
        self.index.get(&id).map(|&i| &self.nodes[i].state)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeState> {
        self.nodes.iter().map(|n| &n.state)
    }

    /// Processes every event scheduled at or before `until`.
    pub fn run_until(&mut self, until: SimTime) -> Result<(), SimError> {
        while let Some(Reverse(ev)) = self.queue.peek().copied() {
            if ev.time > until {
                break;
            }
            self.queue.pop();
            if ev.time < self.now {
                return Err(SimError::Invariant(format!("event at {} processed after {}", ev.time, self.now)));
            }
            self.now = ev.time;
            self.bump("events", 1);
            self.dispatch(ev.kind)?;
        }
        self.now = self.now.max(until);
        Ok(())
    }

    fn dispatch(&mut self, kind: EventKind) -> Result<(), SimError> {
        match kind {
            EventKind::Beacon(i) => self.on_beacon(i),
            EventKind::Tick(i, v) => {
                if self.nodes[i].tick_version == v {
                    self.nodes[i].tick_at = None;
                    let actions = self.nodes[i].state.on_tick(self.now);
                    self.apply(i, actions, false)?;
                    self.reschedule_tick(i, true);
                }
                Ok(())
            }
            EventKind::TxEnd(id) => self.on_tx_end(id),
            EventKind::BleEnqueue(i, id) => {
                let item = self.pending_ble.remove(&id).expect("queued BLE frame");
                self.nodes[i].ble_queue.push_back(item);
                self.try_start_ble(i)
            }
            EventKind::LoraAttempt(i) => self.try_start_lora(i),
            EventKind::WindowStart => self.on_window_start(),
            EventKind::Traffic(i) => self.on_traffic(i),
            EventKind::Scripted(k) => {
                let m = self.cfg.messages[k].clone();
                let src = self.index[&NodeId(m.src)];
                let dst = self.index[&NodeId(m.dst)];
                self.originate(src, dst, m.payload_bytes)
            }
            EventKind::Battery(k) => {
                let b = self.cfg.battery[k].clone();
                let i = self.index[&NodeId(b.node)];
                let actions = self.nodes[i].state.set_battery(b.pct, self.now);
                self.apply(i, actions, false)
            }
        }
    }

    fn on_beacon(&mut self, i: usize) -> Result<(), SimError> {
        let (beacon, actions) = self.nodes[i].state.beacon(self.now);
        self.apply(i, actions, false)?;
        self.nodes[i].ble_queue.push_back((LinkTarget::Broadcast, BleFrame::Beacon(beacon)));
        self.try_start_ble(i)?;
        let fp = self.nodes[i].state.state_footprint();
        let ledger = &mut self.nodes[i].ledger;
        ledger.peak_footprint = ledger.peak_footprint.max(fp);
        if self.cfg.scenario.check_invariants {
            self.check_node(i)?;
        }
        let interval = self.nodes[i].state.mesh().config().beacon_interval;
        let max_jitter = interval.as_micros() / BEACON_JITTER_FRACTION;
        let jitter = SimTime::from_micros(self.mac_rng.random_range(0..=max_jitter));
        let next = self.now + interval - jitter;
        self.push(next.max(self.now + SimTime::from_micros(1)), EventKind::Beacon(i));
        Ok(())
    }

    fn on_window_start(&mut self) -> Result<(), SimError> {
        let listen_mw = self.cfg.radio.lora_listen_ma * self.cfg.radio.supply_v;
        let listen_nj = energy_nj(listen_mw, self.schedule.window);
        for i in 0..self.nodes.len() {
            if !self.nodes[i].state.is_ch() {
                continue;
            }
            let ledger = &mut self.nodes[i].ledger;
            ledger.lora_listen_nj += listen_nj;
            ledger.listen_windows += 1;
            let actions = self.nodes[i].state.on_window_start(self.now);
            self.apply(i, actions, true)?;
        }
        if self.cfg.scenario.check_invariants {
            self.check_routes()?;
        }
        let next = self.schedule.next_window_start(self.now);
        self.push(next, EventKind::WindowStart);
        Ok(())
    }

    fn clusters(&self) -> Vec<NodeId> {
        self.nodes.iter().map(|n| n.state.cluster()).collect()
    }

    fn on_traffic(&mut self, i: usize) -> Result<(), SimError> {
        let clusters = self.clusters();
        let dst = draw_destination(&mut self.traffic_rng, &clusters, i, self.cfg.traffic.beta);
        self.originate(i, dst, self.cfg.traffic.payload_bytes)?;
        let stop = self.cfg.traffic.stop_s.map_or(self.cfg.duration(), SimTime::from_secs_f64);
        if let Some(dt) = next_arrival(&mut self.traffic_rng, self.cfg.traffic.rate_per_node) {
            if self.now + dt < stop {
                self.push(self.now + dt, EventKind::Traffic(i));
            }
        }
        Ok(())
    }

    fn originate(&mut self, src: usize, dst: usize, len: usize) -> Result<(), SimError> {
        let clusters = self.clusters();
        let class = classify(&clusters, src, dst);
        let mut payload = vec![0u8; len];
        self.traffic_rng.fill_bytes(&mut payload);
        let src_id = self.nodes[src].state.id();
        let dst_id = self.nodes[dst].state.id();
        let fragments = len.div_ceil(MAX_FRAGMENT_PAYLOAD) as u8;
        let mut record = MessageRecord {
            src: src_id,
            dst: dst_id,
            msg_seq: 0,
            created_us: self.now.as_micros(),
            class,
            payload_bytes: len as u16,
            fragments,
            delivered_us: None,
            fate: Fate::InFlight,
            ble_tx: 0,
            lora_tx: 0,
            ble_energy_nj: 0,
            lora_energy_nj: 0,
            used_backbone: false,
        };
        match self.nodes[src].state.originate(dst_id, &payload, self.now) {
            Ok((seq, actions)) => {
                record.msg_seq = seq;
                let idx = self.messages.len();
                if let Some(old) = self.message_index.insert((src_id, seq), idx) {
                    self.messages[old].undeliverable |= self.messages[old].record.delivered_us.is_none();
                    self.bump("message_seq_reused", 1);
                }
                self.messages.push(MessageTrack {
                    record,
                    payload,
                    per_fragment: vec![(0, 0); usize::from(fragments)],
                    collided: false,
                    ttl: false,
                    undeliverable: false,
                });
                self.apply(src, actions, false)
            }
            Err(_) => {
                self.messages.push(MessageTrack {
                    record,
                    payload,
                    per_fragment: vec![(0, 0); usize::from(fragments)],
                    collided: false,
                    ttl: false,
                    undeliverable: true,
                });
                Ok(())
            }
        }
    }

    fn message(&mut self, src: NodeId, seq: u16) -> Option<&mut MessageTrack> {
        let idx = *self.message_index.get(&(src, seq))?;
        self.messages.get_mut(idx)
    }

    /// Routes one node's actions to the channels and the message ledger.
    /// `contend` marks LoRa frames produced at a window start or by a
    /// rebroadcast, which spread over the window.
    fn apply(&mut self, i: usize, actions: Vec<NodeAction>, contend: bool) -> Result<(), SimError> {
        let id = self.nodes[i].state.id();
        for a in actions {
            match a {
                NodeAction::Ble { target, frame, timing } => {
                    let delay = match timing {
                        SendTiming::Now => None,
                        SendTiming::Jitter => Some(self.mac_rng.random_range(0..=FORWARD_JITTER.as_micros())),
                        SendTiming::AfterFlood => Some(self.flood_settle.as_micros()),
                    };
                    if let Some(delay) = delay {
                        self.next_tx += 1;
                        let key = self.next_tx;
                        self.pending_ble.insert(key, (target, frame));
                        self.push(self.now + SimTime::from_micros(delay), EventKind::BleEnqueue(i, key));
                    } else {
                        self.nodes[i].ble_queue.push_back((target, frame));
                    }
                }
                NodeAction::Lora(frame) => {
                    for f in frame.fragments() {
                        if let Some(m) = self.message(f.src, f.msg_seq) {
                            m.record.used_backbone = true;
                        }
                    }
                    self.nodes[i].lora_queue.push_back(LoraOut { frame, contend, planned: None });
                }
                NodeAction::Deliver { src, msg_seq, payload } => {
                    let now = self.now.as_micros();
                    let Some(m) = self.message(src, msg_seq) else {
                        return Err(SimError::Invariant(format!(
                            "node {id} delivered unknown message {src}/{msg_seq}"
                        )));
                    };
                    if m.record.dst != id {
                        return Err(SimError::Invariant(format!(
                            "message {src}/{msg_seq} for {} delivered at {id}",
                            m.record.dst
                        )));
                    }
                    if m.payload != payload {
                        return Err(SimError::Invariant(format!("payload of {src}/{msg_seq} corrupted")));
                    }
                    if m.record.delivered_us.is_some() {
                        self.bump("duplicate_deliveries", 1);
                    } else {
                        m.record.delivered_us = Some(now);
                    }
                }
                NodeAction::Drop { reason, src, msg_seq } => {
                    let name = match reason {
                        DropReason::Ttl => "drops_ttl",
                        DropReason::NoRoute => "drops_no_route",
                        DropReason::QueueFull => "drops_queue_full",
                        DropReason::Reassembly => "drops_reassembly",
                    };
                    self.bump(name, 1);
                    if let Some(m) = self.message(src, msg_seq) {
                        match reason {
                            DropReason::Ttl => m.ttl = true,
                            DropReason::Reassembly => {}
                            DropReason::NoRoute | DropReason::QueueFull => m.undeliverable = true,
                        }
                    }
                }
                NodeAction::RoleChanged { role, cluster } => {
                    self.roles.push(RoleChange { time_us: self.now.as_micros(), node: id, role, cluster });
                }
            }
        }
        self.try_start_ble(i)?;
        self.try_start_lora(i)?;
        self.reschedule_tick(i, false);
        Ok(())
    }

    fn reschedule_tick(&mut self, i: usize, after_tick: bool) {
        let Some(d) = self.nodes[i].state.next_deadline() else {
            if self.nodes[i].tick_at.is_some() {
                self.nodes[i].tick_version += 1;
                self.nodes[i].tick_at = None;
            }
            return;
        };
        let floor = if after_tick { self.now + SimTime::from_micros(1) } else { self.now };
        let at = d.max(floor);
        if self.nodes[i].tick_at == Some(at) {
            return;
        }
        let n = &mut self.nodes[i];
        n.tick_version += 1;
        n.tick_at = Some(at);
        let v = n.tick_version;
        self.push(at, EventKind::Tick(i, v));
    }

    fn channel_entry(&mut self, radio: Radio, channel: u8) -> &mut ChannelMetrics {
        self.channels.entry((radio, channel)).or_insert(ChannelMetrics {
            radio,
            channel,
            frames: 0,
            airtime_us: 0,
            receptions: 0,
            losses: 0,
        })
    }

    fn begin_airing(&mut self, i: usize, radio: Radio, channel: u8, len: SimTime, bytes: Vec<u8>, target: LinkTarget) {
        self.next_tx += 1;
        let id = self.next_tx;
        let airing = Airing { sender: i, radio, channel, start: self.now, end: self.now + len };
        self.air.push(id, airing);
        self.transmissions.insert(id, Transmission { airing, bytes, target });
        let c = self.channel_entry(radio, channel);
        c.frames += 1;
        c.airtime_us += len.as_micros();
        self.push(airing.end, EventKind::TxEnd(id));
    }

    fn try_start_ble(&mut self, i: usize) -> Result<(), SimError> {
        if self.nodes[i].ble_busy {
            return Ok(());
        }
        let Some((target, frame)) = self.nodes[i].ble_queue.pop_front() else {
            return Ok(());
        };
        let bytes = frame.encode().map_err(|e| {
            SimError::Invariant(format!("node {} built an unencodable BLE frame: {e}", self.nodes[i].state.id()))
        })?;
        let airtime = self.cfg.ble_airtime();
        let channel =
            if self.cfg.radio.ble_channels > 1 { self.mac_rng.random_range(0..self.cfg.radio.ble_channels) } else { 0 };
        let nj = self.ble_packet_nj;
        let n = &mut self.nodes[i];
        n.ble_busy = true;
        n.ledger.ble_frames += 1;
        n.ledger.ble_tx_nj += nj;
        if let Some(f) = data_fragment(&frame) {
            let idx = usize::from(f.frag_index);
            if let Some(m) = self.message(f.src, f.msg_seq) {
                m.record.ble_energy_nj += nj;
                if let Some(c) = m.per_fragment.get_mut(idx) {
                    c.0 += 1;
                }
            }
        }
        self.bump("ble_frames", 1);
        self.begin_airing(i, Radio::Ble, channel, airtime, bytes, target);
        Ok(())
    }

    /// Gives every queued LoRa frame a start time inside a listen window,
    /// then sends the earliest one that is due.
    fn try_start_lora(&mut self, i: usize) -> Result<(), SimError> {
        if self.nodes[i].lora_busy {
            return Ok(());
        }
        let window = self.schedule.window;
        let mut k = 0;
        while k < self.nodes[i].lora_queue.len() {
            let out = &self.nodes[i].lora_queue[k];
            let toa = self.cfg.lora_airtime(out.frame.encoded_len());
            if toa > window {
                self.nodes[i].lora_queue.remove(k);
                self.bump("lora_oversize_dropped", 1);
                continue;
            }
            let fits_now = self.schedule.covers(self.now, toa);
            let replan = match out.planned {
                None => true,
                Some(t) => t <= self.now && !fits_now,
            };
            if replan {
                let contend = out.contend;
                let planned = match (contend, fits_now) {
                    (false, true) => self.now,
                    (true, true) => {
                        let ws = self.schedule.window_start(self.now).expect("inside a window");
                        let slack = (ws + window).saturating_sub(self.now + toa);
                        self.now + self.random_offset(slack)
                    }
                    (_, false) => {
                        self.bump("lora_deferred", 1);
                        let next = self.schedule.next_window_start(self.now);
                        next + self.random_offset(window - toa)
                    }
                };
                self.nodes[i].lora_queue[k].planned = Some(planned);
                if planned > self.now {
                    self.push(planned, EventKind::LoraAttempt(i));
                }
            }
            k += 1;
        }
        let due = self.nodes[i]
            .lora_queue
            .iter()
            .enumerate()
            .filter(|(_, o)| o.planned.is_some_and(|t| t <= self.now))
            .min_by_key(|(k, o)| (o.planned, *k))
            .map(|(k, _)| k);
        match due {
            Some(k) => self.start_lora(i, k),
            None => Ok(()),
        }
    }

    fn random_offset(&mut self, max: SimTime) -> SimTime {
        SimTime::from_micros(self.mac_rng.random_range(0..=max.as_micros()))
    }

    fn start_lora(&mut self, i: usize, k: usize) -> Result<(), SimError> {
        let out = self.nodes[i].lora_queue.remove(k).expect("queued frame");
        let bytes = out.frame.encode().map_err(|e| {
            SimError::Invariant(format!("node {} built an unencodable LoRa frame: {e}", self.nodes[i].state.id()))
        })?;
        let toa = self.cfg.lora_airtime(bytes.len());
        let nj = energy_nj(self.cfg.radio.lora_tx_power_mw, toa);
        let n = &mut self.nodes[i];
        n.lora_busy = true;
        n.ledger.lora_frames += 1;
        n.ledger.lora_tx_nj += nj;
        let total = out.frame.fragment_count() as u64;
        let mut shares: BTreeMap<(NodeId, u16), u64> = BTreeMap::new();
        for f in out.frame.fragments() {
            *shares.entry((f.src, f.msg_seq)).or_default() += 1;
            if let Some(m) = self.message(f.src, f.msg_seq) {
                if let Some(c) = m.per_fragment.get_mut(usize::from(f.frag_index)) {
                    c.1 += 1;
                }
            }
        }
        for ((src, seq), k) in shares {
            if let Some(m) = self.message(src, seq) {
                m.record.lora_energy_nj +=
                    ((u128::from(nj) * u128::from(k) + u128::from(total) / 2) / u128::from(total)) as u64;
            }
        }
        self.bump("lora_frames", 1);
        let target = if out.frame.header.dest_ch.is_unicast() {
            LinkTarget::Unicast(out.frame.header.dest_ch)
        } else {
            LinkTarget::Broadcast
        };
        self.begin_airing(i, Radio::Lora, 0, toa, bytes, target);
        Ok(())
    }

    fn on_tx_end(&mut self, id: u64) -> Result<(), SimError> {
        let tx = self.transmissions.remove(&id).expect("transmission in flight");
        let sender = tx.airing.sender;
        let sender_id = self.nodes[sender].state.id();
        let result = match tx.airing.radio {
            Radio::Ble => self.deliver_ble(id, &tx, sender, sender_id),
            Radio::Lora => self.deliver_lora(id, &tx, sender),
        };
        match tx.airing.radio {
            Radio::Ble => {
                self.nodes[sender].ble_busy = false;
                self.try_start_ble(sender)?;
            }
            Radio::Lora => {
                self.nodes[sender].lora_busy = false;
                self.try_start_lora(sender)?;
            }
        }
        self.air.prune(self.now.saturating_sub(self.air_horizon));
        result
    }

    fn mark_collision(&mut self, frags: &[DataFragment]) {
        for f in frags {
            if let Some(m) = self.message(f.src, f.msg_seq) {
                m.collided = true;
            }
        }
    }

    fn deliver_ble(&mut self, id: u64, tx: &Transmission, sender: usize, sender_id: NodeId) -> Result<(), SimError> {
        let frame = BleFrame::decode(&tx.bytes)
            .map_err(|e| SimError::Invariant(format!("BLE frame from {sender_id} failed to decode: {e}")))?;
        let frags: Vec<DataFragment> = data_fragment(&frame).cloned().into_iter().collect();
        if let LinkTarget::Unicast(t) = tx.target {
            match self.index.get(&t) {
                Some(&r) if self.ble_audible[sender][r] => {}
                _ => {
                    self.bump("ble_target_unreachable", 1);
                    for f in &frags {
                        if let Some(m) = self.message(f.src, f.msg_seq) {
                            m.undeliverable = true;
                        }
                    }
                    return Ok(());
                }
            }
        }
        for r in 0..self.nodes.len() {
            if !self.ble_audible[sender][r] {
                continue;
            }
            let rid = self.nodes[r].state.id();
            if matches!(tx.target, LinkTarget::Unicast(t) if t != rid) {
                continue;
            }
            let audible = &self.ble_audible;
            let clean = self.air.clean_at(id, &tx.airing, r, |s| audible[s][r]);
            if !clean {
                self.channel_entry(Radio::Ble, tx.airing.channel).losses += 1;
                if matches!(tx.target, LinkTarget::Unicast(_)) {
                    self.mark_collision(&frags);
                }
                continue;
            }
            self.channel_entry(Radio::Ble, tx.airing.channel).receptions += 1;
            let d = (self.nodes[sender].x - self.nodes[r].x).hypot(self.nodes[sender].y - self.nodes[r].y);
            let actions = self.nodes[r].state.on_ble(&frame, sender_id, rssi_at(d), self.now);
            self.apply(r, actions, false)?;
        }
        Ok(())
    }

    fn deliver_lora(&mut self, id: u64, tx: &Transmission, sender: usize) -> Result<(), SimError> {
        let frame = LoraFrame::decode(&tx.bytes).map_err(|e| {
            SimError::Invariant(format!("LoRa frame from {} failed to decode: {e}", self.nodes[sender].state.id()))
        })?;
        let len = tx.airing.end - tx.airing.start;
        let covered = self.schedule.covers(tx.airing.start, len);
        for r in 0..self.nodes.len() {
            if !self.lora_audible[sender][r] || !self.nodes[r].state.is_ch() {
                continue;
            }
            if !covered {
                self.bump("lora_missed_window", 1);
                continue;
            }
            let rid = self.nodes[r].state.id();
            let intended = match tx.target {
                LinkTarget::Unicast(t) => t == rid,
                LinkTarget::Broadcast => true,
            };
            let audible = &self.lora_audible;
            let clean = self.air.clean_at(id, &tx.airing, r, |s| audible[s][r]);
            if !clean {
                if intended {
                    self.channel_entry(Radio::Lora, 0).losses += 1;
                    if matches!(tx.target, LinkTarget::Unicast(_)) {
                        self.mark_collision(frame.fragments());
                    }
                }
                continue;
            }
            if intended {
                self.channel_entry(Radio::Lora, 0).receptions += 1;
            }
            let actions = self.nodes[r].state.on_lora(&frame, self.now);
            self.apply(r, actions, true)?;
        }
        Ok(())
    }

    fn check_node(&self, i: usize) -> Result<(), SimError> {
        let n = &self.nodes[i].state;
        let fp = n.state_footprint();
        if fp > RAM_BUDGET {
            return Err(SimError::Invariant(format!("node {} protocol state {fp} B exceeds {RAM_BUDGET} B", n.id())));
        }
        Ok(())
    }

    /// Follows every route-table destination hop by hop and fails on a
    /// revisited node.
    fn check_routes(&self) -> Result<(), SimError> {
        for start in &self.nodes {
            for dest in start.state.mesh().routes().map(|r| r.dest).collect::<Vec<_>>() {
                let mut at = start.state.id();
                let mut seen = vec![at];
                while let Some(&k) = self.index.get(&at) {
                    let next = match self.nodes[k].state.mesh().resolve_route(dest, self.now) {
                        RouteDecision::Discover => break,
                        d => d.next_hop().expect("resolved hop"),
                    };
                    if next == dest {
                        break;
                    }
                    if seen.contains(&next) {
                        return Err(SimError::Invariant(format!(
                            "routing loop toward {dest}: {}",
                            seen.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" -> ")
                        )));
                    }
                    seen.push(next);
                    at = next;
                }
            }
        }
        Ok(())
    }

    /// Freezes the run into a report at the current time.
    pub fn finish(mut self) -> MetricsReport {
        let mut mesh_totals = crate::mesh::MeshCounters::default();
        let mut bb = crate::backbone::BackboneCounters::default();
        for n in &self.nodes {
            let m = n.state.mesh().counters;
            mesh_totals.rreq_originated += m.rreq_originated;
            mesh_totals.rreq_forwarded += m.rreq_forwarded;
            mesh_totals.rrep_sent += m.rrep_sent;
            mesh_totals.rrep_proxied += m.rrep_proxied;
            mesh_totals.rrep_no_reverse_route += m.rrep_no_reverse_route;
            mesh_totals.data_forwarded += m.data_forwarded;
            mesh_totals.data_duplicates += m.data_duplicates;
            mesh_totals.escalated += m.escalated;
            let b = n.state.backbone().counters;
            bb.frames_sent += b.frames_sent;
            bb.frames_received += b.frames_received;
            bb.duplicates += b.duplicates;
            bb.rebroadcasts += b.rebroadcasts;
            bb.digests_sent += b.digests_sent;
            bb.digest_truncations += b.digest_truncations;
        }
        for (name, v) in [
            ("rreq_originated", mesh_totals.rreq_originated),
            ("rreq_forwarded", mesh_totals.rreq_forwarded),
            ("rrep_sent", mesh_totals.rrep_sent),
            ("rrep_proxied", mesh_totals.rrep_proxied),
            ("rrep_no_reverse_route", mesh_totals.rrep_no_reverse_route),
            ("data_forwarded", mesh_totals.data_forwarded),
            ("data_duplicates", mesh_totals.data_duplicates),
            ("escalated_fragments", mesh_totals.escalated),
            ("backbone_frames_received", bb.frames_received),
            ("backbone_duplicates", bb.duplicates),
            ("backbone_rebroadcasts", bb.rebroadcasts),
            ("digests_sent", bb.digests_sent),
            ("digest_truncations", bb.digest_truncations),
        ] {
            self.bump(name, v);
        }

        let messages = self
            .messages
            .into_iter()
            .map(|t| {
                let mut r = t.record;
                r.ble_tx = t.per_fragment.iter().map(|c| c.0).max().unwrap_or(0);
                r.lora_tx = t.per_fragment.iter().map(|c| c.1).max().unwrap_or(0);
                r.fate = if r.delivered_us.is_some() {
                    Fate::Delivered
                } else if t.collided {
                    Fate::Collision
                } else if t.ttl {
                    Fate::Ttl
                } else if t.undeliverable {
                    Fate::Undeliverable
                } else {
                    Fate::InFlight
                };
                r
            })
            .collect();
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeMetrics {
                id: n.state.id(),
                ble_frames: n.ledger.ble_frames,
                lora_frames: n.ledger.lora_frames,
                ble_tx_nj: n.ledger.ble_tx_nj,
                lora_tx_nj: n.ledger.lora_tx_nj,
                lora_listen_nj: n.ledger.lora_listen_nj,
                listen_windows: n.ledger.listen_windows,
                role: if n.state.is_ch() { Role::ClusterHead } else { Role::Member },
                cluster: n.state.cluster(),
                footprint_bytes: n.state.state_footprint() as u32,
                peak_footprint_bytes: n.ledger.peak_footprint.max(n.state.state_footprint()) as u32,
            })
            .collect();
        MetricsReport {
            scenario: self.cfg.scenario.name.clone(),
            seed: self.cfg.scenario.seed,
            duration_us: self.now.as_micros(),
            airtime_mode: self.cfg.radio.airtime_mode,
            counters: self.counters.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            messages,
            nodes,
            channels: self.channels.into_values().collect(),
            roles: self.roles,
        }
    }
}

/// Runs a scenario to its configured duration.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<MetricsReport, SimError> {
    let mut sim = Simulation::new(cfg)?;
    sim.run_until(cfg.duration())?;
    Ok(sim.finish())
}
