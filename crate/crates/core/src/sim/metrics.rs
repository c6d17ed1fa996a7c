//! Run results and their CSV form.
//!
//! The CSV is headerless and record-typed: the first field names the row
//! kind and fixes the remaining columns. The first row is always
//! `schema_version,<n>`.
//!
//! | kind | columns |
//! |---|---|
//! | `meta` | key, value (`scenario`, `seed`, `duration_us`, `airtime_mode`) |
//! | `counter` | name, value |
//! | `message` | src, dst, msg_seq, created_us, class, payload_bytes, fragments, delivered_us, fate, ble_tx, lora_tx, ble_nj, lora_nj, used_backbone |
//! | `node` | id, ble_frames, lora_frames, ble_nj, lora_nj, listen_nj, listen_windows, role, cluster, footprint, peak_footprint |
//! | `channel` | radio, channel, frames, airtime_us, receptions, losses |
//! | `role` | time_us, node, role, cluster |
//! | `summary` | name, value (derived, ignored when reading) |

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::analytics::{AirtimeMode, PathShape};
use crate::cluster::Role;
use crate::protocol::{NodeId, Radio};

pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageClass {
    Intra,
    Inter,
}

/// Terminal state of a message. Exactly one per message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fate {
    Delivered,
    Ttl,
    /// A fragment was lost on the air and never recovered.
    Collision,
    Undeliverable,
    InFlight,
}

impl Fate {
    pub const ALL: [Fate; 5] = [Fate::Delivered, Fate::Ttl, Fate::Collision, Fate::Undeliverable, Fate::InFlight];
}

/// Latency buckets by LoRa hops actually used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LatencyBucket {
    Intra,
    InterOneLora,
    InterMultiLora,
}

macro_rules! text_enum {
    ($t:ty { $($v:ident => $s:literal),+ $(,)? }) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = CsvError;
            fn from_str(s: &str) -> Result<Self, CsvError> {
                match s {
                    $($s => Ok(Self::$v),)+
                    other => Err(CsvError::Field(format!("unexpected value `{other}`"))),
                }
            }
        }
    };
}

text_enum!(MessageClass { Intra => "intra", Inter => "inter" });
text_enum!(Fate {
    Delivered => "delivered",
    Ttl => "ttl",
    Collision => "collision",
    Undeliverable => "undeliverable",
    InFlight => "in-flight",
});
text_enum!(LatencyBucket { Intra => "intra", InterOneLora => "inter-1", InterMultiLora => "inter-2" });

fn role_str(r: Role) -> &'static str {
    match r {
        Role::Member => "member",
        Role::ClusterHead => "ch",
    }
}

fn parse_role(s: &str) -> Result<Role, CsvError> {
    match s {
        "member" => Ok(Role::Member),
        "ch" => Ok(Role::ClusterHead),
        other => Err(CsvError::Field(format!("unexpected role `{other}`"))),
    }
}

fn radio_str(r: Radio) -> &'static str {
    match r {
        Radio::Ble => "ble",
        Radio::Lora => "lora",
    }
}

fn parse_radio(s: &str) -> Result<Radio, CsvError> {
    match s {
        "ble" => Ok(Radio::Ble),
        "lora" => Ok(Radio::Lora),
        other => Err(CsvError::Field(format!("unexpected radio `{other}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageRecord {
    pub src: NodeId,
    pub dst: NodeId,
    pub msg_seq: u16,
    pub created_us: u64,
    pub class: MessageClass,
    pub payload_bytes: u16,
    pub fragments: u8,
    pub delivered_us: Option<u64>,
    pub fate: Fate,
    /// Largest per-fragment count of BLE data transmissions.
    pub ble_tx: u32,
    /// Largest per-fragment count of LoRa transmissions.
    pub lora_tx: u32,
    pub ble_energy_nj: u64,
    pub lora_energy_nj: u64,
    /// Handed to a LoRa backbone queue at least once.
    pub used_backbone: bool,
}

impl MessageRecord {
    pub fn latency_us(&self) -> Option<u64> {
        self.delivered_us.map(|d| d - self.created_us)
    }

    pub fn shape(&self) -> PathShape {
        PathShape::new(self.ble_tx, self.lora_tx)
    }

    pub fn energy_nj(&self) -> u64 {
        self.ble_energy_nj + self.lora_energy_nj
    }

    pub fn bucket(&self) -> LatencyBucket {
        match self.lora_tx {
            0 => LatencyBucket::Intra,
            1 => LatencyBucket::InterOneLora,
            _ => LatencyBucket::InterMultiLora,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeMetrics {
    pub id: NodeId,
    pub ble_frames: u64,
    pub lora_frames: u64,
    pub ble_tx_nj: u64,
    pub lora_tx_nj: u64,
    pub lora_listen_nj: u64,
    pub listen_windows: u64,
    pub role: Role,
    pub cluster: NodeId,
    pub footprint_bytes: u32,
    pub peak_footprint_bytes: u32,
}

impl NodeMetrics {
    pub fn total_nj(&self) -> u64 {
        self.ble_tx_nj + self.lora_tx_nj + self.lora_listen_nj
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMetrics {
    pub radio: Radio,
    pub channel: u8,
    pub frames: u64,
    pub airtime_us: u64,
    /// Frames decoded by an intended receiver.
    pub receptions: u64,
    /// Intended receptions lost to overlap or half-duplex.
    pub losses: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleChange {
    pub time_us: u64,
    pub node: NodeId,
    pub role: Role,
    pub cluster: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FateCounts {
    pub originated: u64,
    pub delivered: u64,
    pub ttl: u64,
    pub collision: u64,
    pub undeliverable: u64,
    pub in_flight: u64,
}

impl FateCounts {
    pub fn conserved(&self) -> bool {
        self.originated == self.delivered + self.ttl + self.collision + self.undeliverable + self.in_flight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub duration_us: u64,
    pub airtime_mode: AirtimeMode,
    /// Named counters, sorted by name.
    pub counters: Vec<(String, u64)>,
    pub messages: Vec<MessageRecord>,
    pub nodes: Vec<NodeMetrics>,
    pub channels: Vec<ChannelMetrics>,
    pub roles: Vec<RoleChange>,
}

impl MetricsReport {
    pub fn counter(&self, name: &str) -> u64 {
        self.counters.iter().find(|(n, _)| n == name).map_or(0, |(_, v)| *v)
    }

    pub fn originated(&self) -> usize {
        self.messages.len()
    }

    pub fn delivered(&self) -> usize {
        self.messages.iter().filter(|m| m.fate == Fate::Delivered).count()
    }

    pub fn delivery_ratio(&self) -> f64 {
        if self.messages.is_empty() {
            return 0.0;
        }
        self.delivered() as f64 / self.originated() as f64
    }

    /// Fraction of originated messages addressed outside the sender's
    /// cluster at origination time.
    pub fn inter_fraction(&self) -> f64 {
        if self.messages.is_empty() {
            return 0.0;
        }
        let inter = self.messages.iter().filter(|m| m.class == MessageClass::Inter).count();
        inter as f64 / self.originated() as f64
    }

    /// Fraction of originated messages that never entered the backbone.
    pub fn ble_share(&self) -> f64 {
        if self.messages.is_empty() {
            return 0.0;
        }
        let ble = self.messages.iter().filter(|m| !m.used_backbone).count();
        ble as f64 / self.originated() as f64
    }

    pub fn fate_counts(&self, class: Option<MessageClass>) -> FateCounts {
        let mut c = FateCounts::default();
        for m in self.messages.iter().filter(|m| class.is_none_or(|k| m.class == k)) {
            c.originated += 1;
            match m.fate {
                Fate::Delivered => c.delivered += 1,
                Fate::Ttl => c.ttl += 1,
                Fate::Collision => c.collision += 1,
                Fate::Undeliverable => c.undeliverable += 1,
                Fate::InFlight => c.in_flight += 1,
            }
        }
        c
    }

    pub fn latencies_us(&self, bucket: LatencyBucket) -> Vec<u64> {
        self.messages.iter().filter(|m| m.bucket() == bucket).filter_map(MessageRecord::latency_us).collect()
    }

    pub fn mean_energy_per_delivered_nj(&self) -> Option<f64> {
        let d: Vec<u64> =
            self.messages.iter().filter(|m| m.fate == Fate::Delivered).map(MessageRecord::energy_nj).collect();
        (!d.is_empty()).then(|| d.iter().sum::<u64>() as f64 / d.len() as f64)
    }

    /// Offered load G on one channel: airtime over run length.
    pub fn offered_load(&self, radio: Radio, channel: u8) -> f64 {
        if self.duration_us == 0 {
            return 0.0;
        }
        self.channels
            .iter()
            .filter(|c| c.radio == radio && c.channel == channel)
            .map(|c| c.airtime_us as f64 / self.duration_us as f64)
            .sum()
    }

    fn summary_rows(&self) -> Vec<(&'static str, String)> {
        let mut rows = vec![
            ("originated", self.originated().to_string()),
            ("delivered", self.delivered().to_string()),
            ("delivery_ratio", format!("{:.6}", self.delivery_ratio())),
            ("inter_fraction", format!("{:.6}", self.inter_fraction())),
            ("ble_share", format!("{:.6}", self.ble_share())),
        ];
        if let Some(e) = self.mean_energy_per_delivered_nj() {
            rows.push(("mean_energy_per_delivered_nj", format!("{e:.1}")));
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().flexible(true).has_headers(false).from_writer(Vec::new());
        let mut row = |fields: Vec<String>| w.write_record(&fields).expect("in-memory write");
        row(vec!["schema_version".into(), CSV_SCHEMA_VERSION.to_string()]);
        row(vec!["meta".into(), "scenario".into(), self.scenario.clone()]);
        row(vec!["meta".into(), "seed".into(), self.seed.to_string()]);
        row(vec!["meta".into(), "duration_us".into(), self.duration_us.to_string()]);
        row(vec!["meta".into(), "airtime_mode".into(), self.airtime_mode.to_string()]);
        for (name, v) in &self.counters {
            row(vec!["counter".into(), name.clone(), v.to_string()]);
        }
        for m in &self.messages {
            row(vec![
                "message".into(),
                m.src.to_string(),
                m.dst.to_string(),
                m.msg_seq.to_string(),
                m.created_us.to_string(),
                m.class.to_string(),
                m.payload_bytes.to_string(),
                m.fragments.to_string(),
                m.delivered_us.map(|d| d.to_string()).unwrap_or_default(),
                m.fate.to_string(),
                m.ble_tx.to_string(),
                m.lora_tx.to_string(),
                m.ble_energy_nj.to_string(),
                m.lora_energy_nj.to_string(),
                u8::from(m.used_backbone).to_string(),
            ]);
        }
        for n in &self.nodes {
            row(vec![
                "node".into(),
                n.id.to_string(),
                n.ble_frames.to_string(),
                n.lora_frames.to_string(),
                n.ble_tx_nj.to_string(),
                n.lora_tx_nj.to_string(),
                n.lora_listen_nj.to_string(),
                n.listen_windows.to_string(),
                role_str(n.role).into(),
                n.cluster.to_string(),
                n.footprint_bytes.to_string(),
                n.peak_footprint_bytes.to_string(),
            ]);
        }
        for c in &self.channels {
            row(vec![
                "channel".into(),
                radio_str(c.radio).into(),
                c.channel.to_string(),
                c.frames.to_string(),
                c.airtime_us.to_string(),
                c.receptions.to_string(),
                c.losses.to_string(),
            ]);
        }
        for r in &self.roles {
            row(vec![
                "role".into(),
                r.time_us.to_string(),
                r.node.to_string(),
                role_str(r.role).into(),
                r.cluster.to_string(),
            ]);
        }
        for (name, v) in self.summary_rows() {
            row(vec!["summary".into(), name.into(), v]);
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, CsvError> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).has_headers(false).from_reader(text.as_bytes());
        let mut records = rdr.records();
        let first = records.next().ok_or(CsvError::MissingSchema)??;
        if first.get(0) != Some("schema_version") {
            return Err(CsvError::MissingSchema);
        }
        let version: u32 = parse(first.get(1))?;
        if version != CSV_SCHEMA_VERSION {
            return Err(CsvError::UnsupportedVersion(version));
        }
        let mut report = MetricsReport {
            scenario: String::new(),
            seed: 0,
            duration_us: 0,
            airtime_mode: AirtimeMode::default(),
            counters: Vec::new(),
            messages: Vec::new(),
            nodes: Vec::new(),
            channels: Vec::new(),
            roles: Vec::new(),
        };
        for rec in records {
            let rec = rec?;
            let f: Vec<&str> = rec.iter().collect();
            let need = |n: usize| -> Result<(), CsvError> {
                if f.len() == n {
                    Ok(())
                } else {
                    Err(CsvError::Field(format!("`{}` row has {} fields, expected {n}", f[0], f.len())))
                }
            };
            match f[0] {
                "meta" => {
                    need(3)?;
                    match f[1] {
                        "scenario" => report.scenario = f[2].to_string(),
                        "seed" => report.seed = parse(Some(f[2]))?,
                        "duration_us" => report.duration_us = parse(Some(f[2]))?,
                        "airtime_mode" => report.airtime_mode = f[2].parse().map_err(CsvError::Field)?,
                        other => return Err(CsvError::Field(format!("unknown meta key `{other}`"))),
                    }
                }
                "counter" => {
                    need(3)?;
                    report.counters.push((f[1].to_string(), parse(Some(f[2]))?));
                }
                "message" => {
                    need(15)?;
                    report.messages.push(MessageRecord {
                        src: NodeId(parse(Some(f[1]))?),
                        dst: NodeId(parse(Some(f[2]))?),
                        msg_seq: parse(Some(f[3]))?,
                        created_us: parse(Some(f[4]))?,
                        class: f[5].parse()?,
                        payload_bytes: parse(Some(f[6]))?,
                        fragments: parse(Some(f[7]))?,
                        delivered_us: if f[8].is_empty() { None } else { Some(parse(Some(f[8]))?) },
                        fate: f[9].parse()?,
                        ble_tx: parse(Some(f[10]))?,
                        lora_tx: parse(Some(f[11]))?,
                        ble_energy_nj: parse(Some(f[12]))?,
                        lora_energy_nj: parse(Some(f[13]))?,
                        used_backbone: parse::<u8>(Some(f[14]))? != 0,
                    });
                }
                "node" => {
                    need(12)?;
                    report.nodes.push(NodeMetrics {
                        id: NodeId(parse(Some(f[1]))?),
                        ble_frames: parse(Some(f[2]))?,
                        lora_frames: parse(Some(f[3]))?,
                        ble_tx_nj: parse(Some(f[4]))?,
                        lora_tx_nj: parse(Some(f[5]))?,
                        lora_listen_nj: parse(Some(f[6]))?,
                        listen_windows: parse(Some(f[7]))?,
                        role: parse_role(f[8])?,
                        cluster: NodeId(parse(Some(f[9]))?),
                        footprint_bytes: parse(Some(f[10]))?,
                        peak_footprint_bytes: parse(Some(f[11]))?,
                    });
                }
                "channel" => {
                    need(7)?;
                    report.channels.push(ChannelMetrics {
                        radio: parse_radio(f[1])?,
                        channel: parse(Some(f[2]))?,
                        frames: parse(Some(f[3]))?,
                        airtime_us: parse(Some(f[4]))?,
                        receptions: parse(Some(f[5]))?,
                        losses: parse(Some(f[6]))?,
                    });
                }
                "role" => {
                    need(5)?;
                    report.roles.push(RoleChange {
                        time_us: parse(Some(f[1]))?,
                        node: NodeId(parse(Some(f[2]))?),
                        role: parse_role(f[3])?,
                        cluster: NodeId(parse(Some(f[4]))?),
                    });
                }
                "summary" => {}
                other => return Err(CsvError::Field(format!("unknown row kind `{other}`"))),
            }
        }
        Ok(report)
    }

    /// Human-readable run summary.
    pub fn render_summary(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "scenario {} (seed {}, {:.1} s, airtime {})",
            self.scenario,
            self.seed,
            self.duration_us as f64 / 1e6,
            self.airtime_mode
        );
        let all = self.fate_counts(None);
        let _ = writeln!(
            s,
            "messages: {} originated, {} delivered ({:.1}%), ttl {}, collision {}, undeliverable {}, in flight {}",
            all.originated,
            all.delivered,
            100.0 * self.delivery_ratio(),
            all.ttl,
            all.collision,
            all.undeliverable,
            all.in_flight
        );
        let _ =
            writeln!(s, "inter-cluster fraction {:.4}, BLE-only share {:.4}", self.inter_fraction(), self.ble_share());
        for bucket in [LatencyBucket::Intra, LatencyBucket::InterOneLora, LatencyBucket::InterMultiLora] {
            let l = self.latencies_us(bucket);
            if l.is_empty() {
                continue;
            }
            let mean = l.iter().sum::<u64>() as f64 / l.len() as f64;
            let _ = writeln!(
                s,
                "latency {bucket}: n={} mean {:.1} ms min {:.1} ms max {:.1} ms",
                l.len(),
                mean / 1e3,
                *l.iter().min().expect("non-empty") as f64 / 1e3,
                *l.iter().max().expect("non-empty") as f64 / 1e3
            );
        }
        if let Some(e) = self.mean_energy_per_delivered_nj() {
            let _ = writeln!(s, "mean radio energy per delivered message {:.3} mJ", e / 1e6);
        }
        for c in &self.channels {
            let _ = writeln!(
                s,
                "channel {}/{}: {} frames, G = {:.4}, {} received, {} lost",
                radio_str(c.radio),
                c.channel,
                c.frames,
                self.offered_load(c.radio, c.channel),
                c.receptions,
                c.losses
            );
        }
        let heads: Vec<String> =
            self.nodes.iter().filter(|n| n.role == Role::ClusterHead).map(|n| n.id.to_string()).collect();
        let _ = writeln!(s, "cluster heads at end: {}", heads.join(" "));
        s
    }
}

fn parse<T: FromStr>(s: Option<&str>) -> Result<T, CsvError> {
    let s = s.ok_or_else(|| CsvError::Field("missing field".into()))?;
    s.parse().map_err(|_| CsvError::Field(format!("cannot parse `{s}`")))
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("first row must be the schema version")]
    MissingSchema,
    #[error("unsupported schema version {0}")]
    UnsupportedVersion(u32),
    #[error("bad field: {0}")]
    Field(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> MetricsReport {
        MetricsReport {
            scenario: "t, \"quoted\"".into(),
            seed: 7,
            duration_us: 60_000_000,
            airtime_mode: AirtimeMode::PaperConstants,
            counters: vec![("events".into(), 12)],
            messages: vec![
                MessageRecord {
                    src: NodeId(1),
                    dst: NodeId(2),
                    msg_seq: 0,
                    created_us: 1_000,
                    class: MessageClass::Intra,
                    payload_bytes: 50,
                    fragments: 4,
                    delivered_us: Some(65_000),
                    fate: Fate::Delivered,
                    ble_tx: 1,
                    lora_tx: 0,
                    ble_energy_nj: 512_000,
                    lora_energy_nj: 0,
                    used_backbone: false,
                },
                MessageRecord {
                    src: NodeId(1),
                    dst: NodeId(9),
                    msg_seq: 1,
                    created_us: 2_000,
                    class: MessageClass::Inter,
                    payload_bytes: 10,
                    fragments: 1,
                    delivered_us: None,
                    fate: Fate::InFlight,
                    ble_tx: 2,
                    lora_tx: 0,
                    ble_energy_nj: 256_000,
                    lora_energy_nj: 0,
                    used_backbone: true,
                },
            ],
            nodes: vec![NodeMetrics {
                id: NodeId(1),
                ble_frames: 3,
                lora_frames: 0,
                ble_tx_nj: 384_000,
                lora_tx_nj: 0,
                lora_listen_nj: 27_720_000,
                listen_windows: 1,
                role: Role::ClusterHead,
                cluster: NodeId(1),
                footprint_bytes: 300,
                peak_footprint_bytes: 400,
            }],
            channels: vec![ChannelMetrics {
                radio: Radio::Ble,
                channel: 0,
                frames: 3,
                airtime_us: 48_000,
                receptions: 2,
                losses: 1,
            }],
            roles: vec![RoleChange { time_us: 5, node: NodeId(1), role: Role::ClusterHead, cluster: NodeId(1) }],
        }
    }

    #[test]
    fn csv_round_trip() {
        let r = sample();
        let text = r.to_csv();
        assert!(text.starts_with("schema_version,1\n"));
        assert_eq!(MetricsReport::from_csv(&text).unwrap(), r);
    }

    #[test]
    fn csv_requires_schema_row() {
        let text = sample().to_csv();
        let body: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(MetricsReport::from_csv(&body), Err(CsvError::MissingSchema)));
        let future = text.replacen("schema_version,1", "schema_version,9", 1);
        assert!(matches!(MetricsReport::from_csv(&future), Err(CsvError::UnsupportedVersion(9))));
    }

    #[test]
    fn derived_metrics() {
        let r = sample();
        assert_eq!(r.delivery_ratio(), 0.5);
        assert_eq!(r.inter_fraction(), 0.5);
        assert_eq!(r.ble_share(), 0.5);
        assert!(r.fate_counts(None).conserved());
        assert_eq!(r.latencies_us(LatencyBucket::Intra), vec![64_000]);
        assert!((r.offered_load(Radio::Ble, 0) - 0.0008).abs() < 1e-12);
        assert_eq!(r.offered_load(Radio::Lora, 0), 0.0);
    }
}
