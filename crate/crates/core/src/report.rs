//! Closed-form analysis report: latency, battery and comparison tables,
//! the traffic, energy and capacity models with their inputs, and flags
//! for every value that disagrees with its published counterpart.
//!
//! Each number is produced by an [`analytics`](crate::analytics) call at
//! the inputs echoed next to it; the renderer holds no constants of its
//! own beyond the published values it compares against.

use std::fmt::Write as _;

use crate::analytics::{
    aloha_peak, battery_life_days, ble_cluster_capacity, duty_cycled_current, inter_cluster_ratio,
    lora_backbone_capacity, lora_time_on_air, max_network_size, mean_message_energy, path_energy, path_latency,
    reference_lora_airtime, utilization_reduction, AirtimeMode, AnalyticsError, LoraPhyConfig, PathShape, RadioProfile,
    TrafficParams, PAPER_AIRTIMES,
};
use crate::backbone::{BackboneConfig, BackboneState};
use crate::protocol::{fragment_message, LoraBody, LoraFrame, NodeId, MAX_MESSAGE_PAYLOAD};
use crate::time::SimTime;

/// Published airtime reduction from aggregating eight fragments.
pub const PUBLISHED_AGGREGATION_GAIN: f64 = 5.0;
/// Published three-channel BLE cluster capacity, messages per second.
pub const PUBLISHED_BLE_CAPACITY: f64 = 110.0;
/// Published maximum network size at SF7.
pub const PUBLISHED_SF7_MAX_NODES: f64 = 562.0;
/// Published LoRa backbone capacity, messages per minute.
pub const PUBLISHED_LORA_CAPACITY_PER_MIN: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisInputs {
    pub airtime_mode: AirtimeMode,
    pub beta: f64,
    pub clusters: u32,
    /// Messages per node per minute.
    pub rate_per_node: f64,
    pub battery_mah: f64,
    pub member_ma: f64,
    pub head_ma: f64,
    pub lora_only_ma: f64,
    pub listen_window_s: f64,
    pub listen_period_s: f64,
    /// BLE hops across one cluster.
    pub cluster_hops: u32,
    /// LoRa hops a flooded frame can cover.
    pub backbone_hops: u32,
}

impl Default for AnalysisInputs {
    fn default() -> Self {
        Self {
            airtime_mode: AirtimeMode::PaperConstants,
            beta: 0.82,
            clusters: 3,
            rate_per_node: 1.0,
            battery_mah: 500.0,
            member_ma: 6.5,
            head_ma: 9.2,
            lora_only_ma: 12.8,
            listen_window_s: 2.0,
            listen_period_s: 30.0,
            cluster_hops: 3,
            backbone_hops: 4,
        }
    }
}

/// One evaluated model output.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantity {
    pub key: String,
    pub label: String,
    pub value: f64,
    pub unit: &'static str,
    pub inputs: String,
}

/// A computed value that does not reproduce its published counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct Flag {
    pub key: &'static str,
    pub computed: f64,
    pub published: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub title: &'static str,
    pub quantities: Vec<Quantity>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub inputs: AnalysisInputs,
    pub sections: Vec<Section>,
    pub flags: Vec<Flag>,
}

impl AnalysisReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.quantity(key).map(|q| q.value)
    }

    pub fn quantity(&self, key: &str) -> Option<&Quantity> {
        self.sections.iter().flat_map(|s| &s.quantities).find(|q| q.key == key)
    }

    pub fn flag(&self, key: &str) -> Option<&Flag> {
        self.flags.iter().find(|f| f.key == key)
    }
}

struct Builder {
    sections: Vec<Section>,
}

impl Builder {
    fn section(&mut self, title: &'static str) {
        self.sections.push(Section { title, quantities: Vec::new() });
    }

    fn add(
        &mut self,
        key: impl Into<String>,
        label: impl Into<String>,
        value: f64,
        unit: &'static str,
        inputs: impl Into<String>,
    ) -> f64 {
        let q = Quantity { key: key.into(), label: label.into(), value, unit, inputs: inputs.into() };
        self.sections.last_mut().expect("section opened").quantities.push(q);
        value
    }
}

/// Airtimes of a single-fragment frame and of the aggregate frame for a
/// full-size message, plus the aggregate's fragment count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationGain {
    pub fragments: usize,
    pub single_bytes: usize,
    pub aggregate_bytes: usize,
    pub single_toa: f64,
    pub aggregate_toa: f64,
}

impl AggregationGain {
    /// Airtime of sending every fragment alone over airtime of the aggregate.
    pub fn ratio(&self) -> f64 {
        self.fragments as f64 * self.single_toa / self.aggregate_toa
    }
}

/// Pushes a maximum-size message through a cluster head's aggregation
/// queue and compares formula airtimes at `spreading_factor`.
pub fn aggregation_gain(spreading_factor: u8) -> Result<AggregationGain, AnalyticsError> {
    let payload = vec![0xA5; MAX_MESSAGE_PAYLOAD];
    let frags = fragment_message(NodeId(1), NodeId(2), 0, 16, &payload).expect("maximum payload fragments");
    let mut ch = BackboneState::new(NodeId(10), BackboneConfig::default());
    let mut frames = ch.enqueue_for_backbone(true, frags, SimTime::ZERO).expect("caller is a cluster head");
    frames.extend(ch.flush_aggregate(SimTime::from_secs(1)));
    let aggregate = frames.into_iter().next().expect("aggregate frame emitted");
    let single = LoraFrame { body: LoraBody::Fragments(aggregate.fragments()[..1].to_vec()), ..aggregate.clone() };
    let phy = LoraPhyConfig::typical(spreading_factor)?;
    let (single_bytes, aggregate_bytes) = (single.encoded_len(), aggregate.encoded_len());
    Ok(AggregationGain {
        fragments: aggregate.fragment_count(),
        single_bytes,
        aggregate_bytes,
        single_toa: lora_time_on_air(&phy, single_bytes)?,
        aggregate_toa: lora_time_on_air(&phy, aggregate_bytes)?,
    })
}

fn ms(s: f64) -> f64 {
    s * 1e3
}

fn mj(j: f64) -> f64 {
    j * 1e3
}

fn finite(b: crate::analytics::Bounded) -> f64 {
    b.finite().unwrap_or(f64::INFINITY)
}

pub fn analyze(inputs: &AnalysisInputs) -> Result<AnalysisReport, AnalyticsError> {
    let mode = inputs.airtime_mode;
    let t_ble = PAPER_AIRTIMES.ble_packet;
    let t_sf7 = reference_lora_airtime(mode, 7)?;
    let t_sf10 = reference_lora_airtime(mode, 10)?;
    let t_sf12 = reference_lora_airtime(mode, 12)?;
    let ble = RadioProfile::ble_default();
    let lora = RadioProfile::lora_default().with_airtime(t_sf10);
    let e_ble = ble.per_packet_energy();
    let e_lora = lora.per_packet_energy();
    let params = TrafficParams::new(inputs.beta, inputs.clusters, inputs.rate_per_node)?;
    let mut b = Builder { sections: Vec::new() };
    let mut flags = Vec::new();

    b.section("Airtimes");
    b.add("airtime.ble_ms", "BLE packet", ms(t_ble), "ms", "Coded PHY S8, 31 B");
    b.add("airtime.sf7_ms", "LoRa SF7, 50 B", ms(t_sf7), "ms", format!("{mode} mode"));
    b.add("airtime.sf10_ms", "LoRa SF10, 50 B", ms(t_sf10), "ms", format!("{mode} mode"));
    b.add("airtime.sf12_ms", "LoRa SF12, 50 B", ms(t_sf12), "ms", format!("{mode} mode"));
    let formula_sf10 = lora_time_on_air(&LoraPhyConfig::typical(10)?, 50)?;
    b.add(
        "airtime.sf10_formula_ms",
        "LoRa SF10, 50 B by formula",
        ms(formula_sf10),
        "ms",
        "BW 125 kHz, CR 4/5, 8-symbol preamble",
    );
    flags.push(Flag {
        key: "toa_sf10",
        computed: ms(formula_sf10),
        published: ms(PAPER_AIRTIMES.lora_sf10),
        note: "the airtime formula gives a longer SF10 frame than the published constant; paper-constants mode uses the constant".into(),
    });

    b.section("Traffic locality");
    let alpha = b.add(
        "traffic.alpha",
        "inter-cluster fraction α",
        inter_cluster_ratio(&params),
        "",
        format!("β = {}, C = {}", inputs.beta, inputs.clusters),
    );
    b.add(
        "traffic.ble_share",
        "traffic kept on BLE, 1 − α",
        1.0 - alpha,
        "",
        format!("β = {}, C = {}", inputs.beta, inputs.clusters),
    );
    for step in 0..=10 {
        let beta = f64::from(step) / 10.0;
        let p = TrafficParams::new(beta, inputs.clusters, inputs.rate_per_node)?;
        b.add(
            format!("traffic.alpha_beta{beta:.1}"),
            format!("α at β = {beta:.1}"),
            inter_cluster_ratio(&p),
            "",
            format!("C = {}", inputs.clusters),
        );
    }
    let inter_shape = PathShape::new(4, 1);
    b.add(
        "traffic.utilization_reduction",
        "LoRa utilization reduction",
        utilization_reduction(alpha, inter_shape),
        "",
        format!("α = {alpha:.4}, path 4 BLE + 1 LoRa"),
    );

    b.section("Energy per message");
    b.add(
        "energy.ble_packet_uj",
        "BLE packet",
        e_ble * 1e6,
        "µJ",
        format!("{} mW × {} ms", ble.tx_power_mw(), ms(t_ble)),
    );
    b.add(
        "energy.lora_packet_mj",
        "LoRa packet",
        mj(e_lora),
        "mJ",
        format!("{} mW × {} ms", lora.tx_power_mw(), ms(t_sf10)),
    );
    let e_inter = b.add(
        "energy.inter_dual_mj",
        "inter-cluster, 4 BLE + 1 LoRa",
        mj(path_energy(inter_shape, e_ble, e_lora)),
        "mJ",
        "",
    );
    let e_lora_only = b.add(
        "energy.inter_lora_only_mj",
        "inter-cluster, LoRa-only 5 hops",
        mj(path_energy(PathShape::new(0, 5), e_ble, e_lora)),
        "mJ",
        "",
    );
    b.add("energy.savings", "saving versus LoRa-only", 1.0 - e_inter / e_lora_only, "", "1 − dual / LoRa-only");
    let e_intra2 = path_energy(PathShape::new(2, 0), e_ble, e_lora);
    let e_intra1 = path_energy(PathShape::new(1, 0), e_ble, e_lora);
    b.add("energy.intra_2hop_mj", "intra-cluster, 2 BLE hops", mj(e_intra2), "mJ", "");
    b.add(
        "energy.mean_2hop_mj",
        "mean per message, 2-hop intra paths",
        mj(mean_message_energy(alpha, e_intra2, e_inter / 1e3)),
        "mJ",
        format!("α = {alpha:.4}"),
    );
    b.add(
        "energy.mean_1hop_mj",
        "mean per message, 1-hop intra paths",
        mj(mean_message_energy(alpha, e_intra1, e_inter / 1e3)),
        "mJ",
        format!("α = {alpha:.4}"),
    );

    b.section("Capacity");
    let s_max = aloha_peak();
    b.add("capacity.s_max", "pure ALOHA peak throughput", s_max, "", "G = 0.5");
    let c_ble = b.add(
        "capacity.ble_msgs_per_s",
        "BLE cluster capacity, 3 channels",
        ble_cluster_capacity(s_max, t_ble, 3),
        "msg/s",
        format!("T_pkt = {} ms", ms(t_ble)),
    );
    flags.push(Flag {
        key: "ble_capacity",
        computed: c_ble,
        published: PUBLISHED_BLE_CAPACITY,
        note: "3 × S_max / T_pkt evaluated as written is about a third of the published cluster capacity".into(),
    });
    let c_lora = b.add(
        "capacity.lora_msgs_per_s",
        "LoRa backbone capacity, SF10",
        lora_backbone_capacity(s_max, t_sf10),
        "msg/s",
        format!("ToA = {} ms", ms(t_sf10)),
    );
    b.add("capacity.lora_msgs_per_min", "LoRa backbone capacity, SF10", c_lora * 60.0, "msg/min", "");
    b.add(
        "capacity.n_max_exact",
        "maximum nodes, SF10, exact capacity",
        finite(max_network_size(c_lora * 60.0, alpha, inputs.rate_per_node)),
        "nodes",
        format!("α = {alpha:.4}, r = {} msg/min", inputs.rate_per_node),
    );
    b.add(
        "capacity.n_max_rounded",
        "maximum nodes, SF10, 30 msg/min capacity",
        finite(max_network_size(PUBLISHED_LORA_CAPACITY_PER_MIN, alpha, inputs.rate_per_node)),
        "nodes",
        format!("α = {alpha:.4}, r = {} msg/min", inputs.rate_per_node),
    );
    let c_sf7 = lora_backbone_capacity(s_max, t_sf7);
    let n_sf7 = b.add(
        "capacity.n_max_sf7",
        "maximum nodes, SF7",
        finite(max_network_size(c_sf7 * 60.0, alpha, inputs.rate_per_node)),
        "nodes",
        format!("ToA = {} ms", ms(t_sf7)),
    );
    flags.push(Flag {
        key: "sf7_max_nodes",
        computed: n_sf7,
        published: PUBLISHED_SF7_MAX_NODES,
        note: "the SF7 network size from the same capacity formulas is about three times the published figure".into(),
    });

    b.section("Aggregation");
    let gain = aggregation_gain(10)?;
    b.add(
        "aggregation.fragments",
        "fragments in one aggregate frame",
        gain.fragments as f64,
        "",
        format!("{MAX_MESSAGE_PAYLOAD} B message"),
    );
    b.add(
        "aggregation.single_ms",
        "single-fragment frame airtime",
        ms(gain.single_toa),
        "ms",
        format!("{} B, SF10 formula", gain.single_bytes),
    );
    b.add(
        "aggregation.aggregate_ms",
        "aggregate frame airtime",
        ms(gain.aggregate_toa),
        "ms",
        format!("{} B, SF10 formula", gain.aggregate_bytes),
    );
    let ratio = b.add("aggregation.ratio", "airtime ratio, singles over aggregate", gain.ratio(), "×", "SF10 formula");
    flags.push(Flag {
        key: "aggregation_gain",
        computed: ratio,
        published: PUBLISHED_AGGREGATION_GAIN,
        note: "preamble and header overhead do not dominate SF10 frames enough for a fivefold saving".into(),
    });

    b.section("Latency");
    let lat = |shape: PathShape, t_lora: f64| ms(path_latency(shape, t_ble, t_lora));
    b.add("latency.ble_intra_ms", "BLE-only, intra-cluster 2 hops", lat(PathShape::new(2, 0), t_sf10), "ms", "");
    b.add("latency.lora_intra_ms", "LoRa-only, intra-cluster 2 hops", lat(PathShape::new(0, 2), t_sf12), "ms", "SF12");
    b.add("latency.lora_inter1_ms", "LoRa-only, inter-cluster 1 hop", lat(PathShape::new(0, 1), t_sf12), "ms", "SF12");
    b.add("latency.lora_inter2_ms", "LoRa-only, inter-cluster 2 hops", lat(PathShape::new(0, 2), t_sf12), "ms", "SF12");
    b.add("latency.dual_intra_ms", "dual, intra-cluster 2 BLE", lat(PathShape::new(2, 0), t_sf10), "ms", "");
    b.add("latency.dual_inter1_ms", "dual, 4 BLE + 1 LoRa", lat(PathShape::new(4, 1), t_sf10), "ms", "SF10");
    b.add("latency.dual_inter2_ms", "dual, 4 BLE + 2 LoRa", lat(PathShape::new(4, 2), t_sf10), "ms", "SF10");

    b.section("Battery life");
    let duty = inputs.listen_window_s / inputs.listen_period_s;
    b.add(
        "battery.listen_duty",
        "CH LoRa listen duty cycle",
        duty,
        "",
        format!("{} s every {} s", inputs.listen_window_s, inputs.listen_period_s),
    );
    b.add(
        "battery.listen_ma",
        "CH LoRa listen current",
        duty_cycled_current(lora.active_current_ma(), 0.0, duty),
        "mA",
        format!("{} mA active, 0 mA asleep", lora.active_current_ma()),
    );
    let days = |ma: f64| finite(battery_life_days(inputs.battery_mah, ma));
    b.add(
        "battery.member_days",
        "member, BLE only",
        days(inputs.member_ma),
        "days",
        format!("{} mAh, {} mA", inputs.battery_mah, inputs.member_ma),
    );
    b.add(
        "battery.head_days",
        "cluster head, BLE + LoRa listening",
        days(inputs.head_ma),
        "days",
        format!("{} mAh, {} mA", inputs.battery_mah, inputs.head_ma),
    );
    b.add(
        "battery.lora_only_days",
        "LoRa-only mesh node",
        days(inputs.lora_only_ma),
        "days",
        format!("{} mAh, {} mA", inputs.battery_mah, inputs.lora_only_ma),
    );

    b.section("Coverage");
    let ble_km = f64::from(inputs.cluster_hops) * ble.range_m() / 1e3;
    let lora_km = f64::from(inputs.backbone_hops) * lora.range_m() / 1e3;
    b.add(
        "coverage.ble_only_km",
        "BLE-only diameter",
        ble_km,
        "km",
        format!("{} hops × {} m", inputs.cluster_hops, ble.range_m()),
    );
    b.add(
        "coverage.lora_only_km",
        "LoRa-only diameter",
        lora_km,
        "km",
        format!("{} hops × {} m", inputs.backbone_hops, lora.range_m()),
    );
    b.add("coverage.dual_km", "dual diameter", lora_km + ble_km, "km", "backbone plus one cluster");

    Ok(AnalysisReport { inputs: inputs.clone(), sections: b.sections, flags })
}

fn fmt_value(v: f64) -> String {
    if !v.is_finite() {
        "unbounded".into()
    } else if v != 0.0 && v.abs() < 0.01 {
        format!("{v:.3e}")
    } else if v.fract() == 0.0 && v.abs() < 1e6 {
        format!("{v:.0}")
    } else {
        format!("{v:.4}")
    }
}

fn table(out: &mut String, title: &str, header: &[&str], rows: &[Vec<String>]) {
    let cols = header.len();
    let mut width = vec![0usize; cols];
    for row in std::iter::once(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>()).chain(rows) {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |out: &mut String, row: &[String]| {
        let cells: Vec<String> = row.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "  {}", cells.join("  ").trim_end());
    };
    let _ = writeln!(out, "{title}");
    line(out, &header.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    let _ = writeln!(out, "  {}", width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    for r in rows {
        line(out, r);
    }
    out.push('\n');
}

impl AnalysisReport {
    fn v(&self, key: &str) -> f64 {
        self.get(key).unwrap_or_else(|| panic!("report lacks {key}"))
    }

    fn ms_cell(&self, key: &str) -> String {
        let v = self.v(key);
        if v >= 1000.0 {
            format!("{:.1} s", v / 1e3)
        } else {
            format!("{v:.0} ms")
        }
    }

    /// Plain-text rendering: the three comparison tables, every section
    /// with its inputs, then the discrepancy flags.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "analysis (airtime mode: {})\n", self.inputs.airtime_mode);
        let dash = || "—".to_string();
        table(
            &mut out,
            "End-to-end latency",
            &["scenario", "BLE-only", "LoRa-only", "dual"],
            &[
                vec![
                    "intra-cluster (2 hop)".into(),
                    self.ms_cell("latency.ble_intra_ms"),
                    self.ms_cell("latency.lora_intra_ms"),
                    self.ms_cell("latency.dual_intra_ms"),
                ],
                vec![
                    "inter-cluster (1 LoRa)".into(),
                    dash(),
                    self.ms_cell("latency.lora_inter1_ms"),
                    self.ms_cell("latency.dual_inter1_ms"),
                ],
                vec![
                    "inter-cluster (2 LoRa)".into(),
                    dash(),
                    self.ms_cell("latency.lora_inter2_ms"),
                    self.ms_cell("latency.dual_inter2_ms"),
                ],
            ],
        );
        let days = |k: &str| format!("{:.2} days", self.v(k));
        table(
            &mut out,
            &format!("Battery life ({} mAh)", self.inputs.battery_mah),
            &["role", "avg current", "life"],
            &[
                vec!["member (BLE only)".into(), format!("{} mA", self.inputs.member_ma), days("battery.member_days")],
                vec![
                    "cluster head (BLE + LoRa listening)".into(),
                    format!("{} mA", self.inputs.head_ma),
                    days("battery.head_days"),
                ],
                vec![
                    "LoRa-only mesh".into(),
                    format!("{} mA", self.inputs.lora_only_ma),
                    days("battery.lora_only_days"),
                ],
            ],
        );
        let mj = |k: &str| format!("{:.3} mJ", self.v(k));
        table(
            &mut out,
            "Architecture comparison",
            &["metric", "BLE-only", "LoRa-only", "dual"],
            &[
                vec![
                    "latency (2 hop)".into(),
                    self.ms_cell("latency.ble_intra_ms"),
                    self.ms_cell("latency.lora_intra_ms"),
                    self.ms_cell("latency.dual_intra_ms"),
                ],
                vec![
                    "energy per message".into(),
                    mj("energy.intra_2hop_mj"),
                    mj("energy.inter_lora_only_mj"),
                    mj("energy.mean_2hop_mj"),
                ],
                vec![
                    "max nodes".into(),
                    "not modeled".into(),
                    "not modeled".into(),
                    format!(
                        "{:.1} (SF10) to {:.0} (SF7)",
                        self.v("capacity.n_max_exact"),
                        self.v("capacity.n_max_sf7")
                    ),
                ],
                vec![
                    "coverage".into(),
                    format!("{:.1} km", self.v("coverage.ble_only_km")),
                    format!("{:.1} km", self.v("coverage.lora_only_km")),
                    format!("{:.1} km", self.v("coverage.dual_km")),
                ],
                vec![
                    "battery".into(),
                    days("battery.member_days"),
                    days("battery.lora_only_days"),
                    format!("{:.2} to {:.2} days", self.v("battery.head_days"), self.v("battery.member_days")),
                ],
            ],
        );
        for s in &self.sections {
            let _ = writeln!(out, "{}", s.title);
            for q in &s.quantities {
                let unit = if q.unit.is_empty() { String::new() } else { format!(" {}", q.unit) };
                let inputs = if q.inputs.is_empty() { String::new() } else { format!("  [{}]", q.inputs) };
                let _ = writeln!(out, "  {:<44} {}{unit}{inputs}", q.label, fmt_value(q.value));
            }
            out.push('\n');
        }
        let _ = writeln!(out, "Discrepancy flags");
        for f in &self.flags {
            let _ = writeln!(
                out,
                "  FLAG {}: computed {} vs published {}: {}",
                f.key,
                fmt_value(f.computed),
                fmt_value(f.published),
                f.note
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_report_has_every_table_value() {
        let r = analyze(&AnalysisInputs::default()).unwrap();
        assert_eq!(r.get("latency.dual_inter1_ms"), Some(434.0));
        assert!((r.v("latency.dual_inter2_ms") - 804.0).abs() < 1e-9);
        assert!((r.v("energy.inter_dual_mj") - 19.012).abs() < 1e-9);
        assert!((r.v("traffic.alpha_beta0.0") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.get("traffic.alpha_beta1.0"), Some(0.0));
        let text = r.render();
        assert!(text.contains("FLAG ble_capacity"));
        assert!(text.contains("FLAG sf7_max_nodes"));
        assert!(text.contains("FLAG aggregation_gain"));
    }

    #[test]
    fn aggregate_frame_holds_eight_fragments() {
        let g = aggregation_gain(10).unwrap();
        assert_eq!(g.fragments, 8);
        assert!(g.aggregate_bytes > g.single_bytes);
        assert!(g.ratio() > 1.0);
    }

    #[test]
    fn formula_mode_changes_lora_columns_only() {
        let inputs = AnalysisInputs { airtime_mode: AirtimeMode::Formula, ..AnalysisInputs::default() };
        let r = analyze(&inputs).unwrap();
        assert_eq!(r.get("latency.dual_intra_ms"), Some(32.0));
        assert!(r.v("latency.dual_inter1_ms") > 600.0);
    }
}
