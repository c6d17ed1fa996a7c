//! Theory-versus-simulation checks: measured traffic locality against the
//! closed form, ledgered energy and latency on the bundled topologies,
//! the ALOHA curve, path costs and election convergence.

use rayon::prelude::*;

use crate::analytics::{aloha_throughput, inter_cluster_ratio, path_energy, path_latency, PathShape, TrafficParams};
use crate::mesh::{hop_cost, link_quality};
use crate::protocol::NodeId;
use crate::sim::aloha::simulate_pure_aloha;
use crate::sim::channel::rssi_at;
use crate::sim::rounds::{check_election, connected_graphs, ElectionCheck};
use crate::sim::{Fate, MessageClass, MetricsReport, ScenarioConfig, SimError, Simulation};
use crate::time::SimTime;

/// Two clusters bridged by one LoRa hop.
pub const FIG1_SCENARIO: &str = include_str!("../../../scenarios/fig1.scenario");
/// Thirty nodes in three equal clusters under generated traffic.
pub const THREE_CLUSTERS_SCENARIO: &str = include_str!("../../../scenarios/three-clusters.scenario");
/// Four nodes on a line.
pub const LINE_SCENARIO: &str = include_str!("../../../scenarios/line.scenario");

/// Maps RSSI to link quality when computing expected path costs.
pub type LqOracle = fn(i32) -> u8;

/// Offered loads of the ALOHA sweep.
pub const ALOHA_LOADS: [f64; 4] = [0.1, 0.25, 0.5, 1.0];
pub const ALOHA_FRAMES: usize = 20_000;
pub const ALOHA_TOLERANCE: f64 = 0.03;
pub const LOCALITY_TOLERANCE: f64 = 0.01;
pub const BLE_SHARE_BAND: (f64, f64) = (0.82, 0.90);
/// Beacon rounds allowed for the head set to settle, after formation and
/// after demotion.
pub const ELECTION_ROUNDS: u64 = 2;
pub const ELECTION_MAX_NODES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub target: String,
    pub measured: String,
    pub pass: bool,
}

impl CheckResult {
    fn new(name: impl Into<String>, target: impl Into<String>, measured: impl Into<String>, pass: bool) -> Self {
        Self { name: name.into(), target: target.into(), measured: measured.into(), pass }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn render(&self) -> String {
        let w = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            let verdict = if c.pass { "PASS" } else { "FAIL" };
            out.push_str(&format!("{verdict}  {:<w$}  {}  (target {})\n", c.name, c.measured, c.target));
        }
        let passed = self.checks.iter().filter(|c| c.pass).count();
        out.push_str(&format!("{passed}/{} checks passed\n", self.checks.len()));
        out
    }
}

fn parse(text: &str) -> ScenarioConfig {
    ScenarioConfig::from_toml(text).expect("bundled scenario parses")
}

/// Measured inter-cluster fraction against the closed form, and the share
/// of messages that never used the backbone.
pub fn check_traffic_locality() -> Result<Vec<CheckResult>, SimError> {
    let cfg = parse(THREE_CLUSTERS_SCENARIO);
    let report = crate::sim::run_scenario(&cfg)?;
    let params = TrafficParams::new(cfg.traffic.beta, 3, 1.0).expect("valid traffic parameters");
    let alpha = inter_cluster_ratio(&params);
    let measured = report.inter_fraction();
    let share = report.ble_share();
    let n = report.originated();
    Ok(vec![
        CheckResult::new(
            "traffic: inter-cluster fraction",
            format!("{alpha:.4} ± {LOCALITY_TOLERANCE}, ≥ 5000 messages"),
            format!("{measured:.4} over {n} messages"),
            (measured - alpha).abs() <= LOCALITY_TOLERANCE && n >= 5000,
        ),
        CheckResult::new(
            "traffic: share kept on BLE",
            format!("[{}, {}]", BLE_SHARE_BAND.0, BLE_SHARE_BAND.1),
            format!("{share:.4}"),
            (BLE_SHARE_BAND.0..=BLE_SHARE_BAND.1).contains(&share),
        ),
    ])
}

/// Ledger of the measured inter-cluster message on the bridged topology.
pub fn check_fig1() -> Result<Vec<CheckResult>, SimError> {
    let cfg = parse(FIG1_SCENARIO);
    let report = crate::sim::run_scenario(&cfg)?;
    let e_ble = cfg.ble_airtime().as_secs_f64() * cfg.radio.ble_tx_power_mw * 1e-3;
    let e_lora = cfg.lora_airtime(0).as_secs_f64() * cfg.radio.lora_tx_power_mw * 1e-3;
    let want_shape = PathShape::new(4, 1);
    let want_nj = (path_energy(want_shape, e_ble, e_lora) * 1e9).round() as u64;
    let want_us = (path_latency(want_shape, cfg.ble_airtime().as_secs_f64(), cfg.lora_airtime(0).as_secs_f64()) * 1e6)
        .round() as u64;
    let m = report.messages.iter().rfind(|m| m.class == MessageClass::Inter);
    let (shape, energy, latency) = match m {
        Some(m) if m.fate == Fate::Delivered => (Some(m.shape()), Some(m.energy_nj()), m.latency_us()),
        _ => (None, None, None),
    };
    let show = |v: Option<String>| v.unwrap_or_else(|| "not delivered".into());
    Ok(vec![
        CheckResult::new(
            "bridge: hops",
            "4 BLE + 1 LoRa",
            show(shape.map(|s| format!("{} BLE + {} LoRa", s.ble_hops, s.lora_hops))),
            shape == Some(want_shape),
        ),
        CheckResult::new(
            "bridge: ledgered energy",
            format!("{:.3} mJ exactly", want_nj as f64 / 1e6),
            show(energy.map(|e| format!("{:.3} mJ", e as f64 / 1e6))),
            energy == Some(want_nj),
        ),
        CheckResult::new(
            "bridge: latency",
            format!("{} ms exactly", want_us as f64 / 1e3),
            show(latency.map(|l| format!("{} ms", l as f64 / 1e3))),
            latency == Some(want_us),
        ),
    ])
}

/// Two-hop latency through the neighbor cache, and every installed route's
/// cost against the sum of per-hop costs along the line, with link
/// quality taken from `lq`.
pub fn check_line(lq: LqOracle) -> Result<Vec<CheckResult>, SimError> {
    let cfg = parse(LINE_SCENARIO);
    let mut sim = Simulation::new(&cfg)?;
    sim.run_until(cfg.duration())?;
    let mut line = cfg.nodes.clone();
    line.sort_by(|a, b| a.x.total_cmp(&b.x));
    let pos = |id: NodeId| line.iter().position(|n| n.id == id.0).expect("node on the line");
    let expected = |a: usize, b: usize| -> u16 {
        let (lo, hi) = (a.min(b), a.max(b));
        (lo..hi).map(|k| hop_cost(lq(rssi_at(line[k + 1].x - line[k].x)))).sum()
    };
    let mut routes = 0;
    let mut mismatches = Vec::new();
    for node in sim.nodes() {
        let here = pos(node.id());
        for r in node.mesh().routes().filter(|r| r.valid) {
            routes += 1;
            let want = expected(here, pos(r.dest));
            if r.path_cost != want {
                mismatches.push(format!("{}→{}: {} vs {want}", node.id(), r.dest, r.path_cost));
            }
        }
    }
    let report: MetricsReport = sim.finish();
    let two_hop = report.messages.first();
    let want_us = 2 * cfg.ble_airtime().as_micros();
    let latency = two_hop.and_then(|m| m.latency_us());
    let discovered = report.messages.get(1).is_some_and(|m| m.fate == Fate::Delivered);
    Ok(vec![
        CheckResult::new(
            "line: two-hop intra latency",
            format!("{} ms exactly", want_us as f64 / 1e3),
            latency.map_or("not delivered".into(), |l| format!("{} ms", l as f64 / 1e3)),
            latency == Some(want_us),
        ),
        CheckResult::new(
            "line: route path costs",
            "sum of (256 − LQ) per hop",
            if mismatches.is_empty() {
                format!("{routes} routes match, discovery {}", if discovered { "delivered" } else { "failed" })
            } else {
                format!("{} of {routes} differ ({})", mismatches.len(), mismatches.join(", "))
            },
            mismatches.is_empty() && routes > 0 && discovered,
        ),
    ])
}

/// The production RSSI to link-quality map.
pub fn default_lq(rssi_dbm: i32) -> u8 {
    link_quality(rssi_dbm)
}

/// Monte-Carlo pure-ALOHA throughput against `G·e^(−2G)`.
pub fn check_aloha() -> Vec<CheckResult> {
    ALOHA_LOADS
        .par_iter()
        .enumerate()
        .map(|(k, &g)| {
            let run = simulate_pure_aloha(g, SimTime::from_millis(16), ALOHA_FRAMES, 1000 + k as u64);
            let want = aloha_throughput(g);
            CheckResult::new(
                format!("aloha: throughput at G = {g}"),
                format!("{want:.4} ± {ALOHA_TOLERANCE}"),
                format!("{:.4} (G measured {:.4}, {} frames)", run.throughput, run.offered_load, run.frames),
                (run.throughput - want).abs() <= ALOHA_TOLERANCE,
            )
        })
        .collect()
}

/// Election outcomes over every connected graph up to `max_nodes`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ElectionSummary {
    pub graphs: usize,
    pub failures: Vec<String>,
    /// Worst rounds until the head set was correct, formation and demotion.
    pub max_head_rounds: u64,
    /// Worst rounds until every label was correct where each member sits
    /// next to its head.
    pub max_one_hop_settle: u64,
    /// Worst rounds until every label was correct anywhere.
    pub max_settle: u64,
}

pub fn election_summary(max_nodes: usize, budget: u64) -> ElectionSummary {
    let graphs: Vec<(usize, Vec<(usize, usize)>)> =
        (1..=max_nodes).flat_map(|n| connected_graphs(n).into_iter().map(move |g| (n, g))).collect();
    let results: Vec<Result<ElectionCheck, String>> = graphs
        .par_iter()
        .map(|(n, g)| check_election(*n, g, budget).map_err(|e| format!("{n} nodes {g:?}: {e}")))
        .collect();
    let mut s = ElectionSummary { graphs: graphs.len(), ..Default::default() };
    for r in results {
        match r {
            Ok(c) => {
                let head = c.head_rounds.max(c.demotion_head_rounds.unwrap_or(0));
                s.max_head_rounds = s.max_head_rounds.max(head);
                s.max_settle = s.max_settle.max(c.settle_rounds.max(c.demotion_rounds.unwrap_or(0)));
                if c.one_hop {
                    s.max_one_hop_settle = s.max_one_hop_settle.max(c.settle_rounds);
                }
                if c.one_hop_after_demotion {
                    s.max_one_hop_settle = s.max_one_hop_settle.max(c.demotion_rounds.unwrap_or(0));
                }
            }
            Err(e) => s.failures.push(e),
        }
    }
    s
}

pub fn check_elections() -> Vec<CheckResult> {
    let s = election_summary(ELECTION_MAX_NODES, 4 * ELECTION_ROUNDS);
    let failed = if s.failures.is_empty() { String::new() } else { format!(", first failure: {}", s.failures[0]) };
    vec![
        CheckResult::new(
            "election: head set after formation and demotion",
            format!("≤ {ELECTION_ROUNDS} rounds on all graphs ≤ {ELECTION_MAX_NODES} nodes"),
            format!("worst {} rounds over {} graphs{failed}", s.max_head_rounds, s.graphs),
            s.failures.is_empty() && s.max_head_rounds <= ELECTION_ROUNDS,
        ),
        CheckResult::new(
            "election: cluster labels, one-hop clusters",
            format!("≤ {ELECTION_ROUNDS} rounds"),
            format!("worst {} rounds (multi-hop clusters: {})", s.max_one_hop_settle, s.max_settle),
            s.failures.is_empty() && s.max_one_hop_settle <= ELECTION_ROUNDS,
        ),
    ]
}

/// Runs every check.
pub fn run_suite() -> Result<ValidationReport, SimError> {
    let mut checks = Vec::new();
    checks.extend(check_traffic_locality()?);
    checks.extend(check_fig1()?);
    checks.extend(check_line(default_lq)?);
    checks.extend(check_aloha());
    checks.extend(check_elections());
    Ok(ValidationReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse() {
        for s in [FIG1_SCENARIO, THREE_CLUSTERS_SCENARIO, LINE_SCENARIO] {
            ScenarioConfig::from_toml(s).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn line_checks_pass_with_production_lq() {
        let checks = check_line(default_lq).unwrap();
        assert!(checks.iter().all(|c| c.pass), "{checks:#?}");
    }

    #[test]
    fn mistuned_lq_fails_path_cost_check() {
        let mistuned: LqOracle = |rssi| (2 * (rssi + 110)).clamp(0, 255) as u8;
        let checks = check_line(mistuned).unwrap();
        let cost = checks.iter().find(|c| c.name == "line: route path costs").unwrap();
        assert!(!cost.pass, "{cost:?}");
    }
}
