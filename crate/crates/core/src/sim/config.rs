//! Scenario files: TOML with fixed sections; unknown keys are rejected.
//!
//! ```toml
//! [scenario]
//! name = "two-nodes"
//! duration_s = 60.0
//! seed = 7
//!
//! [radio]
//! airtime_mode = "paper"
//!
//! [[node]]
//! id = 1
//! x = 0.0
//! y = 0.0
//!
//! [[node]]
//! id = 2
//! x = 500.0
//! y = 0.0
//!
//! [[message]]
//! at_s = 30.0
//! src = 1
//! dst = 2
//! payload_bytes = 50
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{lora_time_on_air, AirtimeMode, LoraPhyConfig, PAPER_AIRTIMES};
use crate::backbone::{BackboneConfig, ListenSchedule};
use crate::cluster::ElectionConfig;
use crate::mesh::MeshConfig;
use crate::node::NodeConfig;
use crate::protocol::{NodeId, MAX_MESSAGE_PAYLOAD};
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Propagation {
    /// Fixed-range discs.
    #[default]
    Disc,
    /// Log-distance path loss against per-radio sensitivity.
    LogDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(default)]
    pub name: String,
    pub duration_s: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Run route-loop and budget checks; violations abort the run.
    #[serde(default)]
    pub check_invariants: bool,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioSection {
    pub airtime_mode: AirtimeMode,
    pub propagation: Propagation,
    pub ble_range_m: f64,
    pub lora_range_m: f64,
    pub ble_airtime_ms: f64,
    pub ble_tx_power_mw: f64,
    pub ble_channels: u8,
    pub lora_tx_power_mw: f64,
    pub lora_sf: u8,
    /// Overrides the paper-mode LoRa airtime constant.
    pub lora_airtime_ms: Option<f64>,
    pub lora_listen_ma: f64,
    pub supply_v: f64,
}

impl Default for RadioSection {
    fn default() -> Self {
        Self {
            airtime_mode: AirtimeMode::PaperConstants,
            propagation: Propagation::Disc,
            ble_range_m: 800.0,
            lora_range_m: 2500.0,
            ble_airtime_ms: PAPER_AIRTIMES.ble_packet * 1e3,
            ble_tx_power_mw: 8.0,
            ble_channels: 1,
            lora_tx_power_mw: 50.0,
            lora_sf: 10,
            lora_airtime_ms: None,
            lora_listen_ma: 4.2,
            supply_v: 3.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub beacon_interval_s: f64,
    pub data_ttl: u8,
    pub aggregation_timeout_ms: f64,
    pub listen_period_s: f64,
    pub listen_window_s: f64,
    pub digest_period_s: f64,
    pub backbone_hop_limit: u8,
    pub demotion_threshold_pct: u8,
    pub hysteresis_pct: u8,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            beacon_interval_s: 3.0,
            data_ttl: 16,
            aggregation_timeout_ms: 200.0,
            listen_period_s: 30.0,
            listen_window_s: 2.0,
            digest_period_s: 60.0,
            backbone_hop_limit: 3,
            demotion_threshold_pct: 20,
            hysteresis_pct: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficSection {
    pub beta: f64,
    /// Poisson arrivals per node per second; zero disables generated traffic.
    pub rate_per_node: f64,
    pub payload_bytes: usize,
    pub start_s: f64,
    pub stop_s: Option<f64>,
}

impl Default for TrafficSection {
    fn default() -> Self {
        Self { beta: 0.82, rate_per_node: 0.0, payload_bytes: 50, start_s: 30.0, stop_s: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: u16,
    pub x: f64,
    pub y: f64,
    #[serde(default = "full_battery")]
    pub battery_pct: u8,
}

fn full_battery() -> u8 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedMessage {
    pub at_s: f64,
    pub src: u16,
    pub dst: u16,
    #[serde(default = "default_payload")]
    pub payload_bytes: usize,
}

fn default_payload() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryEvent {
    pub at_s: f64,
    pub node: u16,
    pub pct: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub radio: RadioSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub traffic: TrafficSection,
    #[serde(default, rename = "node")]
    pub nodes: Vec<NodeSpec>,
    #[serde(default, rename = "message")]
    pub messages: Vec<ScriptedMessage>,
    #[serde(default, rename = "battery")]
    pub battery: Vec<BatteryEvent>,
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be a positive number, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be a non-negative number, got {v}")))
    }
}

fn payload_ok(field: &str, n: usize) -> Result<(), ConfigError> {
    if (1..=MAX_MESSAGE_PAYLOAD).contains(&n) {
        Ok(())
    } else {
        Err(invalid(field, format!("must be within 1..={MAX_MESSAGE_PAYLOAD}, got {n}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("scenario.duration_s", self.scenario.duration_s)?;
        let r = &self.radio;
        positive("radio.ble_range_m", r.ble_range_m)?;
        positive("radio.lora_range_m", r.lora_range_m)?;
        positive("radio.ble_airtime_ms", r.ble_airtime_ms)?;
        non_negative("radio.ble_tx_power_mw", r.ble_tx_power_mw)?;
        non_negative("radio.lora_tx_power_mw", r.lora_tx_power_mw)?;
        non_negative("radio.lora_listen_ma", r.lora_listen_ma)?;
        non_negative("radio.supply_v", r.supply_v)?;
        if !matches!(r.ble_channels, 1 | 3) {
            return Err(invalid("radio.ble_channels", "must be 1 or 3"));
        }
        if !(7..=12).contains(&r.lora_sf) {
            return Err(invalid("radio.lora_sf", format!("must be within 7..=12, got {}", r.lora_sf)));
        }
        if let Some(t) = r.lora_airtime_ms {
            positive("radio.lora_airtime_ms", t)?;
        }
        let p = &self.protocol;
        positive("protocol.beacon_interval_s", p.beacon_interval_s)?;
        non_negative("protocol.aggregation_timeout_ms", p.aggregation_timeout_ms)?;
        positive("protocol.listen_period_s", p.listen_period_s)?;
        positive("protocol.listen_window_s", p.listen_window_s)?;
        positive("protocol.digest_period_s", p.digest_period_s)?;
        if p.listen_window_s > p.listen_period_s {
            return Err(invalid("protocol.listen_window_s", "exceeds listen_period_s"));
        }
        if p.demotion_threshold_pct > 100 {
            return Err(invalid("protocol.demotion_threshold_pct", "must be at most 100"));
        }
        let t = &self.traffic;
        if !(0.0..=1.0).contains(&t.beta) {
            return Err(invalid("traffic.beta", format!("must be within [0, 1], got {}", t.beta)));
        }
        non_negative("traffic.rate_per_node", t.rate_per_node)?;
        non_negative("traffic.start_s", t.start_s)?;
        payload_ok("traffic.payload_bytes", t.payload_bytes)?;
        if let Some(stop) = t.stop_s {
            non_negative("traffic.stop_s", stop)?;
        }

        let mut ids = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let field = format!("node[{i}].id");
            if !NodeId(n.id).is_unicast() {
                return Err(invalid(field, format!("{} is reserved", n.id)));
            }
            if !ids.insert(n.id) {
                return Err(invalid(field, format!("duplicate node id {}", n.id)));
            }
            if !n.x.is_finite() || !n.y.is_finite() {
                return Err(invalid(format!("node[{i}].x"), "coordinates must be finite"));
            }
            if n.battery_pct > 100 {
                return Err(invalid(format!("node[{i}].battery_pct"), "must be at most 100"));
            }
        }
        if self.nodes.is_empty() {
            return Err(invalid("node", "at least one node is required"));
        }
        if t.rate_per_node > 0.0 && self.nodes.len() < 2 {
            return Err(invalid("traffic.rate_per_node", "generated traffic needs at least 2 nodes"));
        }
        for (i, m) in self.messages.iter().enumerate() {
            non_negative(&format!("message[{i}].at_s"), m.at_s)?;
            for (name, id) in [("src", m.src), ("dst", m.dst)] {
                if !ids.contains(&id) {
                    return Err(invalid(format!("message[{i}].{name}"), format!("unknown node {id}")));
                }
            }
            payload_ok(&format!("message[{i}].payload_bytes"), m.payload_bytes)?;
        }
        for (i, b) in self.battery.iter().enumerate() {
            non_negative(&format!("battery[{i}].at_s"), b.at_s)?;
            if !ids.contains(&b.node) {
                return Err(invalid(format!("battery[{i}].node"), format!("unknown node {}", b.node)));
            }
            if b.pct > 100 {
                return Err(invalid(format!("battery[{i}].pct"), "must be at most 100"));
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.scenario.duration_s)
    }

    pub fn ble_airtime(&self) -> SimTime {
        SimTime::from_secs_f64(self.radio.ble_airtime_ms / 1e3)
    }

    pub fn lora_phy(&self) -> LoraPhyConfig {
        LoraPhyConfig::typical(self.radio.lora_sf).expect("validated spreading factor")
    }

    /// Airtime of a LoRa frame of `len` bytes under the configured mode.
    pub fn lora_airtime(&self, len: usize) -> SimTime {
        if self.radio.airtime_mode == AirtimeMode::PaperConstants {
            if let Some(ms) = self.radio.lora_airtime_ms {
                return SimTime::from_secs_f64(ms / 1e3);
            }
            if let Some(t) = PAPER_AIRTIMES.lora(self.radio.lora_sf) {
                return SimTime::from_secs_f64(t);
            }
        }
        let t = lora_time_on_air(&self.lora_phy(), len.clamp(1, 255)).expect("valid payload length");
        SimTime::from_secs_f64(t)
    }

    pub fn schedule(&self) -> ListenSchedule {
        ListenSchedule {
            period: SimTime::from_secs_f64(self.protocol.listen_period_s),
            window: SimTime::from_secs_f64(self.protocol.listen_window_s),
            offset: SimTime::ZERO,
        }
    }

    pub fn node_config(&self) -> NodeConfig {
        let p = &self.protocol;
        NodeConfig {
            mesh: MeshConfig {
                beacon_interval: SimTime::from_secs_f64(p.beacon_interval_s),
                data_ttl: p.data_ttl,
                ..MeshConfig::default()
            },
            election: ElectionConfig {
                demotion_threshold_pct: p.demotion_threshold_pct,
                hysteresis_pct: p.hysteresis_pct,
            },
            backbone: BackboneConfig {
                schedule: self.schedule(),
                aggregation_timeout: SimTime::from_secs_f64(p.aggregation_timeout_ms / 1e3),
                hop_limit: p.backbone_hop_limit,
                digest_period: SimTime::from_secs_f64(p.digest_period_s),
                directory_expiry_periods: 3,
            },
        }
    }

    /// Sets a dotted parameter such as `traffic.beta` from its textual
    /// value, then revalidates.
    pub fn set_param(&mut self, name: &str, value: &str) -> Result<(), ConfigError> {
        let mut doc = toml::Value::try_from(&*self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let (section, key) = name.split_once('.').ok_or_else(|| ConfigError::UnknownParam(name.to_string()))?;
        let table = doc
            .get_mut(section)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| ConfigError::UnknownParam(name.to_string()))?;
        let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(value.to_string()),
        };
        let parsed = match (table.get(key), parsed) {
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert(key.to_string(), parsed);
        let cfg: ScenarioConfig = doc.try_into().map_err(|e: toml::de::Error| {
            if e.to_string().contains("unknown field") {
                ConfigError::UnknownParam(name.to_string())
            } else {
                invalid(name, e.to_string())
            }
        })?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[scenario]
duration_s = 10.0

[[node]]
id = 1
x = 0.0
y = 0.0
"#;

    #[test]
    fn minimal_file_uses_defaults() {
        let c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.radio.ble_range_m, 800.0);
        assert_eq!(c.radio.lora_range_m, 2500.0);
        assert_eq!(c.traffic.payload_bytes, 50);
        assert_eq!(c.protocol.beacon_interval_s, 3.0);
        assert_eq!(c.scenario.seed, 1);
        assert_eq!(c.ble_airtime(), SimTime::from_millis(16));
        assert_eq!(c.lora_airtime(50), SimTime::from_millis(370));
    }

    #[test]
    fn unknown_key_names_the_field() {
        let text = MINIMAL.replace("duration_s = 10.0", "duration_s = 10.0\nspeed = 3");
        let err = ScenarioConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("speed"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = format!("{MINIMAL}\n[[node]]\nid = 1\nx = 5.0\ny = 0.0\n");
        let err = ScenarioConfig::from_toml(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref field, .. } if field == "node[1].id"), "{err}");
    }

    #[test]
    fn zero_duration_rejected() {
        let text = MINIMAL.replace("10.0", "0.0");
        assert!(matches!(
            ScenarioConfig::from_toml(&text),
            Err(ConfigError::Invalid { ref field, .. }) if field == "scenario.duration_s"
        ));
    }

    #[test]
    fn formula_airtime_tracks_frame_size() {
        let text = MINIMAL.replace("duration_s = 10.0", "duration_s = 10.0\n[radio]\nairtime_mode = \"formula\"");
        let c = ScenarioConfig::from_toml(&text).unwrap();
        assert!(c.lora_airtime(20) < c.lora_airtime(120));
    }

    #[test]
    fn set_param_round_trips() {
        let mut c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        c.set_param("traffic.beta", "0.5").unwrap();
        assert_eq!(c.traffic.beta, 0.5);
        c.set_param("radio.ble_range_m", "900").unwrap();
        assert_eq!(c.radio.ble_range_m, 900.0);
        c.set_param("radio.airtime_mode", "formula").unwrap();
        assert_eq!(c.radio.airtime_mode, AirtimeMode::Formula);
        assert!(matches!(c.set_param("traffic.nope", "1"), Err(ConfigError::UnknownParam(_))));
        assert!(matches!(c.set_param("traffic.beta", "2"), Err(ConfigError::Invalid { .. })));
        let again = ScenarioConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }
}
