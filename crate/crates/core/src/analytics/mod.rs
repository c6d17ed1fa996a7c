//! Closed-form traffic, energy, capacity and lifetime models.
//!
//! Everything here is a pure function of its arguments. Units are SI unless a
//! name says otherwise: seconds, joules, milliwatts for transmit power and
//! milliamps for currents.

mod airtime;

pub use airtime::{
    lora_time_on_air, reference_lora_airtime, AirtimeMode, LoraPhyConfig, PaperAirtimes, PAPER_AIRTIMES,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("{field} = {value} is outside its valid domain")]
    OutOfDomain { field: &'static str, value: f64 },
    #[error("LoRa payload of {0} bytes is outside 1..=255")]
    PayloadOutOfRange(usize),
}

fn check(field: &'static str, value: f64, ok: bool) -> Result<(), AnalyticsError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(AnalyticsError::OutOfDomain { field, value })
    }
}

/// Locality bias, cluster count and per-node message rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficParams {
    beta: f64,
    clusters: u32,
    rate_per_node: f64,
}

impl TrafficParams {
    /// `rate_per_node` is in messages per minute.
    pub fn new(beta: f64, clusters: u32, rate_per_node: f64) -> Result<Self, AnalyticsError> {
        check("beta", beta, (0.0..=1.0).contains(&beta))?;
        check("clusters", f64::from(clusters), clusters >= 1)?;
        check("rate_per_node", rate_per_node, rate_per_node >= 0.0)?;
        Ok(Self { beta, clusters, rate_per_node })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn clusters(&self) -> u32 {
        self.clusters
    }

    pub fn rate_per_node(&self) -> f64 {
        self.rate_per_node
    }
}

/// Datasheet-level description of one radio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioProfile {
    tx_power_mw: f64,
    airtime: f64,
    range_m: f64,
    active_current_ma: f64,
    sleep_current_ma: f64,
}

impl RadioProfile {
    pub fn new(
        tx_power_mw: f64,
        airtime: f64,
        range_m: f64,
        active_current_ma: f64,
        sleep_current_ma: f64,
    ) -> Result<Self, AnalyticsError> {
        check("tx_power_mw", tx_power_mw, tx_power_mw >= 0.0)?;
        check("airtime", airtime, airtime >= 0.0)?;
        check("range_m", range_m, range_m >= 0.0)?;
        check("active_current_ma", active_current_ma, active_current_ma >= 0.0)?;
        check("sleep_current_ma", sleep_current_ma, sleep_current_ma >= 0.0)?;
        Ok(Self { tx_power_mw, airtime, range_m, active_current_ma, sleep_current_ma })
    }

    /// nRF52840 on Coded PHY S8 at +8 dBm.
    pub fn ble_default() -> Self {
        Self {
            tx_power_mw: 8.0,
            airtime: PAPER_AIRTIMES.ble_packet,
            range_m: 800.0,
            active_current_ma: 6.5,
            sleep_current_ma: 0.0,
        }
    }

    /// SX1262 at SF10/125 kHz/+14 dBm.
    pub fn lora_default() -> Self {
        Self {
            tx_power_mw: 50.0,
            airtime: PAPER_AIRTIMES.lora_sf10,
            range_m: 2500.0,
            active_current_ma: 4.2,
            sleep_current_ma: 0.0006,
        }
    }

    pub fn with_airtime(mut self, airtime: f64) -> Self {
        self.airtime = airtime;
        self
    }

    pub fn tx_power_mw(&self) -> f64 {
        self.tx_power_mw
    }

    pub fn airtime(&self) -> f64 {
        self.airtime
    }

    pub fn range_m(&self) -> f64 {
        self.range_m
    }

    pub fn active_current_ma(&self) -> f64 {
        self.active_current_ma
    }

    pub fn sleep_current_ma(&self) -> f64 {
        self.sleep_current_ma
    }

    /// Joules spent transmitting one packet.
    pub fn per_packet_energy(&self) -> f64 {
        radio_energy_per_packet(self)
    }
}

/// Hop composition of an end-to-end path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct PathShape {
    pub ble_hops: u32,
    pub lora_hops: u32,
}

impl PathShape {
    pub const fn new(ble_hops: u32, lora_hops: u32) -> Self {
        Self { ble_hops, lora_hops }
    }

    pub fn total_hops(&self) -> u32 {
        self.ble_hops + self.lora_hops
    }

    pub fn is_trivial(&self) -> bool {
        self.total_hops() == 0
    }
}

impl std::ops::Add for PathShape {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self::new(self.ble_hops + rhs.ble_hops, self.lora_hops + rhs.lora_hops)
    }
}

/// A quantity that may diverge when its denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bounded {
    Finite(f64),
    Unbounded,
}

impl Bounded {
    pub fn finite(self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(v),
            Self::Unbounded => None,
        }
    }
}

/// Fraction of traffic leaving the sender's cluster: (1 − β)(1 − 1/C).
pub fn inter_cluster_ratio(params: &TrafficParams) -> f64 {
    (1.0 - params.beta) * (1.0 - 1.0 / f64::from(params.clusters))
}

/// LoRa channel utilization reduction versus a LoRa-only mesh:
/// 1 − α − α·h_lora/h_total.
pub fn utilization_reduction(alpha: f64, shape: PathShape) -> f64 {
    if shape.is_trivial() {
        return 1.0 - alpha;
    }
    let lora_share = f64::from(shape.lora_hops) / f64::from(shape.total_hops());
    1.0 - alpha - alpha * lora_share
}

/// P_tx · airtime, in joules.
pub fn radio_energy_per_packet(profile: &RadioProfile) -> f64 {
    profile.tx_power_mw * 1e-3 * profile.airtime
}

pub fn path_energy(shape: PathShape, e_ble: f64, e_lora: f64) -> f64 {
    f64::from(shape.ble_hops) * e_ble + f64::from(shape.lora_hops) * e_lora
}

/// Traffic-weighted mean energy per message.
pub fn mean_message_energy(alpha: f64, e_intra_path: f64, e_inter_path: f64) -> f64 {
    (1.0 - alpha) * e_intra_path + alpha * e_inter_path
}

/// Pure ALOHA throughput S = G·e^(−2G).
pub fn aloha_throughput(offered_load: f64) -> f64 {
    offered_load * (-2.0 * offered_load).exp()
}

/// Peak pure-ALOHA throughput, 1/(2e).
pub fn aloha_peak() -> f64 {
    aloha_throughput(0.5)
}

/// channels · S_max / T_pkt, evaluated as written (messages per second).
pub fn ble_cluster_capacity(s_max: f64, t_pkt: f64, channels: u32) -> f64 {
    f64::from(channels) * s_max / t_pkt
}

/// S_max / ToA (messages per second).
pub fn lora_backbone_capacity(s_max: f64, toa: f64) -> f64 {
    s_max / toa
}

/// C_LoRa / (α · r_node). Capacity and rate share a time unit (per minute
/// in the published figures). The caller decides how to round.
pub fn max_network_size(capacity_per_min: f64, alpha: f64, rate_per_node: f64) -> Bounded {
    let load = alpha * rate_per_node;
    if load <= 0.0 {
        Bounded::Unbounded
    } else {
        Bounded::Finite(capacity_per_min / load)
    }
}

/// Average current of a radio active for `duty` of the time.
pub fn duty_cycled_current(active_ma: f64, sleep_ma: f64, duty: f64) -> f64 {
    duty * active_ma + (1.0 - duty) * sleep_ma
}

/// Days until a `capacity_mah` cell is drained at `avg_current_ma`.
pub fn battery_life_days(capacity_mah: f64, avg_current_ma: f64) -> Bounded {
    if avg_current_ma <= 0.0 {
        Bounded::Unbounded
    } else {
        Bounded::Finite(capacity_mah / (avg_current_ma * 24.0))
    }
}

/// Transmission-only latency along a path.
pub fn path_latency(shape: PathShape, t_ble: f64, t_lora: f64) -> f64 {
    f64::from(shape.ble_hops) * t_ble + f64::from(shape.lora_hops) * t_lora
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn inter_cluster_ratio_examples() {
        let p = TrafficParams::new(0.82, 3, 1.0).unwrap();
        assert!(close(inter_cluster_ratio(&p), 0.12, 1e-12));
        let p = TrafficParams::new(0.0, 3, 1.0).unwrap();
        assert!(close(inter_cluster_ratio(&p), 2.0 / 3.0, 1e-15));
        let p = TrafficParams::new(1.0, 10, 1.0).unwrap();
        assert_eq!(inter_cluster_ratio(&p), 0.0);
    }

    #[test]
    fn traffic_params_reject_bad_domain() {
        assert!(TrafficParams::new(1.1, 3, 1.0).is_err());
        assert!(TrafficParams::new(-0.1, 3, 1.0).is_err());
        assert!(TrafficParams::new(0.5, 0, 1.0).is_err());
        assert!(TrafficParams::new(0.5, 3, -1.0).is_err());
        assert!(TrafficParams::new(f64::NAN, 3, 1.0).is_err());
    }

    #[test]
    fn utilization_reduction_examples() {
        let shape = PathShape::new(4, 1);
        assert!(close(utilization_reduction(0.12, shape), 0.856, 1e-12));
        assert_eq!(utilization_reduction(0.0, shape), 1.0);
        assert_eq!(utilization_reduction(0.0, PathShape::new(0, 3)), 1.0);
        assert!(close(utilization_reduction(0.08, shape), 0.904, 1e-12));
    }

    #[test]
    fn per_packet_energy_examples() {
        let ble = RadioProfile::new(8.0, 0.016, 800.0, 0.0, 0.0).unwrap();
        assert!(close(radio_energy_per_packet(&ble), 128e-6, 1e-15));
        let lora = RadioProfile::new(50.0, 0.370, 2500.0, 0.0, 0.0).unwrap();
        assert!(close(radio_energy_per_packet(&lora), 18.5e-3, 1e-15));
        let idle = RadioProfile::new(123.0, 0.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(radio_energy_per_packet(&idle), 0.0);
        assert!(close(ble.per_packet_energy(), ble.tx_power_mw() * 1e-3 * ble.airtime(), 1e-18));
    }

    #[test]
    fn path_energy_examples() {
        let (e_ble, e_lora) = (128e-6, 18.5e-3);
        assert!(close(path_energy(PathShape::new(4, 1), e_ble, e_lora), 19.012e-3, 1e-15));
        assert!(close(path_energy(PathShape::new(0, 5), e_ble, e_lora), 92.5e-3, 1e-15));
        assert!(close(path_energy(PathShape::new(2, 0), e_ble, e_lora), 0.256e-3, 1e-15));
    }

    #[test]
    fn mean_energy_examples() {
        let intra = 0.256e-3;
        let inter = 19.012e-3;
        let mean = mean_message_energy(0.12, intra, inter);
        assert!(close(mean, 2.50672e-3, 1e-12), "{mean}");
        assert!(close(mean_message_energy(0.12, 128e-6, inter), 2.39408e-3, 1e-12));
        assert_eq!(mean_message_energy(0.0, intra, inter), intra);
        assert_eq!(mean_message_energy(1.0, intra, inter), inter);
    }

    #[test]
    fn aloha_examples() {
        assert!(close(aloha_throughput(0.5), 0.183_94, 1e-5));
        assert_eq!(aloha_throughput(0.0), 0.0);
        assert!(close(aloha_throughput(1.0), (-2.0f64).exp(), 1e-15));
        assert!(close(aloha_peak(), 1.0 / (2.0 * std::f64::consts::E), 1e-15));
    }

    #[test]
    fn capacity_examples() {
        assert!(close(ble_cluster_capacity(0.184, 0.016, 3), 34.5, 1e-9));
        assert!(close(ble_cluster_capacity(0.184, 0.005, 3), 110.4, 1e-9));
        assert_eq!(ble_cluster_capacity(0.0, 0.016, 3), 0.0);
        assert!(close(lora_backbone_capacity(0.184, 0.370), 0.497_297, 1e-6));
        assert!(close(lora_backbone_capacity(0.184, 0.051), 3.607_843, 1e-6));
        assert_eq!(lora_backbone_capacity(0.184, 1.0), 0.184);
    }

    #[test]
    fn network_size_examples() {
        assert!(close(max_network_size(30.0, 0.12, 1.0).finite().unwrap(), 250.0, 1e-9));
        let n = max_network_size(29.84, 0.12, 1.0).finite().unwrap();
        assert!(close(n, 248.666, 1e-3), "{n}");
        assert!(close(max_network_size(30.0, 0.24, 1.0).finite().unwrap(), 125.0, 1e-9));
        assert_eq!(max_network_size(30.0, 0.0, 1.0), Bounded::Unbounded);
        assert_eq!(max_network_size(30.0, 0.12, 0.0), Bounded::Unbounded);
    }

    #[test]
    fn duty_cycle_examples() {
        assert!(close(duty_cycled_current(4.2, 0.0, 2.0 / 30.0), 0.28, 1e-15));
        assert_eq!(duty_cycled_current(4.2, 0.3, 1.0), 4.2);
        assert_eq!(duty_cycled_current(4.2, 0.3, 0.0), 0.3);
    }

    #[test]
    fn battery_examples() {
        let days = |ma| battery_life_days(500.0, ma).finite().unwrap();
        assert!(close(days(6.5), 3.205, 1e-3));
        assert!(close(days(9.2), 2.264, 1e-3));
        assert!(close(days(12.8), 1.627, 1e-3));
        assert_eq!(battery_life_days(500.0, 0.0), Bounded::Unbounded);
    }

    #[test]
    fn latency_examples() {
        assert!(close(path_latency(PathShape::new(2, 0), 0.016, 0.370), 0.032, 1e-15));
        assert!(close(path_latency(PathShape::new(4, 1), 0.016, 0.370), 0.434, 1e-15));
        assert!(close(path_latency(PathShape::new(0, 2), 0.016, 2.5), 5.0, 1e-15));
    }
}
