//! Propagation and pure-ALOHA overlap rules shared by the event engine and
//! the Monte-Carlo throughput harness.

use crate::protocol::Radio;
use crate::time::SimTime;

use super::config::{Propagation, RadioSection};

/// Distance-derived RSSI: `−40 − 25·log10(max(d, 1) / 10)` rounded and
/// clamped to [−110, −40] dBm.
pub fn rssi_at(distance_m: f64) -> i32 {
    let d = distance_m.max(1.0);
    let rssi = -40.0 - 25.0 * (d / 10.0).log10();
    (rssi.round() as i32).clamp(-110, -40)
}

const PL0_DB: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDistanceRadio {
    pub tx_dbm: f64,
    pub sensitivity_dbm: f64,
    pub exponent: f64,
}

pub const BLE_LOG_DISTANCE: LogDistanceRadio =
    LogDistanceRadio { tx_dbm: 8.0, sensitivity_dbm: -103.0, exponent: 2.45 };
pub const LORA_LOG_DISTANCE: LogDistanceRadio =
    LogDistanceRadio { tx_dbm: 14.0, sensitivity_dbm: -132.0, exponent: 3.1 };

impl LogDistanceRadio {
    pub fn received_dbm(&self, distance_m: f64) -> f64 {
        self.tx_dbm - (PL0_DB + 10.0 * self.exponent * distance_m.max(1.0).log10())
    }

    pub fn reaches(&self, distance_m: f64) -> bool {
        self.received_dbm(distance_m) >= self.sensitivity_dbm
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub propagation: Propagation,
    pub ble_range_m: f64,
    pub lora_range_m: f64,
}

impl LinkModel {
    pub fn from_radio(r: &RadioSection) -> Self {
        Self { propagation: r.propagation, ble_range_m: r.ble_range_m, lora_range_m: r.lora_range_m }
    }

    pub fn in_range(&self, radio: Radio, distance_m: f64) -> bool {
        match (self.propagation, radio) {
            (Propagation::Disc, Radio::Ble) => distance_m <= self.ble_range_m,
            (Propagation::Disc, Radio::Lora) => distance_m <= self.lora_range_m,
            (Propagation::LogDistance, Radio::Ble) => BLE_LOG_DISTANCE.reaches(distance_m),
            (Propagation::LogDistance, Radio::Lora) => LORA_LOG_DISTANCE.reaches(distance_m),
        }
    }
}

/// One frame on the air.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Airing {
    pub sender: usize,
    pub radio: Radio,
    pub channel: u8,
    pub start: SimTime,
    pub end: SimTime,
}

impl Airing {
    /// Strict overlap in time: frames that merely touch do not collide.
    pub fn overlaps(&self, other: &Airing) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Recent transmissions, kept long enough to judge every frame still in
/// flight.
#[derive(Debug, Clone, Default)]
pub struct AirLog {
    airings: Vec<(u64, Airing)>,
}

impl AirLog {
    pub fn push(&mut self, id: u64, a: Airing) {
        self.airings.push((id, a));
    }

    /// Forgets frames that ended before `horizon`.
    pub fn prune(&mut self, horizon: SimTime) {
        self.airings.retain(|(_, a)| a.end >= horizon);
    }

    pub fn len(&self) -> usize {
        self.airings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.airings.is_empty()
    }

    /// Whether `receiver` decodes airing `id`: it must not be transmitting
    /// on the same radio during the frame, and no other audible frame on
    /// the same channel may overlap it.
    pub fn clean_at(&self, id: u64, frame: &Airing, receiver: usize, audible: impl Fn(usize) -> bool) -> bool {
        for (other_id, other) in &self.airings {
            if *other_id == id || other.radio != frame.radio || !other.overlaps(frame) {
                continue;
            }
            if other.sender == receiver {
                return false;
            }
            if other.channel == frame.channel && audible(other.sender) {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn airing(sender: usize, start_ms: u64, len_ms: u64) -> Airing {
        Airing {
            sender,
            radio: Radio::Ble,
            channel: 0,
            start: SimTime::from_millis(start_ms),
            end: SimTime::from_millis(start_ms + len_ms),
        }
    }

    #[test]
    fn rssi_map() {
        assert_eq!(rssi_at(0.0), -40);
        assert_eq!(rssi_at(800.0), -88);
        assert_eq!(rssi_at(10.0), -40);
        assert_eq!(rssi_at(100.0), -65);
        assert_eq!(rssi_at(1000.0), -90);
        assert_eq!(rssi_at(1e7), -110);
    }

    #[test]
    fn disc_ranges() {
        let m = LinkModel { propagation: Propagation::Disc, ble_range_m: 800.0, lora_range_m: 2500.0 };
        assert!(m.in_range(Radio::Ble, 700.0));
        assert!(!m.in_range(Radio::Ble, 900.0));
        assert!(m.in_range(Radio::Lora, 2400.0));
    }

    #[test]
    fn log_distance_ranges_bracket_disc_defaults() {
        assert!(BLE_LOG_DISTANCE.reaches(780.0));
        assert!(!BLE_LOG_DISTANCE.reaches(820.0));
        assert!(LORA_LOG_DISTANCE.reaches(2500.0));
        assert!(!LORA_LOG_DISTANCE.reaches(2800.0));
    }

    #[test]
    fn overlapping_frames_both_lost() {
        let mut log = AirLog::default();
        let a = airing(1, 0, 16);
        let b = airing(2, 10, 16);
        log.push(1, a);
        log.push(2, b);
        assert!(!log.clean_at(1, &a, 3, |_| true));
        assert!(!log.clean_at(2, &b, 3, |_| true));
        assert!(log.clean_at(1, &a, 3, |s| s != 2));
    }

    #[test]
    fn touching_frames_survive() {
        let mut log = AirLog::default();
        let a = airing(1, 0, 16);
        let b = airing(2, 16, 16);
        log.push(1, a);
        log.push(2, b);
        assert!(log.clean_at(1, &a, 3, |_| true));
    }

    #[test]
    fn transmitter_is_deaf() {
        let mut log = AirLog::default();
        let a = airing(1, 0, 16);
        let own = Airing { channel: 2, ..airing(3, 5, 16) };
        log.push(1, a);
        log.push(2, own);
        assert!(!log.clean_at(1, &a, 3, |_| false));
    }
}
