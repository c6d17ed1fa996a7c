//! LoRa time-on-air and the two airtime modes used by the rest of the crate.

use serde::{Deserialize, Serialize};

use super::AnalyticsError;

/// LoRa modem settings relevant to airtime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraPhyConfig {
    spreading_factor: u8,
    bandwidth_hz: u32,
    coding_rate_index: u8,
    preamble_symbols: u16,
    explicit_header: bool,
    crc_on: bool,
    low_data_rate_opt: bool,
}

impl LoraPhyConfig {
    pub fn new(
        spreading_factor: u8,
        bandwidth_hz: u32,
        coding_rate_index: u8,
        preamble_symbols: u16,
        explicit_header: bool,
        crc_on: bool,
        low_data_rate_opt: bool,
    ) -> Result<Self, AnalyticsError> {
        if !(5..=12).contains(&spreading_factor) {
            return Err(AnalyticsError::OutOfDomain { field: "spreading_factor", value: f64::from(spreading_factor) });
        }
        if !matches!(bandwidth_hz, 125_000 | 250_000 | 500_000) {
            return Err(AnalyticsError::OutOfDomain { field: "bandwidth_hz", value: f64::from(bandwidth_hz) });
        }
        if !(1..=4).contains(&coding_rate_index) {
            return Err(AnalyticsError::OutOfDomain {
                field: "coding_rate_index",
                value: f64::from(coding_rate_index),
            });
        }
        Ok(Self {
            spreading_factor,
            bandwidth_hz,
            coding_rate_index,
            preamble_symbols,
            explicit_header,
            crc_on,
            low_data_rate_opt,
        })
    }

    /// 125 kHz, CR 4/5, 8-symbol preamble, explicit header, CRC on. Low data
    /// rate optimisation follows the SX126x rule (mandatory once a symbol
    /// exceeds 16 ms, i.e. SF11 and SF12 at 125 kHz).
    pub fn typical(spreading_factor: u8) -> Result<Self, AnalyticsError> {
        let mut phy = Self::new(spreading_factor, 125_000, 1, 8, true, true, false)?;
        phy.low_data_rate_opt = phy.symbol_time() > 0.016;
        Ok(phy)
    }

    pub fn spreading_factor(&self) -> u8 {
        self.spreading_factor
    }

    pub fn bandwidth_hz(&self) -> u32 {
        self.bandwidth_hz
    }

    pub fn coding_rate_index(&self) -> u8 {
        self.coding_rate_index
    }

    pub fn preamble_symbols(&self) -> u16 {
        self.preamble_symbols
    }

    pub fn explicit_header(&self) -> bool {
        self.explicit_header
    }

    pub fn crc_on(&self) -> bool {
        self.crc_on
    }

    pub fn low_data_rate_opt(&self) -> bool {
        self.low_data_rate_opt
    }

    /// Seconds per chirp symbol: 2^SF / BW.
    pub fn symbol_time(&self) -> f64 {
        f64::from(1u32 << self.spreading_factor) / f64::from(self.bandwidth_hz)
    }
}

/// Time-on-air in seconds for `payload_bytes` of PHY payload, using the
/// SX126x datasheet expression (which reduces to the AN1200.13 form for
/// SF7..SF12).
pub fn lora_time_on_air(phy: &LoraPhyConfig, payload_bytes: usize) -> Result<f64, AnalyticsError> {
    if !(1..=255).contains(&payload_bytes) {
        return Err(AnalyticsError::PayloadOutOfRange(payload_bytes));
    }
    let sf = i64::from(phy.spreading_factor);
    let cr = i64::from(phy.coding_rate_index);
    let crc = if phy.crc_on { 16 } else { 0 };
    let header = if phy.explicit_header { 20 } else { 0 };
    let bits = 8 * payload_bytes as i64 + crc - 4 * sf + header;

    let (fixed, bits, per_block) = if sf < 7 {
        (6.25 + 8.0, bits, 4 * sf)
    } else {
        let de = if phy.low_data_rate_opt { 2 } else { 0 };
        (4.25 + 8.0, bits + 8, 4 * (sf - de))
    };
    let blocks = if bits <= 0 { 0 } else { (bits + per_block - 1) / per_block };
    let symbols = f64::from(phy.preamble_symbols) + fixed + (blocks * (cr + 4)) as f64;
    Ok(symbols * phy.symbol_time())
}

/// How per-frame airtimes are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AirtimeMode {
    /// LoRa airtime from [`lora_time_on_air`] for each frame's real size.
    Formula,
    /// Fixed per-radio constants matching the published tables.
    #[default]
    #[serde(alias = "paper")]
    PaperConstants,
}

impl std::str::FromStr for AirtimeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "formula" => Ok(Self::Formula),
            "paper" | "paper-constants" => Ok(Self::PaperConstants),
            other => Err(format!("unknown airtime mode `{other}` (expected formula|paper)")),
        }
    }
}

impl std::fmt::Display for AirtimeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Formula => "formula",
            Self::PaperConstants => "paper",
        })
    }
}

/// Constant airtimes for paper-constants mode, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaperAirtimes {
    pub ble_packet: f64,
    pub lora_sf7: f64,
    pub lora_sf10: f64,
    pub lora_sf12: f64,
}

pub const PAPER_AIRTIMES: PaperAirtimes =
    PaperAirtimes { ble_packet: 0.016, lora_sf7: 0.051, lora_sf10: 0.370, lora_sf12: 2.5 };

impl PaperAirtimes {
    /// Constant LoRa airtime for a spreading factor, if one is published.
    pub fn lora(&self, spreading_factor: u8) -> Option<f64> {
        match spreading_factor {
            7 => Some(self.lora_sf7),
            10 => Some(self.lora_sf10),
            12 => Some(self.lora_sf12),
            _ => None,
        }
    }
}

/// LoRa airtime for a 50-byte reference packet at `spreading_factor` under
/// `mode`. Paper mode falls back to the formula for spreading factors with
/// no published constant.
pub fn reference_lora_airtime(mode: AirtimeMode, spreading_factor: u8) -> Result<f64, AnalyticsError> {
    if mode == AirtimeMode::PaperConstants {
        if let Some(t) = PAPER_AIRTIMES.lora(spreading_factor) {
            return Ok(t);
        }
    }
    lora_time_on_air(&LoraPhyConfig::typical(spreading_factor)?, 50)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Semtech AN1200.13 expression, written independently of the SX126x
    /// form above. Valid for SF7..SF12.
    #[allow(clippy::too_many_arguments)]
    fn an1200_oracle(sf: u32, bw: f64, cr: u32, preamble: f64, explicit: bool, crc: bool, de: bool, pl: u32) -> f64 {
        let t_sym = 2f64.powi(sf as i32) / bw;
        let t_preamble = (preamble + 4.25) * t_sym;
        let h = if explicit { 0.0 } else { 1.0 };
        let crc = if crc { 1.0 } else { 0.0 };
        let de = if de { 1.0 } else { 0.0 };
        let num = 8.0 * pl as f64 - 4.0 * sf as f64 + 28.0 + 16.0 * crc - 20.0 * h;
        let den = 4.0 * (sf as f64 - 2.0 * de);
        let n_payload = 8.0 + ((num / den).ceil() * (cr as f64 + 4.0)).max(0.0);
        t_preamble + n_payload * t_sym
    }

    #[test]
    fn sf7_fifty_bytes() {
        let toa = lora_time_on_air(&LoraPhyConfig::typical(7).unwrap(), 50).unwrap();
        assert!((toa - 0.097_536).abs() < 1e-9, "{toa}");
    }

    #[test]
    fn sf10_fifty_bytes() {
        let toa = lora_time_on_air(&LoraPhyConfig::typical(10).unwrap(), 50).unwrap();
        assert!((toa - 0.616_448).abs() < 1e-9, "{toa}");
    }

    #[test]
    fn agrees_with_an1200_oracle() {
        for sf in 7u8..=12 {
            for bw in [125_000u32, 250_000, 500_000] {
                for cr in 1u8..=4 {
                    for &(explicit, crc, de) in
                        &[(true, true, false), (false, false, false), (true, true, true), (false, true, true)]
                    {
                        let phy = LoraPhyConfig::new(sf, bw, cr, 8, explicit, crc, de).unwrap();
                        for pl in [1usize, 7, 13, 50, 51, 120, 215, 255] {
                            let got = lora_time_on_air(&phy, pl).unwrap();
                            let want =
                                an1200_oracle(sf.into(), bw as f64, cr.into(), 8.0, explicit, crc, de, pl as u32);
                            assert!((got - want).abs() < 1e-12, "sf{sf} bw{bw} cr{cr} pl{pl}: {got} vs {want}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_payload_out_of_range() {
        let phy = LoraPhyConfig::typical(10).unwrap();
        assert!(lora_time_on_air(&phy, 0).is_err());
        assert!(lora_time_on_air(&phy, 256).is_err());
    }

    #[test]
    fn rejects_bad_phy() {
        assert!(LoraPhyConfig::new(13, 125_000, 1, 8, true, true, false).is_err());
        assert!(LoraPhyConfig::new(7, 100_000, 1, 8, true, true, false).is_err());
        assert!(LoraPhyConfig::new(7, 125_000, 0, 8, true, true, false).is_err());
    }

    #[test]
    fn low_data_rate_only_for_long_symbols() {
        assert!(!LoraPhyConfig::typical(10).unwrap().low_data_rate_opt());
        assert!(LoraPhyConfig::typical(11).unwrap().low_data_rate_opt());
        assert!(LoraPhyConfig::typical(12).unwrap().low_data_rate_opt());
    }

    #[test]
    fn paper_mode_uses_constants() {
        assert_eq!(reference_lora_airtime(AirtimeMode::PaperConstants, 10).unwrap(), 0.370);
        assert_eq!(reference_lora_airtime(AirtimeMode::PaperConstants, 7).unwrap(), 0.051);
        assert_eq!(reference_lora_airtime(AirtimeMode::PaperConstants, 12).unwrap(), 2.5);
        let formula = reference_lora_airtime(AirtimeMode::Formula, 10).unwrap();
        assert!((formula - 0.616_448).abs() < 1e-9);
    }
}
