//! Single-receiver pure-ALOHA Monte Carlo and offered-load measurement.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::protocol::Radio;
use crate::time::SimTime;

use super::channel::Airing;
use super::traffic::next_arrival;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlohaRun {
    pub frames: usize,
    pub successes: usize,
    /// Measured offered load over the run window.
    pub offered_load: f64,
    /// Successful airtime over the run window.
    pub throughput: f64,
}

impl AlohaRun {
    pub fn success_fraction(&self) -> f64 {
        if self.frames == 0 {
            return 0.0;
        }
        self.successes as f64 / self.frames as f64
    }
}

/// `G` over `[start, end)` on one channel: summed airtime, clipped to the
/// window, divided by the window length. An empty window gives zero.
pub fn measure_offered_load(airings: &[Airing], radio: Radio, channel: u8, start: SimTime, end: SimTime) -> f64 {
    if end <= start {
        return 0.0;
    }
    let busy: u64 = airings
        .iter()
        .filter(|a| a.radio == radio && a.channel == channel)
        .map(|a| {
            let s = a.start.max(start);
            let e = a.end.min(end);
            (e.as_micros()).saturating_sub(s.as_micros())
        })
        .sum();
    busy as f64 / (end - start).as_micros() as f64
}

/// Frames that overlap no other frame.
pub fn clean_frames(airings: &[Airing]) -> usize {
    let mut sorted: Vec<&Airing> = airings.iter().collect();
    sorted.sort_by_key(|a| (a.start, a.end));
    let mut clean = 0;
    let mut latest_end = SimTime::ZERO;
    for (i, a) in sorted.iter().enumerate() {
        let hit_before = i > 0 && latest_end > a.start;
        let hit_after = sorted.get(i + 1).is_some_and(|b| a.overlaps(b));
        if !hit_before && !hit_after {
            clean += 1;
        }
        latest_end = latest_end.max(a.end);
    }
    clean
}

/// Poisson frames of length `airtime` at offered load `g`, all audible at
/// one receiver.
pub fn simulate_pure_aloha(g: f64, airtime: SimTime, frames: usize, seed: u64) -> AlohaRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = g / airtime.as_secs_f64();
    let mut t = SimTime::ZERO;
    let mut airings = Vec::with_capacity(frames);
    for _ in 0..frames {
        t += next_arrival(&mut rng, rate).expect("positive load");
        airings.push(Airing { sender: airings.len(), radio: Radio::Ble, channel: 0, start: t, end: t + airtime });
    }
    let window_end = airings.last().map_or(SimTime::ZERO, |a| a.start);
    let successes = clean_frames(&airings);
    let window = window_end.as_secs_f64();
    AlohaRun {
        frames,
        successes,
        offered_load: measure_offered_load(&airings, Radio::Ble, 0, SimTime::ZERO, window_end),
        throughput: if window > 0.0 { successes as f64 * airtime.as_secs_f64() / window } else { 0.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::aloha_throughput;

    fn airing(start_ms: u64, len_ms: u64) -> Airing {
        Airing {
            sender: 0,
            radio: Radio::Ble,
            channel: 0,
            start: SimTime::from_millis(start_ms),
            end: SimTime::from_millis(start_ms + len_ms),
        }
    }

    #[test]
    fn single_frame_is_clean() {
        assert_eq!(clean_frames(&[airing(5, 16)]), 1);
    }

    #[test]
    fn long_frame_shadows_later_ones() {
        let a = [airing(0, 100), airing(10, 5), airing(50, 5), airing(200, 5)];
        assert_eq!(clean_frames(&a), 1);
    }

    #[test]
    fn empty_window_has_no_load() {
        let t = SimTime::from_secs(1);
        assert_eq!(measure_offered_load(&[airing(0, 16)], Radio::Ble, 0, t, t), 0.0);
        assert_eq!(measure_offered_load(&[], Radio::Ble, 0, SimTime::ZERO, t), 0.0);
    }

    #[test]
    fn load_is_clipped_to_window() {
        let g = measure_offered_load(&[airing(990, 20)], Radio::Ble, 0, SimTime::ZERO, SimTime::from_secs(1));
        assert!((g - 0.01).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_tracks_closed_form() {
        for (i, g) in [0.1, 0.25, 0.5, 1.0].into_iter().enumerate() {
            let run = simulate_pure_aloha(g, SimTime::from_millis(16), 20_000, 11 + i as u64);
            assert!((run.throughput - aloha_throughput(g)).abs() < 0.03, "G={g}: {run:?}");
        }
    }
}
