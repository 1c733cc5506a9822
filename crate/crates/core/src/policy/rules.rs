//! Classical single-source adaptation rules.

use serde::{Deserialize, Serialize};

use crate::media::QualityLadder;

/// Number of recent downloads the throughput estimate looks at.
pub const THROUGHPUT_WINDOW: usize = 6;

/// Harmonic mean of the last [`THROUGHPUT_WINDOW`] samples (fewer if that is all there is).
pub fn harmonic_mean(history_kbps: &[f64]) -> Option<f64> {
    let recent = &history_kbps[history_kbps.len().saturating_sub(THROUGHPUT_WINDOW)..];
    if recent.is_empty() {
        return None;
    }
    let inv: f64 = recent.iter().map(|x| 1.0 / x).sum();
    Some(recent.len() as f64 / inv)
}

/// Highest level whose bitrate is strictly below the harmonic-mean throughput;
/// level 0 with no history or when nothing fits.
pub fn throughput_rule(history_kbps: &[f64], ladder: &QualityLadder) -> usize {
    let Some(estimate) = harmonic_mean(history_kbps) else {
        return 0;
    };
    ladder
        .bitrates_kbps()
        .iter()
        .rposition(|&b| b < estimate)
        .unwrap_or(0)
}

/// BOLA-basic control parameters.
///
/// The rule picks the level maximising
/// `(v · (utility_m + gp · chunk_length) − buffer_s) / chunk_bits_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BolaParams {
    /// Lyapunov trade-off weight, in seconds.
    pub v: f64,
    /// Buffer-weight term, per second of chunk.
    pub gp: f64,
    pub chunk_length_s: f64,
}

impl BolaParams {
    /// Derives `v` and `gp` from the ladder, chunk length and buffer cap.
    ///
    /// With chunk sizes proportional to bitrate (`r_m = l_m / l_0`), the rule
    /// switches from level `m` to `m + 1` at buffer
    /// `v · (a − κ_m)` where `a = gp · chunk_length` and
    /// `κ_m = (u_{m+1} r_m − u_m r_{m+1}) / (r_{m+1} − r_m)`. Concave utilities
    /// make `κ` decreasing, so every level owns a buffer band. The two free
    /// parameters are fixed by placing the first switch at `q_low` and the last
    /// at `q_high`:
    ///
    /// - `q_low = min(chunk_length, cap / 4)`: level 0 below one buffered chunk,
    ///   in particular at an empty buffer;
    /// - `q_high = max(cap − chunk_length, cap / 2)`: the top level from the
    ///   fullest buffer at which the cap still admits a request.
    pub fn derive(ladder: &QualityLadder, chunk_length_s: f64, buffer_max_s: f64) -> Self {
        let r: Vec<f64> = ladder
            .bitrates_kbps()
            .iter()
            .map(|l| l / ladder.bitrate_kbps(0))
            .collect();
        let u = ladder.utilities();
        let kappa = |m: usize| (u[m + 1] * r[m] - u[m] * r[m + 1]) / (r[m + 1] - r[m]);
        let q_low = chunk_length_s.min(buffer_max_s / 4.0);
        let q_high = (buffer_max_s - chunk_length_s).max(buffer_max_s / 2.0);
        let spread = (kappa(0) - kappa(ladder.len() - 2)).max(f64::EPSILON);
        let v = (q_high - q_low) / spread;
        let a = kappa(0) + q_low / v;
        Self {
            v,
            gp: a / chunk_length_s,
            chunk_length_s,
        }
    }

    /// Objective of every level for the given buffer and chunk sizes (bits).
    pub fn objectives(&self, buffer_s: f64, ladder: &QualityLadder, chunk_bits: &[f64]) -> Vec<f64> {
        ladder
            .utilities()
            .iter()
            .zip(chunk_bits)
            .map(|(u, bits)| (self.v * (u + self.gp * self.chunk_length_s) - buffer_s) / bits)
            .collect()
    }
}

/// Nominal chunk sizes in bits, `bitrate × chunk_length`.
pub fn nominal_chunk_bits(ladder: &QualityLadder, chunk_length_s: f64) -> Vec<f64> {
    ladder
        .bitrates_kbps()
        .iter()
        .map(|kbps| kbps * 1000.0 * chunk_length_s)
        .collect()
}

/// BOLA-basic level choice on nominal chunk sizes; ties go to the lower level.
pub fn bola_rule(buffer_s: f64, ladder: &QualityLadder, params: &BolaParams) -> usize {
    let bits = nominal_chunk_bits(ladder, params.chunk_length_s);
    let scores = params.objectives(buffer_s, ladder, &bits);
    let mut best = 0;
    for (m, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = m;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn throughput_examples() {
        let ladder = QualityLadder::default();
        assert_eq!(throughput_rule(&[1000.0, 1000.0], &ladder), 1);
        // 2 / (1/400 + 1/2000) = 666.67
        assert!((harmonic_mean(&[400.0, 2000.0]).unwrap() - 2000.0 / 3.0).abs() < 1e-9);
        assert_eq!(throughput_rule(&[400.0, 2000.0], &ladder), 0);
        assert_eq!(throughput_rule(&[], &ladder), 0);
        assert_eq!(throughput_rule(&[100.0], &ladder), 0);
        assert_eq!(throughput_rule(&[1e6], &ladder), 6);
        // strict inequality: exactly 700 does not buy level 1
        assert_eq!(throughput_rule(&[700.0], &ladder), 0);
    }

    #[test]
    fn harmonic_mean_uses_last_six() {
        let h = [1.0, 1000.0, 1000.0, 1000.0, 1000.0, 1000.0, 1000.0];
        assert!((harmonic_mean(&h).unwrap() - 1000.0).abs() < 1e-9);
    }

    fn brute_force(buffer: f64, ladder: &QualityLadder, p: &BolaParams) -> usize {
        let bits = nominal_chunk_bits(ladder, p.chunk_length_s);
        let s = p.objectives(buffer, ladder, &bits);
        (0..s.len())
            .filter(|&m| s.iter().all(|&o| s[m] >= o))
            .min()
            .unwrap()
    }

    #[test]
    fn bola_endpoints() {
        let ladder = QualityLadder::default();
        let p = BolaParams::derive(&ladder, 4.0, 30.0);
        assert_eq!(bola_rule(0.0, &ladder, &p), 0);
        let bits = nominal_chunk_bits(&ladder, 4.0);
        for buffer in [30.0, 32.0, 34.0] {
            let s = p.objectives(buffer, &ladder, &bits);
            let highest_positive = (0..7).rev().find(|&m| s[m] > 0.0).unwrap();
            assert_eq!(highest_positive, 6);
            assert_eq!(bola_rule(buffer, &ladder, &p), 6);
            assert_eq!(brute_force(buffer, &ladder, &p), 6);
        }
    }

    #[test]
    fn bola_switch_points() {
        let ladder = QualityLadder::default();
        let p = BolaParams::derive(&ladder, 4.0, 30.0);
        assert_eq!(bola_rule(3.99, &ladder, &p), 0);
        assert_eq!(bola_rule(4.01, &ladder, &p), 1);
        assert_eq!(bola_rule(25.99, &ladder, &p), 5);
        assert_eq!(bola_rule(26.01, &ladder, &p), 6);
    }

    #[test]
    fn bola_monotone_in_buffer() {
        for ladder in [
            QualityLadder::default(),
            QualityLadder::new(vec![200.0, 400.0, 1000.0, 2500.0]).unwrap(),
        ] {
            let p = BolaParams::derive(&ladder, 4.0, 30.0);
            let mut prev = 0;
            for step in 0..=3000 {
                let buffer = step as f64 * 0.01;
                let level = bola_rule(buffer, &ladder, &p);
                assert_eq!(level, brute_force(buffer, &ladder, &p), "buffer {buffer}");
                assert!(level >= prev, "buffer {buffer}: {level} < {prev}");
                prev = level;
            }
            assert_eq!(prev, ladder.top_level());
        }
    }
}
