//! Synthetic trace generators for tests and scenario construction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BandwidthTrace;

fn build(id: String, values: Vec<f64>, granularity: f64) -> BandwidthTrace {
    let samples: Vec<(f64, f64)> = values
        .into_iter()
        .enumerate()
        .map(|(i, v)| (i as f64 * granularity, v))
        .collect();
    BandwidthTrace::new(id, &samples, granularity).expect("generated samples are valid")
}

fn sample_count(duration_s: f64, granularity: f64) -> usize {
    ((duration_s / granularity).round() as usize).max(1)
}

pub fn constant(id: impl Into<String>, kbps: f64, duration_s: f64, granularity: f64) -> BandwidthTrace {
    let n = sample_count(duration_s, granularity);
    build(id.into(), vec![kbps; n], granularity)
}

/// Alternates `high` and `low`, each held for `half_period_s`.
pub fn square_wave(
    id: impl Into<String>,
    high: f64,
    low: f64,
    half_period_s: f64,
    duration_s: f64,
    granularity: f64,
) -> BandwidthTrace {
    let n = sample_count(duration_s, granularity);
    let values = (0..n)
        .map(|i| {
            let phase = ((i as f64 * granularity) / half_period_s).floor() as u64;
            if phase.is_multiple_of(2) {
                high
            } else {
                low
            }
        })
        .collect();
    build(id.into(), values, granularity)
}

/// Bounded random walk in `[min_kbps, max_kbps]`; each step moves by up to
/// `step_frac` of the range and reflects at the bounds.
pub fn random_walk<R: Rng + ?Sized>(
    id: impl Into<String>,
    rng: &mut R,
    min_kbps: f64,
    max_kbps: f64,
    step_frac: f64,
    duration_s: f64,
    granularity: f64,
) -> BandwidthTrace {
    let n = sample_count(duration_s, granularity);
    let span = max_kbps - min_kbps;
    let mut v = rng.gen_range(min_kbps..=max_kbps);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(v);
        v += rng.gen_range(-1.0..=1.0) * step_frac * span;
        if v > max_kbps {
            v = 2.0 * max_kbps - v;
        }
        if v < min_kbps {
            v = 2.0 * min_kbps - v;
        }
        v = v.clamp(min_kbps, max_kbps);
    }
    build(id.into(), values, granularity)
}

/// Rescales every sample so the mean becomes `target_kbps`.
pub fn with_mean(trace: &BandwidthTrace, target_kbps: f64) -> BandwidthTrace {
    let scale = target_kbps / trace.mean_bandwidth();
    let samples: Vec<(f64, f64)> = trace.samples().map(|(t, b)| (t, b * scale)).collect();
    BandwidthTrace::new(trace.id(), &samples, trace.granularity()).expect("scaling keeps samples valid")
}

/// Parameters for a pool of random-walk traces whose means fall in a band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandPoolSpec {
    pub count: usize,
    pub mean_kbps: (f64, f64),
    pub duration_s: f64,
    pub granularity_s: f64,
    /// Half-width of the walk around its target mean, as a fraction of it.
    pub spread: f64,
    pub step_frac: f64,
}

impl Default for BandPoolSpec {
    fn default() -> Self {
        Self {
            count: 50,
            mean_kbps: (100.0, 2000.0),
            duration_s: 600.0,
            granularity_s: 1.0,
            spread: 0.5,
            step_frac: 0.1,
        }
    }
}

/// Traces whose means are drawn uniformly inside `spec.mean_kbps`.
pub fn band_pool(prefix: &str, spec: &BandPoolSpec, seed: u64) -> Vec<BandwidthTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = spec.mean_kbps;
    // keep rescaled means strictly inside the band despite rounding
    let margin = (hi - lo) * 1e-6;
    (0..spec.count)
        .map(|i| {
            let target = rng.gen_range(lo + margin..=hi - margin);
            let walk = random_walk(
                format!("{prefix}{i:04}"),
                &mut rng,
                target * (1.0 - spec.spread),
                target * (1.0 + spec.spread),
                spec.step_frac,
                spec.duration_s,
                spec.granularity_s,
            );
            with_mean(&walk, target)
        })
        .collect()
}
