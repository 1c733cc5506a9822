//! Bandwidth traces: ingestion, filtering, train/test splitting and replay.
//!
//! A trace is a piecewise-constant throughput series. Sample `i` holds from its
//! offset until the next sample's offset; the last sample holds for one
//! granularity interval, so a trace lasts `last_offset + granularity` seconds.
//! Replay wraps around modulo that duration.

mod adapter;
mod split;
pub mod synth;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

pub use adapter::{load_traces, parse_traces, AdapterConfig, BandwidthUnit, Column, TraceFormat};
pub use split::{TraceSet, DEFAULT_TRAIN_FRACTION};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("trace {0} has no samples")]
    Empty(String),
    #[error("trace {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("invalid mean filter bounds [{low}, {high}]")]
    InvalidBounds { low: f64, high: f64 },
    #[error("splitting needs at least 2 traces, got {0}")]
    TooFewTraces(usize),
    #[error("train fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
}

/// One path's throughput over time, in Kbps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthTrace {
    id: String,
    offsets: Vec<f64>,
    kbps: Vec<f64>,
    granularity: f64,
    /// Kbit delivered over one full period.
    #[serde(skip)]
    cycle_kbit: f64,
}

impl BandwidthTrace {
    /// Builds a trace from `(offset_s, kbps)` samples. Offsets are shifted so the
    /// first one is zero.
    pub fn new(
        id: impl Into<String>,
        samples: &[(f64, f64)],
        granularity: f64,
    ) -> Result<Self, TraceError> {
        let id = id.into();
        if samples.is_empty() {
            return Err(TraceError::Empty(id));
        }
        if !(granularity.is_finite() && granularity > 0.0) {
            return Err(TraceError::Invalid {
                id,
                message: format!("granularity must be positive, got {granularity}"),
            });
        }
        let origin = samples[0].0;
        let mut offsets = Vec::with_capacity(samples.len());
        let mut kbps = Vec::with_capacity(samples.len());
        for (i, &(t, bw)) in samples.iter().enumerate() {
            let t = t - origin;
            if !t.is_finite() || (i > 0 && t <= offsets[i - 1]) {
                return Err(TraceError::Invalid {
                    id,
                    message: format!("offsets must be strictly increasing (sample {})", i + 1),
                });
            }
            if !(bw.is_finite() && bw > 0.0) {
                return Err(TraceError::Invalid {
                    id,
                    message: format!("bandwidth must be positive (sample {}: {bw})", i + 1),
                });
            }
            offsets.push(t);
            kbps.push(bw);
        }
        let mut trace = Self {
            id,
            offsets,
            kbps,
            granularity,
            cycle_kbit: 0.0,
        };
        trace.cycle_kbit = (0..trace.kbps.len())
            .map(|i| trace.kbps[i] * (trace.segment_end(i) - trace.offsets[i]))
            .sum();
        Ok(trace)
    }

    /// Like [`new`](Self::new) but infers the granularity from the last gap
    /// between offsets, falling back to `default_granularity` for one sample.
    pub fn with_inferred_granularity(
        id: impl Into<String>,
        samples: &[(f64, f64)],
        default_granularity: f64,
    ) -> Result<Self, TraceError> {
        let granularity = match samples {
            [.., (a, _), (b, _)] => b - a,
            _ => default_granularity,
        };
        Self::new(id, samples, granularity)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.kbps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kbps.is_empty()
    }

    pub fn granularity(&self) -> f64 {
        self.granularity
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.offsets.iter().copied().zip(self.kbps.iter().copied())
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.kbps
    }

    /// Circulation period: last offset plus one granularity interval.
    pub fn duration(&self) -> f64 {
        self.offsets[self.offsets.len() - 1] + self.granularity
    }

    /// Arithmetic mean of the sample bandwidths.
    pub fn mean_bandwidth(&self) -> f64 {
        self.kbps.iter().sum::<f64>() / self.kbps.len() as f64
    }

    pub fn min_bandwidth(&self) -> f64 {
        self.kbps.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_bandwidth(&self) -> f64 {
        self.kbps.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn segment_end(&self, i: usize) -> f64 {
        if i + 1 < self.offsets.len() {
            self.offsets[i + 1]
        } else {
            self.duration()
        }
    }

    /// Index of the sample whose interval contains `pos` (already wrapped).
    fn segment_index(&self, pos: f64) -> usize {
        self.offsets.partition_point(|&o| o <= pos).saturating_sub(1)
    }

    fn wrap(&self, t: f64) -> f64 {
        let pos = t.rem_euclid(self.duration());
        // rem_euclid may round up to the modulus itself
        if pos >= self.duration() {
            0.0
        } else {
            pos
        }
    }

    /// Bandwidth in effect at time `t`, wrapping around the trace.
    pub fn bandwidth_at(&self, t: f64) -> f64 {
        self.kbps[self.segment_index(self.wrap(t))]
    }

    /// Seconds from issuing a request at `start` until `bytes` are fully received,
    /// with `rtt` of dead time before the transfer begins.
    pub fn download_duration(&self, start: f64, bytes: u64, rtt: f64) -> f64 {
        let mut remaining = bytes as f64 * 8.0 / 1000.0;
        let period = self.duration();
        let mut elapsed = 0.0;
        if remaining > 2.0 * self.cycle_kbit {
            // any full period delivers exactly one cycle's worth, wherever it starts
            let cycles = (remaining / self.cycle_kbit).floor() - 1.0;
            remaining -= cycles * self.cycle_kbit;
            elapsed += cycles * period;
        }
        let mut pos = self.wrap(start + rtt);
        let mut idx = self.segment_index(pos);
        loop {
            let bw = self.kbps[idx];
            let end = self.segment_end(idx);
            let capacity = bw * (end - pos);
            if capacity >= remaining {
                elapsed += remaining / bw;
                break;
            }
            remaining -= capacity;
            elapsed += end - pos;
            idx = (idx + 1) % self.kbps.len();
            pos = self.offsets[idx];
        }
        rtt + elapsed
    }

    /// Kbit deliverable over `[from, to]`, integrating the circulated trace.
    pub fn delivered_kbit(&self, from: f64, to: f64) -> f64 {
        if to <= from {
            return 0.0;
        }
        let period = self.duration();
        let mut total = 0.0;
        let mut span = to - from;
        let full = (span / period).floor();
        if full >= 1.0 {
            total += full * self.cycle_kbit;
            span -= full * period;
        }
        let mut pos = self.wrap(from);
        let mut idx = self.segment_index(pos);
        while span > 0.0 {
            let end = self.segment_end(idx);
            let piece = (end - pos).min(span);
            total += self.kbps[idx] * piece;
            span -= piece;
            idx = (idx + 1) % self.kbps.len();
            pos = self.offsets[idx];
        }
        total
    }

    /// Canonical text form: an id comment, then one `offset,kbps` line per sample.
    pub fn to_canonical(&self) -> String {
        let mut out = format!("# {}\n", self.id);
        for (t, bw) in self.samples() {
            out.push_str(&format!("{t},{bw}\n"));
        }
        out
    }

    /// Uniform start offset in `[0, duration)`.
    pub fn sample_episode_start<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.gen_range(0.0..self.duration())
    }
}

/// Keeps the traces whose mean bandwidth lies in `[low, high]` Kbps.
pub fn filter_by_mean(
    traces: &[BandwidthTrace],
    low: f64,
    high: f64,
) -> Result<Vec<BandwidthTrace>, TraceError> {
    if low.is_nan() || high.is_nan() || low >= high {
        return Err(TraceError::InvalidBounds { low, high });
    }
    Ok(traces
        .iter()
        .filter(|t| {
            let m = t.mean_bandwidth();
            low <= m && m <= high
        })
        .cloned()
        .collect())
}
