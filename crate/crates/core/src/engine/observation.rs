use serde::{Deserialize, Serialize};

/// History depth per path in the observation.
pub const HISTORY_LEN: usize = 6;

/// Positions of the observation blocks, in order:
///
/// 1. per-path throughputs of the last downloads (Kbps), oldest first, zero-padded in front;
/// 2. sizes (bytes) of the next `window` chunks at every level, zero past the last chunk;
/// 3. downloaded level (1-based) of each of the next `window` chunks, 0 if not downloaded;
/// 4. buffer (s);
/// 5. chunks left to play;
/// 6. level being played (1-based), 0 before playback;
/// 7. per-path download times of the last downloads (s), same padding as block 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub paths: usize,
    pub window: usize,
    pub levels: usize,
}

impl ObservationLayout {
    pub fn new(paths: usize, window: usize, levels: usize) -> Self {
        Self {
            paths,
            window,
            levels,
        }
    }

    pub fn len(&self) -> usize {
        2 * HISTORY_LEN * self.paths + self.window * self.levels + self.window + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn throughputs(&self) -> std::ops::Range<usize> {
        0..HISTORY_LEN * self.paths
    }

    pub fn chunk_sizes(&self) -> std::ops::Range<usize> {
        let s = self.throughputs().end;
        s..s + self.window * self.levels
    }

    pub fn next_levels(&self) -> std::ops::Range<usize> {
        let s = self.chunk_sizes().end;
        s..s + self.window
    }

    pub fn buffer(&self) -> usize {
        self.next_levels().end
    }

    pub fn remaining(&self) -> usize {
        self.buffer() + 1
    }

    pub fn playing_level(&self) -> usize {
        self.buffer() + 2
    }

    pub fn download_times(&self) -> std::ops::Range<usize> {
        let s = self.buffer() + 3;
        s..s + HISTORY_LEN * self.paths
    }
}

/// Copies `history` into a [`HISTORY_LEN`] slot, right-aligned.
pub(crate) fn pad_history(out: &mut [f64], history: &[f64]) {
    let tail = &history[history.len().saturating_sub(HISTORY_LEN)..];
    let start = HISTORY_LEN - tail.len();
    out[..start].fill(0.0);
    out[start..].copy_from_slice(tail);
}
