//! Video description and the reward arithmetic shared by the engine and all policies.
//!
//! A video is a sequence of fixed-length chunks, each encoded at every level of a
//! [`QualityLadder`]. The utility of level `i` is `ln(l_i / l_0)`, so the lowest
//! level is worth nothing and every step up the ladder is worth the log of the
//! bitrate ratio.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default ladder in Kbps.
pub const DEFAULT_BITRATES_KBPS: [f64; 7] = [300.0, 700.0, 1200.0, 1500.0, 3000.0, 6000.0, 8000.0];
/// Default chunk length in seconds.
pub const DEFAULT_CHUNK_LENGTH_S: f64 = 4.0;
/// Default number of chunks per episode.
pub const DEFAULT_NUM_CHUNKS: usize = 60;

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("quality ladder needs at least 2 levels, got {0}")]
    LadderTooShort(usize),
    #[error("quality ladder must be strictly increasing and positive (level {index}: {value} Kbps)")]
    LadderNotIncreasing { index: usize, value: f64 },
    #[error("level index {index} out of range for a ladder of {levels} levels")]
    LevelOutOfRange { index: usize, levels: usize },
    #[error("manifest: {0}")]
    InvalidManifest(String),
    #[error("reading manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing manifest {path}: {message}")]
    Parse { path: String, message: String },
}

/// Ordered bitrates with their cached utilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityLadder {
    levels_kbps: Vec<f64>,
    utilities: Vec<f64>,
}

impl QualityLadder {
    pub fn new(levels_kbps: Vec<f64>) -> Result<Self, MediaError> {
        if levels_kbps.len() < 2 {
            return Err(MediaError::LadderTooShort(levels_kbps.len()));
        }
        for (index, &value) in levels_kbps.iter().enumerate() {
            let bad_order = index > 0 && value <= levels_kbps[index - 1];
            if !(value.is_finite() && value > 0.0) || bad_order {
                return Err(MediaError::LadderNotIncreasing { index, value });
            }
        }
        let base = levels_kbps[0];
        let utilities = levels_kbps.iter().map(|l| (l / base).ln()).collect();
        Ok(Self {
            levels_kbps,
            utilities,
        })
    }

    pub fn len(&self) -> usize {
        self.levels_kbps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels_kbps.is_empty()
    }

    pub fn bitrates_kbps(&self) -> &[f64] {
        &self.levels_kbps
    }

    pub fn bitrate_kbps(&self, level: usize) -> f64 {
        self.levels_kbps[level]
    }

    pub fn utilities(&self) -> &[f64] {
        &self.utilities
    }

    pub fn top_level(&self) -> usize {
        self.levels_kbps.len() - 1
    }

    /// Utility of `level_index`, `ln(l_i / l_0)`.
    pub fn utility_of(&self, level_index: usize) -> Result<f64, MediaError> {
        self.utilities
            .get(level_index)
            .copied()
            .ok_or(MediaError::LevelOutOfRange {
                index: level_index,
                levels: self.len(),
            })
    }
}

impl Default for QualityLadder {
    fn default() -> Self {
        Self::new(DEFAULT_BITRATES_KBPS.to_vec()).expect("default ladder is valid")
    }
}

/// Per-chunk byte sizes across the ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoManifest {
    chunk_length_s: f64,
    chunk_sizes: Vec<Vec<u64>>,
    ladder: QualityLadder,
}

impl VideoManifest {
    pub fn new(
        chunk_length_s: f64,
        ladder: QualityLadder,
        chunk_sizes: Vec<Vec<u64>>,
    ) -> Result<Self, MediaError> {
        if !(chunk_length_s.is_finite() && chunk_length_s > 0.0) {
            return Err(MediaError::InvalidManifest(format!(
                "chunk length must be positive, got {chunk_length_s}"
            )));
        }
        if chunk_sizes.is_empty() {
            return Err(MediaError::InvalidManifest("no chunks".into()));
        }
        for (i, row) in chunk_sizes.iter().enumerate() {
            if row.len() != ladder.len() {
                return Err(MediaError::InvalidManifest(format!(
                    "chunk {} has {} sizes, ladder has {} levels",
                    i + 1,
                    row.len(),
                    ladder.len()
                )));
            }
            if row.contains(&0) {
                return Err(MediaError::InvalidManifest(format!(
                    "chunk {} has a zero size",
                    i + 1
                )));
            }
            if row.windows(2).any(|w| w[1] < w[0]) {
                return Err(MediaError::InvalidManifest(format!(
                    "chunk {} sizes decrease with quality",
                    i + 1
                )));
            }
        }
        Ok(Self {
            chunk_length_s,
            chunk_sizes,
            ladder,
        })
    }

    /// Every chunk at level `j` weighs exactly `bitrate_j * chunk_length / 8` bytes.
    pub fn nominal(
        ladder: QualityLadder,
        chunk_length_s: f64,
        num_chunks: usize,
    ) -> Result<Self, MediaError> {
        let row: Vec<u64> = ladder
            .bitrates_kbps()
            .iter()
            .map(|kbps| nominal_chunk_bytes(*kbps, chunk_length_s))
            .collect();
        Self::new(chunk_length_s, ladder, vec![row; num_chunks])
    }

    pub fn chunk_length_s(&self) -> f64 {
        self.chunk_length_s
    }

    pub fn num_chunks(&self) -> usize {
        self.chunk_sizes.len()
    }

    pub fn ladder(&self) -> &QualityLadder {
        &self.ladder
    }

    pub fn num_levels(&self) -> usize {
        self.ladder.len()
    }

    /// Size in bytes of 1-based chunk `index` at `level`.
    pub fn chunk_bytes(&self, index: usize, level: usize) -> u64 {
        self.chunk_sizes[index - 1][level]
    }

    /// Sizes of 1-based chunk `index` across all levels.
    pub fn chunk_row(&self, index: usize) -> &[u64] {
        &self.chunk_sizes[index - 1]
    }

    pub fn max_chunk_bytes(&self) -> u64 {
        self.chunk_sizes
            .iter()
            .flat_map(|r| r.iter().copied())
            .max()
            .unwrap_or(0)
    }

    /// Keeps only the first `n` chunks.
    pub fn truncated(&self, n: usize) -> Result<Self, MediaError> {
        if n == 0 || n > self.num_chunks() {
            return Err(MediaError::InvalidManifest(format!(
                "cannot take {n} chunks from a manifest of {}",
                self.num_chunks()
            )));
        }
        Ok(Self {
            chunk_length_s: self.chunk_length_s,
            chunk_sizes: self.chunk_sizes[..n].to_vec(),
            ladder: self.ladder.clone(),
        })
    }

    /// Loads a TOML manifest. `chunk_sizes` may be omitted, in which case
    /// `num_chunks` nominal rows are generated from the bitrates.
    pub fn load(path: &Path) -> Result<Self, MediaError> {
        let text = std::fs::read_to_string(path).map_err(|source| MediaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            MediaError::Parse { message, .. } => MediaError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, MediaError> {
        let file: ManifestFile = toml::from_str(text).map_err(|e| MediaError::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        file.into_manifest()
    }

    pub fn to_file(&self) -> ManifestFile {
        ManifestFile {
            chunk_length_s: self.chunk_length_s,
            bitrates_kbps: self.ladder.bitrates_kbps().to_vec(),
            num_chunks: None,
            chunk_sizes: Some(self.chunk_sizes.clone()),
        }
    }
}

impl Default for VideoManifest {
    fn default() -> Self {
        Self::nominal(
            QualityLadder::default(),
            DEFAULT_CHUNK_LENGTH_S,
            DEFAULT_NUM_CHUNKS,
        )
        .expect("default manifest is valid")
    }
}

/// On-disk manifest layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub chunk_length_s: f64,
    pub bitrates_kbps: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_chunks: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_sizes: Option<Vec<Vec<u64>>>,
}

impl ManifestFile {
    pub fn into_manifest(self) -> Result<VideoManifest, MediaError> {
        let ladder = QualityLadder::new(self.bitrates_kbps)?;
        match (self.chunk_sizes, self.num_chunks) {
            (Some(sizes), n) => {
                if let Some(n) = n {
                    if n != sizes.len() {
                        return Err(MediaError::InvalidManifest(format!(
                            "num_chunks = {n} but chunk_sizes has {} rows",
                            sizes.len()
                        )));
                    }
                }
                VideoManifest::new(self.chunk_length_s, ladder, sizes)
            }
            (None, Some(n)) => VideoManifest::nominal(ladder, self.chunk_length_s, n),
            (None, None) => Err(MediaError::InvalidManifest(
                "either chunk_sizes or num_chunks is required".into(),
            )),
        }
    }
}

pub fn nominal_chunk_bytes(bitrate_kbps: f64, chunk_length_s: f64) -> u64 {
    (bitrate_kbps * 1000.0 * chunk_length_s / 8.0).round() as u64
}

/// Coefficients of the QoE reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Quality-switch coefficient.
    pub beta: f64,
    /// Rebuffering coefficient, per second of stall.
    pub gamma: f64,
    /// Low-buffer penalty coefficient (single-source reward only).
    pub delta: f64,
    /// Low-buffer threshold in seconds.
    pub b_min: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            gamma: 3.3,
            delta: 0.0,
            b_min: 0.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), MediaError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.beta) && ok(self.gamma) && ok(self.delta) && ok(self.b_min) {
            Ok(())
        } else {
            Err(MediaError::InvalidManifest(format!(
                "reward coefficients must be finite and non-negative: {self:?}"
            )))
        }
    }
}

/// Multi-source reward of one step: `Σq − β·Σ|q − q_prev| − γ·φ`.
///
/// `played` holds `(utility, prev_utility)` for each chunk that started playing
/// during the step.
pub fn step_reward(played: &[(f64, f64)], rebuffer_seconds: f64, cfg: &RewardConfig) -> f64 {
    let utility: f64 = played.iter().map(|(q, _)| q).sum();
    let switches: f64 = played.iter().map(|(q, prev)| (q - prev).abs()).sum();
    utility - cfg.beta * switches - cfg.gamma * rebuffer_seconds
}

/// Classic single-source reward of one chunk, including the optional low-buffer term.
pub fn single_source_reward(
    utility: f64,
    prev_utility: f64,
    rebuffer: f64,
    buffer_after: f64,
    cfg: &RewardConfig,
) -> f64 {
    let low = (cfg.b_min - buffer_after).max(0.0);
    utility
        - cfg.beta * (utility - prev_utility).abs()
        - cfg.gamma * rebuffer
        - cfg.delta * low * low
}

/// Stall caused by a chunk whose download outlasts the buffer.
pub fn single_source_rebuffer(download_time: f64, buffer_level: f64) -> f64 {
    (download_time - buffer_level).max(0.0)
}
