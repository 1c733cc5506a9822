use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::EngineConfig;
use crate::media::{DEFAULT_BITRATES_KBPS, DEFAULT_CHUNK_LENGTH_S, DEFAULT_NUM_CHUNKS};
use crate::trace::synth::BandPoolSpec;
use crate::trace::{AdapterConfig, TraceFormat, DEFAULT_TRAIN_FRACTION};

use super::EnvError;

/// Which part of each path's trace pool episodes draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

impl std::str::FromStr for SplitChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            other => Err(format!("unknown split {other:?} (train, test, all)")),
        }
    }
}

/// Video description: a manifest file, or nominal chunk sizes for a ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifestSource {
    pub file: Option<PathBuf>,
    pub bitrates_kbps: Vec<f64>,
    pub chunk_length_s: f64,
}

impl Default for ManifestSource {
    fn default() -> Self {
        Self {
            file: None,
            bitrates_kbps: DEFAULT_BITRATES_KBPS.to_vec(),
            chunk_length_s: DEFAULT_CHUNK_LENGTH_S,
        }
    }
}

/// Kind of trace pool behind a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// Trace files on disk (`path`, `format`, optional `adapter`).
    Files,
    /// `count` identical constant traces at `kbps`.
    Constant,
    /// `count` random-walk traces with means drawn inside `mean_kbps`.
    Band,
}

/// One path's trace pool. Fields that do not apply to `source` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSource {
    pub source: SourceKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub format: TraceFormat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adapter: Option<AdapterConfig>,
    pub kbps: f64,
    pub count: usize,
    pub duration_s: f64,
    pub granularity_s: f64,
    pub mean_kbps: (f64, f64),
    pub spread: f64,
    pub step_frac: f64,
    pub seed: u64,
    /// Keep only traces whose mean bandwidth (Kbps) lies in this range.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_kbps: Option<(f64, f64)>,
}

impl Default for PathSource {
    fn default() -> Self {
        let band = BandPoolSpec::default();
        Self {
            source: SourceKind::Band,
            path: None,
            format: TraceFormat::Canonical,
            adapter: None,
            kbps: 2000.0,
            count: band.count,
            duration_s: band.duration_s,
            granularity_s: band.granularity_s,
            mean_kbps: band.mean_kbps,
            spread: band.spread,
            step_frac: band.step_frac,
            seed: 0,
            filter_kbps: None,
        }
    }
}

impl PathSource {
    pub fn band(low_kbps: f64, high_kbps: f64, count: usize, seed: u64) -> Self {
        Self {
            source: SourceKind::Band,
            mean_kbps: (low_kbps, high_kbps),
            count,
            seed,
            ..Self::default()
        }
    }

    pub fn constant(kbps: f64, count: usize) -> Self {
        Self {
            source: SourceKind::Constant,
            kbps,
            count,
            ..Self::default()
        }
    }

    pub fn files(path: impl Into<PathBuf>, format: TraceFormat) -> Self {
        Self {
            source: SourceKind::Files,
            path: Some(path.into()),
            format,
            ..Self::default()
        }
    }

    pub fn band_spec(&self) -> BandPoolSpec {
        BandPoolSpec {
            count: self.count,
            mean_kbps: self.mean_kbps,
            duration_s: self.duration_s,
            granularity_s: self.granularity_s,
            spread: self.spread,
            step_frac: self.step_frac,
        }
    }

    /// Restricts the path to traces with mean in `[low, high]`; a synthetic
    /// band pool is generated inside that range.
    pub fn restrict_to(&mut self, low: f64, high: f64) {
        if self.source == SourceKind::Band {
            self.mean_kbps = (low, high);
        }
        self.filter_kbps = Some((low, high));
    }
}

/// Everything needed to build episodes. Relative paths are resolved against
/// the directory of the file the config was loaded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Seed of the first episode when `reset` is called without one.
    pub seed: u64,
    pub num_chunks: usize,
    pub manifest: ManifestSource,
    pub engine: EngineConfig,
    pub paths: Vec<PathSource>,
    /// Split used by the facade; commands pick their own when unset.
    pub split: Option<SplitChoice>,
    pub split_seed: u64,
    pub train_fraction: f64,
    /// Replace masked actions with the nearest valid one instead of failing.
    pub lenient: bool,
    /// Return normalized observations (raw ones are always in `info`).
    pub normalize: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_chunks: DEFAULT_NUM_CHUNKS,
            manifest: ManifestSource::default(),
            engine: EngineConfig::default(),
            paths: vec![
                PathSource::band(1500.0, 2000.0, 50, 1),
                PathSource::band(100.0, 2000.0, 50, 2),
            ],
            split: None,
            split_seed: 0,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            lenient: false,
            normalize: true,
        }
    }
}

impl EnvConfig {
    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            EnvError::Config(format!("reading {}: {e}", path.display()))
        })?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| EnvError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, EnvError> {
        toml::from_str(text).map_err(|e| EnvError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("EnvConfig always serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(f) = self.manifest.file.as_mut() {
            fix(f);
        }
        for p in &mut self.paths {
            if let Some(path) = p.path.as_mut() {
                fix(path);
            }
        }
    }

    /// Applies a named scenario preset.
    pub fn apply_scenario(&mut self, name: &str) -> Result<(), EnvError> {
        let scenario = Scenario::from_name(name)?;
        scenario.apply(self);
        Ok(())
    }
}

/// Two-path presets: the first path averages 1.5–2.0 Mbps, the second path's
/// mean is swept over four bands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub name: &'static str,
    pub path1_kbps: (f64, f64),
    pub path2_kbps: (f64, f64),
}

pub const SCENARIOS: [Scenario; 4] = [
    Scenario {
        name: "p2-1500-2000",
        path1_kbps: (1500.0, 2000.0),
        path2_kbps: (1500.0, 2000.0),
    },
    Scenario {
        name: "p2-1000-1500",
        path1_kbps: (1500.0, 2000.0),
        path2_kbps: (1000.0, 1500.0),
    },
    Scenario {
        name: "p2-500-1000",
        path1_kbps: (1500.0, 2000.0),
        path2_kbps: (500.0, 1000.0),
    },
    Scenario {
        name: "p2-lt500",
        path1_kbps: (1500.0, 2000.0),
        path2_kbps: (100.0, 500.0),
    },
];

impl Scenario {
    pub fn from_name(name: &str) -> Result<Self, EnvError> {
        SCENARIOS
            .iter()
            .find(|s| s.name == name)
            .copied()
            .ok_or_else(|| {
                let known: Vec<&str> = SCENARIOS.iter().map(|s| s.name).collect();
                EnvError::Config(format!(
                    "unknown scenario {name:?} (known: {})",
                    known.join(", ")
                ))
            })
    }

    /// Restricts the first two paths to the scenario's bands. Missing paths
    /// are added as synthetic band pools.
    pub fn apply(&self, cfg: &mut EnvConfig) {
        while cfg.paths.len() < 2 {
            let seed = cfg.paths.len() as u64 + 1;
            cfg.paths.push(PathSource::band(100.0, 2000.0, 50, seed));
        }
        cfg.paths[0].restrict_to(self.path1_kbps.0, self.path1_kbps.1);
        cfg.paths[1].restrict_to(self.path2_kbps.0, self.path2_kbps.1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = EnvConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(EnvConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = EnvConfig::from_toml_str(
            r#"
            seed = 5
            [engine]
            window = 8
            [[paths]]
            source = "constant"
            kbps = 2000.0
            [[paths]]
            source = "files"
            path = "traces/fcc"
            format = "fcc"
            filter_kbps = [100.0, 500.0]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.num_chunks, 60);
        assert_eq!(cfg.engine.window, Some(8));
        assert_eq!(cfg.engine.buffer_max_s, 30.0);
        assert_eq!(cfg.engine.reward.gamma, 3.3);
        assert_eq!(cfg.paths.len(), 2);
        assert_eq!(cfg.paths[1].filter_kbps, Some((100.0, 500.0)));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(EnvConfig::from_toml_str("bogus = 1").is_err());
        assert!(EnvConfig::from_toml_str("[engine]\nbogus = 1").is_err());
    }

    #[test]
    fn relative_paths_resolved() {
        let mut cfg = EnvConfig::from_toml_str(
            "[[paths]]\nsource = \"files\"\npath = \"t.csv\"\n",
        )
        .unwrap();
        cfg.resolve_paths(Path::new("/data"));
        assert_eq!(cfg.paths[0].path.as_deref(), Some(Path::new("/data/t.csv")));
    }

    #[test]
    fn scenario_bands() {
        let mut cfg = EnvConfig::default();
        cfg.apply_scenario("p2-lt500").unwrap();
        assert_eq!(cfg.paths[0].filter_kbps, Some((1500.0, 2000.0)));
        assert_eq!(cfg.paths[1].filter_kbps, Some((100.0, 500.0)));
        assert!(cfg.apply_scenario("nope").is_err());
    }
}
