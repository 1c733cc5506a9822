//! Episodic reset/step interface over the engine.
//!
//! `reset` samples one trace and start offset per path, then runs the engine to
//! the first decision. `step` applies an action and runs to the next decision;
//! its reward covers the time from this request to the next one, so the reward
//! of the final step includes everything played after the last request.

mod config;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    Advance, Engine, EngineError, EpisodeSummary, ObservationLayout, PathSetup, RequestInfo,
    StepOutcome,
};
use crate::media::{MediaError, QualityLadder, VideoManifest};
use crate::policy::{ActionMask, ActionSpace, DecisionContext};
use crate::trace::{filter_by_mean, load_traces, synth, BandwidthTrace, TraceError, TraceSet};

pub use config::{
    EnvConfig, ManifestSource, PathSource, Scenario, SourceKind, SplitChoice, SCENARIOS,
};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("action {action} is masked")]
    MaskedAction { action: usize },
    #[error("reset has not been called")]
    NotStarted,
    #[error("the episode is over; call reset")]
    EpisodeDone,
}

/// Per-entry scales applied to raw observations: `normalized = raw / scale`.
///
/// Throughputs are divided by the top bitrate, chunk sizes by the largest
/// chunk, downloaded and playing levels by the level count, the buffer by its
/// cap, chunks left by the chunk count and download times by the chunk length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    scales: Vec<f64>,
}

impl Normalizer {
    pub fn new(layout: &ObservationLayout, manifest: &VideoManifest, buffer_max_s: f64) -> Self {
        let mut scales = vec![1.0; layout.len()];
        let levels = manifest.num_levels() as f64;
        scales[layout.throughputs()].fill(manifest.ladder().bitrate_kbps(manifest.num_levels() - 1));
        scales[layout.chunk_sizes()].fill(manifest.max_chunk_bytes().max(1) as f64);
        scales[layout.next_levels()].fill(levels);
        scales[layout.buffer()] = buffer_max_s;
        scales[layout.remaining()] = manifest.num_chunks() as f64;
        scales[layout.playing_level()] = levels;
        scales[layout.download_times()].fill(manifest.chunk_length_s());
        Self { scales }
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.scales).map(|(x, s)| x / s).collect()
    }

    pub fn denormalize(&self, normalized: &[f64]) -> Vec<f64> {
        normalized.iter().zip(&self.scales).map(|(x, s)| x * s).collect()
    }
}

/// Loaded, filtered and split trace pools plus everything derived from the
/// config. Cheap to share between environments.
#[derive(Debug)]
pub struct EnvSetup {
    config: EnvConfig,
    split: SplitChoice,
    manifest: Arc<VideoManifest>,
    pools: Vec<Vec<Arc<BandwidthTrace>>>,
    layout: ObservationLayout,
    space: ActionSpace,
    normalizer: Normalizer,
}

impl EnvSetup {
    /// Builds the pools. `split` is used unless the config names one.
    pub fn new(config: EnvConfig, split: SplitChoice) -> Result<Self, EnvError> {
        let split = config.split.unwrap_or(split);
        if config.paths.is_empty() {
            return Err(EnvError::Config("at least one path is required".into()));
        }
        if config.num_chunks == 0 {
            return Err(EnvError::Config("num_chunks must be at least 1".into()));
        }
        let manifest = Arc::new(build_manifest(&config)?);
        let window = config.engine.resolve_window(manifest.chunk_length_s())?;
        let mut pools = Vec::with_capacity(config.paths.len());
        for (i, source) in config.paths.iter().enumerate() {
            let traces = load_pool(i, source)?;
            let traces = match source.filter_kbps {
                Some((lo, hi)) => filter_by_mean(&traces, lo, hi)?,
                None => traces,
            };
            let chosen = match split {
                SplitChoice::All => traces,
                SplitChoice::Train | SplitChoice::Test => {
                    let set = TraceSet {
                        traces,
                        split_seed: config.split_seed,
                        train_fraction: config.train_fraction,
                    };
                    let (train, test) = set.split().map_err(|e| {
                        EnvError::Config(format!("path {}: cannot split trace pool: {e}", i + 1))
                    })?;
                    if split == SplitChoice::Train {
                        train
                    } else {
                        test
                    }
                }
            };
            if chosen.is_empty() {
                return Err(EnvError::Config(format!(
                    "path {}: no traces left after filtering and splitting",
                    i + 1
                )));
            }
            pools.push(chosen.into_iter().map(Arc::new).collect());
        }
        let levels = manifest.num_levels();
        let layout = ObservationLayout::new(config.paths.len(), window, levels);
        let normalizer = Normalizer::new(&layout, &manifest, config.engine.buffer_max_s);
        Ok(Self {
            space: ActionSpace::new(config.engine.action_space, window, levels),
            split,
            config,
            manifest,
            pools,
            layout,
            normalizer,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn split(&self) -> SplitChoice {
        self.split
    }

    pub fn manifest(&self) -> &Arc<VideoManifest> {
        &self.manifest
    }

    pub fn pools(&self) -> &[Vec<Arc<BandwidthTrace>>] {
        &self.pools
    }

    pub fn layout(&self) -> &ObservationLayout {
        &self.layout
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    /// Deterministic trace choice, start offsets and engine seed for an episode.
    pub fn sample_paths(&self, episode_seed: u64) -> (Vec<PathSetup>, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let paths = self
            .pools
            .iter()
            .map(|pool| {
                let trace = Arc::clone(&pool[rng.gen_range(0..pool.len())]);
                let offset_s = trace.sample_episode_start(&mut rng);
                PathSetup { trace, offset_s }
            })
            .collect();
        (paths, rng.gen())
    }
}

fn build_manifest(config: &EnvConfig) -> Result<VideoManifest, EnvError> {
    let m = &config.manifest;
    let manifest = match &m.file {
        Some(path) => VideoManifest::load(path)?,
        None => {
            let ladder = QualityLadder::new(m.bitrates_kbps.clone())?;
            return Ok(VideoManifest::nominal(ladder, m.chunk_length_s, config.num_chunks)?);
        }
    };
    if manifest.num_chunks() < config.num_chunks {
        return Err(EnvError::Config(format!(
            "manifest has {} chunks, {} requested",
            manifest.num_chunks(),
            config.num_chunks
        )));
    }
    Ok(manifest.truncated(config.num_chunks)?)
}

fn load_pool(path_index: usize, source: &PathSource) -> Result<Vec<BandwidthTrace>, EnvError> {
    let prefix = format!("p{}-", path_index + 1);
    Ok(match source.source {
        SourceKind::Files => {
            let path = source.path.as_ref().ok_or_else(|| {
                EnvError::Config(format!("path {}: files source needs `path`", path_index + 1))
            })?;
            load_traces(path, source.format, source.adapter.as_ref())?
        }
        SourceKind::Constant => (0..source.count)
            .map(|i| {
                synth::constant(
                    format!("{prefix}const{i:04}"),
                    source.kbps,
                    source.duration_s,
                    source.granularity_s,
                )
            })
            .collect(),
        SourceKind::Band => synth::band_pool(&prefix, &source.band_spec(), source.seed),
    })
}

/// A masked action replaced in lenient mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub requested: usize,
    pub applied: usize,
}

/// Side information of a reset or step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Path that decides next; `None` once the episode is over.
    pub path: Option<usize>,
    pub raw_obs: Vec<f64>,
    pub time_s: f64,
    pub playing: usize,
    pub buffer_s: f64,
    pub utility: f64,
    pub switch_penalty: f64,
    pub rebuffer_penalty: f64,
    pub rebuffer_s: f64,
    pub chunks_played: usize,
    pub episode_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub request: Option<RequestInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub substitution: Option<Substitution>,
    /// QoE decomposition, on the final step only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episode: Option<EpisodeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvReply {
    pub obs: Vec<f64>,
    pub mask: Vec<bool>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One environment instance. Owns its engine; nothing is shared mutably.
pub struct MultiPathEnv {
    setup: Arc<EnvSetup>,
    engine: Option<Engine>,
    pending: Option<usize>,
    mask: ActionMask,
    episode_seed: u64,
    next_seed: u64,
}

impl MultiPathEnv {
    pub fn new(setup: Arc<EnvSetup>) -> Self {
        let next_seed = setup.config.seed;
        Self {
            setup,
            engine: None,
            pending: None,
            mask: ActionMask::from_bits(Vec::new()),
            episode_seed: 0,
            next_seed,
        }
    }

    pub fn from_config(config: EnvConfig, split: SplitChoice) -> Result<Self, EnvError> {
        Ok(Self::new(Arc::new(EnvSetup::new(config, split)?)))
    }

    pub fn setup(&self) -> &Arc<EnvSetup> {
        &self.setup
    }

    pub fn engine(&self) -> Option<&Engine> {
        self.engine.as_ref()
    }

    pub fn observation_len(&self) -> usize {
        self.setup.layout.len()
    }

    pub fn num_actions(&self) -> usize {
        self.setup.space.size()
    }

    pub fn mask(&self) -> &ActionMask {
        &self.mask
    }

    pub fn pending_path(&self) -> Option<usize> {
        self.pending
    }

    /// Starts an episode. Without a seed, episodes count up from the config seed.
    pub fn reset(&mut self, seed: Option<u64>) -> Result<EnvReply, EnvError> {
        let seed = seed.unwrap_or(self.next_seed);
        self.next_seed = seed.wrapping_add(1);
        let (paths, engine_seed) = self.setup.sample_paths(seed);
        let engine = match self.engine.take() {
            Some(mut e) => {
                e.reset(paths, engine_seed)?;
                e
            }
            None => Engine::new(
                Arc::clone(&self.setup.manifest),
                paths,
                self.setup.config.engine.clone(),
                engine_seed,
            )?,
        };
        self.engine = Some(engine);
        self.episode_seed = seed;
        self.pending = None;
        let advance = self.engine_mut()?.advance_until_decision()?;
        self.reply(advance, None, None)
    }

    /// Applies `action` for the pending path. In strict mode a masked action
    /// fails and leaves the environment untouched.
    pub fn step(&mut self, action: usize) -> Result<EnvReply, EnvError> {
        let path = match (&self.engine, self.pending) {
            (None, _) => return Err(EnvError::NotStarted),
            (Some(_), None) => return Err(EnvError::EpisodeDone),
            (Some(_), Some(p)) => p,
        };
        let mut substitution = None;
        let applied = if self.mask.is_valid(action) {
            action
        } else if self.setup.config.lenient {
            let applied = self
                .mask
                .nearest_valid(action)
                .ok_or(EnvError::MaskedAction { action })?;
            log::warn!("masked action {action} replaced by {applied}");
            substitution = Some(Substitution {
                requested: action,
                applied,
            });
            applied
        } else {
            return Err(EnvError::MaskedAction { action });
        };
        let engine = self.engine_mut()?;
        let request = engine.apply_flat(path, applied)?;
        let advance = engine.advance_until_decision()?;
        self.reply(advance, Some(request), substitution)
    }

    /// Context for an in-process policy at the pending decision.
    pub fn decision_context<'a>(&'a self, raw_obs: &'a [f64]) -> Option<DecisionContext<'a>> {
        let engine = self.engine.as_ref()?;
        Some(engine.decision_context(self.pending?, raw_obs))
    }

    fn engine_mut(&mut self) -> Result<&mut Engine, EnvError> {
        self.engine.as_mut().ok_or(EnvError::NotStarted)
    }

    fn reply(
        &mut self,
        advance: Advance,
        request: Option<RequestInfo>,
        substitution: Option<Substitution>,
    ) -> Result<EnvReply, EnvError> {
        let engine = self.engine.as_ref().ok_or(EnvError::NotStarted)?;
        let (path, outcome): (Option<usize>, StepOutcome) = match advance {
            Advance::Decision { path, outcome } => (Some(path), outcome),
            Advance::EpisodeEnd(outcome) => (None, outcome),
        };
        let raw_obs = engine.observe(path.unwrap_or(0))?;
        self.mask = match path {
            Some(_) => engine.mask(),
            None => ActionMask::from_bits(vec![false; self.setup.space.size()]),
        };
        self.pending = path;
        let obs = if self.setup.config.normalize {
            self.setup.normalizer.normalize(&raw_obs)
        } else {
            raw_obs.clone()
        };
        Ok(EnvReply {
            obs,
            mask: self.mask.bits().to_vec(),
            reward: outcome.reward,
            done: outcome.done,
            info: StepInfo {
                path,
                raw_obs,
                time_s: engine.now(),
                playing: engine.playing(),
                buffer_s: engine.buffer_s(),
                utility: outcome.utility,
                switch_penalty: outcome.switch_penalty,
                rebuffer_penalty: outcome.rebuffer_penalty,
                rebuffer_s: outcome.rebuffer_s,
                chunks_played: outcome.played.len(),
                episode_seed: self.episode_seed,
                request,
                substitution,
                episode: if outcome.done { engine.summary().cloned() } else { None },
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RttModel;
    use proptest::prelude::*;

    fn constant_config(kbps: &[f64]) -> EnvConfig {
        EnvConfig {
            paths: kbps.iter().map(|k| PathSource::constant(*k, 4)).collect(),
            ..EnvConfig::default()
        }
    }

    fn env(cfg: EnvConfig) -> MultiPathEnv {
        MultiPathEnv::from_config(cfg, SplitChoice::All).unwrap()
    }

    #[test]
    fn reset_returns_first_decision() {
        let mut e = env(EnvConfig::default());
        let r = e.reset(Some(3)).unwrap();
        assert_eq!(r.obs.len(), 83);
        assert_eq!(r.mask.len(), 49);
        assert_eq!(r.info.path, Some(0));
        assert_eq!(r.reward, 0.0);
        assert!(!r.done);
        assert_eq!(e.num_actions(), 49);
    }

    #[test]
    fn seeded_reset_is_deterministic() {
        let setup = Arc::new(EnvSetup::new(EnvConfig::default(), SplitChoice::Train).unwrap());
        let a = setup.sample_paths(11);
        let b = setup.sample_paths(11);
        let ids = |p: &[PathSetup]| -> Vec<(String, f64)> {
            p.iter().map(|s| (s.trace.id().to_string(), s.offset_s)).collect()
        };
        assert_eq!(ids(&a.0), ids(&b.0));
        assert_eq!(a.1, b.1);
        assert_ne!(ids(&a.0), ids(&setup.sample_paths(12).0));
    }

    #[test]
    fn level_zero_on_fast_paths_scores_zero() {
        let mut e = env(constant_config(&[100_000.0, 100_000.0]));
        let mut r = e.reset(Some(1)).unwrap();
        let mut total = 0.0;
        while !r.done {
            let a = e
                .setup()
                .action_space()
                .greedy_action(0, e.engine().unwrap().playing(), e.engine().unwrap().requested(), 60)
                .unwrap();
            r = e.step(a).unwrap();
            total += r.reward;
        }
        let s = r.info.episode.unwrap();
        assert_eq!((s.utility, s.switch_penalty, s.rebuffer_penalty), (0.0, 0.0, 0.0));
        assert_eq!(total, 0.0);
        assert!(matches!(e.step(0), Err(EnvError::EpisodeDone)));
    }

    #[test]
    fn strict_mode_rejects_masked_action_without_change() {
        let mut e = env(constant_config(&[2000.0, 2000.0]));
        e.reset(Some(1)).unwrap();
        let r1 = e.step(0).unwrap();
        assert!(!r1.mask[0]);
        let err = e.step(3).unwrap_err();
        assert!(matches!(err, EnvError::MaskedAction { action: 3 }));
        assert_eq!(e.mask().bits(), &r1.mask[..]);
        assert_eq!(e.pending_path(), r1.info.path);
        assert_eq!(e.engine().unwrap().observe(0).unwrap(), r1.info.raw_obs);
        assert!(e.step(49).is_err());
    }

    #[test]
    fn lenient_mode_substitutes_nearest() {
        let mut cfg = constant_config(&[2000.0, 2000.0]);
        cfg.lenient = true;
        let mut e = env(cfg);
        e.reset(Some(1)).unwrap();
        e.step(3).unwrap();
        let r = e.step(3).unwrap();
        assert_eq!(
            r.info.substitution,
            Some(Substitution {
                requested: 3,
                applied: 7
            })
        );
        assert_eq!(r.info.request.unwrap().index, 2);
    }

    #[test]
    fn single_path_environment() {
        let mut e = env(constant_config(&[3000.0]));
        let r = e.reset(None).unwrap();
        assert_eq!(r.obs.len(), 6 + 49 + 7 + 3 + 6);
        let mut r = r;
        let mut steps = 0;
        while !r.done {
            let a = r.mask.iter().position(|b| *b).unwrap();
            r = e.step(a).unwrap();
            steps += 1;
        }
        assert_eq!(steps, 60);
    }

    #[test]
    fn filtered_pool_empty_is_config_error() {
        let mut cfg = constant_config(&[2000.0, 2000.0]);
        cfg.paths[1].filter_kbps = Some((100.0, 500.0));
        let err = EnvSetup::new(cfg, SplitChoice::All).unwrap_err();
        assert!(matches!(err, EnvError::Config(_)), "{err}");
    }

    #[test]
    fn scenario_pools_respect_bands() {
        for s in SCENARIOS {
            let mut cfg = EnvConfig::default();
            s.apply(&mut cfg);
            let setup = EnvSetup::new(cfg, SplitChoice::Test).unwrap();
            for (pool, band) in setup.pools().iter().zip([s.path1_kbps, s.path2_kbps]) {
                assert!(!pool.is_empty());
                for t in pool {
                    let m = t.mean_bandwidth();
                    assert!(band.0 <= m && m <= band.1, "{} mean {m}", t.id());
                }
            }
        }
    }

    #[test]
    fn rtt_and_seed_fully_determine_episode() {
        let mut cfg = EnvConfig::default();
        cfg.engine.rtt = RttModel::default();
        let run = || {
            let mut e = env(cfg.clone());
            let mut r = e.reset(Some(9)).unwrap();
            let mut rewards = vec![r.reward];
            while !r.done {
                let a = r.mask.iter().rposition(|b| *b).unwrap();
                r = e.step(a).unwrap();
                rewards.push(r.reward);
            }
            (rewards, r.info.episode.unwrap())
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn normalization_inverts(raw in proptest::collection::vec(0.0f64..1e7, 83)) {
            let setup = EnvSetup::new(EnvConfig::default(), SplitChoice::All).unwrap();
            let n = setup.normalizer();
            let back = n.denormalize(&n.normalize(&raw));
            for (a, b) in raw.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
