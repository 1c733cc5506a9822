//! Discrete-event simulation of one multi-path streaming session.
//!
//! Every path downloads one chunk at a time. When a path becomes free the
//! engine stops at a decision and waits for [`Engine::apply_action`]. Playback
//! runs on PLAY and REBUFFER events, each path polls with PAUSE events while the
//! buffer is full or its window has nothing left to request.
//!
//! The buffer holds downloaded chunks that have not started playing; the chunk
//! being played is not part of it.

mod event;
mod log;
mod observation;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media::{RewardConfig, VideoManifest};
use crate::policy::{
    compute_mask, greedy_next_index, ActionMask, ActionSpace, ActionSpaceKind, ChunkRequest,
    ChunkSet, DecisionContext,
};
use crate::trace::BandwidthTrace;

pub use event::{EventKind, EventQueue, SimEvent};
pub use log::{ChunkRecord, EpisodeLog, EpisodeSummary, EventRecord, Recomputed};
pub use observation::{ObservationLayout, HISTORY_LEN};

pub const DEFAULT_BUFFER_MAX_S: f64 = 30.0;
pub const DEFAULT_POLL_INTERVAL_S: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    Config(String),
    #[error("path {0} does not exist")]
    NoSuchPath(usize),
    #[error("path {path} is not awaiting a decision (pending: {pending:?})")]
    NotAwaiting { path: usize, pending: Option<usize> },
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("the episode has finished")]
    Finished,
    #[error("event queue ran dry before the episode finished")]
    Stalled,
}

/// Round-trip time added to every request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RttModel {
    Fixed { seconds: f64 },
    /// Drawn per request, uniform on `[min_s, max_s]`.
    Uniform { min_s: f64, max_s: f64 },
}

impl Default for RttModel {
    fn default() -> Self {
        Self::Uniform {
            min_s: 0.05,
            max_s: 0.1,
        }
    }
}

impl RttModel {
    fn validate(&self) -> Result<(), EngineError> {
        let ok = match *self {
            Self::Fixed { seconds } => seconds.is_finite() && seconds >= 0.0,
            Self::Uniform { min_s, max_s } => {
                min_s.is_finite() && max_s.is_finite() && 0.0 <= min_s && min_s <= max_s
            }
        };
        if ok {
            Ok(())
        } else {
            Err(EngineError::Config(format!("bad rtt model {self:?}")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Self::Fixed { seconds } => seconds,
            Self::Uniform { min_s, max_s } if min_s == max_s => min_s,
            Self::Uniform { min_s, max_s } => rng.gen_range(min_s..=max_s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub buffer_max_s: f64,
    /// Look-ahead window; `floor(buffer_max / chunk_length)` when unset.
    pub window: Option<usize>,
    pub poll_interval_s: f64,
    pub action_space: ActionSpaceKind,
    pub reward: RewardConfig,
    pub rtt: RttModel,
    pub record_events: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            buffer_max_s: DEFAULT_BUFFER_MAX_S,
            window: None,
            poll_interval_s: DEFAULT_POLL_INTERVAL_S,
            action_space: ActionSpaceKind::Rlas,
            reward: RewardConfig::default(),
            rtt: RttModel::default(),
            record_events: false,
        }
    }
}

impl EngineConfig {
    /// Effective window for a chunk length, validated so that a stalled chunk
    /// can always be requested: `(window − 1) · chunk_length < buffer_max`.
    pub fn resolve_window(&self, chunk_length_s: f64) -> Result<usize, EngineError> {
        if !(self.buffer_max_s.is_finite() && self.buffer_max_s > 0.0) {
            return Err(EngineError::Config("buffer_max_s must be positive".into()));
        }
        let w = match self.window {
            Some(w) => w,
            None => (self.buffer_max_s / chunk_length_s + 1e-9).floor() as usize,
        };
        if w == 0 {
            return Err(EngineError::Config(format!(
                "window is 0: buffer cap {} s is shorter than one {} s chunk",
                self.buffer_max_s, chunk_length_s
            )));
        }
        if (w - 1) as f64 * chunk_length_s >= self.buffer_max_s {
            return Err(EngineError::Config(format!(
                "window {w} can fill the {} s buffer before the next chunk is requested",
                self.buffer_max_s
            )));
        }
        Ok(w)
    }

    fn validate(&self) -> Result<(), EngineError> {
        if !(self.poll_interval_s.is_finite() && self.poll_interval_s > 0.0) {
            return Err(EngineError::Config("poll_interval_s must be positive".into()));
        }
        self.reward
            .validate()
            .map_err(|e| EngineError::Config(e.to_string()))?;
        self.rtt.validate()
    }
}

/// A path's trace and where in it the episode starts.
#[derive(Debug, Clone)]
pub struct PathSetup {
    pub trace: Arc<BandwidthTrace>,
    pub offset_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayedChunk {
    pub index: usize,
    pub level: usize,
}

/// Reward earned between two consecutive requests (or the last request and
/// the end of the episode).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub utility: f64,
    pub switch_penalty: f64,
    pub rebuffer_penalty: f64,
    pub rebuffer_s: f64,
    pub played: Vec<PlayedChunk>,
    pub done: bool,
}

/// What a request set in motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestInfo {
    pub path: usize,
    pub index: usize,
    pub level: usize,
    pub bytes: u64,
    pub rtt_s: f64,
    pub finish_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Advance {
    /// `path` is free and waits for an action. The outcome covers the time
    /// since the previous request.
    Decision { path: usize, outcome: StepOutcome },
    /// All chunks have played. The outcome covers the time since the last request.
    EpisodeEnd(StepOutcome),
}

#[derive(Debug, Clone, Copy)]
struct InFlight {
    index: usize,
}

#[derive(Debug, Clone)]
struct PathState {
    trace: Arc<BandwidthTrace>,
    offset_s: f64,
    in_flight: Option<InFlight>,
    throughputs: Vec<f64>,
    download_times: Vec<f64>,
}

impl PathState {
    fn push_history(&mut self, kbps: f64, seconds: f64) {
        if self.throughputs.len() == HISTORY_LEN {
            self.throughputs.remove(0);
            self.download_times.remove(0);
        }
        self.throughputs.push(kbps);
        self.download_times.push(seconds);
    }
}

#[derive(Debug, Default)]
struct StepAccumulator {
    utility: f64,
    switches: f64,
    rebuffer_s: f64,
    played: Vec<PlayedChunk>,
}

pub struct Engine {
    manifest: Arc<VideoManifest>,
    config: EngineConfig,
    window: usize,
    space: ActionSpace,
    layout: ObservationLayout,
    seed: u64,
    rng: ChaCha8Rng,
    now: f64,
    queue: EventQueue,
    paths: Vec<PathState>,
    buffer: BTreeMap<usize, usize>,
    requested: ChunkSet,
    playing: usize,
    playing_level: Option<usize>,
    stall_mark: f64,
    step: StepAccumulator,
    pending: Option<usize>,
    finished: bool,
    records: Vec<Option<ChunkRecord>>,
    events: Vec<EventRecord>,
    total: StepAccumulator,
    startup_delay_s: f64,
    decisions: usize,
    max_buffer_s: f64,
    summary: Option<EpisodeSummary>,
}

impl Engine {
    /// Builds a fresh episode. Every path is free at time 0.
    pub fn new(
        manifest: Arc<VideoManifest>,
        paths: Vec<PathSetup>,
        config: EngineConfig,
        seed: u64,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let window = config.resolve_window(manifest.chunk_length_s())?;
        if paths.is_empty() {
            return Err(EngineError::Config("at least one path is required".into()));
        }
        let levels = manifest.num_levels();
        let mut engine = Self {
            space: ActionSpace::new(config.action_space, window, levels),
            layout: ObservationLayout::new(paths.len(), window, levels),
            window,
            config,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            now: 0.0,
            queue: EventQueue::default(),
            paths: Vec::new(),
            buffer: BTreeMap::new(),
            requested: ChunkSet::new(manifest.num_chunks()),
            playing: 0,
            playing_level: None,
            stall_mark: 0.0,
            step: StepAccumulator::default(),
            pending: None,
            finished: false,
            records: vec![None; manifest.num_chunks() + 1],
            events: Vec::new(),
            total: StepAccumulator::default(),
            startup_delay_s: 0.0,
            decisions: 0,
            max_buffer_s: 0.0,
            summary: None,
            manifest,
        };
        engine.reset(paths, seed)?;
        Ok(engine)
    }

    /// Restarts the episode on new paths with a new seed.
    pub fn reset(&mut self, paths: Vec<PathSetup>, seed: u64) -> Result<(), EngineError> {
        if paths.len() != self.layout.paths {
            return Err(EngineError::Config(format!(
                "engine was built for {} paths, got {}",
                self.layout.paths,
                paths.len()
            )));
        }
        for p in &paths {
            if !(p.offset_s.is_finite() && p.offset_s >= 0.0) {
                return Err(EngineError::Config(format!(
                    "trace offset {} for {} is not a finite non-negative time",
                    p.offset_s,
                    p.trace.id()
                )));
            }
        }
        let n = self.manifest.num_chunks();
        self.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.now = 0.0;
        self.queue.clear();
        self.paths = paths
            .into_iter()
            .map(|p| PathState {
                trace: p.trace,
                offset_s: p.offset_s,
                in_flight: None,
                throughputs: Vec::with_capacity(HISTORY_LEN),
                download_times: Vec::with_capacity(HISTORY_LEN),
            })
            .collect();
        self.buffer.clear();
        self.requested = ChunkSet::new(n);
        self.playing = 0;
        self.playing_level = None;
        self.stall_mark = 0.0;
        self.step = StepAccumulator::default();
        self.total = StepAccumulator::default();
        self.pending = None;
        self.finished = false;
        self.records = vec![None; n + 1];
        self.events.clear();
        self.startup_delay_s = 0.0;
        self.decisions = 0;
        self.max_buffer_s = 0.0;
        self.summary = None;
        for p in 0..self.paths.len() {
            self.queue.push(SimEvent::down(0.0, p));
        }
        Ok(())
    }

    pub fn manifest(&self) -> &VideoManifest {
        &self.manifest
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn layout(&self) -> &ObservationLayout {
        &self.layout
    }

    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Chunk currently playing, 0 before playback starts.
    pub fn playing(&self) -> usize {
        self.playing
    }

    pub fn playing_level(&self) -> Option<usize> {
        self.playing_level
    }

    pub fn requested(&self) -> &ChunkSet {
        &self.requested
    }

    pub fn pending_path(&self) -> Option<usize> {
        self.pending
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Downloaded chunks not yet playing, as `index → level`.
    pub fn buffered(&self) -> &BTreeMap<usize, usize> {
        &self.buffer
    }

    pub fn buffer_s(&self) -> f64 {
        self.buffer.len() as f64 * self.manifest.chunk_length_s()
    }

    pub fn path_throughputs(&self, path: usize) -> &[f64] {
        &self.paths[path].throughputs
    }

    pub fn path_download_times(&self, path: usize) -> &[f64] {
        &self.paths[path].download_times
    }

    pub fn trace_ids(&self) -> Vec<String> {
        self.paths.iter().map(|p| p.trace.id().to_string()).collect()
    }

    pub fn pending_events(&self) -> impl Iterator<Item = &SimEvent> {
        self.queue.iter()
    }

    pub fn mask(&self) -> ActionMask {
        compute_mask(
            &self.space,
            self.playing,
            &self.requested,
            self.manifest.num_chunks(),
        )
    }

    /// Raw observation. Identical for every path; the deciding path is
    /// reported separately.
    pub fn observe(&self, path: usize) -> Result<Vec<f64>, EngineError> {
        if path >= self.paths.len() {
            return Err(EngineError::NoSuchPath(path));
        }
        let l = &self.layout;
        let n = self.manifest.num_chunks();
        let mut obs = vec![0.0; l.len()];
        let tp = l.throughputs();
        let dt = l.download_times();
        for (p, state) in self.paths.iter().enumerate() {
            let slot = p * HISTORY_LEN;
            observation::pad_history(
                &mut obs[tp.start + slot..tp.start + slot + HISTORY_LEN],
                &state.throughputs,
            );
            observation::pad_history(
                &mut obs[dt.start + slot..dt.start + slot + HISTORY_LEN],
                &state.download_times,
            );
        }
        let sizes = l.chunk_sizes();
        let next = l.next_levels();
        for c in 1..=self.window {
            let index = self.playing + c;
            if index > n {
                break;
            }
            let row = sizes.start + (c - 1) * l.levels;
            for (k, bytes) in self.manifest.chunk_row(index).iter().enumerate() {
                obs[row + k] = *bytes as f64;
            }
            if let Some(level) = self.buffer.get(&index) {
                obs[next.start + c - 1] = (*level + 1) as f64;
            }
        }
        obs[l.buffer()] = self.buffer_s();
        obs[l.remaining()] = (n - self.playing) as f64;
        obs[l.playing_level()] = self.playing_level.map_or(0.0, |x| (x + 1) as f64);
        Ok(obs)
    }

    /// Context handed to in-process policies.
    pub fn decision_context<'a>(&'a self, path: usize, observation: &'a [f64]) -> DecisionContext<'a> {
        DecisionContext {
            path,
            now: self.now,
            playing: self.playing,
            num_chunks: self.manifest.num_chunks(),
            requested: &self.requested,
            buffer_s: self.buffer_s(),
            buffer_max_s: self.config.buffer_max_s,
            path_throughputs: &self.paths[path].throughputs,
            manifest: &self.manifest,
            space: &self.space,
            observation,
        }
    }

    /// Runs events until a path needs a decision or the episode ends.
    /// Returns the pending decision again if one is outstanding.
    pub fn advance_until_decision(&mut self) -> Result<Advance, EngineError> {
        if let Some(path) = self.pending {
            return Ok(Advance::Decision {
                path,
                outcome: StepOutcome::default(),
            });
        }
        if self.finished {
            return Err(EngineError::Finished);
        }
        while let Some(ev) = self.queue.pop() {
            self.now = ev.timestamp;
            let decide = match ev.kind {
                EventKind::Down => {
                    let p = ev.path.expect("DOWN events carry a path");
                    self.complete_download(p);
                    self.path_ready(p)
                }
                EventKind::Pause => {
                    let p = ev.path.expect("PAUSE events carry a path");
                    self.path_ready(p)
                }
                EventKind::Play => {
                    self.on_play_due();
                    None
                }
                EventKind::Rebuffer => {
                    self.on_rebuffer();
                    None
                }
            };
            self.max_buffer_s = self.max_buffer_s.max(self.buffer_s());
            if self.config.record_events {
                self.events.push(EventRecord {
                    time: self.now,
                    kind: ev.kind,
                    path: ev.path,
                    buffer_s: self.buffer_s(),
                    playing: self.playing,
                });
            }
            if self.finished {
                let mut outcome = self.take_step_outcome();
                outcome.done = true;
                self.finalize();
                return Ok(Advance::EpisodeEnd(outcome));
            }
            if let Some(path) = decide {
                self.pending = Some(path);
                self.decisions += 1;
                return Ok(Advance::Decision {
                    path,
                    outcome: self.take_step_outcome(),
                });
            }
        }
        Err(EngineError::Stalled)
    }

    /// Issues a request on the path awaiting a decision. Nothing changes when
    /// the request is rejected.
    pub fn apply_action(&mut self, path: usize, request: ChunkRequest) -> Result<RequestInfo, EngineError> {
        if self.finished {
            return Err(EngineError::Finished);
        }
        if path >= self.paths.len() {
            return Err(EngineError::NoSuchPath(path));
        }
        if self.pending != Some(path) {
            return Err(EngineError::NotAwaiting {
                path,
                pending: self.pending,
            });
        }
        let n = self.manifest.num_chunks();
        let reach = self.window.min(n - self.playing);
        let ChunkRequest { index_offset, level } = request;
        if level >= self.manifest.num_levels() {
            return Err(EngineError::InvalidAction(format!(
                "level {level} out of range for {} levels",
                self.manifest.num_levels()
            )));
        }
        if index_offset == 0 || index_offset > reach {
            return Err(EngineError::InvalidAction(format!(
                "offset {index_offset} outside [1, {reach}]"
            )));
        }
        let index = self.playing + index_offset;
        if self.requested.contains(index) {
            return Err(EngineError::InvalidAction(format!(
                "chunk {index} was already requested"
            )));
        }
        if self.config.action_space == ActionSpaceKind::Rlags {
            let greedy = greedy_next_index(self.playing, &self.requested, n, self.window);
            if greedy != Some(index) {
                return Err(EngineError::InvalidAction(format!(
                    "chunk {index} is not the greedy choice {greedy:?}"
                )));
            }
        }

        let rtt_s = self.config.rtt.sample(&mut self.rng);
        let bytes = self.manifest.chunk_bytes(index, level);
        let state = &mut self.paths[path];
        let duration = state
            .trace
            .download_duration(state.offset_s + self.now, bytes, rtt_s);
        let finish_time = self.now + duration;
        state.in_flight = Some(InFlight { index });
        self.requested.insert(index);
        self.records[index] = Some(ChunkRecord {
            index,
            level,
            path,
            request_time: self.now,
            finish_time,
            play_time: f64::NAN,
            rebuffer_before_s: 0.0,
            rtt_s,
            bytes,
            buffer_at_request_s: self.buffer_s(),
        });
        self.queue.push(SimEvent::down(finish_time, path));
        self.pending = None;
        Ok(RequestInfo {
            path,
            index,
            level,
            bytes,
            rtt_s,
            finish_time,
        })
    }

    /// Decodes a flat action of the configured space and applies it.
    pub fn apply_flat(&mut self, path: usize, action: usize) -> Result<RequestInfo, EngineError> {
        let request = self
            .space
            .to_request(action, self.playing, &self.requested, self.manifest.num_chunks())
            .ok_or_else(|| EngineError::InvalidAction(format!("action {action} has no meaning here")))?;
        self.apply_action(path, request)
    }

    /// Drains the reward accumulated since the last drain.
    pub fn take_step_outcome(&mut self) -> StepOutcome {
        let acc = std::mem::take(&mut self.step);
        let cfg = &self.config.reward;
        let switch_penalty = cfg.beta * acc.switches;
        let rebuffer_penalty = cfg.gamma * acc.rebuffer_s;
        StepOutcome {
            reward: acc.utility - switch_penalty - rebuffer_penalty,
            utility: acc.utility,
            switch_penalty,
            rebuffer_penalty,
            rebuffer_s: acc.rebuffer_s,
            played: acc.played,
            done: self.finished,
        }
    }

    pub fn summary(&self) -> Option<&EpisodeSummary> {
        self.summary.as_ref()
    }

    /// Records of every chunk requested so far, in index order.
    pub fn chunk_records(&self) -> Vec<ChunkRecord> {
        self.records.iter().flatten().cloned().collect()
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn episode_log(&self) -> EpisodeLog {
        EpisodeLog {
            chunks: self.chunk_records(),
            summary: self.summary.clone(),
            events: self.events.clone(),
        }
    }

    fn complete_download(&mut self, path: usize) {
        let Some(InFlight { index }) = self.paths[path].in_flight.take() else {
            return;
        };
        let record = self.records[index]
            .as_mut()
            .expect("in-flight chunks have a record");
        let elapsed = self.now - record.request_time;
        let kbps = record.bytes as f64 * 8.0 / 1000.0 / elapsed;
        let level = record.level;
        self.paths[path].push_history(kbps, elapsed);
        self.buffer.insert(index, level);
        if self.playing == 0 && index == 1 {
            self.startup_delay_s = self.now;
            self.start_play(1);
        }
    }

    /// Whether `path` may request now; otherwise it idles (nothing left to
    /// request) or polls again after the poll interval.
    fn path_ready(&mut self, path: usize) -> Option<usize> {
        if self.requested.len() == self.manifest.num_chunks() {
            return None;
        }
        if self.buffer_s() < self.config.buffer_max_s && self.mask().any() {
            Some(path)
        } else {
            self.queue
                .push(SimEvent::pause(self.now + self.config.poll_interval_s, path));
            None
        }
    }

    fn on_play_due(&mut self) {
        if self.playing == self.manifest.num_chunks() {
            self.finished = true;
            return;
        }
        let next = self.playing + 1;
        if self.buffer.contains_key(&next) {
            self.start_play(next);
        } else {
            self.stall_mark = self.now;
            self.queue
                .push(SimEvent::rebuffer(self.now + self.config.poll_interval_s));
        }
    }

    fn on_rebuffer(&mut self) {
        let next = self.playing + 1;
        let stalled = self.now - self.stall_mark;
        self.stall_mark = self.now;
        self.step.rebuffer_s += stalled;
        self.total.rebuffer_s += stalled;
        if let Some(r) = self.records[next].as_mut() {
            r.rebuffer_before_s += stalled;
        }
        if self.buffer.contains_key(&next) {
            self.start_play(next);
        } else {
            self.queue
                .push(SimEvent::rebuffer(self.now + self.config.poll_interval_s));
        }
    }

    fn start_play(&mut self, index: usize) {
        let level = self
            .buffer
            .remove(&index)
            .expect("only buffered chunks start playing");
        let utilities = self.manifest.ladder().utilities();
        let q = utilities[level];
        let switch = self.playing_level.map_or(0.0, |prev| (q - utilities[prev]).abs());
        for acc in [&mut self.step, &mut self.total] {
            acc.utility += q;
            acc.switches += switch;
            acc.played.push(PlayedChunk { index, level });
        }
        let record = self.records[index]
            .as_mut()
            .expect("played chunks have a record");
        record.play_time = self.now;
        self.playing = index;
        self.playing_level = Some(level);
        self.queue
            .push(SimEvent::play(self.now + self.manifest.chunk_length_s()));
    }

    fn finalize(&mut self) {
        let cfg = &self.config.reward;
        let switch_penalty = cfg.beta * self.total.switches;
        let rebuffer_penalty = cfg.gamma * self.total.rebuffer_s;
        self.summary = Some(EpisodeSummary {
            reward: self.total.utility - switch_penalty - rebuffer_penalty,
            utility: self.total.utility,
            switch_penalty,
            rebuffer_penalty,
            rebuffer_s: self.total.rebuffer_s,
            startup_delay_s: self.startup_delay_s,
            end_time_s: self.now,
            decisions: self.decisions,
            max_buffer_s: self.max_buffer_s,
            rtt_seed: self.seed,
            trace_ids: self.trace_ids(),
            trace_offsets_s: self.paths.iter().map(|p| p.offset_s).collect(),
        });
        self.pending = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::QualityLadder;
    use crate::trace::synth;

    fn constant_paths(kbps: &[f64]) -> Vec<PathSetup> {
        kbps.iter()
            .enumerate()
            .map(|(i, k)| PathSetup {
                trace: Arc::new(synth::constant(format!("c{i}"), *k, 600.0, 1.0)),
                offset_s: 0.0,
            })
            .collect()
    }

    fn engine(kbps: &[f64], n: usize, config: EngineConfig) -> Engine {
        let manifest = VideoManifest::nominal(QualityLadder::default(), 4.0, n).unwrap();
        Engine::new(Arc::new(manifest), constant_paths(kbps), config, 7).unwrap()
    }

    fn fixed_rtt() -> EngineConfig {
        EngineConfig {
            rtt: RttModel::Fixed { seconds: 0.0 },
            ..EngineConfig::default()
        }
    }

    fn run_greedy(e: &mut Engine, level: usize) -> Vec<StepOutcome> {
        let mut outcomes = Vec::new();
        loop {
            match e.advance_until_decision().unwrap() {
                Advance::Decision { path, outcome } => {
                    outcomes.push(outcome);
                    let a = e
                        .action_space()
                        .greedy_action(level, e.playing(), e.requested(), e.manifest().num_chunks())
                        .unwrap();
                    e.apply_flat(path, a).unwrap();
                }
                Advance::EpisodeEnd(outcome) => {
                    outcomes.push(outcome);
                    return outcomes;
                }
            }
        }
    }

    #[test]
    fn window_resolution() {
        let c = EngineConfig::default();
        assert_eq!(c.resolve_window(4.0).unwrap(), 7);
        let w8 = EngineConfig {
            window: Some(8),
            ..EngineConfig::default()
        };
        assert_eq!(w8.resolve_window(4.0).unwrap(), 8);
        let w9 = EngineConfig {
            window: Some(9),
            ..EngineConfig::default()
        };
        assert!(w9.resolve_window(4.0).is_err());
        assert!(c.resolve_window(40.0).is_err());
    }

    #[test]
    fn both_paths_decide_at_time_zero() {
        let mut e = engine(&[2000.0, 1000.0], 60, fixed_rtt());
        let Advance::Decision { path, outcome } = e.advance_until_decision().unwrap() else {
            panic!("expected decision");
        };
        assert_eq!((path, e.now()), (0, 0.0));
        assert_eq!(outcome, StepOutcome::default());
        assert_eq!(e.observe(0).unwrap().len(), 83);
        e.apply_action(0, ChunkRequest { index_offset: 1, level: 0 }).unwrap();
        let Advance::Decision { path, .. } = e.advance_until_decision().unwrap() else {
            panic!("expected decision");
        };
        assert_eq!((path, e.now()), (1, 0.0));
    }

    #[test]
    fn initial_observation_history_is_zero() {
        let e = engine(&[2000.0, 1000.0], 60, fixed_rtt());
        let obs = e.observe(1).unwrap();
        let l = e.layout();
        assert!(obs[l.throughputs()].iter().all(|x| *x == 0.0));
        assert!(obs[l.download_times()].iter().all(|x| *x == 0.0));
        assert_eq!(obs[l.buffer()], 0.0);
        assert_eq!(obs[l.remaining()], 60.0);
        assert_eq!(obs[l.playing_level()], 0.0);
        assert_eq!(obs[l.chunk_sizes().start], 150_000.0);
        assert!(e.observe(2).is_err());
    }

    #[test]
    fn duplicate_request_rejected_without_change() {
        let mut e = engine(&[2000.0, 1000.0], 60, fixed_rtt());
        e.advance_until_decision().unwrap();
        e.apply_action(0, ChunkRequest { index_offset: 1, level: 0 }).unwrap();
        e.advance_until_decision().unwrap();
        let before = e.observe(1).unwrap();
        let err = e.apply_action(1, ChunkRequest { index_offset: 1, level: 3 });
        assert!(matches!(err, Err(EngineError::InvalidAction(_))));
        assert_eq!(e.observe(1).unwrap(), before);
        assert_eq!(e.pending_path(), Some(1));
        assert!(!e.mask().is_valid(e.action_space().encode(1, 3)));
        assert!(e.apply_action(0, ChunkRequest { index_offset: 2, level: 0 }).is_err());
        assert!(e.apply_action(1, ChunkRequest { index_offset: 8, level: 0 }).is_err());
        assert!(e.apply_action(1, ChunkRequest { index_offset: 2, level: 7 }).is_err());
        e.apply_action(1, ChunkRequest { index_offset: 2, level: 3 }).unwrap();
    }

    #[test]
    fn single_path_constant_timeline() {
        // 300 Kbps chunks take 2 s on a 600 Kbps path: playback never stalls.
        let mut e = engine(&[600.0], 10, fixed_rtt());
        let outcomes = run_greedy(&mut e, 0);
        let s = e.summary().unwrap();
        assert_eq!(s.rebuffer_s, 0.0);
        assert!((s.startup_delay_s - 2.0).abs() < 1e-9);
        assert_eq!(s.utility, 0.0);
        assert!((s.end_time_s - 42.0).abs() < 1e-9);
        let total: f64 = outcomes.iter().map(|o| o.reward).sum();
        assert_eq!(total, s.reward);
        assert!(outcomes.last().unwrap().done);
        assert_eq!(e.chunk_records().len(), 10);
    }

    #[test]
    fn rebuffer_polling_counts_stall() {
        // 32 000 kbit chunks on a 3000 Kbps path: 32/3 s per download, so each
        // chunk after the first stalls for 20/3 s.
        let mut e = engine(&[3000.0], 3, fixed_rtt());
        run_greedy(&mut e, 6);
        let s = e.summary().unwrap();
        assert!((s.startup_delay_s - 32.0 / 3.0).abs() < 1e-9);
        let expected = 2.0 * 20.0 / 3.0;
        assert!(s.rebuffer_s >= expected - 1e-9, "{}", s.rebuffer_s);
        assert!(s.rebuffer_s <= expected + 2.0 * 0.05 + 1e-9, "{}", s.rebuffer_s);
        let recs = e.chunk_records();
        for w in recs.windows(2) {
            let gap = w[1].play_time - (w[0].play_time + 4.0);
            assert!((gap - w[1].rebuffer_before_s).abs() < 1e-9);
            assert!(w[1].play_time >= w[1].finish_time);
            assert!(w[1].play_time - w[1].finish_time < 0.05 + 1e-9);
        }
    }

    #[test]
    fn full_window_pauses_and_cap_holds() {
        // W = 8 lets the buffer reach the 30 s cap on a fast path.
        let config = EngineConfig {
            window: Some(8),
            record_events: true,
            ..fixed_rtt()
        };
        let mut e = engine(&[100_000.0], 40, config);
        run_greedy(&mut e, 0);
        let s = e.summary().unwrap().clone();
        assert!(s.max_buffer_s >= 30.0);
        assert!(s.max_buffer_s <= 34.0);
        assert!(e.events().iter().any(|ev| ev.kind == EventKind::Pause));
        for r in e.chunk_records() {
            assert!(r.buffer_at_request_s < 30.0);
        }
        let pauses: Vec<&EventRecord> = e
            .events()
            .iter()
            .filter(|ev| ev.kind == EventKind::Pause)
            .collect();
        for w in pauses.windows(2) {
            let dt = w[1].time - w[0].time;
            assert!(dt > 0.05 - 1e-9, "pause spacing {dt}");
        }
    }

    #[test]
    fn step_rewards_sum_to_episode_reward() {
        let config = EngineConfig::default();
        let mut e = engine(&[1800.0, 600.0], 60, config);
        let outcomes = run_greedy(&mut e, 4);
        let s = e.summary().unwrap();
        let total: f64 = outcomes.iter().map(|o| o.reward).sum();
        assert!((total - s.reward).abs() <= 1e-9 * s.reward.abs().max(1.0));
        let played: usize = outcomes.iter().map(|o| o.played.len()).sum();
        assert_eq!(played, 60);
        let re = e
            .episode_log()
            .recompute(e.manifest().ladder().utilities(), 4.0, &e.config().reward);
        assert!((re.reward - s.reward).abs() <= 1e-9 * s.reward.abs().max(1.0));
    }

    #[test]
    fn finished_engine_rejects_calls() {
        let mut e = engine(&[5000.0], 2, fixed_rtt());
        run_greedy(&mut e, 0);
        assert_eq!(e.advance_until_decision(), Err(EngineError::Finished));
        assert_eq!(
            e.apply_action(0, ChunkRequest { index_offset: 1, level: 0 }),
            Err(EngineError::Finished)
        );
    }

    #[test]
    fn rlags_rejects_non_greedy_index() {
        let config = EngineConfig {
            action_space: ActionSpaceKind::Rlags,
            ..fixed_rtt()
        };
        let mut e = engine(&[2000.0], 10, config);
        e.advance_until_decision().unwrap();
        assert!(e.apply_action(0, ChunkRequest { index_offset: 2, level: 0 }).is_err());
        let info = e.apply_flat(0, 3).unwrap();
        assert_eq!((info.index, info.level), (1, 3));
    }

    #[test]
    fn uniform_rtt_in_range() {
        let mut e = engine(&[2000.0, 2000.0], 60, EngineConfig::default());
        run_greedy(&mut e, 2);
        for r in e.chunk_records() {
            assert!((0.05..=0.1).contains(&r.rtt_s));
        }
    }
}
