//! Batch evaluation: many episodes of one policy, merged by episode number.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EpisodeLog, EventKind};
use crate::env::{EnvError, EnvSetup, MultiPathEnv};
use crate::policy::{policy_decide, Policy, PolicyError, PolicySpec};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub seed: u64,
    pub log: EpisodeLog,
}

/// Seed of episode `i` in a batch starting at `base_seed`.
pub fn episode_seed(base_seed: u64, i: usize) -> u64 {
    base_seed.wrapping_add(i as u64)
}

/// Plays one episode with an in-process policy.
pub fn run_episode(
    env: &mut MultiPathEnv,
    policy: &mut dyn Policy,
    seed: u64,
) -> Result<EpisodeLog, RunError> {
    let mut reply = env.reset(Some(seed))?;
    while !reply.done {
        let action = {
            let ctx = env
                .decision_context(&reply.info.raw_obs)
                .expect("a decision is pending");
            policy_decide(policy, &ctx, env.mask())?
        };
        reply = env.step(action)?;
    }
    Ok(env.engine().expect("reset built an engine").episode_log())
}

/// Runs `episodes` episodes in parallel; each worker owns its environment and
/// policy, seeded from the episode seed.
pub fn run_batch(
    setup: &Arc<EnvSetup>,
    spec: &PolicySpec,
    episodes: usize,
    base_seed: u64,
) -> Result<Vec<EpisodeResult>, RunError> {
    (0..episodes)
        .into_par_iter()
        .map(|episode| {
            let seed = episode_seed(base_seed, episode);
            let mut policy = spec.build(seed)?;
            let mut env = MultiPathEnv::new(Arc::clone(setup));
            let log = run_episode(&mut env, policy.as_mut(), seed)?;
            Ok(EpisodeResult { episode, seed, log })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub episodes: usize,
    pub seed: u64,
    pub reward: Stat,
    pub utility: Stat,
    pub switch_penalty: Stat,
    pub rebuffer_penalty: Stat,
    pub rebuffer_s: Stat,
    pub startup_delay_s: Stat,
}

impl RunSummary {
    pub fn new(policy: &str, seed: u64, results: &[EpisodeResult]) -> Self {
        let column = |f: fn(&crate::engine::EpisodeSummary) -> f64| -> Stat {
            let v: Vec<f64> = results
                .iter()
                .filter_map(|r| r.log.summary.as_ref())
                .map(f)
                .collect();
            Stat::of(&v)
        };
        Self {
            policy: policy.to_string(),
            episodes: results.len(),
            seed,
            reward: column(|s| s.reward),
            utility: column(|s| s.utility),
            switch_penalty: column(|s| s.switch_penalty),
            rebuffer_penalty: column(|s| s.rebuffer_penalty),
            rebuffer_s: column(|s| s.rebuffer_s),
            startup_delay_s: column(|s| s.startup_delay_s),
        }
    }

    pub const CSV_COLUMNS: &'static str = "policy,episodes,mean_reward,std_reward,mean_utility,std_utility,mean_switch_penalty,std_switch_penalty,mean_rebuffer_penalty,std_rebuffer_penalty,mean_rebuffer_s,mean_startup_delay_s";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.policy,
            self.episodes,
            self.reward.mean,
            self.reward.std,
            self.utility.mean,
            self.utility.std,
            self.switch_penalty.mean,
            self.switch_penalty.std,
            self.rebuffer_penalty.mean,
            self.rebuffer_penalty.std,
            self.rebuffer_s.mean,
            self.startup_delay_s.mean,
        )
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let row = |name: &str, s: &Stat| format!("{name:<18}{:>12.4} ± {:<10.4}\n", s.mean, s.std);
        let mut out = format!(
            "policy {} | {} episodes | seed {}\n",
            self.policy, self.episodes, self.seed
        );
        out.push_str(&row("reward", &self.reward));
        out.push_str(&row("utility", &self.utility));
        out.push_str(&row("switch penalty", &self.switch_penalty));
        out.push_str(&row("rebuffer penalty", &self.rebuffer_penalty));
        out.push_str(&row("rebuffer (s)", &self.rebuffer_s));
        out.push_str(&row("startup delay (s)", &self.startup_delay_s));
        out
    }
}

/// First line of every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHeader {
    #[serde(rename = "type")]
    pub kind: String,
    pub seed: u64,
    pub policy: String,
    pub episodes: usize,
    pub paths: usize,
    pub num_chunks: usize,
    pub window: usize,
    pub action_space: String,
}

impl FileHeader {
    pub fn new(setup: &EnvSetup, policy: &str, seed: u64, episodes: usize) -> Self {
        Self {
            kind: "header".into(),
            seed,
            policy: policy.to_string(),
            episodes,
            paths: setup.pools().len(),
            num_chunks: setup.manifest().num_chunks(),
            window: setup.layout().window,
            action_space: setup.action_space().kind.to_string(),
        }
    }
}

/// Header line, then every episode's chunk and episode lines in episode order.
pub fn write_episodes<W: Write>(
    mut out: W,
    header: &FileHeader,
    results: &[EpisodeResult],
) -> std::io::Result<()> {
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for r in results {
        r.log.write_jsonl(r.episode, &mut out)?;
    }
    Ok(())
}

/// `# seed=…` comment, column names, one row.
pub fn write_summary_csv<W: Write>(mut out: W, summary: &RunSummary) -> std::io::Result<()> {
    writeln!(out, "# seed={} policy={}", summary.seed, summary.policy)?;
    writeln!(out, "{}", RunSummary::CSV_COLUMNS)?;
    writeln!(out, "{}", summary.csv_row())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TimelineRecord {
    /// Buffer level after an event.
    Buffer { time: f64, buffer_s: f64 },
    /// A chunk in request order.
    Request {
        index: usize,
        level: usize,
        path: usize,
        request_time: f64,
        finish_time: f64,
        play_time: f64,
    },
}

/// Buffer series (one sample per processed event) and chunk requests in
/// request order.
pub fn timeline(log: &EpisodeLog) -> Vec<TimelineRecord> {
    let mut out: Vec<TimelineRecord> = log
        .events
        .iter()
        .filter(|e| e.kind != EventKind::Pause)
        .map(|e| TimelineRecord::Buffer {
            time: e.time,
            buffer_s: e.buffer_s,
        })
        .collect();
    let mut chunks = log.chunks.clone();
    chunks.sort_by(|a, b| a.request_time.total_cmp(&b.request_time).then(a.path.cmp(&b.path)));
    out.extend(chunks.into_iter().map(|c| TimelineRecord::Request {
        index: c.index,
        level: c.level,
        path: c.path,
        request_time: c.request_time,
        finish_time: c.finish_time,
        play_time: c.play_time,
    }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, PathSource, SplitChoice};

    fn setup(kbps: f64) -> Arc<EnvSetup> {
        let cfg = EnvConfig {
            paths: vec![PathSource::constant(kbps, 10), PathSource::constant(kbps, 10)],
            ..EnvConfig::default()
        };
        Arc::new(EnvSetup::new(cfg, SplitChoice::Test).unwrap())
    }

    #[test]
    fn stats() {
        let s = Stat::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-12);
        assert_eq!(Stat::of(&[5.0]).std, 0.0);
    }

    #[test]
    fn batch_is_ordered_and_reproducible() {
        let s = setup(2000.0);
        let a = run_batch(&s, &PolicySpec::Random, 6, 40).unwrap();
        let b = run_batch(&s, &PolicySpec::Random, 6, 40).unwrap();
        assert_eq!(a, b);
        for (i, r) in a.iter().enumerate() {
            assert_eq!((r.episode, r.seed), (i, 40 + i as u64));
            assert_eq!(r.log.chunks.len(), 60);
        }
        let summary = RunSummary::new("random", 40, &a);
        let identity = summary.utility.mean - summary.switch_penalty.mean - summary.rebuffer_penalty.mean;
        assert!((summary.reward.mean - identity).abs() < 1e-9);
    }

    #[test]
    fn episodes_file_layout() {
        let s = setup(2000.0);
        let results = run_batch(&s, &PolicySpec::Throughput, 2, 1).unwrap();
        let mut buf = Vec::new();
        write_episodes(&mut buf, &FileHeader::new(&s, "throughput", 1, 2), &results).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<serde_json::Value> =
            text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 1 + 2 * 61);
        assert_eq!(lines[0]["type"], "header");
        assert_eq!(lines[0]["seed"], 1);
        assert_eq!(lines[1]["type"], "chunk");
        assert_eq!(lines[61]["type"], "episode");
        assert_eq!(lines[62]["episode"], 1);
    }
}
