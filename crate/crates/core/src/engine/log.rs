//! Per-episode records and their line-delimited export.
//!
//! An episode exports as one `chunk` line per chunk in index order and a
//! closing `episode` line. Every line is a JSON object tagged by `type` and
//! carrying the episode number.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::EventKind;
use crate::media::RewardConfig;

/// Life of one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub index: usize,
    pub level: usize,
    pub path: usize,
    pub request_time: f64,
    pub finish_time: f64,
    pub play_time: f64,
    /// Stall between the previous chunk's end and this chunk's start.
    pub rebuffer_before_s: f64,
    pub rtt_s: f64,
    pub bytes: u64,
    pub buffer_at_request_s: f64,
}

/// QoE decomposition of a finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub reward: f64,
    pub utility: f64,
    /// β times the summed utility switch magnitudes.
    pub switch_penalty: f64,
    /// γ times the stalled seconds.
    pub rebuffer_penalty: f64,
    pub rebuffer_s: f64,
    pub startup_delay_s: f64,
    pub end_time_s: f64,
    pub decisions: usize,
    pub max_buffer_s: f64,
    /// Seed of the engine's RTT draws.
    pub rtt_seed: u64,
    pub trace_ids: Vec<String>,
    pub trace_offsets_s: Vec<f64>,
}

/// One processed event, kept when event recording is on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    pub path: Option<usize>,
    /// Buffer after the event was handled.
    pub buffer_s: f64,
    pub playing: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub chunks: Vec<ChunkRecord>,
    pub summary: Option<EpisodeSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventRecord>,
}

#[derive(Serialize)]
struct Line<'a, T> {
    #[serde(rename = "type")]
    kind: &'static str,
    episode: usize,
    #[serde(flatten)]
    record: &'a T,
}

fn write_line<W: Write, T: Serialize>(
    out: &mut W,
    kind: &'static str,
    episode: usize,
    record: &T,
) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, &Line { kind, episode, record })?;
    out.write_all(b"\n")
}

impl EpisodeLog {
    /// Recomputes the decomposition from the chunk records alone: utilities and
    /// switches from the levels in play order, stalls from the play times.
    pub fn recompute(&self, utilities: &[f64], chunk_length_s: f64, cfg: &RewardConfig) -> Recomputed {
        let mut chunks: Vec<&ChunkRecord> = self.chunks.iter().collect();
        chunks.sort_by_key(|c| c.index);
        let mut utility = 0.0;
        let mut switches = 0.0;
        let mut stall = 0.0;
        for (i, c) in chunks.iter().enumerate() {
            let q = utilities[c.level];
            utility += q;
            if i > 0 {
                switches += (q - utilities[chunks[i - 1].level]).abs();
                stall += c.play_time - (chunks[i - 1].play_time + chunk_length_s);
            }
        }
        Recomputed {
            utility,
            switch_penalty: cfg.beta * switches,
            rebuffer_penalty: cfg.gamma * stall,
            rebuffer_s: stall,
            reward: utility - cfg.beta * switches - cfg.gamma * stall,
        }
    }

    /// Writes the chunk and episode lines (no file header).
    pub fn write_jsonl<W: Write>(&self, episode: usize, mut out: W) -> std::io::Result<()> {
        for c in &self.chunks {
            write_line(&mut out, "chunk", episode, c)?;
        }
        if let Some(s) = &self.summary {
            write_line(&mut out, "episode", episode, s)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self, episode: usize) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(episode, &mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recomputed {
    pub reward: f64,
    pub utility: f64,
    pub switch_penalty: f64,
    pub rebuffer_penalty: f64,
    pub rebuffer_s: f64,
}
