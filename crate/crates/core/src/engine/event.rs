use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EventKind {
    /// A path is free: its download (if any) just completed.
    Down,
    /// A path re-checks whether it may request again.
    Pause,
    /// Playback is due to start the next chunk.
    Play,
    /// Playback re-checks whether the stalled chunk has arrived.
    Rebuffer,
}

impl EventKind {
    /// Rank at equal timestamps: PLAY, REBUFFER, DOWN (by path), PAUSE.
    fn class(self) -> u8 {
        match self {
            Self::Play => 0,
            Self::Rebuffer => 1,
            Self::Down => 2,
            Self::Pause => 3,
        }
    }
}

/// A scheduled simulation event. `path` is set for DOWN and PAUSE only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub timestamp: f64,
    pub kind: EventKind,
    pub path: Option<usize>,
}

impl SimEvent {
    pub fn down(timestamp: f64, path: usize) -> Self {
        Self {
            timestamp,
            kind: EventKind::Down,
            path: Some(path),
        }
    }

    pub fn pause(timestamp: f64, path: usize) -> Self {
        Self {
            timestamp,
            kind: EventKind::Pause,
            path: Some(path),
        }
    }

    pub fn play(timestamp: f64) -> Self {
        Self {
            timestamp,
            kind: EventKind::Play,
            path: None,
        }
    }

    pub fn rebuffer(timestamp: f64) -> Self {
        Self {
            timestamp,
            kind: EventKind::Rebuffer,
            path: None,
        }
    }
}

#[derive(Debug)]
struct Queued {
    event: SimEvent,
    seq: u64,
}

impl Queued {
    fn key(&self) -> (f64, u8, usize, u64) {
        let path = match self.event.kind {
            EventKind::Down => self.event.path.unwrap_or(0),
            _ => 0,
        };
        (self.event.timestamp, self.event.kind.class(), path, self.seq)
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        let (ta, ca, pa, sa) = self.key();
        let (tb, cb, pb, sb) = other.key();
        // reversed: BinaryHeap is a max-heap
        tb.total_cmp(&ta)
            .then(cb.cmp(&ca))
            .then(pb.cmp(&pa))
            .then(sb.cmp(&sa))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

/// Min-queue on `(timestamp, kind rank, path, insertion order)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Queued>,
    seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, event: SimEvent) {
        self.heap.push(Queued {
            event,
            seq: self.seq,
        });
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop().map(|q| q.event)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SimEvent> {
        self.heap.iter().map(|q| &q.event)
    }

    pub fn clear(&mut self) {
        self.heap.clear();
        self.seq = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_breaking() {
        let mut q = EventQueue::default();
        q.push(SimEvent::pause(1.0, 0));
        q.push(SimEvent::down(1.0, 1));
        q.push(SimEvent::down(1.0, 0));
        q.push(SimEvent::rebuffer(1.0));
        q.push(SimEvent::play(1.0));
        q.push(SimEvent::pause(1.0, 1));
        q.push(SimEvent::down(0.5, 1));
        let order: Vec<(EventKind, Option<usize>)> =
            std::iter::from_fn(|| q.pop()).map(|e| (e.kind, e.path)).collect();
        assert_eq!(
            order,
            vec![
                (EventKind::Down, Some(1)),
                (EventKind::Play, None),
                (EventKind::Rebuffer, None),
                (EventKind::Down, Some(0)),
                (EventKind::Down, Some(1)),
                (EventKind::Pause, Some(0)),
                (EventKind::Pause, Some(1)),
            ]
        );
    }
}
