use serde::{Deserialize, Serialize};

/// Which decisions the agent makes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionSpaceKind {
    /// Quality level only; the chunk index comes from greedy scheduling.
    Rlags,
    /// Chunk index offset and quality level.
    Rlas,
}

impl std::str::FromStr for ActionSpaceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rlags" => Ok(Self::Rlags),
            "rlas" => Ok(Self::Rlas),
            other => Err(format!("unknown action space {other:?}")),
        }
    }
}

impl std::fmt::Display for ActionSpaceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Rlags => "rlags",
            Self::Rlas => "rlas",
        })
    }
}

/// A request for chunk `playing + index_offset` at `level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChunkRequest {
    pub index_offset: usize,
    pub level: usize,
}

/// Set of 1-based chunk indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChunkSet {
    bits: Vec<bool>,
}

impl ChunkSet {
    pub fn new(num_chunks: usize) -> Self {
        Self {
            bits: vec![false; num_chunks + 1],
        }
    }

    pub fn from_indices(num_chunks: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::new(num_chunks);
        for i in indices {
            s.insert(i);
        }
        s
    }

    pub fn contains(&self, index: usize) -> bool {
        self.bits.get(index).copied().unwrap_or(false)
    }

    /// Returns false if the index was already present.
    pub fn insert(&mut self, index: usize) -> bool {
        !std::mem::replace(&mut self.bits[index], true)
    }

    pub fn len(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
    }
}

/// Flat discrete action space.
///
/// RLAS actions are row-major by offset then level: flat `a` decodes to
/// offset `a / L + 1` and level `a % L`. This layout is part of the bridge
/// wire format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub kind: ActionSpaceKind,
    pub window: usize,
    pub levels: usize,
}

impl ActionSpace {
    pub fn new(kind: ActionSpaceKind, window: usize, levels: usize) -> Self {
        Self {
            kind,
            window,
            levels,
        }
    }

    pub fn size(&self) -> usize {
        match self.kind {
            ActionSpaceKind::Rlags => self.levels,
            ActionSpaceKind::Rlas => self.window * self.levels,
        }
    }

    /// RLAS encoding of `(offset, level)`.
    pub fn encode(&self, offset: usize, level: usize) -> usize {
        debug_assert!((1..=self.window).contains(&offset) && level < self.levels);
        (offset - 1) * self.levels + level
    }

    /// RLAS decoding; `None` when `flat` is out of range.
    pub fn decode(&self, flat: usize) -> Option<ChunkRequest> {
        (flat < self.window * self.levels).then(|| ChunkRequest {
            index_offset: flat / self.levels + 1,
            level: flat % self.levels,
        })
    }

    /// Turns a flat action into the concrete request it stands for.
    pub fn to_request(
        &self,
        flat: usize,
        playing: usize,
        requested: &ChunkSet,
        num_chunks: usize,
    ) -> Option<ChunkRequest> {
        match self.kind {
            ActionSpaceKind::Rlas => self.decode(flat),
            ActionSpaceKind::Rlags => {
                if flat >= self.levels {
                    return None;
                }
                let index = greedy_next_index(playing, requested, num_chunks, self.window)?;
                Some(ChunkRequest {
                    index_offset: index - playing,
                    level: flat,
                })
            }
        }
    }

    /// Flat action selecting `level` for the greedy chunk, or `None` when the
    /// window has nothing left to request.
    pub fn greedy_action(
        &self,
        level: usize,
        playing: usize,
        requested: &ChunkSet,
        num_chunks: usize,
    ) -> Option<usize> {
        let index = greedy_next_index(playing, requested, num_chunks, self.window)?;
        Some(match self.kind {
            ActionSpaceKind::Rlags => level,
            ActionSpaceKind::Rlas => self.encode(index - playing, level),
        })
    }
}

/// Validity bitmap over an [`ActionSpace`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionMask {
    bits: Vec<bool>,
}

impl ActionMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_valid(&self, action: usize) -> bool {
        self.bits.get(action).copied().unwrap_or(false)
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|b| *b)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn valid_actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
    }

    /// Closest valid action by flat distance, ties going to the lower index.
    pub fn nearest_valid(&self, action: usize) -> Option<usize> {
        self.valid_actions()
            .min_by_key(|&a| (a.abs_diff(action), a))
    }
}

/// Valid actions at a decision point.
///
/// An RLAS offset `c` is valid iff `1 ≤ c ≤ min(W, N − playing)` and chunk
/// `playing + c` has never been requested. For RLAGS every level is valid as
/// soon as greedy scheduling has a chunk to request.
pub fn compute_mask(
    space: &ActionSpace,
    playing: usize,
    requested: &ChunkSet,
    num_chunks: usize,
) -> ActionMask {
    let reach = space.window.min(num_chunks.saturating_sub(playing));
    match space.kind {
        ActionSpaceKind::Rlas => {
            let mut bits = vec![false; space.size()];
            for offset in 1..=reach {
                if !requested.contains(playing + offset) {
                    let row = (offset - 1) * space.levels;
                    bits[row..row + space.levels].fill(true);
                }
            }
            ActionMask { bits }
        }
        ActionSpaceKind::Rlags => {
            let open = (1..=reach).any(|c| !requested.contains(playing + c));
            ActionMask {
                bits: vec![open; space.levels],
            }
        }
    }
}

/// Smallest chunk index in `[playing + 1, min(playing + window, N)]` that has
/// not been requested.
pub fn greedy_next_index(
    playing: usize,
    requested: &ChunkSet,
    num_chunks: usize,
    window: usize,
) -> Option<usize> {
    let last = (playing + window).min(num_chunks);
    (playing + 1..=last).find(|&i| !requested.contains(i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const L: usize = 7;

    fn rlas(w: usize) -> ActionSpace {
        ActionSpace::new(ActionSpaceKind::Rlas, w, L)
    }

    #[test]
    fn sizes() {
        assert_eq!(ActionSpace::new(ActionSpaceKind::Rlags, 7, L).size(), 7);
        assert_eq!(rlas(7).size(), 49);
    }

    #[test]
    fn mask_near_end_of_video() {
        let m = compute_mask(&rlas(7), 58, &ChunkSet::new(60), 60);
        assert_eq!(m.count(), 2 * L);
        let offsets: Vec<usize> = m
            .valid_actions()
            .map(|a| rlas(7).decode(a).unwrap().index_offset)
            .collect();
        assert!(offsets.iter().all(|o| *o == 1 || *o == 2));
    }

    #[test]
    fn mask_skips_requested_chunk() {
        // playing 4, chunk 5 already requested
        let space = ActionSpace::new(ActionSpaceKind::Rlas, 7, 3);
        let m = compute_mask(&space, 4, &ChunkSet::from_indices(60, [1, 2, 3, 4, 5]), 60);
        for offset in 1..=7 {
            for level in 0..3 {
                assert_eq!(m.is_valid(space.encode(offset, level)), offset != 1);
            }
        }
    }

    #[test]
    fn full_window_masks_everything() {
        let req = ChunkSet::from_indices(60, 1..=11);
        assert!(!compute_mask(&rlas(7), 4, &req, 60).any());
        let rlags = ActionSpace::new(ActionSpaceKind::Rlags, 7, L);
        assert!(!compute_mask(&rlags, 4, &req, 60).any());
        assert_eq!(compute_mask(&rlags, 4, &ChunkSet::new(60), 60).count(), L);
    }

    #[test]
    fn greedy_examples() {
        let req = ChunkSet::from_indices(60, 1..=5);
        assert_eq!(greedy_next_index(4, &req, 60, 7), Some(6));
        assert_eq!(greedy_next_index(0, &ChunkSet::new(60), 60, 7), Some(1));
        let req = ChunkSet::from_indices(60, 1..=7);
        assert_eq!(greedy_next_index(4, &req, 60, 7), Some(8));
        let req = ChunkSet::from_indices(60, 1..=11);
        assert_eq!(greedy_next_index(4, &req, 60, 7), None);
    }

    #[test]
    fn figure_example_request() {
        // playing chunk 4, action (3, 2) requests chunk 7 at level 2
        let space = ActionSpace::new(ActionSpaceKind::Rlas, 4, 3);
        let flat = space.encode(3, 2);
        let req = space.to_request(flat, 4, &ChunkSet::new(20), 20).unwrap();
        assert_eq!(4 + req.index_offset, 7);
        assert_eq!(req.level, 2);
    }

    #[test]
    fn rlags_resolves_to_greedy_chunk() {
        let space = ActionSpace::new(ActionSpaceKind::Rlags, 7, L);
        let req = ChunkSet::from_indices(60, 1..=5);
        let r = space.to_request(3, 4, &req, 60).unwrap();
        assert_eq!((r.index_offset, r.level), (2, 3));
        assert!(space.to_request(L, 4, &req, 60).is_none());
        assert_eq!(space.greedy_action(3, 4, &req, 60), Some(3));
        assert_eq!(rlas(7).greedy_action(3, 4, &req, 60), Some(rlas(7).encode(2, 3)));
    }

    #[test]
    fn nearest_valid_prefers_lower_on_ties() {
        let m = ActionMask::from_bits(vec![true, false, false, false, true]);
        assert_eq!(m.nearest_valid(2), Some(0));
        assert_eq!(m.nearest_valid(3), Some(4));
        assert_eq!(ActionMask::from_bits(vec![false; 3]).nearest_valid(1), None);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(w in 1usize..12, l in 2usize..10, o in 0usize..12, lv in 0usize..10) {
            let space = ActionSpace::new(ActionSpaceKind::Rlas, w, l);
            let offset = o % w + 1;
            let level = lv % l;
            let r = space.decode(space.encode(offset, level)).unwrap();
            prop_assert_eq!((r.index_offset, r.level), (offset, level));
            prop_assert!(space.decode(space.size()).is_none());
        }

        #[test]
        fn greedy_streams_stay_gap_free(n in 1usize..80, w in 1usize..10, steps in 0usize..100) {
            let mut req = ChunkSet::new(n);
            let mut playing = 0;
            for s in 0..steps {
                match greedy_next_index(playing, &req, n, w) {
                    Some(i) => { req.insert(i); }
                    None => { playing = (playing + 1).min(n); }
                }
                if s % 3 == 2 && playing < req.len() {
                    playing += 1;
                }
                let got: Vec<usize> = req.iter().collect();
                prop_assert_eq!(got, (1..=req.len()).collect::<Vec<_>>());
            }
        }
    }
}
