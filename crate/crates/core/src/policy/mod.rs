//! Action spaces, validity masks, greedy scheduling and baseline policies.

mod action;
mod rules;

use std::path::{Path, PathBuf};

use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::media::VideoManifest;

pub use action::{
    compute_mask, greedy_next_index, ActionMask, ActionSpace, ActionSpaceKind, ChunkRequest,
    ChunkSet,
};
pub use rules::{
    bola_rule, harmonic_mean, nominal_chunk_bits, throughput_rule, BolaParams, THROUGHPUT_WINDOW,
};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("unknown policy {0:?} (expected throughput, bola, random, fixed:<level>, scripted:<file>, external)")]
    UnknownPolicy(String),
    #[error("level {level} out of range for {levels} levels")]
    LevelOutOfRange { level: usize, levels: usize },
    #[error("policy {policy} chose masked action {action}")]
    MaskedAction { policy: String, action: usize },
    #[error("no valid action available")]
    NoValidAction,
    #[error("script exhausted after {0} actions")]
    ScriptExhausted(usize),
    #[error("reading script {path}: {message}")]
    Script { path: String, message: String },
    #[error("the external policy is driven over the bridge, not in-process")]
    External,
}

/// Everything a policy may look at when a path asks for its next chunk.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub path: usize,
    pub now: f64,
    /// Chunk currently playing, 0 before playback starts.
    pub playing: usize,
    pub num_chunks: usize,
    pub requested: &'a ChunkSet,
    pub buffer_s: f64,
    pub buffer_max_s: f64,
    /// Throughputs (Kbps) of this path's recent downloads, oldest first.
    pub path_throughputs: &'a [f64],
    pub manifest: &'a VideoManifest,
    pub space: &'a ActionSpace,
    /// Raw observation vector.
    pub observation: &'a [f64],
}

impl DecisionContext<'_> {
    fn greedy(&self, level: usize) -> Result<usize, PolicyError> {
        self.space
            .greedy_action(level, self.playing, self.requested, self.num_chunks)
            .ok_or(PolicyError::NoValidAction)
    }
}

pub trait Policy: Send {
    fn name(&self) -> String;

    /// Picks a flat action in the context's action space.
    fn decide(&mut self, ctx: &DecisionContext<'_>, mask: &ActionMask) -> Result<usize, PolicyError>;
}

/// Runs a policy and rejects any answer outside the mask.
pub fn policy_decide(
    policy: &mut dyn Policy,
    ctx: &DecisionContext<'_>,
    mask: &ActionMask,
) -> Result<usize, PolicyError> {
    if !mask.any() {
        return Err(PolicyError::NoValidAction);
    }
    let action = policy.decide(ctx, mask)?;
    if !mask.is_valid(action) {
        return Err(PolicyError::MaskedAction {
            policy: policy.name(),
            action,
        });
    }
    Ok(action)
}

/// Greedy scheduling with the harmonic-mean throughput rule.
#[derive(Debug, Default)]
pub struct ThroughputPolicy;

impl Policy for ThroughputPolicy {
    fn name(&self) -> String {
        "throughput".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>, _mask: &ActionMask) -> Result<usize, PolicyError> {
        ctx.greedy(throughput_rule(ctx.path_throughputs, ctx.manifest.ladder()))
    }
}

/// Greedy scheduling with BOLA-basic.
#[derive(Debug, Default)]
pub struct BolaPolicy {
    params: Option<BolaParams>,
}

impl BolaPolicy {
    pub fn with_params(params: BolaParams) -> Self {
        Self {
            params: Some(params),
        }
    }
}

impl Policy for BolaPolicy {
    fn name(&self) -> String {
        "bola".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>, _mask: &ActionMask) -> Result<usize, PolicyError> {
        let ladder = ctx.manifest.ladder();
        let params = *self.params.get_or_insert_with(|| {
            BolaParams::derive(ladder, ctx.manifest.chunk_length_s(), ctx.buffer_max_s)
        });
        ctx.greedy(bola_rule(ctx.buffer_s, ladder, &params))
    }
}

/// Greedy scheduling at one fixed level.
#[derive(Debug)]
pub struct FixedPolicy {
    pub level: usize,
}

impl Policy for FixedPolicy {
    fn name(&self) -> String {
        format!("fixed:{}", self.level)
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>, _mask: &ActionMask) -> Result<usize, PolicyError> {
        let levels = ctx.manifest.num_levels();
        if self.level >= levels {
            return Err(PolicyError::LevelOutOfRange {
                level: self.level,
                levels,
            });
        }
        ctx.greedy(self.level)
    }
}

/// Uniform over the valid actions.
#[derive(Debug)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn decide(&mut self, _ctx: &DecisionContext<'_>, mask: &ActionMask) -> Result<usize, PolicyError> {
        mask.valid_actions()
            .choose(&mut self.rng)
            .ok_or(PolicyError::NoValidAction)
    }
}

/// Replays a fixed list of flat actions.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    actions: Vec<usize>,
    next: usize,
}

impl ScriptedPolicy {
    pub fn new(actions: Vec<usize>) -> Self {
        Self { actions, next: 0 }
    }

    /// One action per line; blank lines and `#` comments are skipped.
    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let err = |message: String| PolicyError::Script {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut actions = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            actions.push(
                line.parse()
                    .map_err(|_| err(format!("line {}: bad action {line:?}", n + 1)))?,
            );
        }
        Ok(Self::new(actions))
    }
}

impl Policy for ScriptedPolicy {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn decide(&mut self, _ctx: &DecisionContext<'_>, _mask: &ActionMask) -> Result<usize, PolicyError> {
        let a = *self
            .actions
            .get(self.next)
            .ok_or(PolicyError::ScriptExhausted(self.actions.len()))?;
        self.next += 1;
        Ok(a)
    }
}

/// Policy selected by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicySpec {
    Throughput,
    Bola,
    Random,
    Fixed(usize),
    Scripted(PathBuf),
    External,
}

impl std::str::FromStr for PolicySpec {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || PolicyError::UnknownPolicy(s.to_string());
        match s.split_once(':') {
            None => match s {
                "throughput" => Ok(Self::Throughput),
                "bola" => Ok(Self::Bola),
                "random" => Ok(Self::Random),
                "external" => Ok(Self::External),
                _ => Err(unknown()),
            },
            Some(("fixed", level)) => level.parse().map(Self::Fixed).map_err(|_| unknown()),
            Some(("scripted", file)) if !file.is_empty() => Ok(Self::Scripted(file.into())),
            _ => Err(unknown()),
        }
    }
}

impl std::fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Throughput => f.write_str("throughput"),
            Self::Bola => f.write_str("bola"),
            Self::Random => f.write_str("random"),
            Self::Fixed(l) => write!(f, "fixed:{l}"),
            Self::Scripted(p) => write!(f, "scripted:{}", p.display()),
            Self::External => f.write_str("external"),
        }
    }
}

impl PolicySpec {
    /// Instantiates the policy; `seed` only matters for `random`.
    pub fn build(&self, seed: u64) -> Result<Box<dyn Policy>, PolicyError> {
        Ok(match self {
            Self::Throughput => Box::new(ThroughputPolicy),
            Self::Bola => Box::new(BolaPolicy::default()),
            Self::Random => Box::new(RandomPolicy::new(seed)),
            Self::Fixed(level) => Box::new(FixedPolicy { level: *level }),
            Self::Scripted(path) => Box::new(ScriptedPolicy::load(path)?),
            Self::External => return Err(PolicyError::External),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixture {
        manifest: VideoManifest,
        requested: ChunkSet,
        space: ActionSpace,
        history: Vec<f64>,
    }

    impl Fixture {
        fn new(kind: ActionSpaceKind) -> Self {
            Self {
                manifest: VideoManifest::default(),
                requested: ChunkSet::from_indices(60, 1..=5),
                space: ActionSpace::new(kind, 7, 7),
                history: vec![1000.0, 1000.0],
            }
        }

        fn ctx(&self) -> DecisionContext<'_> {
            DecisionContext {
                path: 0,
                now: 10.0,
                playing: 4,
                num_chunks: 60,
                requested: &self.requested,
                buffer_s: 0.0,
                buffer_max_s: 30.0,
                path_throughputs: &self.history,
                manifest: &self.manifest,
                space: &self.space,
                observation: &[],
            }
        }

        fn mask(&self) -> ActionMask {
            compute_mask(&self.space, 4, &self.requested, 60)
        }
    }

    #[test]
    fn throughput_policy_is_greedy_plus_rule() {
        let f = Fixture::new(ActionSpaceKind::Rlas);
        let a = policy_decide(&mut ThroughputPolicy, &f.ctx(), &f.mask()).unwrap();
        let r = f.space.decode(a).unwrap();
        assert_eq!((4 + r.index_offset, r.level), (6, 1));

        let f = Fixture::new(ActionSpaceKind::Rlags);
        assert_eq!(policy_decide(&mut ThroughputPolicy, &f.ctx(), &f.mask()).unwrap(), 1);
    }

    #[test]
    fn fixed_and_bola() {
        let f = Fixture::new(ActionSpaceKind::Rlas);
        let a = policy_decide(&mut FixedPolicy { level: 3 }, &f.ctx(), &f.mask()).unwrap();
        assert_eq!(a, f.space.encode(2, 3));
        assert!(matches!(
            FixedPolicy { level: 9 }.decide(&f.ctx(), &f.mask()),
            Err(PolicyError::LevelOutOfRange { .. })
        ));
        let a = policy_decide(&mut BolaPolicy::default(), &f.ctx(), &f.mask()).unwrap();
        assert_eq!(a, f.space.encode(2, 0));
    }

    #[test]
    fn random_is_seeded_and_valid() {
        let f = Fixture::new(ActionSpaceKind::Rlas);
        let run = |seed| {
            let mut p = RandomPolicy::new(seed);
            (0..50)
                .map(|_| policy_decide(&mut p, &f.ctx(), &f.mask()).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
        assert!(run(11).iter().all(|&a| f.mask().is_valid(a)));
    }

    #[test]
    fn scripted_replays_and_masked_answers_surface() {
        let f = Fixture::new(ActionSpaceKind::Rlas);
        let mut p = ScriptedPolicy::new(vec![7, 0]);
        assert_eq!(policy_decide(&mut p, &f.ctx(), &f.mask()).unwrap(), 7);
        // offset 1 (chunk 5) is already requested
        assert!(matches!(
            policy_decide(&mut p, &f.ctx(), &f.mask()),
            Err(PolicyError::MaskedAction { action: 0, .. })
        ));
        assert!(matches!(
            policy_decide(&mut p, &f.ctx(), &f.mask()),
            Err(PolicyError::ScriptExhausted(2))
        ));
    }

    #[test]
    fn script_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        std::fs::write(&path, "# header\n3\n\n10 # comment\n").unwrap();
        let mut p = ScriptedPolicy::load(&path).unwrap();
        let f = Fixture::new(ActionSpaceKind::Rlas);
        assert_eq!(p.decide(&f.ctx(), &f.mask()).unwrap(), 3);
        assert_eq!(p.decide(&f.ctx(), &f.mask()).unwrap(), 10);
        std::fs::write(&path, "x\n").unwrap();
        assert!(ScriptedPolicy::load(&path).is_err());
    }

    #[test]
    fn names_parse() {
        assert_eq!("throughput".parse::<PolicySpec>().unwrap(), PolicySpec::Throughput);
        assert_eq!("fixed:3".parse::<PolicySpec>().unwrap(), PolicySpec::Fixed(3));
        assert_eq!(
            "scripted:a/b.txt".parse::<PolicySpec>().unwrap(),
            PolicySpec::Scripted("a/b.txt".into())
        );
        assert_eq!("external".parse::<PolicySpec>().unwrap(), PolicySpec::External);
        for bad in ["mpc", "fixed:x", "scripted:", "fixed"] {
            assert!(matches!(bad.parse::<PolicySpec>(), Err(PolicyError::UnknownPolicy(_))), "{bad}");
        }
        assert!(matches!(PolicySpec::External.build(0), Err(PolicyError::External)));
        assert_eq!(PolicySpec::Fixed(2).to_string(), "fixed:2");
    }
}
