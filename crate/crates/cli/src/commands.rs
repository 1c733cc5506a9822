use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use msdash_core::bridge::BridgeServer;
use msdash_core::env::{EnvConfig, EnvError, EnvSetup, MultiPathEnv, SplitChoice};
use msdash_core::policy::{PolicyError, PolicySpec};
use msdash_core::runner::{
    run_batch, run_episode, timeline as timeline_records, write_episodes, write_summary_csv,
    FileHeader, RunError, RunSummary,
};
use msdash_core::trace::synth::{self, BandPoolSpec};
use msdash_core::trace::{load_traces, BandwidthTrace, TraceError, TraceFormat};

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_POLICY: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_TRACE: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    error: anyhow::Error,
}

impl CliError {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    pub fn code(&self) -> u8 {
        self.code
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        let code = match e {
            EnvError::Config(_) | EnvError::Media(_) | EnvError::Engine(_) => EXIT_CONFIG,
            EnvError::Trace(_) => EXIT_TRACE,
            _ => EXIT_OTHER,
        };
        Self::new(code, e)
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        let code = match e {
            PolicyError::UnknownPolicy(_) | PolicyError::External => EXIT_POLICY,
            PolicyError::Script { .. } => EXIT_TRACE,
            _ => EXIT_OTHER,
        };
        Self::new(code, e)
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Env(e) => e.into(),
            RunError::Policy(e) => e.into(),
            RunError::Io(e) => Self::new(EXIT_OTHER, e),
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        Self::new(EXIT_TRACE, e)
    }
}

fn other(e: impl Into<anyhow::Error>) -> CliError {
    CliError::new(EXIT_OTHER, e)
}

fn load_setup(
    config: Option<&Path>,
    scenario: Option<&str>,
    split: &str,
    record_events: bool,
) -> Result<Arc<EnvSetup>, CliError> {
    let mut cfg = match config {
        Some(path) => EnvConfig::load(path)?,
        None => EnvConfig::default(),
    };
    if let Some(name) = scenario {
        cfg.apply_scenario(name)?;
    }
    cfg.engine.record_events |= record_events;
    let split: SplitChoice = split
        .parse()
        .map_err(|e: String| CliError::new(EXIT_CONFIG, anyhow!(e)))?;
    Ok(Arc::new(EnvSetup::new(cfg, split)?))
}

/// In-process policies only; `external` belongs to `serve-bridge`.
fn parse_policy(name: &str) -> Result<PolicySpec, CliError> {
    let spec: PolicySpec = name.parse()?;
    if spec == PolicySpec::External {
        return Err(PolicyError::External.into());
    }
    Ok(spec)
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    let file = fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(other)?;
    Ok(BufWriter::new(file))
}

pub struct RunArgs {
    pub config: Option<PathBuf>,
    pub policy: String,
    pub episodes: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub scenario: Option<String>,
    pub split: String,
}

pub fn run(args: RunArgs) -> Result<(), CliError> {
    let spec = parse_policy(&args.policy)?;
    let setup = load_setup(
        args.config.as_deref(),
        args.scenario.as_deref(),
        &args.split,
        false,
    )?;
    let results = run_batch(&setup, &spec, args.episodes, args.seed)?;
    let name = spec.to_string();
    let summary = RunSummary::new(&name, args.seed, &results);
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(other)?;
        let header = FileHeader::new(&setup, &name, args.seed, args.episodes);
        let mut f = create_file(&dir.join("episodes.jsonl"))?;
        write_episodes(&mut f, &header, &results).map_err(other)?;
        f.flush().map_err(other)?;
        let mut f = create_file(&dir.join("summary.csv"))?;
        write_summary_csv(&mut f, &summary).map_err(other)?;
        f.flush().map_err(other)?;
        let json = serde_json::to_string_pretty(&summary).map_err(other)?;
        fs::write(dir.join("summary.json"), json + "\n").map_err(other)?;
    }
    print!("{}", summary.table());
    Ok(())
}

pub fn timeline(
    config: Option<PathBuf>,
    policy: &str,
    seed: u64,
    out: &Path,
    scenario: Option<String>,
    split: &str,
) -> Result<(), CliError> {
    let spec = parse_policy(policy)?;
    let setup = load_setup(config.as_deref(), scenario.as_deref(), split, true)?;
    let mut env = MultiPathEnv::new(Arc::clone(&setup));
    let mut p = spec.build(seed)?;
    let log = run_episode(&mut env, p.as_mut(), seed)?;
    let mut f = create_file(out)?;
    let header = FileHeader::new(&setup, &spec.to_string(), seed, 1);
    serde_json::to_writer(&mut f, &header).map_err(other)?;
    writeln!(f).map_err(other)?;
    for record in timeline_records(&log) {
        serde_json::to_writer(&mut f, &record).map_err(other)?;
        writeln!(f).map_err(other)?;
    }
    f.flush().map_err(other)?;
    if let Some(s) = &log.summary {
        println!(
            "reward {:.4} utility {:.4} switch {:.4} rebuffer {:.4} ({} chunks)",
            s.reward,
            s.utility,
            s.switch_penalty,
            s.rebuffer_penalty,
            log.chunks.len()
        );
    }
    Ok(())
}

/// Equal-width bins over `[min, max]` of `values`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![(lo, hi, values.len())];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

pub fn inspect_trace(path: &Path, format: &str, bins: usize) -> Result<(), CliError> {
    let format: TraceFormat = format
        .parse()
        .map_err(|e: String| CliError::new(EXIT_TRACE, anyhow!(e)))?;
    let traces = load_traces(path, format, None)?;
    if traces.is_empty() {
        return Err(CliError::new(
            EXIT_TRACE,
            anyhow!("{}: no traces found", path.display()),
        ));
    }
    println!(
        "{:<32} {:>8} {:>10} {:>10} {:>10} {:>10}",
        "id", "samples", "duration_s", "mean_kbps", "min_kbps", "max_kbps"
    );
    for t in &traces {
        println!(
            "{:<32} {:>8} {:>10.1} {:>10.1} {:>10.1} {:>10.1}",
            t.id(),
            t.len(),
            t.duration(),
            t.mean_bandwidth(),
            t.min_bandwidth(),
            t.max_bandwidth()
        );
    }
    let means: Vec<f64> = traces.iter().map(BandwidthTrace::mean_bandwidth).collect();
    println!("histogram of trace means ({} traces)", traces.len());
    for (lo, hi, count) in histogram(&means, bins) {
        println!("{lo:>10.1} {hi:>10.1} {count:>6}");
    }
    Ok(())
}

pub enum Shape {
    Constant { kbps: f64 },
    Square { high: f64, low: f64, half_period: f64 },
    Band { low: f64, high: f64 },
}

pub fn gen_traces(
    out: &Path,
    shape: Shape,
    count: usize,
    duration: f64,
    granularity: f64,
    seed: u64,
) -> Result<(), CliError> {
    let bad = |msg: &str| CliError::new(EXIT_CONFIG, anyhow!("{msg}"));
    if !(duration > 0.0 && granularity > 0.0) {
        return Err(bad("duration and granularity must be positive"));
    }
    let traces: Vec<BandwidthTrace> = match shape {
        Shape::Constant { kbps } => {
            if kbps.is_nan() || kbps <= 0.0 {
                return Err(bad("kbps must be positive"));
            }
            (0..count)
                .map(|i| synth::constant(format!("const{i:04}"), kbps, duration, granularity))
                .collect()
        }
        Shape::Square {
            high,
            low,
            half_period,
        } => {
            if !(high > 0.0 && low > 0.0 && half_period > 0.0) {
                return Err(bad("square wave levels and half period must be positive"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|i| {
                    let shift = rand::Rng::gen_range(&mut rng, 0.0..2.0 * half_period);
                    let base = synth::square_wave(
                        format!("square{i:04}"),
                        high,
                        low,
                        half_period,
                        duration + 2.0 * half_period,
                        granularity,
                    );
                    shifted(&base, shift, duration, granularity)
                })
                .collect::<Result<_, _>>()?
        }
        Shape::Band { low, high } => {
            if !(0.0 < low && low < high) {
                return Err(bad("mean band must satisfy 0 < low < high"));
            }
            let spec = BandPoolSpec {
                count,
                mean_kbps: (low, high),
                duration_s: duration,
                granularity_s: granularity,
                ..BandPoolSpec::default()
            };
            synth::band_pool("band", &spec, seed)
        }
    };
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(other)?;
    for t in &traces {
        let file = out.join(format!("{}.csv", t.id()));
        fs::write(&file, t.to_canonical())
            .with_context(|| format!("writing {}", file.display()))
            .map_err(other)?;
    }
    println!("wrote {} traces to {}", traces.len(), out.display());
    Ok(())
}

/// `base` sampled from `shift` seconds on, `duration` long.
fn shifted(
    base: &BandwidthTrace,
    shift: f64,
    duration: f64,
    granularity: f64,
) -> Result<BandwidthTrace, CliError> {
    let n = ((duration / granularity).round() as usize).max(1);
    let samples: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let t = i as f64 * granularity;
            (t, base.bandwidth_at(t + shift))
        })
        .collect();
    Ok(BandwidthTrace::new(base.id(), &samples, granularity)?)
}

pub fn serve_bridge(
    config: Option<PathBuf>,
    addr: &str,
    scenario: Option<String>,
    sessions: Option<usize>,
    split: &str,
) -> Result<(), CliError> {
    let setup = load_setup(config.as_deref(), scenario.as_deref(), split, false)?;
    let server = BridgeServer::bind(addr, setup)
        .with_context(|| format!("binding {addr}"))
        .map_err(other)?;
    let local = server.local_addr().map_err(other)?;
    println!("listening on {local}");
    std::io::stdout().flush().map_err(other)?;
    server.serve(sessions).map_err(other)
}
