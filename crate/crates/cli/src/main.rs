mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};


#[derive(Parser)]
#[command(name = "msdash", version, about = "Multi-path adaptive streaming simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Constant,
    Square,
    Band,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a policy over many episodes.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for episodes.jsonl, summary.csv and summary.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        /// Trace split to draw from (train, test, all); the config's split wins.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Per-trace statistics and a histogram of trace means.
    InspectTrace {
        path: PathBuf,
        #[arg(long, default_value = "canonical")]
        format: String,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Buffer and request series of one episode.
    Timeline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Write synthetic traces in the canonical format, one file per trace.
    GenTraces {
        #[arg(long, value_enum)]
        kind: GenKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Constant rate, or the high level of a square wave.
        #[arg(long, default_value_t = 2000.0)]
        kbps: f64,
        /// Low level of a square wave.
        #[arg(long, default_value_t = 500.0)]
        low_kbps: f64,
        #[arg(long, default_value_t = 10.0)]
        half_period: f64,
        /// Mean band of random-walk traces.
        #[arg(long, num_args = 2, value_names = ["LOW", "HIGH"], default_values_t = [100.0, 2000.0])]
        mean_kbps: Vec<f64>,
        #[arg(long, default_value_t = 600.0)]
        duration: f64,
        #[arg(long, default_value_t = 1.0)]
        granularity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve environment sessions to external trainers.
    ServeBridge {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:5555")]
        addr: String,
        #[arg(long)]
        scenario: Option<String>,
        /// Stop after this many sessions.
        #[arg(long)]
        sessions: Option<usize>,
        #[arg(long, default_value = "train")]
        split: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            policy,
            episodes,
            seed,
            out,
            scenario,
            split,
        } => commands::run(commands::RunArgs {
            config,
            policy,
            episodes,
            seed,
            out,
            scenario,
            split,
        }),
        Command::InspectTrace { path, format, bins } => commands::inspect_trace(&path, &format, bins),
        Command::Timeline {
            config,
            policy,
            seed,
            out,
            scenario,
            split,
        } => commands::timeline(config, &policy, seed, &out, scenario, &split),
        Command::GenTraces {
            kind,
            out,
            count,
            kbps,
            low_kbps,
            half_period,
            mean_kbps,
            duration,
            granularity,
            seed,
        } => {
            let shape = match kind {
                GenKind::Constant => commands::Shape::Constant { kbps },
                GenKind::Square => commands::Shape::Square {
                    high: kbps,
                    low: low_kbps,
                    half_period,
                },
                GenKind::Band => commands::Shape::Band {
                    low: mean_kbps[0],
                    high: mean_kbps[1],
                },
            };
            commands::gen_traces(&out, shape, count, duration, granularity, seed)
        }
        Command::ServeBridge {
            config,
            addr,
            scenario,
            sessions,
            split,
        } => commands::serve_bridge(config, &addr, scenario, sessions, &split),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

