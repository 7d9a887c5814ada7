//! Batch command-line driver for the MPC inference compiler.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mpcc_cli::commands;
use mpcc_cli::config::ProjectConfig;
use mpcc_core::pipeline::HummingbirdMode;
use mpcc_core::tuner::Strategy;

#[derive(Parser)]
#[command(
    name = "mpcc",
    version,
    about = "Compiler and two-party MPC simulator for private tensor-graph inference"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Rewrite, lower and typecheck; writes party programs and the static
    /// cost report.
    Compile(CommonArgs),
    /// Search per-site approximation knobs under the quality threshold.
    Tune(CommonArgs),
    /// Execute the compiled programs on the MPC runtime and cross-check the
    /// measured counters.
    Run(CommonArgs),
    /// Print the per-category communication breakdown of the last
    /// compile/run.
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Project configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory (default: "out" next to the config).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    hummingbird: Option<HummingbirdArg>,
    /// Overrides all seeds deterministically.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ring_width: Option<u32>,
    /// Fixed-point scale as a base-2 exponent.
    #[arg(long)]
    scale: Option<u32>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
}

#[derive(Args)]
struct ReportArgs {
    /// Artifact directory to summarize.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum HummingbirdArg {
    Off,
    Static,
    Recorded,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    GreedyLinear,
    HillClimbing,
}

fn apply_overrides(cfg: &mut ProjectConfig, args: &CommonArgs) {
    if let Some(h) = args.hummingbird {
        cfg.hummingbird = match h {
            HummingbirdArg::Off => HummingbirdMode::Off,
            HummingbirdArg::Static => HummingbirdMode::Static,
            HummingbirdArg::Recorded => HummingbirdMode::Recorded,
        };
    }
    if let Some(seed) = args.seed {
        cfg.seeds = mpcc_core::runtime::Seeds { dealer: seed, sharing: [seed ^ 1, seed ^ 2] };
        if let Some(t) = cfg.tuner.as_mut() {
            t.seed = seed;
        }
    }
    if let Some(w) = args.ring_width {
        cfg.ring_width = w;
    }
    if let Some(s) = args.scale {
        cfg.scale = s;
    }
    if let Some(t) = args.threshold {
        if let Some(tc) = cfg.tuner.as_mut() {
            tc.threshold = t;
        }
    }
    if let Some(s) = args.strategy {
        if let Some(tc) = cfg.tuner.as_mut() {
            tc.strategy = match s {
                StrategyArg::GreedyLinear => Strategy::GreedyLinear,
                StrategyArg::HillClimbing => Strategy::HillClimbing,
            };
        }
    }
}

fn run(args: &CommonArgs, f: impl Fn(&ProjectConfig, &std::path::Path, &std::path::Path) -> Result<(), commands::CmdError>) -> ExitCode {
    let (mut cfg, base) = match ProjectConfig::load(&args.config) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("mpcc: stage config: {e}");
            return ExitCode::from(1);
        }
    };
    apply_overrides(&mut cfg, args);
    let out_dir = args.out_dir.clone().unwrap_or_else(|| base.join("out"));
    match f(&cfg, &base, &out_dir) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mpcc: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Compile(args) => run(&args, commands::cmd_compile),
        Cmd::Tune(args) => run(&args, commands::cmd_tune),
        Cmd::Run(args) => run(&args, commands::cmd_run),
        Cmd::Report(args) => match commands::cmd_report(&args.out_dir) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("mpcc: {}", e.message);
                ExitCode::from(e.code)
            }
        },
    }
}
