//! `kkt-hardnet`: compile constraint files, project points, train and
//! compare models on the registered benchmarks.
//!
//! Exit status is 0 on success, 1 on an error, 2 on bad usage and 3 when
//! training diverged after writing partial outputs. Set `KKT_HARDNET_LOG`
//! to `error`, `info` or `debug` for logging.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use kkt_hardnet::compiler::MultiplierMode;

use commands::{CompileArgs, Diverged, ProjectArgs};
use config::Config;
use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "kkt-hardnet", version, about = "Hard-constrained neural networks through KKT projection")]
struct Cli {
    /// Network initialization and batch order; overrides `bench.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 makes runs bit-reproducible.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (the output CSV for `project`).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// TOML config with `[solver]`, `[net]` and `[bench]` tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Multipliers {
    Positive,
    Signed,
    Reject,
}

impl From<Multipliers> for MultiplierMode {
    fn from(m: Multipliers) -> Self {
        match m {
            Multipliers::Positive => MultiplierMode::Positive,
            Multipliers::Signed => MultiplierMode::Signed,
            Multipliers::Reject => MultiplierMode::Reject,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Compile a constraint file into a projection system.
    Compile {
        constraints: PathBuf,
        /// System file; defaults to `<out>/system.txt`.
        #[arg(long)]
        emit_system: Option<PathBuf>,
        /// Stop after the log-exp transform of the constraints.
        #[arg(long)]
        transform_only: bool,
        #[arg(long, value_enum, default_value = "positive")]
        multipliers: Multipliers,
    },
    /// Project rows of `--y0` at inputs `--x` with a compiled system.
    Project {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y0: PathBuf,
    },
    /// Train one model on a benchmark.
    Train {
        benchmark: String,
        /// mlp, pinn or hardnet.
        mode: String,
        /// PINN penalty weight.
        #[arg(long)]
        omega: Option<f64>,
    },
    /// Run the three-mode comparison of a results table (t1 to t5).
    Reproduce { table: String },
    /// List registered benchmarks.
    BenchList,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.bench.seed = s;
    }
    let argv: Vec<String> = std::env::args().collect();
    let mut manifest = RunManifest::new(argv, cfg.clone(), cli.threads);
    match cli.command {
        Cmd::Compile {
            constraints,
            emit_system,
            transform_only,
            multipliers,
        } => {
            let system = emit_system.unwrap_or_else(|| cli.out.join("system.txt"));
            let args = CompileArgs {
                constraints: &constraints,
                system,
                multipliers: multipliers.into(),
                transform_only,
            };
            commands::compile(&args, &mut manifest)
        }
        Cmd::Project { system, x, y0 } => {
            let out = if cli.out.extension().is_some_and(|e| e == "csv") {
                cli.out.clone()
            } else {
                cli.out.join("projected.csv")
            };
            let args = ProjectArgs {
                system: &system,
                x: &x,
                y0: &y0,
                out,
            };
            commands::project(&args, &cfg, &mut manifest)
        }
        Cmd::Train { benchmark, mode, omega } => {
            let mode = commands::parse_mode(&mode, omega)?;
            commands::train_one(&benchmark, mode, &cfg, &cli.out, &mut manifest)
        }
        Cmd::Reproduce { table } => commands::reproduce(&table, &cfg, &cli.out, &mut manifest),
        Cmd::BenchList => {
            commands::bench_list();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KKT_HARDNET_LOG", "error")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Diverged>().is_some() {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
