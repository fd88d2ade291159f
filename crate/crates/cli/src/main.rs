//! `nclab`: batch runner for the neural collapse experiments.

mod commands;
mod config;
mod error;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nclab_core::io::Table;

use crate::commands::RunOutcome;
use crate::config::{Command, Manifest, RunConfig, MANIFEST_NAME};
use crate::error::CliError;
use crate::plot::PlotKind;

#[derive(Parser)]
#[command(name = "nclab", version, about = "Neural collapse experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: out/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Closed-form minimizer of the positive feature model.
    UpfmSolve(RunArgs),
    /// Feasibility rate over a (d, sigma) grid.
    FeasibilitySweep(RunArgs),
    /// Train a shallow ReLU network and log collapse metrics.
    Train(RunArgs),
    /// Rank of random ReLU features and the limiting kernel.
    RfRank(RunArgs),
    /// Margins and test error of the two-neuron classifier.
    GenAnalysis(RunArgs),
    /// Monte Carlo checks of the concentration inequalities.
    Probe(RunArgs),
    /// Turn a CSV written by another command into a plotting data file.
    PlotData {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Output file (default: input with a .dat extension).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::UpfmSolve(a) => run(Command::UpfmSolve, a),
        Cmd::FeasibilitySweep(a) => run(Command::FeasibilitySweep, a),
        Cmd::Train(a) => run(Command::Train, a),
        Cmd::RfRank(a) => run(Command::RfRank, a),
        Cmd::GenAnalysis(a) => run(Command::GenAnalysis, a),
        Cmd::Probe(a) => run(Command::Probe, a),
        Cmd::PlotData { input, kind, out } => plot_file(&input, kind, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nclab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command, args: RunArgs) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.threads {
        cfg.threads = Some(t);
    }
    if let Some(o) = &args.out {
        cfg.output_dir = Some(o.clone());
    }
    let mut cfg = cfg.resolve(command)?;
    let out_dir = cfg.output_dir.clone().unwrap_or_else(|| Path::new("out").join(command.name()));
    cfg.output_dir = Some(out_dir.clone());

    let threads = if std::env::var("NCLAB_DETERMINISTIC").is_ok_and(|v| v == "1") { Some(1) } else { cfg.threads };
    if threads == Some(0) {
        return Err(CliError::Config("threads must be at least 1".into()));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CliError::Config(e.to_string()))?;

    let seed = cfg.seed;
    let outcome: RunOutcome = pool.install(|| match command {
        Command::UpfmSolve => commands::upfm_solve(cfg.upfm.as_ref().expect("resolved"), seed),
        Command::FeasibilitySweep => commands::feasibility(cfg.sweep.as_ref().expect("resolved"), seed),
        Command::Train => commands::train(cfg.train.as_ref().expect("resolved"), seed),
        Command::RfRank => commands::rf_rank(cfg.rf_rank.as_ref().expect("resolved"), seed),
        Command::GenAnalysis => commands::gen_analysis(cfg.gen.as_ref().expect("resolved"), seed),
        Command::Probe => commands::probe(cfg.probe.as_ref().expect("resolved"), seed),
    })?;

    std::fs::create_dir_all(&out_dir)?;
    for o in &outcome.outputs {
        std::fs::write(out_dir.join(&o.name), &o.bytes)?;
    }
    let manifest = Manifest {
        tool: format!("nclab {}", env!("CARGO_PKG_VERSION")),
        config: cfg,
        outputs: outcome.outputs.iter().map(|o| o.name.clone()).collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(out_dir.join(MANIFEST_NAME), json + "\n")?;
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn plot_file(input: &Path, kind: PlotKind, out: Option<PathBuf>) -> Result<(), CliError> {
    let file = std::fs::File::open(input).map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
    let table = Table::read(file)?;
    let text = plot::plot_data(&table, kind)?;
    let out = out.unwrap_or_else(|| input.with_extension("dat"));
    std::fs::write(out, text)?;
    Ok(())
}
