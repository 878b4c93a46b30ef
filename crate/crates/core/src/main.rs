use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use edd_core::config::Config;
use edd_core::pipeline::{Outcome, Runner, Stage};
use edd_core::Error;

/// Ensemble distribution distillation for sensor-based activity recognition.
#[derive(Debug, Parser)]
#[command(name = "edd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration; omitted sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    /// Overrides `data.dataset`.
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// Overrides `eval.epsilons`, e.g. `0,0.05,0.1`.
    #[arg(long, global = true, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Overrides `data.seeds`, e.g. `0,1,2`.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Overrides `ensemble.members`.
    #[arg(long, global = true)]
    members: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Load, normalize and cache the dataset.
    Prepare,
    /// Pretrain the transformation-recognition network.
    Pretext,
    /// Train the ensemble members.
    Ensemble,
    /// Distill the ensemble into a prior network.
    Distill,
    /// Score every model on clean and perturbed validation data.
    Evaluate,
    /// Aggregate per-seed metrics into JSON, CSV and a text table.
    Report,
    /// Run every stage in order.
    All,
}

fn load_config(cli: &Cli) -> edd_core::Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(d) = &cli.dataset {
        cfg.data.dataset = d.clone();
    }
    if let Some(e) = &cli.eps {
        cfg.eval.epsilons = e.clone();
    }
    if let Some(s) = &cli.seeds {
        cfg.data.seeds = s.clone();
    }
    if let Some(m) = cli.members {
        cfg.ensemble.members = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> edd_core::Result<()> {
    let runner = Runner::new(&cli.run_dir, load_config(cli)?)?;
    let stages: Vec<Stage> = match cli.command {
        Command::Prepare => vec![Stage::Prepare],
        Command::Pretext => vec![Stage::Pretext],
        Command::Ensemble => vec![Stage::Ensemble],
        Command::Distill => vec![Stage::Distill],
        Command::Evaluate => vec![Stage::Evaluate],
        Command::Report => vec![Stage::Report],
        Command::All => Stage::ALL.to_vec(),
    };
    for stage in stages {
        let started = std::time::Instant::now();
        match runner.run(stage)? {
            Outcome::Ran => eprintln!("{stage}: done in {:.1}s", started.elapsed().as_secs_f64()),
            Outcome::UpToDate => eprintln!("{stage}: up to date"),
        }
    }
    if matches!(cli.command, Command::Report | Command::All) {
        let summary = runner.stage_dir(Stage::Report, None).join("summary.txt");
        if let Ok(text) = std::fs::read_to_string(summary) {
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(u8::from(usage));
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_byte(&e))
        }
    }
}

fn exit_byte(e: &Error) -> u8 {
    u8::try_from(e.exit_code()).unwrap_or(1)
}
