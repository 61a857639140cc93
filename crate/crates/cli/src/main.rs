mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "freqsynth", version, about = "Split-band image recovery: simulate, train, reconstruct, evaluate")]
struct Cli {
    /// Key-value config file (`key = value`, `#` comments).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace existing non-empty output directories.
    #[arg(long, global = true)]
    force: bool,
    /// Override any config key, e.g. `--set epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the fully resolved config and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Synthesize (or ingest from PNG) the object set.
    GenDataset,
    /// Apply the forward model to every object.
    Simulate,
    /// Write spectrally pre-modulated copies of the objects.
    Premod,
    /// Train the low-band, high-band and synthesizer networks.
    Train,
    /// Reconstruct the held-out measurements.
    Reconstruct,
    /// Metric tables for the held-out reconstructions.
    Evaluate,
    /// Diagonal PSD comparison against ground truth.
    Psd,
    /// Two-dot resolution test through every stage.
    Restest,
}

fn overrides(cli: &Cli) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = cli.seed {
        out.push(("seed".into(), seed.to_string()));
    }
    if let Some(dir) = &cli.out {
        out.push(("out".into(), dir.display().to_string()));
    }
    Ok(out)
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("FREQSYNTH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("FREQSYNTH_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    init_threads()?;
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides(cli)?).map_err(CliError::Validation)?;
    print!("{}", cfg.render());
    if cli.print_config {
        return Ok(());
    }
    let Some(cmd) = cli.command else {
        return Err(CliError::Validation("no subcommand given; see --help".into()));
    };
    println!();
    let force = cli.force;
    match cmd {
        Command::GenDataset => commands::gen_dataset(&cfg, force),
        Command::Simulate => commands::simulate_cmd(&cfg, force),
        Command::Premod => commands::premod(&cfg, force),
        Command::Train => commands::train(&cfg, force),
        Command::Reconstruct => commands::reconstruct(&cfg, force),
        Command::Evaluate => commands::evaluate(&cfg, force),
        Command::Psd => commands::psd(&cfg, force),
        Command::Restest => commands::restest(&cfg, force),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
