use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use heston32::cli::{exit_code_for, parse_config, run_command, Command, RunConfig};

#[derive(Parser)]
#[command(
    name = "heston32",
    version,
    about = "Positivity-preserving Milstein MLMC for the Heston 3/2-model"
)]
struct Args {
    /// `key = value` config file; missing keys take the defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for CSV files and meta.txt
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core)
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Adaptive MLMC estimate of E[phi(X(T))]
    Price {
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Mean-square error against a fine reference on the same Brownian path
    Converge,
    /// Level-difference variance per level
    Variance,
    /// MLMC cost over a grid of accuracy targets
    Complexity {
        /// Comma-separated accuracy targets
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
    },
    /// Numerical check of the one-sided Lipschitz conditions
    Monotone,
}

fn load(args: &Args) -> heston32::Result<RunConfig> {
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path)?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    match &args.command {
        Cmd::Price { epsilon: Some(e) } => cfg.epsilon = *e,
        Cmd::Complexity {
            epsilons: Some(list),
        } => cfg.epsilons = list.clone(),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cmd = match args.command {
        Cmd::Price { .. } => Command::Price,
        Cmd::Converge => Command::Converge,
        Cmd::Variance => Command::Variance,
        Cmd::Complexity { .. } => Command::Complexity,
        Cmd::Monotone => Command::Monotone,
    };
    let cfg = match load(&args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    match run_command(cmd, &cfg) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            println!("wrote {}", outcome.csv_path.display());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
