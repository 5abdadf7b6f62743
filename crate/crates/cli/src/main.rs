//! `sgvf`: waypoint generation, training, simulation and diagnostics from
//! one plain-text configuration.

mod commands;
mod fail;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sgvf::config::RunConfig;

use crate::fail::Failure;

#[derive(Parser, Debug)]
#[command(name = "sgvf", version, about = "Score-induced guiding vector fields from waypoint clouds")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, overriding `out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Global seed, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Inputs {
    /// Waypoint CSV; generated from the configured scenario when absent.
    #[arg(long, value_name = "PATH")]
    pub waypoints: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct Models {
    #[arg(long, value_name = "PATH")]
    pub score: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub tangent: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the scenario's waypoints.
    Gen,
    /// Train the score network by denoising score matching.
    TrainScore {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Train the tangent network on top of a frozen score network.
    TrainTangent {
        #[arg(long, value_name = "PATH")]
        score: PathBuf,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Integrate agents through the mixed field.
    Simulate {
        #[command(flatten)]
        models: Models,
        #[command(flatten)]
        inputs: Inputs,
        /// Start point `x,y`; repeatable. Replaces `sim.starts`.
        #[arg(long = "start", value_name = "X,Y", allow_hyphen_values = true)]
        starts: Vec<String>,
    },
    /// Write score, tangent, mixed and Lyapunov grids.
    ExportField {
        #[command(flatten)]
        models: Models,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Lyapunov, orthogonality, singularity and Stein diagnostics.
    Diagnose {
        #[command(flatten)]
        models: Models,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Train the three single-loss-removed tangent variants and compare them
    /// with the full-loss baseline.
    Ablate {
        /// Score checkpoint; trained first when absent.
        #[arg(long, value_name = "PATH")]
        score: Option<PathBuf>,
        /// Full-loss tangent checkpoint; trained first when absent.
        #[arg(long, value_name = "PATH")]
        baseline: Option<PathBuf>,
        #[command(flatten)]
        inputs: Inputs,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Gen => "gen",
            Self::TrainScore { .. } => "train-score",
            Self::TrainTangent { .. } => "train-tangent",
            Self::Simulate { .. } => "simulate",
            Self::ExportField { .. } => "export-field",
            Self::Diagnose { .. } => "diagnose",
            Self::Ablate { .. } => "ablate",
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => {
            fail::require_file(path)?;
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    for item in &cli.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("--set expects KEY=VALUE, got '{item}'")))?;
        config.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = resolve(&cli)?;
    println!("seed={}", config.seed);
    std::fs::create_dir_all(&config.out_dir).map_err(|e| Failure::io(&config.out_dir, e))?;
    let echo = config.out_dir.join(format!("{}.config", cli.command.name()));
    std::fs::write(&echo, config.to_text()).map_err(|e| Failure::io(&echo, e))?;
    match cli.command {
        Command::Gen => commands::gen(&config),
        Command::TrainScore { inputs } => commands::train_score(&config, &inputs).map(|_| ()),
        Command::TrainTangent { score, inputs } => commands::train_tangent(&config, &score, &inputs),
        Command::Simulate { models, inputs, starts } => {
            if !starts.is_empty() {
                config.set("sim.starts", &starts.join(";"))?;
            }
            commands::simulate(&config, &models, &inputs)
        }
        Command::ExportField { models, inputs } => commands::export_field(&config, &models, &inputs),
        Command::Diagnose { models, inputs } => commands::diagnose(&config, &models, &inputs),
        Command::Ablate { score, baseline, inputs } => commands::ablate(&config, score, baseline, &inputs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.line());
            ExitCode::from(f.kind.code())
        }
    }
}
