use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

mod commands;
mod inputs;
mod manifest;

/// Deformable simulation, moments of mass and adversarial material attacks
/// on tetrahedral meshes.
#[derive(Debug, Parser)]
#[command(name = "advsim", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Scenario JSON
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,

    /// Overrides the attack seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for element assembly
    #[arg(long, global = true, env = "ADVSIM_THREADS")]
    pub threads: Option<usize>,

    /// Repeat for more detail
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the scenario and write its trajectory
    Forward,
    /// Print the ten moments of mass of a mesh and materials
    Moments {
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// Materials file, or a uniform material block
        #[arg(long)]
        materials: Option<PathBuf>,
    },
    /// Optimize adversarial materials for the scenario
    Attack,
    /// Compare a reference and an adversarial run
    Compare {
        /// Directory written by `attack`; supplies any file not given below
        #[arg(long)]
        attack_dir: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        adversarial: Option<PathBuf>,
        #[arg(long)]
        reference_materials: Option<PathBuf>,
        #[arg(long)]
        adversarial_materials: Option<PathBuf>,
        /// Coefficient of restitution of the rigid baseline
        #[arg(long, default_value_t = 0.5)]
        restitution: f64,
    },
}

/// A run that completed but missed a required tolerance.
#[derive(Debug)]
pub struct ToleranceFailure(pub String);

impl std::fmt::Display for ToleranceFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ToleranceFailure {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ToleranceFailure>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
