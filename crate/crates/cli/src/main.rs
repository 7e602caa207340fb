use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use voxelcap_cli::{bench, cmd_bench, cmd_reconstruct, cmd_synth, cmd_track, CliError, Overrides};

#[derive(Parser)]
#[command(name = "voxelcap", version, about = "Multi-camera voxel reconstruction and body tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a scene script.
    Synth {
        script: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Reconstruct a voxel cloud per frame.
    Reconstruct {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Track the body model through the sequence.
    Track {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        workers: Option<usize>,
        /// Reconstruct in memory instead of reading clouds from disk.
        #[arg(long)]
        pipe: bool,
    },
    /// Time every stage at several worker counts.
    Bench {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        workers: Vec<usize>,
    },
}

fn overrides(common: Common, workers: Option<usize>) -> Overrides {
    Overrides {
        out: common.out,
        seed: common.seed,
        workers,
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { script, common } => {
            let out = common.out.unwrap_or_else(|| PathBuf::from("dataset"));
            let s = cmd_synth(&script, &out, common.seed)?;
            println!("{} frames x {} cameras -> {}", s.frames, s.cameras, s.root.display());
        }
        Command::Reconstruct { config, common, workers } => {
            let r = cmd_reconstruct(&config, &overrides(common, workers))?;
            println!("reconstructed {} frames with {} workers", r.frames, r.workers);
        }
        Command::Track { config, common, workers, pipe } => {
            let r = cmd_track(&config, &overrides(common, workers), pipe)?;
            let lost = r.frames.iter().filter(|f| f.lost).count();
            println!("tracked {} frames ({lost} re-seeded)", r.frames.len());
        }
        Command::Bench { config, common, workers } => {
            let r = cmd_bench(&config, &overrides(common, None), &workers)?;
            print!("{}", bench::format_table(&r));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
