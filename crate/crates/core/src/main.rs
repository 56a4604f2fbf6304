use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sbm_range::cli::{self, ExperimentConfig, OUTPUT_ROOT_VAR};

#[derive(Parser)]
#[command(name = "sbm-range", version, about = "Range deviations of supercritical super-Brownian motion")]
struct Args {
    /// Output root; defaults to $SBM_RANGE_OUT, then ./results.
    #[arg(long, global = true, env = OUTPUT_ROOT_VAR)]
    out: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's worker thread count (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Progress on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the study described by a config file.
    Run { config: PathBuf },
    /// Print the study catalog and the config schema.
    ListStudies,
    /// Print the task seeds and stream keys of a config, with a digest.
    SeedReport { config: PathBuf },
}

fn load(path: &Path, args: &Args) -> sbm_range::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_file(path)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(threads) = args.threads {
        config.threads = threads;
    }
    Ok(config)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = match &args.command {
        None | Some(Command::ListStudies) => {
            print!("{}", cli::list_studies());
            Ok(())
        }
        Some(Command::SeedReport { config }) => load(config, &args).map(|c| print!("{}", cli::seed_report(&c, args.verbose))),
        Some(Command::Run { config }) => load(config, &args).and_then(|c| {
            let outcome = cli::run(&c, &cli::output_root(args.out.as_deref()), args.verbose)?;
            let failed = outcome.summary.iter().filter(|r| r.verdict == Some(false)).count();
            println!("{}: {} summary rows, {failed} failing", outcome.dir.display(), outcome.summary.len());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
