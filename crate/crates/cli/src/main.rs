use std::path::PathBuf;
use std::process::ExitCode;

use blockpd_cli::{run_experiment, CliError, RunConfig};
use clap::Parser;

/// Runs one solver experiment described by a TOML config.
#[derive(Debug, Parser)]
#[command(name = "blockpd", version)]
struct Args {
    /// Path of the run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppresses the summary line.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = RunConfig::load(&args.config).and_then(|mut cfg| {
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(o) = args.out {
            cfg.out_dir = o;
        }
        run_experiment(&cfg)
    });
    match result {
        Ok(a) => {
            if !args.quiet {
                println!(
                    "k = {} converged = {} trace = {} metadata = {}",
                    a.final_k,
                    a.converged,
                    a.trace.display(),
                    a.metadata.display()
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Solver(blockpd::Error::Divergence { last: Some(r), .. }) = &e {
                eprintln!("last finite trace row: k = {} kkt = {:e}", r.k, r.kkt);
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
