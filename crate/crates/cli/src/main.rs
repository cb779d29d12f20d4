mod args;
mod commands;
mod config;
mod error;
mod manifest;
mod plots;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::commands::Ctx;
use crate::config::FileConfig;
use crate::error::{require_path, CliError, CliResult};

fn configure_workers(workers: Option<usize>) -> CliResult<()> {
    match workers {
        None => Ok(()),
        Some(0) => Err(CliError::Usage("--workers must be at least 1".into())),
        Some(1) => {
            prd_core::exec::set_parallel(false);
            Ok(())
        }
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {n} workers: {e}"))),
        #[cfg(not(feature = "parallel"))]
        Some(_) => {
            log::warn!("built without the `parallel` feature; running sequentially");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    configure_workers(cli.workers)?;
    if let Some(path) = &cli.config_file {
        require_path(path)?;
    }
    let ctx = Ctx {
        file: FileConfig::load(cli.config_file.as_deref())?,
        workers: cli.workers,
    };
    match &cli.command {
        Command::Gen(a) => commands::gen(&ctx, a),
        Command::Convert(a) => commands::convert(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Solve(a) => commands::solve(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::StudySubsets(a) => commands::study_subsets(&ctx, a),
        Command::StudyDistance(a) => commands::study_distance(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
