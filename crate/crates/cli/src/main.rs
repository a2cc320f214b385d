mod args;
mod commands;

use anyhow::{Context, Result};
use clap::Parser;
use serde::Serialize;

use args::{Cli, Command};

pub const THREADS_ENV: &str = "SIBLINGSHIFT_THREADS";

#[derive(Serialize)]
struct RunConfig<'a, T: Serialize> {
    subcommand: &'a str,
    threads: Option<usize>,
    #[serde(flatten)]
    args: &'a T,
}

fn log_config<T: Serialize>(subcommand: &str, threads: Option<usize>, args: &T) -> Result<()> {
    let run = RunConfig {
        subcommand,
        threads,
        args,
    };
    log::info!("run config: {}", serde_json::to_string(&run)?);
    Ok(())
}

fn configure_threads() -> Result<Option<usize>> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = value
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_ENV}={value:?} is not a worker count"))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")?;
    Ok(Some(n))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let threads = configure_threads()?;

    match &cli.command {
        Command::Fit(a) => {
            log_config("fit", threads, a)?;
            commands::fit(a)?;
        }
        Command::Score(a) => {
            log_config("score", threads, a)?;
            commands::score(a)?;
        }
        Command::Eval(a) => {
            log_config("eval", threads, a)?;
            commands::eval(a)?;
        }
        Command::Ablate(a) => {
            log_config("ablate", threads, a)?;
            commands::ablate(a)?;
        }
        Command::RankAnalysis(a) => {
            log_config("rank-analysis", threads, a)?;
            commands::rank_analysis(a)?;
        }
    }
    Ok(())
}
