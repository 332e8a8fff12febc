//! `stratum`: synthesize layered scenes, decompose them, score the result,
//! apply edit scripts, and serve the edit API.
//!
//! Exit codes: 0 success, 1 internal error, 2 invalid input.

mod config;
mod decompose;
mod error;
mod eval;
mod manifest;
mod recompose;
mod synth;

use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use config::ConfigFile;
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "stratum", version, about = "Layered scene decomposition on synthetic sprite scenes")]
struct Cli {
    /// TOML file with one table per subcommand; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset of synthetic scenes.
    Synth(synth::SynthArgs),
    /// Peel scenes layer by layer and write traces.
    Decompose(decompose::DecomposeArgs),
    /// Score traces against ground truth.
    Eval(eval::EvalArgs),
    /// Apply an edit script and write the recomposited image.
    Recompose(recompose::RecomposeArgs),
    /// Run the HTTP edit service.
    Serve(ServeArgs),
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct ServeArgs {
    /// [default: 8080]
    #[arg(long)]
    port: Option<u16>,
    /// [default: 127.0.0.1]
    #[arg(long)]
    bind: Option<IpAddr>,
    /// Sessions are saved here and reloaded on start; in memory when unset.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Allowed browser origin; any when unset.
    #[arg(long)]
    cors_origin: Option<String>,
}

/// Maps `items` on a pool of `jobs` threads; results keep input order.
pub(crate) fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> CliResult<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if jobs == 0 {
        return Err(CliError::invalid("--jobs must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(CliError::internal)?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

fn serve(args: ServeArgs, config: &ConfigFile) -> CliResult<()> {
    let args = config.merge("serve", &args)?;
    let d = stratum_service::ServiceConfig::default();
    let cfg = stratum_service::ServiceConfig {
        bind: args.bind.unwrap_or(d.bind),
        port: args.port.unwrap_or(d.port),
        data_dir: args.data_dir,
        cors_origin: args.cors_origin,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(stratum_service::serve(cfg)).map_err(|e| match e {
        stratum_service::ServiceError::Origin(_) => CliError::invalid(e),
        e => CliError::internal(e),
    })
}

fn run(cli: Cli) -> CliResult<()> {
    let config = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => synth::run(a, &config),
        Command::Decompose(a) => decompose::run(a, &config),
        Command::Eval(a) => eval::run(a, &config),
        Command::Recompose(a) => recompose::run(a, &config),
        Command::Serve(a) => serve(a, &config),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code)
        }
    }
}
