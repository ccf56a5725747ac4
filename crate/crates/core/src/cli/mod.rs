//! The `latent-states` command line: subcommands, pipeline configuration,
//! run manifests and replay.

pub mod args;
pub mod config;
pub mod manifest;
pub mod plot;
pub mod stages;

use clap::Parser;

pub use args::{Cli, Command};
pub use config::{run_pipeline, PipelineConfig};
pub use manifest::{replay, resolve_pipeline, Resolved, RunManifest};

use crate::{Error, Result};

pub const THREADS_ENV: &str = "LATENT_STATES_THREADS";

/// Exit code for a mismatch found by `replay`.
pub const REPLAY_MISMATCH: i32 = 8;

/// Sizes the global thread pool from `--threads` or the environment. Only
/// the first call has an effect.
pub fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| Error::Config(format!("{THREADS_ENV}: expected a thread count, got `{v}`")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        // Fails only if the pool was already built, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Replay(a) => {
            let report = replay(&a)?;
            if report.mismatched.is_empty() {
                eprintln!("replay: {} outputs identical", report.manifest.outputs.len());
                Ok(0)
            } else {
                for f in &report.mismatched {
                    eprintln!("replay: {f} differs");
                }
                Ok(REPLAY_MISMATCH)
            }
        }
        Command::Pipeline(a) => {
            resolve_pipeline(&a)?.run()?;
            Ok(0)
        }
        other => {
            Resolved::Stage(other).run()?;
            Ok(0)
        }
    }
}

/// Entry point used by the binary.
pub fn main_from_env() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    run(Cli::parse())
}
