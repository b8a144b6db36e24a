//! Command-line front end for the `ampkin` library.

pub mod commands;
pub mod config;
pub mod error;
pub mod sample;

pub use commands::Context;
pub use config::Config;
pub use error::{CliError, CliResult};

/// Caps the global thread pool at `AMPKIN_THREADS` when it is set.
pub fn init_thread_pool() -> CliResult<()> {
    let Ok(value) = std::env::var("AMPKIN_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ampkin::Error::Config(format!("AMPKIN_THREADS={value:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| ampkin::Error::Config(e.to_string()))?;
    Ok(())
}
