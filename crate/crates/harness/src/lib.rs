//! Experiment harness: flat configuration, dataset ingest, SNR sweeps with
//! paired channel realisations, the multi-user orchestrator, timing and
//! plotting. The `gsc` binary wraps these as subcommands.

pub mod config;
pub mod dataset;
pub mod error;
pub mod mu;
pub mod orchestrator;
pub mod pipeline;
pub mod plot;
pub mod sweep;
pub mod timeit;
pub mod train;

pub use config::{HarnessConfig, System};
pub use error::{HarnessError, Result};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "GSC_OUT";
