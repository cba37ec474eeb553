//! Monte Carlo experiment harness for PSK-modulated sparse superposition
//! codes: sweep driver, state-evolution comparison runs, an exhaustive
//! maximum-likelihood oracle for toy codes, and CSV/JSON persistence.

pub mod config;
pub mod harness;
pub mod oracle;

pub use config::{BaseConfig, ChannelConfig, CodeConfig, ResolvedPoint, RunConfig};
pub use harness::{run_point, run_se_compare, run_sweep, PointResult, RunManifest};
pub use oracle::ml_oracle_decode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] sparc_core::SparcError),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
