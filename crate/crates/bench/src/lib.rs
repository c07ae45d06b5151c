//! Batch experiments over seeded topologies: the four comparison regimes,
//! aggregation into summary tables and CSV/JSON output.

pub mod manifest;
pub mod regime;
pub mod report;

use thiserror::Error;

pub use manifest::RunManifest;
pub use regime::{run_regime, Regime, RegimeOutcome};
pub use report::{aggregate, run_manifest, AggregateMode, SummaryRow, TopologyRow};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] coalition_core::Error),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("toml decode: {0}")]
    TomlDecode(#[from] toml::de::Error),

    #[error("toml encode: {0}")]
    TomlEncode(#[from] toml::ser::Error),
}

impl BenchError {
    /// True for errors caused by bad input rather than by the computation.
    pub fn is_validation(&self) -> bool {
        use coalition_core::Error as E;
        match self {
            BenchError::Manifest(_) | BenchError::TomlDecode(_) => true,
            BenchError::Core(e) => matches!(
                e,
                E::Validation(_) | E::Domain(_) | E::CapExceeded { .. } | E::TomlDecode(_)
            ),
            _ => false,
        }
    }
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;
