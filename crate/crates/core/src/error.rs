use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Geometric or numeric input outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Validation(String),

    /// An enumeration would exceed its configured size limit.
    #[error("{what} of size {size} exceeds the configured cap {cap}; raise the cap to allow it")]
    CapExceeded {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("best-reply dynamics did not converge within {steps} proposals (last structure {last})")]
    NonConvergence {
        steps: usize,
        last: String,
        trace: Vec<String>,
    },

    /// Transient states that can never reach an absorbing state.
    #[error("states {0:?} form a closed class without absorbing states")]
    TrappedClass(Vec<usize>),

    #[error("singular system: {0}")]
    Singular(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("toml decode: {0}")]
    TomlDecode(#[from] toml::de::Error),

    #[error("toml encode: {0}")]
    TomlEncode(#[from] toml::ser::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
