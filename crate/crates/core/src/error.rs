use thiserror::Error;

/// Errors raised by the design, decoding and simulation pipeline.
///
/// Variants are grouped by the module that raises them so that the CLI can
/// name the failing stage in its diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("gauss_model: {0}")]
    Model(String),

    #[error("gauss_model: covariance submatrix is not positive definite after jitter up to {max_jitter:e}")]
    Singular { max_jitter: f64 },

    #[error("quantizer: {0}")]
    Quantizer(String),

    #[error("pmf: {0}")]
    Pmf(String),

    #[error("pmf: tensor over {cells} cells exceeds the cap of {cap} cells")]
    Capacity { cells: usize, cap: usize },

    #[error("index_assign: {0}")]
    IndexAssign(String),

    #[error("cluster: {0}")]
    Cluster(String),

    #[error("factorize: {0}")]
    Factorize(String),

    #[error("decode: {0}")]
    Decode(String),

    #[error("scenarios: {0}")]
    Scenario(String),

    #[error("config: {0}")]
    Config(String),

    #[error("artifact: unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("artifact: invariant `{invariant}` violated: {detail}")]
    Invariant { invariant: &'static str, detail: String },

    #[error("artifact: parse error: {0}")]
    Parse(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by user input rather than numerical failures.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
