use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read or write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config schema violation at `{pointer}`: {message}")]
    Schema { pointer: String, message: String },

    #[error("missing config key `{0}`")]
    Missing(String),

    #[error("invalid config value at `{key}`: {message}")]
    Invalid { key: String, message: String },

    #[error("dimension mismatch: `{left}` has dimension {left_dim} but `{right}` has {right_dim}")]
    DimensionMismatch {
        left: String,
        left_dim: usize,
        right: String,
        right_dim: usize,
    },

    #[error("unknown manifold `{name}`; available: {available}")]
    UnknownManifold { name: String, available: String },

    #[error("invalid RIEMSTAB_THREADS value `{0}`: expected a positive integer")]
    Threads(String),

    #[error(transparent)]
    Core(#[from] riemstab_core::Error),

    #[error("cannot serialize report: {0}")]
    Json(#[from] serde_json::Error),
}
