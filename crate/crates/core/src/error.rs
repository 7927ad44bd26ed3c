use std::path::PathBuf;

use crate::physics::PegState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rotation is not orthonormal (residual {residual:.3e})")]
    NotOrthonormal { residual: f64 },

    #[error("degenerate 6D rotation encoding: {0}")]
    DegenerateEncoding(&'static str),

    #[error("degenerate cross-section (area {area:.3e} m^2)")]
    DegenerateCrossSection { area: f64 },

    #[error("cavity footprint exits the plate: {0}")]
    FootprintOverflow(String),

    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),

    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),

    #[error("simulation diverged after {substeps} substeps")]
    Diverged {
        last_valid: Box<PegState>,
        substeps: usize,
    },

    #[error("spawn rejection sampling failed after {0} tries")]
    SpawnFailed(usize),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    /// Short machine-parseable category used by the CLI error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::NotOrthonormal { .. } | Error::DegenerateEncoding(_) => "geometry",
            Error::DegenerateCrossSection { .. }
            | Error::FootprintOverflow(_)
            | Error::NotWatertight(_) => "generation",
            Error::InvalidConfig(_) => "config",
            Error::Diverged { .. } | Error::NonFiniteLoss(_) => "divergence",
            Error::SpawnFailed(_) => "spawn",
            Error::Usage(_) => "usage",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json { .. } | Error::Malformed { .. } => "format",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
