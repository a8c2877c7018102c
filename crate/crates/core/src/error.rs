use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),

    /// No root of the u2 equation satisfied the sign conditions inside the scanned bracket.
    #[error("no equilibrium: no sign-valid u2 root in sigma bracket [{lo:e}, {hi:e}] ({detail})")]
    NoEquilibrium { lo: f64, hi: f64, detail: String },

    #[error(
        "collocation did not converge after {iterations} iterations: residual norm {residual_norm:e}"
    )]
    CollocationDiverged {
        iterations: usize,
        residual_norm: f64,
        /// Max absolute residual per node, across all players.
        node_residuals: Vec<f64>,
    },

    #[error("boundary mismatch at T={threshold}: relative gap {relative:e} exceeds {tolerance:e}")]
    BoundaryMismatch {
        threshold: f64,
        relative: f64,
        tolerance: f64,
    },

    #[error("temperature {t} outside solution domain (upper bound {t_max})")]
    DomainExceeded { t: f64, t_max: f64 },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<CoreError>,
    },

    #[error("structure {structure}: {source}")]
    Structure {
        structure: String,
        #[source]
        source: Box<CoreError>,
    },

    #[error("subset value missing for coalition {0}")]
    IncompleteOracle(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("schema error in {path}: {msg}")]
    Schema { path: PathBuf, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("simulation step {step} (year {year}): {source}")]
    Simulation {
        step: usize,
        year: f64,
        #[source]
        source: Box<CoreError>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CoreError {
    pub fn in_stage(self, stage: usize) -> Self {
        CoreError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn in_structure(self, structure: impl Into<String>) -> Self {
        CoreError::Structure {
            structure: structure.into(),
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the numerical solvers rather than by inputs.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            CoreError::NoEquilibrium { .. }
            | CoreError::CollocationDiverged { .. }
            | CoreError::BoundaryMismatch { .. }
            | CoreError::DomainExceeded { .. } => true,
            CoreError::Stage { source, .. }
            | CoreError::Structure { source, .. }
            | CoreError::Simulation { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}
