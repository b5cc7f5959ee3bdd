use thiserror::Error;

/// Errors raised by the geometry, quadrature, solver and validation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LumenError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("constraint violated: {0}")]
    ConstraintViolated(String),

    #[error("non-finite value {value} at node {node}")]
    Numeric { node: usize, value: f64 },

    #[error("energy condition fails: margin {margin:.6e} (flux {flux:.6e}, required {required:.6e})")]
    Infeasible {
        margin: f64,
        flux: f64,
        required: f64,
    },

    #[error("no convergence after {sweeps} sweeps (max residual {last_residual:.3e})")]
    NonConvergence {
        sweeps: usize,
        last_residual: f64,
        trace: Vec<f64>,
    },

    #[error("atom {atom} reached its focal floor {floor:.6e} with measure {measure:.6e} < target {target:.6e}")]
    FloorHit {
        atom: usize,
        floor: f64,
        measure: f64,
        target: f64,
    },

    #[error("overshoot minimality violated: reference {reference:?} vs trial {trial:?}")]
    MinimalityViolation {
        reference: Vec<f64>,
        trial: Vec<f64>,
    },

    #[error("refinement level {level}: {source}")]
    Level {
        level: usize,
        #[source]
        source: Box<LumenError>,
    },
}

impl LumenError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        LumenError::InvalidArgument(msg.into())
    }

    /// Strips any `Level` wrappers.
    pub fn root(&self) -> &LumenError {
        match self {
            LumenError::Level { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, LumenError>;
