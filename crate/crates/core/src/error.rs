use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed problem: {0}")]
    Schema(String),

    #[error("invalid quantizer: {0}")]
    InvalidSpec(String),

    #[error("invalid sector multiplier: {0}")]
    InvalidMultiplier(String),

    #[error("dimension mismatch between {left} and {right}: {detail}")]
    Dimension {
        left: &'static str,
        right: &'static str,
        detail: String,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("nominal closed loop is not Schur stable: spectral radius {rho:.6} >= 1")]
    UnstableNominalLoop { rho: f64 },

    #[error("no feasible tau on the line-search grid (spectral radius {rho:.6}, guaranteed window (0, {window:.6}))")]
    NoFeasibleGridPoint { rho: f64, window: f64 },

    #[error("SDP solver failure: {0}")]
    Solver(String),
}

impl Error {
    /// Errors caused by the user's input rather than by the loop or the solver.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::UnstableNominalLoop { .. } | Error::NoFeasibleGridPoint { .. } | Error::Solver(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
