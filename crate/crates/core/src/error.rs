use thiserror::Error;

/// Errors raised by the gate design library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("newton iteration did not converge after {iterations} iterations (gradient {gradient:e})")]
    NonConvergence { iterations: usize, gradient: f64 },
    #[error("equilibrium is not a minimum: axial hessian is not positive definite")]
    UnstableConfiguration,
    #[error("window {start}..{end} contains no spacings")]
    EmptyWindow { start: usize, end: usize },
    #[error("invalid ion count {0}")]
    InvalidCount(usize),
    #[error("transverse mode {mode} is unstable (omega^2 = {omega_sq:e})")]
    ZigzagInstability { mode: usize, omega_sq: f64 },
    #[error("gates overlap: gate {index} starts at {start:e} s before the previous one ends")]
    OverlappingGates { index: usize, start: f64 },
    #[error("no feasible solution: {0}")]
    NoFeasibleSolution(String),
    #[error("ill-conditioned pencil: {0}")]
    IllConditionedPencil(String),
    #[error("fock cutoff {cutoff} insufficient: top level population {population:e}")]
    CutoffInsufficient { cutoff: usize, population: f64 },
    #[error("time step did not converge: change {change:e} after {halvings} halvings")]
    StepNotConverged { halvings: usize, change: f64 },
    #[error("problem too large for the oracle: {0}")]
    ScaleExceeded(String),
    #[error("missing parameter: {0}")]
    MissingParameter(String),
    #[error("missing value for requirement row: {0}")]
    MissingValue(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// Stable variant name used in CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonConvergence { .. } => "NonConvergence",
            Error::UnstableConfiguration => "UnstableConfiguration",
            Error::EmptyWindow { .. } => "EmptyWindow",
            Error::InvalidCount(_) => "InvalidCount",
            Error::ZigzagInstability { .. } => "ZigzagInstability",
            Error::OverlappingGates { .. } => "OverlappingGates",
            Error::NoFeasibleSolution(_) => "NoFeasibleSolution",
            Error::IllConditionedPencil(_) => "IllConditionedPencil",
            Error::CutoffInsufficient { .. } => "CutoffInsufficient",
            Error::StepNotConverged { .. } => "StepNotConverged",
            Error::ScaleExceeded(_) => "ScaleExceeded",
            Error::MissingParameter(_) => "MissingParameter",
            Error::MissingValue(_) => "MissingValue",
            Error::InvalidInput(_) => "InvalidInput",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
