use thiserror::Error;

/// Errors produced by the solvers, transport routines and experiment drivers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition of an operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Two measures that must carry the same mass do not.
    #[error("mass mismatch: {left} vs {right}")]
    MassMismatch { left: f64, right: f64 },

    /// The finite-volume update produced a negative cell.
    #[error("negative density {value:e} in cell {cell} at t = {time}")]
    NegativeDensity { cell: usize, value: f64, time: f64 },

    /// Newton iteration did not converge.
    #[error("no convergence after {iterations} iterations at nu = {nu:e}: residual {residual:e}, last iterate (c1, c2, L) = ({c1:e}, {c2:e}, {length:e})")]
    Convergence {
        nu: f64,
        iterations: usize,
        residual: f64,
        c1: f64,
        c2: f64,
        length: f64,
    },

    /// The equilibrium system cannot be represented accurately in double precision.
    #[error("ill-conditioned equilibrium system at nu = {nu:e}: {reason}")]
    Conditioning { nu: f64, reason: String },

    /// A solver failed inside an experiment sweep.
    #[error("run failed at nu = {nu:e}, t = {t}: {source}")]
    Run { nu: f64, t: f64, source: Box<Error> },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Precondition(_) => "precondition",
            Error::MassMismatch { .. } => "mass_mismatch",
            Error::NegativeDensity { .. } => "negative_density",
            Error::Convergence { .. } => "convergence",
            Error::Conditioning { .. } => "conditioning",
            Error::Run { source, .. } => source.kind(),
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
