use thiserror::Error;

use crate::qr::QrSolution;

/// Errors produced by the estimation pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid domain: lo={lo}, hi={hi} (need lo < hi)")]
    InvalidDomain { lo: f64, hi: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("point {point} outside basis domain [{lo}, {hi}]")]
    OutOfDomain { point: f64, lo: f64, hi: f64 },

    #[error("invalid basis configuration: n_basis={n_basis}, order={order} (need n_basis >= order >= 2)")]
    InvalidBasis { n_basis: usize, order: usize },

    #[error("invalid quantile level tau={0} (need 0 < tau < 1)")]
    InvalidTau(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("ill-conditioned problem: {0}")]
    Conditioning(String),

    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("quantile regression did not converge after {iterations} iterations (objective {objective})")]
    NotConverged {
        iterations: usize,
        objective: f64,
        last: Box<QrSolution>,
    },

    #[error("instance too large for exact enumeration: {0}")]
    InstanceTooLarge(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bootstrap exceeded resample budget: {attempts} draws for {requested} replicates")]
    ResampleBudget { attempts: usize, requested: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
