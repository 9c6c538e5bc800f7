use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("rank deficient: requested rank {requested}, numeric rank {rank}")]
    RankDeficient { requested: usize, rank: usize },
    #[error("selected Hankel minor is numerically singular (smallest singular value {smallest:e}, threshold {threshold:e})")]
    SingularSelection { smallest: f64, threshold: f64 },
    #[error("not isomorphic: {0}")]
    NotIsomorphic(String),
    #[error("not minimal: {0}")]
    NotMinimal(String),
    #[error("unstable model: spectral radius {radius}")]
    UnstableModel { radius: f64 },
    #[error("no convergence after {iterations} iterations (last relative change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("innovation covariance for letter {letter} not positive definite (min eigenvalue {min_eig:e})")]
    InnovationNotFullRank { letter: String, min_eig: f64 },
    #[error("insufficient data: need more than {needed} samples, have {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("missing covariance for {0}")]
    MissingCovariance(String),
    #[error("Gram matrix of past products is singular ({0})")]
    SingularGram(String),
    #[error("Markov chain is reducible")]
    Reducible,
    #[error("inconsistent alphabet: {0}")]
    InconsistentAlphabet(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
