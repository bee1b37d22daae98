use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("decoder elements are linearly dependent (rank {rank} < {expected})")]
    DependentDecoderElements { rank: usize, expected: usize },

    #[error("covering violated: point {point} is {distance} away from the nearest sensor (epsilon = {epsilon})")]
    CoveringViolated {
        point: f64,
        distance: f64,
        epsilon: f64,
    },

    #[error("degenerate covariance: rank {rank} < requested {requested} modes")]
    DegenerateRank { rank: usize, requested: usize },

    #[error("derivative order {order} exceeds the supported maximum {max}")]
    OrderUnsupported { order: usize, max: usize },

    #[error("negative eigenvalue {value} at index {index}")]
    NegativeEigenvalue { index: usize, value: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("ill-conditioned analysis operator (condition number {cond:.3e} > {limit:.1e})")]
    IllConditioned { cond: f64, limit: f64 },

    #[error("measure is not a product of input and direction marginals; refusing to disintegrate")]
    NonProductMeasure,

    #[error("power iteration did not converge within {iterations} iterations (last change {last_change:.3e})")]
    PowerIterationDiverged {
        iterations: usize,
        last_change: f64,
    },

    #[error("training diverged at iteration {iteration} (loss {loss:.3e})")]
    TrainingDiverged { iteration: usize, loss: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
