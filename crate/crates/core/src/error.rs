use thiserror::Error;

/// Errors produced by model construction, root finding, the boundary
/// iteration, and the simulation oracle.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no sign change on [{lo:.6e}, {hi:.6e}]: f(lo) = {f_lo:.6e}, f(hi) = {f_hi:.6e}")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("bisection did not converge within {max_iter} iterations")]
    BisectionStalled { max_iter: usize },

    #[error("reward has no break-even price: {0}")]
    NoBreakEven(String),

    #[error(
        "boundary characterization does not apply: break-even price {x0:.6} \
         lies below the convexity threshold {x_prime:.6}"
    )]
    NotApplicable { x0: f64, x_prime: f64 },

    #[error("iteration {k}: cannot bracket the exercise boundary ({detail})")]
    BoundaryBracket { k: usize, detail: String },

    #[error("iteration {k}: {what}")]
    InvariantBreach { k: usize, what: String },

    #[error("operands live on different price grids")]
    GridMismatch,

    #[error("exercise boundary {boundary:.6} does not fit the grid (x_max = {x_max:.6})")]
    BoundaryOutsideGrid { boundary: f64, x_max: f64 },

    #[error("scenario parity unreachable: {0}")]
    NoParity(String),

    #[error("simulation config: {0}")]
    InvalidSimulation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
