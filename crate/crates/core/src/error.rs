use thiserror::Error;

/// Errors raised across the design, criterion and verification layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error(
        "function values at bracket ends have the same sign (f({lo}) = {flo}, f({hi}) = {fhi})"
    )]
    NoBracket {
        lo: f64,
        hi: f64,
        flo: f64,
        fhi: f64,
    },
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("negative count {0}")]
    NegativeCount(i64),
    #[error("negative binomial total information requires m == 1, got m = {0}")]
    ModelMNotOne(u32),
    #[error("linear combinations are not identifiable under this design")]
    NotIdentifiable,
    #[error("information matrix is singular; D-criterion undefined")]
    SingularForD,
    #[error("reference criterion value is zero")]
    ZeroCriterion,
    #[error("bad parameter index set: {0}")]
    BadIndexSet(String),
    #[error("coefficient matrix A does not have full column rank")]
    RankDeficientA,
    #[error("slope coefficient beta_{0} is zero")]
    ZeroSlope(usize),
    #[error("number of parameters must be at least 2, got {0}")]
    BadP(usize),
    #[error("distance z must be positive, got {0}")]
    NonpositiveZ(f64),
    #[error("information matrix is singular")]
    SingularInfo,
    #[error("criterion is not eligible for cross-model comparison")]
    IneligibleCriterion,
    #[error("starting design has a singular information matrix")]
    SingularStart,
    #[error("optimizer made no improvement")]
    NoImprovement,
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
