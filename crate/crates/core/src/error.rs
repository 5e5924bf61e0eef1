use thiserror::Error;

use crate::glasso::PrecisionEstimate;

/// Errors surfaced by the library.
///
/// Variants carry enough context to report the failing column/block by name at
/// the call site; none of them panic-wrap recoverable numerical conditions.
#[derive(Debug, Error)]
pub enum Error {
    /// A column has MLE variance at or below the constant-column floor (1e-12)
    /// and cannot be standardized.
    #[error("column {index} is constant (MLE variance <= 1e-12)")]
    ConstantColumn { index: usize },

    /// Input contains a NaN/infinite entry, or a field that failed to parse as
    /// a finite number.
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    /// Malformed tabular input (ragged rows, missing header, empty fields).
    #[error("invalid input data: {0}")]
    InvalidData(String),

    /// CSV-level read/parse failure.
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    /// Underlying I/O failure.
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// A partition block's covariance submatrix is not positive definite
    /// (typically because the block has more variables than observations).
    #[error("covariance of block {block} (size {size}) is singular; block log-likelihood undefined")]
    SingularBlock { block: usize, size: usize },

    /// Every candidate on the threshold path was infeasible.
    #[error("no feasible candidate model on the threshold path")]
    EmptyCandidateSet,

    /// No κ breakpoint exists: either every candidate shares one dimension,
    /// or a single model (of the reported dimension) dominates at every κ.
    #[error("degenerate candidate path: no dimension trade-off to calibrate (dimension {dimension})")]
    DegeneratePath { dimension: usize },

    /// Slope-heuristic calibration was handed fewer candidates than it can
    /// read a slope from.
    #[error("calibration needs at least {needed} candidate models, got {got}")]
    TooFewCandidates { needed: usize, got: usize },

    /// The complex-model subset for robust-regression calibration has fewer
    /// than two distinct dimensions.
    #[error("robust-regression calibration needs at least two distinct dimensions above the complexity cutoff")]
    InsufficientComplexModels,

    /// The sparse precision solver hit its sweep cap before meeting the
    /// convergence criterion. The last iterate is attached so callers can
    /// inspect or use the partial result.
    #[error("graphical lasso did not converge within {max_iter} sweeps")]
    NotConverged {
        max_iter: usize,
        estimate: Box<PrecisionEstimate>,
    },

    /// The solver was asked for an unpenalized estimate of a singular matrix.
    #[error("input covariance is singular and rho = 0; precision matrix undefined")]
    SingularInput,

    /// Two partitions cover different index sets and cannot be compared.
    #[error("partitions cover mismatched index sets ({left} vs {right} indices)")]
    MismatchedIndexSets { left: usize, right: usize },

    /// A partition failed validation (duplicate, missing, or out-of-range
    /// indices, or an empty block).
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    /// A simulation or run configuration failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
