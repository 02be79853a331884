//! Crate-wide error type.
//!
//! Errors are grouped into three broad classes that the CLI maps onto exit
//! codes: infeasibility of the requested placement (the instance itself rules
//! out a solution), parse/validation failures of user-supplied inputs, and
//! internal numerical failures that indicate a bug or a violated precondition.

use thiserror::Error;

/// Unified error type for all fallible operations in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Underlying I/O failure while reading or writing a file.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A text input (gain map, scenario, sweep values) could not be parsed.
    /// `line` is 1-based within the offending file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A scenario file parsed but failed semantic validation.
    #[error("invalid scenario: {0}")]
    Scenario(String),

    /// An argument violates a documented precondition (dimension mismatch,
    /// non-finite value, wrong sign, ...).
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// A bisection was started on a bracket that does not straddle the
    /// target value. This indicates a bug in the bracket derivation, never
    /// a property of the input data.
    #[error(
        "bisection bracket does not straddle target in {context}: \
         f(lo) = {f_lo}, f(hi) = {f_hi}, target = {target}"
    )]
    BracketViolation {
        f_lo: f64,
        f_hi: f64,
        target: f64,
        context: &'static str,
    },

    /// A ground terminal cannot reach the target rate even when served by
    /// every candidate position at full capacity simultaneously.
    #[error(
        "ground terminal {gt} is infeasible: total attainable rate \
         {total:.6e} bit/s is below the required {required:.6e} bit/s"
    )]
    InsufficientRowCapacity {
        gt: usize,
        total: f64,
        required: f64,
    },

    /// The backhaul-based lower bound on the number of aerial base stations
    /// already exceeds the number of candidate positions.
    #[error(
        "placement is infeasible: at least {bound} aerial base stations are \
         required but only {columns} candidate positions exist"
    )]
    BoundExceedsColumns { bound: usize, columns: usize },

    /// Every candidate position has zero backhaul capacity while a positive
    /// rate is demanded, so no finite number of stations suffices.
    #[error("lower bound is infinite: all backhaul capacities are zero while a positive rate is required")]
    InfiniteLowerBound,

    /// Exhaustive search proved that no subset of candidate positions admits
    /// a feasible rate allocation.
    #[error("no subset of the {columns} candidate positions admits a feasible allocation")]
    NoFeasibleSubset { columns: usize },

    /// The clustering baseline found no feasible placement for any tried
    /// number of clusters.
    #[error("clustering baseline found no feasible placement for any k up to {max_k}")]
    NoFeasibleClustering { max_k: usize },

    /// A linear program required to be feasible was not.
    #[error("linear program is infeasible: {0}")]
    LpInfeasible(String),

    /// Exhaustive search was requested on an instance above its size budget.
    #[error("exhaustive search supports at most {max} candidate positions, got {columns}")]
    OracleBudget { columns: usize, max: usize },

    /// The flight grid contains no admissible candidate positions.
    #[error("flight grid is empty after applying the minimum-height and building filters")]
    EmptyFlightGrid,
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True when the error states that the placement instance itself has no
    /// solution (as opposed to bad input or an internal failure). The CLI
    /// maps this class to its own exit code.
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self,
            Error::InsufficientRowCapacity { .. }
                | Error::BoundExceedsColumns { .. }
                | Error::InfiniteLowerBound
                | Error::NoFeasibleSubset { .. }
                | Error::NoFeasibleClustering { .. }
                | Error::LpInfeasible(_)
        )
    }

    /// True when the error stems from unparseable or invalid user input.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::Parse { .. } | Error::Scenario(_) | Error::Invalid(_)
        )
    }
}
