//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong across the toolkit.
///
/// Variants carry enough context to print a one-line diagnosis; callers that
/// need to branch (CLI exit codes, FFI status codes) match on the variant.
#[derive(Debug, Error)]
pub enum Error {
    /// Expression text failed to parse.
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    /// A name in expression text is not a variable of the declared space
    /// and not a known function.
    #[error("unknown name `{name}` at line {line}, column {col}")]
    UnknownName { name: String, line: usize, col: usize },

    /// Evaluation hit a point outside an operation's domain.
    #[error("domain error: {reason} in `{expr}`")]
    Domain { reason: String, expr: String },

    /// Dimensions of two objects that must agree do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A model file is malformed.
    #[error("model file error ({section}, line {line}): {msg}")]
    ModelFile { section: String, line: usize, msg: String },

    /// A construction invariant was violated (for example noise variables
    /// appearing in coefficients declared deterministic).
    #[error("invalid construction: {0}")]
    Invalid(String),

    /// Too few usable sample points survived the domain guards, or the
    /// sampled data is otherwise too degenerate to decide anything.
    #[error("degenerate sampling: {0}")]
    DegenerateSampling(String),

    /// The rule-based integrator found no antiderivative.
    #[error("no rule-based antiderivative for `{0}`")]
    NoAntiderivative(String),

    /// A symbolic inverse was required but no pattern applied.
    #[error("no symbolic inverse for `{0}`")]
    NoSymbolicInverse(String),

    /// Numeric inversion failed to bracket or converge.
    #[error("numeric inversion failed: {0}")]
    Inversion(String),

    /// A claimed symmetry fails its determining equations.
    #[error("not a symmetry: {0}")]
    NotASymmetry(String),

    /// A random symmetry passed its determining equations but fails the
    /// compatibility condition needed for an Ito-to-Ito change of variables.
    #[error("compatibility condition fails: {0}")]
    CompatibilityFailed(String),

    /// A generator chain is not solvable in the required sense.
    #[error("chain is not solvable: {0}")]
    NotSolvable(String),

    /// The requested operation needs data the caller did not supply.
    #[error("{0}")]
    Missing(String),

    /// Simulation or reconstruction input mismatch (grids, increments).
    #[error("ensemble mismatch: {0}")]
    EnsembleMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process / FFI exit status for this error: `2` for genuine errors.
    ///
    /// Check failures (a symmetry that is not one, a failed compatibility
    /// condition) are reported as verdicts, not as `Error`, so every value
    /// here maps to "could not run".
    pub fn exit_code(&self) -> i32 {
        2
    }
}
