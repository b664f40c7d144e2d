//! Error types shared by the factor modules.

use thiserror::Error;

/// Errors produced by factor construction and the statistical operations.
#[derive(Debug, Clone, Error)]
pub enum FactorError {
    /// An input matrix or vector contains NaN or infinite entries.
    #[error("non-finite entries in {context}")]
    NonFinite { context: &'static str },

    /// Matrix/vector dimensions are inconsistent with the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Operand scopes disagree where the operation requires equal scopes.
    #[error("scope mismatch in {context}")]
    ScopeMismatch { context: &'static str },

    /// A variable name was not found in the factor scope.
    #[error("unknown variable `{0}` in scope")]
    UnknownVariable(String),

    /// Scope extension attempted with an already-present variable name.
    #[error("variable name `{0}` collides with existing scope")]
    NameCollision(String),

    /// The requested variable order is not a permutation of the scope.
    #[error("requested order is not a permutation of the scope")]
    NotAPermutation,

    /// A matrix that must be positive definite is not.
    #[error("matrix not positive definite in {context}")]
    NotPositiveDefinite { context: &'static str },

    /// Canonical marginalisation hit a singular block; the degenerate
    /// representation should be used instead.
    #[error("singular marginalisation block: degeneracy detected")]
    DegeneracyDetected,

    /// The factor has a zero precision entry and therefore no finite moments
    /// or normalisation constant.
    #[error("factor has an infinite-variance direction (zero precision)")]
    NotNormalisable,

    /// Marginalisation over a direction with zero precision diverges.
    #[error("divergent integral: zero precision over a marginalised direction")]
    DivergentIntegral,

    /// Hard constraints of the operands are mutually inconsistent; the exact
    /// result is the zero factor. Message passing treats this as a signal
    /// rather than a defect.
    #[error("inconsistent constraints: result is the zero factor (residual {residual:.3e})")]
    ZeroFactor { residual: f64 },

    /// Division requires the denominator support to contain the numerator
    /// support with matching offsets.
    #[error("division support violation: {detail}")]
    SupportViolation { detail: &'static str },

    /// Division produced a precision with a significantly negative eigenvalue.
    #[error("indefinite quotient: negative precision eigenvalue {eigenvalue:.3e}")]
    IndefiniteQuotient { eigenvalue: f64 },

    /// The black-box map handed to the unscented linearisation returned
    /// non-finite values.
    #[error("nonlinear map returned non-finite values at a sigma point")]
    Propagation,

    /// KL divergence requires normalised densities.
    #[error("operation requires normalised factors")]
    Unnormalised,

    /// Deserialisation of a factor failed.
    #[error("factor deserialisation failed: {0}")]
    Deserialisation(String),
}

pub type FactorResult<T> = Result<T, FactorError>;
