//! Gaussian factors that stay well defined when covariance (or precision)
//! matrices become singular.
//!
//! The crate is organised around a small number of building blocks:
//!
//! * [`subspace`] — rank-tolerant dense linear algebra (compact SVD, column
//!   spaces, orthogonal complements, null spaces, pseudo-inverses),
//! * [`canonical`] — the classical exponential-quadratic canonical factor and
//!   its closed-form operations,
//! * [`degenerate`] — factors of the form `C(Qᵀx; Λ, h, g) δ(Rᵀx − c)` whose
//!   support may be a lower-dimensional affine manifold, together with the
//!   full operation set (marginalise, multiply, divide, reduce, affine
//!   transforms, conditional construction, unscented linearisation and KL
//!   divergence),
//! * [`graph`] — chain-structured belief propagation over degenerate factors
//!   with posterior and model-evidence extraction.
//!
//! All factor values are immutable; every operation returns a new factor, so
//! sharing factors across threads is safe.

pub mod canonical;
pub mod degenerate;
pub mod error;
pub mod gmode;
pub mod graph;
pub mod scope;
pub mod subspace;
pub mod tolerance;

pub use canonical::CanonicalFactor;
pub use degenerate::{
    equivalent_transformation, represent_conditional, DegenerateFactor, LogDensity, Moments,
    UnscentedParams,
};
pub use error::{FactorError, FactorResult};
pub use graph::{ClusterGraph, GraphError, MessageSet, Schedule, ScheduleKind};
pub use scope::Scope;
pub use subspace::OrthonormalBasis;
pub use tolerance::RankTolerance;
