//! Rank-decision thresholds for the SVD-based subspace computations.

/// Relative threshold deciding which singular values count as nonzero.
///
/// A singular value `s[i]` is treated as nonzero iff `s[i] > rel * s_max`.
/// The default follows the usual dense-LAPACK convention
/// `max(rows, cols) * machine_epsilon`, which scales with the amount of
/// rounding a backward-stable decomposition can accumulate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankTolerance {
    /// `max(rows, cols) * f64::EPSILON`, computed per matrix.
    Auto,
    /// Explicit relative threshold (must be positive).
    Relative(f64),
}

impl Default for RankTolerance {
    fn default() -> Self {
        RankTolerance::Auto
    }
}

impl RankTolerance {
    /// The relative threshold for a matrix of the given shape.
    pub fn relative_for(&self, rows: usize, cols: usize) -> f64 {
        match *self {
            RankTolerance::Auto => rows.max(cols).max(1) as f64 * f64::EPSILON,
            RankTolerance::Relative(r) => {
                assert!(r > 0.0, "rank tolerance must be positive");
                r
            }
        }
    }

    /// Absolute cutoff below which singular values are discarded.
    pub fn cutoff(&self, rows: usize, cols: usize, s_max: f64) -> f64 {
        self.relative_for(rows, cols) * s_max
    }
}

/// Relative tolerance for subspace-equality and containment tests
/// (division preconditions, KL support condition, evidence consistency).
/// These compare projectors built through chains of decompositions, so the
/// bound is far looser than the rank cutoff.
pub const SUPPORT_REL: f64 = 1e-10;

/// Projector-distance bound for an ambient dimension `n`.
pub fn support_tol(n: usize) -> f64 {
    n.max(1) as f64 * SUPPORT_REL
}

/// Relative tolerance used when checking whether a linear constraint system
/// is consistent (multiply/reduce zero-factor detection).
pub const CONSISTENCY_REL: f64 = 1e-8;

/// Rank threshold for subspaces derived from blocks of semi-orthogonal
/// factor bases (column/null spaces of `Q_x`, `RᵀQ` products and the like).
/// Their entries are O(1) by construction, but accumulated basis drift means
/// spurious singular values can reach the allowed 1e-10 orthogonality slack;
/// directions below this threshold are geometric noise, not structure.
pub const SUBSPACE_RANK_REL: f64 = 1e-9;
