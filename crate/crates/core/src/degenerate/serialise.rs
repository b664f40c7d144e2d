//! Plain JSON representation of a degenerate factor with fields
//! `{scope, q, r, lambda, h, c, g}`; matrices are row-major arrays of rows.
//! Serialisation uses shortest-roundtrip float formatting, so values survive
//! a round trip bit-exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::DegenerateFactor;
use crate::error::FactorError;
use crate::scope::Scope;
use crate::subspace::OrthonormalBasis;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorRepr {
    pub scope: Vec<(String, usize)>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub g: f64,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>, String> {
    if rows.len() != nrows {
        return Err(format!("expected {nrows} rows, got {}", rows.len()));
    }
    let mut m = DMatrix::zeros(nrows, ncols);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(format!("expected {ncols} columns in row {i}, got {}", row.len()));
        }
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

impl From<DegenerateFactor> for FactorRepr {
    fn from(f: DegenerateFactor) -> Self {
        FactorRepr {
            scope: f.scope.vars().to_vec(),
            q: rows_of(&f.q),
            r: rows_of(&f.r),
            lambda: f.lambda.iter().cloned().collect(),
            h: f.h.iter().cloned().collect(),
            c: f.c.iter().cloned().collect(),
            g: f.g,
        }
    }
}

impl TryFrom<FactorRepr> for DegenerateFactor {
    type Error = FactorError;

    fn try_from(repr: FactorRepr) -> Result<Self, FactorError> {
        let scope = Scope::new(repr.scope)?;
        let n = scope.dim();
        let m = repr.lambda.len();
        let k = repr.c.len();
        let q = matrix_from_rows(&repr.q, n, m)
            .map_err(FactorError::Deserialisation)?;
        let r = matrix_from_rows(&repr.r, n, k)
            .map_err(FactorError::Deserialisation)?;
        DegenerateFactor::new(
            scope,
            OrthonormalBasis::new(q)?,
            OrthonormalBasis::new(r)?,
            DVector::from_vec(repr.lambda),
            DVector::from_vec(repr.h),
            DVector::from_vec(repr.c),
            repr.g,
        )
    }
}
