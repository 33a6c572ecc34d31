//! Dense matrices and a tape-based reverse-mode differentiation engine.
//!
//! Values are always `f64`. A [`CompGraph`] records operations as they are
//! applied to [`Var`] handles; [`CompGraph::backward`] consumes the tape and
//! returns the gradient of a scalar output with respect to every node that
//! requires one.

mod exp;
mod graph;
mod matrix;
mod sparse;

pub(crate) use exp::{exp_shifted_in_place, lane_sum};
pub(crate) use graph::log_sum_exp;
pub use graph::{CompGraph, CustomOp, Gradients, Var};
pub use matrix::{gemm, gram_upper, sym_upper_matmul, Matrix};
pub use sparse::SparseMatrix;

use thiserror::Error;

/// Norms below this are treated as zero by row-wise cosine similarity.
pub const ZERO_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Row-wise cosine similarity of two equally shaped matrices, as an `n x 1` column.
///
/// Rows where either norm is below [`ZERO_NORM_EPS`] get similarity 0.
pub fn cosine_rows(a: &Matrix, b: &Matrix) -> Result<Matrix, TensorError> {
    a.expect_same_shape(b, "cosine_rows")?;
    let mut out = Matrix::zeros(a.rows(), 1);
    for i in 0..a.rows() {
        out.set(i, 0, row_cosine(a.row(i), b.row(i)));
    }
    Ok(out)
}

pub(crate) fn row_cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < ZERO_NORM_EPS || nb < ZERO_NORM_EPS {
        0.0
    } else {
        dot / (na * nb)
    }
}
