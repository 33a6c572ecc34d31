use serde::{Deserialize, Serialize};

use super::TensorError;

/// Dense row-major matrix of `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::Contract(format!(
                "buffer of length {} cannot hold a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(TensorError::Contract(format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Column vector built from a slice.
    pub fn column(values: &[f64]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn scalar(value: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![value] }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Value of a 1x1 matrix.
    pub fn item(&self) -> Result<f64, TensorError> {
        if self.shape() != (1, 1) {
            return Err(TensorError::Contract(format!(
                "expected a scalar, found a {}x{} matrix",
                self.rows, self.cols
            )));
        }
        Ok(self.data[0])
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), cols: self.cols, data }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, TensorError> {
        self.expect_same_shape(other, "zip_map")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), TensorError> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for a in &mut self.data {
            *a *= factor;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff on different shapes");
        self.data.iter().zip(&other.data).fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Column sums as a 1xcols matrix.
    pub fn column_sums(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        for i in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, TensorError> {
        if self.cols != other.rows {
            return Err(TensorError::Shape { op: "matmul", lhs: self.shape(), rhs: other.shape() });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(1.0, self, false, other, false, 0.0, &mut out);
        Ok(out)
    }

    pub(crate) fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<(), TensorError> {
        if self.shape() != other.shape() {
            return Err(TensorError::Shape { op, lhs: self.shape(), rhs: other.shape() });
        }
        Ok(())
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, where `op` optionally transposes.
///
/// Shapes are checked with assertions; callers validate user-facing shapes first.
pub fn gemm(alpha: f64, a: &Matrix, trans_a: bool, b: &Matrix, trans_b: bool, beta: f64, c: &mut Matrix) {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, kb, "gemm inner dimension mismatch");
    assert_eq!(c.shape(), (m, n), "gemm output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.scale_in_place(beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides and extents describe buffers owned by `a`, `b` and `c`,
    // whose lengths were validated against their shapes; `c` does not alias.
    unsafe {
        raw_gemm(
            (m, n, k),
            (c.data.as_mut_ptr(), c.cols as isize),
            (a.data.as_ptr(), rsa, csa),
            (b.data.as_ptr(), rsb, csb),
            alpha,
            beta,
        );
    }
}

/// `c = alpha * a * b + beta * c` on raw strided operands; `c` is row-major
/// with row stride `ldc`.
///
/// # Safety
/// Every addressed element must lie inside a live allocation and `c` must
/// not overlap `a` or `b`.
unsafe fn raw_gemm(
    (m, n, k): (usize, usize, usize),
    (c, ldc): (*mut f64, isize),
    (a, rsa, csa): (*const f64, isize, isize),
    (b, rsb, csb): (*const f64, isize, isize),
    alpha: f64,
    beta: f64,
) {
    gemm::gemm(
        m,
        n,
        k,
        c,
        1,
        ldc,
        beta != 0.0,
        a,
        csa,
        rsa,
        b,
        csb,
        rsb,
        beta,
        alpha,
        false,
        false,
        false,
        ::gemm::Parallelism::None,
    );
}

/// Fills `c[i][j] = a_i . a_j` for every `j >= i`, touching only whole
/// row blocks on and above the diagonal. Entries below the diagonal are
/// unspecified.
pub fn gram_upper(a: &Matrix, c: &mut Matrix) {
    const BLOCK: usize = 256;
    let (n, k) = a.shape();
    assert_eq!(c.shape(), (n, n), "gram output shape mismatch");
    if n == 0 {
        return;
    }
    if k == 0 {
        c.data.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for i0 in (0..n).step_by(BLOCK) {
        let rows = BLOCK.min(n - i0);
        // SAFETY: rows i0..i0+rows of `a` against rows i0..n, written into
        // the matching block of `c`; all offsets are within the buffers.
        unsafe {
            raw_gemm(
                (rows, n - i0, k),
                (c.data.as_mut_ptr().add(i0 * n + i0), n as isize),
                (a.data.as_ptr().add(i0 * k), k as isize, 1),
                (a.data.as_ptr().add(i0 * k), 1, k as isize),
                1.0,
                0.0,
            );
        }
    }
}

/// `s * b` for a symmetric `s` given by its entries on and above the
/// diagonal. Entries below the diagonal are never read.
pub fn sym_upper_matmul(s: &Matrix, b: &Matrix) -> Matrix {
    const BLOCK: usize = 256;
    let n = s.rows;
    assert_eq!(s.cols, n, "sym_upper_matmul needs a square matrix");
    assert_eq!(b.rows, n, "sym_upper_matmul inner dimension mismatch");
    let k = b.cols;
    let mut out = Matrix::zeros(n, k);
    if n == 0 || k == 0 {
        return out;
    }
    // Contributions of the strict upper blocks read as their transposes,
    // accumulated as `b^T S` so the large operand is walked row-wise.
    let mut out_t = Matrix::zeros(k, n);
    for i0 in (0..n).step_by(BLOCK) {
        let i1 = (i0 + BLOCK).min(n);
        let r = i1 - i0;
        let diag = Matrix::from_fn(r, r, |a, c| {
            let (lo, hi) = if c >= a { (a, c) } else { (c, a) };
            s.data[(i0 + lo) * n + i0 + hi]
        });
        // SAFETY: every block lies inside its matrix: rows i0..i1 of `out`
        // and `b`, rows i0..i1 x columns i1..n of `s`, columns i1..n of
        // `out_t`; outputs are fresh buffers that alias nothing.
        unsafe {
            raw_gemm(
                (r, k, r),
                (out.data.as_mut_ptr().add(i0 * k), k as isize),
                (diag.data.as_ptr(), r as isize, 1),
                (b.data.as_ptr().add(i0 * k), k as isize, 1),
                1.0,
                1.0,
            );
            if i1 < n {
                let s_block = s.data.as_ptr().add(i0 * n + i1);
                raw_gemm(
                    (r, k, n - i1),
                    (out.data.as_mut_ptr().add(i0 * k), k as isize),
                    (s_block, n as isize, 1),
                    (b.data.as_ptr().add(i1 * k), k as isize, 1),
                    1.0,
                    1.0,
                );
                raw_gemm(
                    (k, n - i1, r),
                    (out_t.data.as_mut_ptr().add(i1), n as isize),
                    (b.data.as_ptr().add(i0 * k), 1, k as isize),
                    (s_block, n as isize, 1),
                    1.0,
                    1.0,
                );
            }
        }
    }
    for i in 0..n {
        for (j, val) in out.row_mut(i).iter_mut().enumerate() {
            *val += out_t.data[j * n + i];
        }
    }
    out
}
