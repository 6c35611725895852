//! Dense row-major kernels backing the search: top-k selection, row
//! replication, reshape, row gathers, log-domain reductions and masking.
//!
//! All score math is `f64`. `-inf` is the only mask sentinel; a NaN reaching
//! a [`ScoreMatrix`] constructor is a bug and trips a debug assertion.
//!
//! The batched product [`matmul_rows`] accumulates every output entry in the
//! same order as [`dot`], so a batched call is bit-identical to the equivalent
//! sequence of [`matvec_into`] calls.

use crate::error::{param_err, Result};

/// Dense row-major matrix of `f64` scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

/// Alias used where a matrix carries input features rather than scores.
pub type FeatureMatrix = ScoreMatrix;

#[inline]
fn debug_check_values(values: &[f64]) {
    debug_assert!(
        values.iter().all(|v| !v.is_nan() && *v != f64::INFINITY),
        "score matrix holds NaN or +inf"
    );
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return param_err(format!(
                "buffer of {} values cannot form a {rows}x{cols} matrix",
                values.len()
            ));
        }
        debug_check_values(&values);
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return param_err(format!("row {i} has {} columns, expected {cols}", r.len()));
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, values)
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
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(!value.is_nan());
        self.values[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-column matrix has no row data.
        let cols = self.cols.max(1);
        self.values.chunks_exact(cols).take(self.rows)
    }

    pub fn transpose(&self) -> ScoreMatrix {
        let mut out = vec![0.0; self.values.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.values[r * self.cols + c];
            }
        }
        ScoreMatrix {
            rows: self.cols,
            cols: self.rows,
            values: out,
        }
    }
}

/// Dense row-major matrix of indices into some source dimension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMatrix {
    rows: usize,
    cols: usize,
    values: Vec<usize>,
}

impl IndexMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<usize>) -> Result<Self> {
        if values.len() != rows * cols {
            return param_err(format!(
                "buffer of {} indices cannot form a {rows}x{cols} matrix",
                values.len()
            ));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> usize {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[usize] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// Boolean matrix used by [`masked_fill`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    values: Vec<bool>,
}

impl MaskMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != rows * cols {
            return param_err(format!(
                "mask of {} entries cannot form a {rows}x{cols} matrix",
                values.len()
            ));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn filled(rows: usize, cols: usize, value: bool) -> Self {
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    /// Mask whose rows are `true` where `row_mask` is.
    pub fn from_row_mask(row_mask: &[bool], cols: usize) -> Self {
        let values = row_mask
            .iter()
            .flat_map(|&m| std::iter::repeat_n(m, cols))
            .collect();
        Self {
            rows: row_mask.len(),
            cols,
            values,
        }
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }
}

/// Indices of the `k` largest entries of `row`, best first. Equal values keep
/// column order, so the lowest index wins a tie.
///
/// Bounded insertion: each entry is compared against the current k-th best
/// and only inserted when it strictly beats it.
pub fn topk_indices(row: &[f64], k: usize, out: &mut Vec<usize>) {
    out.clear();
    if k == 0 {
        return;
    }
    for (i, &v) in row.iter().enumerate() {
        if out.len() == k {
            if v <= row[out[k - 1]] {
                continue;
            }
            out.pop();
        }
        // First position whose value is strictly smaller than v; equal values
        // already present came from lower columns and stay ahead.
        let pos = out.partition_point(|&j| row[j] >= v);
        out.insert(pos, i);
    }
}

/// Per-row top-k: the k largest values in descending order and their column
/// indices, ties resolved toward the lowest column.
pub fn topk_rows(m: &ScoreMatrix, k: usize) -> Result<(ScoreMatrix, IndexMatrix)> {
    if k == 0 || k > m.cols {
        return param_err(format!("top-k with k={k} on a matrix with {} columns", m.cols));
    }
    let mut values = Vec::with_capacity(m.rows * k);
    let mut indices = Vec::with_capacity(m.rows * k);
    let mut scratch = Vec::with_capacity(k + 1);
    for row in m.iter_rows() {
        topk_indices(row, k, &mut scratch);
        values.extend(scratch.iter().map(|&j| row[j]));
        indices.extend_from_slice(&scratch);
    }
    Ok((
        ScoreMatrix {
            rows: m.rows,
            cols: k,
            values,
        },
        IndexMatrix {
            rows: m.rows,
            cols: k,
            values: indices,
        },
    ))
}

/// Repeats each entry of `v` across `k` columns: `[n] -> [n, k]`.
pub fn replicate_rows(v: &[f64], k: usize) -> Result<ScoreMatrix> {
    if k == 0 {
        return param_err("replicate_rows needs k >= 1");
    }
    let values = v
        .iter()
        .flat_map(|&x| std::iter::repeat_n(x, k))
        .collect();
    ScoreMatrix::new(v.len(), k, values)
}

/// Reinterprets the row-major buffer with a new shape.
pub fn reshape(m: ScoreMatrix, new_rows: usize, new_cols: usize) -> Result<ScoreMatrix> {
    if new_rows * new_cols != m.values.len() {
        return param_err(format!(
            "cannot reshape {}x{} into {new_rows}x{new_cols}",
            m.rows, m.cols
        ));
    }
    Ok(ScoreMatrix {
        rows: new_rows,
        cols: new_cols,
        values: m.values,
    })
}

/// Output row `j` is a copy of `m` row `idx[j]`.
pub fn gather_rows(m: &ScoreMatrix, idx: &[usize]) -> Result<ScoreMatrix> {
    let mut values = Vec::with_capacity(idx.len() * m.cols);
    for &i in idx {
        if i >= m.rows {
            return param_err(format!("row index {i} out of range for {} rows", m.rows));
        }
        values.extend_from_slice(m.row(i));
    }
    Ok(ScoreMatrix {
        rows: idx.len(),
        cols: m.cols,
        values,
    })
}

/// `log(exp(a) + exp(b))`, exact `-inf` when both inputs are `-inf`.
#[inline]
pub fn logaddexp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum(exp(x)))` with a max shift. Sums left to right after the shift,
/// so the result does not depend on how callers chunk their work.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return param_err("logsumexp of an empty slice");
    }
    Ok(logsumexp_nonempty(values))
}

#[inline]
pub(crate) fn logsumexp_nonempty(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Entries where `mask` is true become `fill`.
pub fn masked_fill(m: &ScoreMatrix, mask: &MaskMatrix, fill: f64) -> Result<ScoreMatrix> {
    if mask.rows != m.rows || mask.cols != m.cols {
        return param_err(format!(
            "mask shape {}x{} does not match matrix {}x{}",
            mask.rows, mask.cols, m.rows, m.cols
        ));
    }
    if fill.is_nan() {
        return param_err("masked_fill with NaN");
    }
    let values = m
        .values
        .iter()
        .zip(&mask.values)
        .map(|(&v, &masked)| if masked { fill } else { v })
        .collect();
    Ok(ScoreMatrix {
        rows: m.rows,
        cols: m.cols,
        values,
    })
}

/// In-place log-softmax. Rows containing only `-inf` stay `-inf`.
pub fn log_softmax_in_place(row: &mut [f64]) {
    let norm = logsumexp_nonempty(row);
    if norm == f64::NEG_INFINITY {
        return;
    }
    for v in row.iter_mut() {
        *v -= norm;
    }
}

/// In-place softmax; `-inf` entries get probability exactly zero.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |s, (x, y)| s + x * y)
}

/// `out = w x + bias`, one dot product per output row.
pub fn matvec_into(w: &ScoreMatrix, x: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, out.len());
    for (o, slot) in out.iter_mut().enumerate() {
        let d = dot(w.row(o), x);
        *slot = match bias {
            Some(b) => d + b[o],
            None => d,
        };
    }
}

/// `out[r, c] = sum_k a[r, k] * b[k, c]` for row-major `a: [rows, inner]`,
/// `b: [inner, cols]` and `out: [rows, cols]`.
///
/// Every entry starts from zero and accumulates over `k` in ascending order,
/// so it is bit-identical to [`dot`] of row `r` of `a` with column `c` of `b`.
/// Output tiles stay in registers across the `k` loop.
pub fn gemm_into(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(b.len(), inner * cols);
    debug_assert_eq!(out.len(), rows * cols);
    let g = Gemm {
        a,
        b,
        inner,
        cols,
    };
    // Column panels outermost: a 16-wide panel of `b` stays in L1 while the
    // rows of `a` stream past it.
    let mut c0 = 0;
    while c0 < cols {
        let width = [16, 8, 4, 2, 1]
            .into_iter()
            .find(|&w| c0 + w <= cols)
            .expect("width 1 always fits");
        match width {
            16 => g.panel::<16>(rows, c0, out),
            8 => g.panel::<8>(rows, c0, out),
            4 => g.panel::<4>(rows, c0, out),
            2 => g.panel::<2>(rows, c0, out),
            _ => g.panel::<1>(rows, c0, out),
        }
        c0 += width;
    }
}

struct Gemm<'a> {
    a: &'a [f64],
    b: &'a [f64],
    inner: usize,
    cols: usize,
}

impl Gemm<'_> {
    fn panel<const C: usize>(&self, rows: usize, c0: usize, out: &mut [f64]) {
        let mut r0 = 0;
        while r0 + 4 <= rows {
            self.tile::<4, C>(r0, c0, out);
            r0 += 4;
        }
        while r0 < rows {
            self.tile::<1, C>(r0, c0, out);
            r0 += 1;
        }
    }

    #[inline(always)]
    fn tile<const R: usize, const C: usize>(&self, r0: usize, c0: usize, out: &mut [f64]) {
        let (inner, cols) = (self.inner, self.cols);
        let ar: [&[f64]; R] = std::array::from_fn(|i| &self.a[(r0 + i) * inner..(r0 + i + 1) * inner]);
        let mut acc = [[0.0f64; C]; R];
        for k in 0..inner {
            let bk: &[f64; C] = self.b[k * cols + c0..k * cols + c0 + C]
                .try_into()
                .expect("tile width");
            for i in 0..R {
                let av = ar[i][k];
                for l in 0..C {
                    acc[i][l] += av * bk[l];
                }
            }
        }
        for (i, row) in acc.iter().enumerate() {
            out[(r0 + i) * cols + c0..(r0 + i) * cols + c0 + C].copy_from_slice(row);
        }
    }
}

/// Batched affine map over the rows of `x`: `[n, in] -> [n, out]`.
///
/// Bit-identical to [`matvec_into`] on each row.
pub fn matmul_rows(w: &ScoreMatrix, x: &ScoreMatrix, bias: Option<&[f64]>) -> ScoreMatrix {
    debug_assert_eq!(w.cols, x.cols);
    let n = x.rows;
    let out_dim = w.rows;
    let xt = x.transpose();
    let mut wx = vec![0.0; out_dim * n];
    gemm_into(&w.values, &xt.values, out_dim, w.cols, n, &mut wx);
    let mut out = vec![0.0; n * out_dim];
    for (o, row) in wx.chunks(n.max(1)).take(out_dim).enumerate() {
        let bo = bias.map(|bv| bv[o]);
        for (j, &v) in row.iter().enumerate() {
            out[j * out_dim + o] = match bo {
                Some(b) => v + b,
                None => v,
            };
        }
    }
    ScoreMatrix {
        rows: n,
        cols: out_dim,
        values: out,
    }
}
