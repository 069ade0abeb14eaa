//! The pairwise row-difference operator `D` and the vectorization layout.
//!
//! For an `n x p` matrix `U` stored row-major as `u`, `D u` stacks the row
//! differences `U[i] - U[i']` for every pair `i < i'`, in lexicographic pair
//! order. Every pair owns a contiguous block of `p` rows of `D`. The operator
//! is applied matrix-free; a dense copy exists only for spectral checks and
//! small dense linear algebra.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Columns above which dense materialization is refused.
pub const DENSE_COLUMN_LIMIT: usize = 5000;

/// Mapping between the `(row, column)` entries of an `n x p` matrix and its
/// vectorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VecLayout {
    n: usize,
    p: usize,
}

impl VecLayout {
    pub fn new(n: usize, p: usize) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::InvalidArgument(format!(
                "layout needs n >= 1 and p >= 1, got n={n}, p={p}"
            )));
        }
        Ok(Self { n, p })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Length `np` of the vectorization.
    pub fn len(&self) -> usize {
        self.n * self.p
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// 0-based offset of entry `(i, j)`.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.p + j
    }

    /// Inverse of [`VecLayout::index`].
    #[inline]
    pub fn entry(&self, k: usize) -> (usize, usize) {
        (k / self.p, k % self.p)
    }
}

/// Implicit representation of `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceOperator {
    layout: VecLayout,
    pairs: Vec<(usize, usize)>,
}

impl DifferenceOperator {
    pub fn new(layout: VecLayout) -> Self {
        let n = layout.n();
        let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for k in i + 1..n {
                pairs.push((i, k));
            }
        }
        Self { layout, pairs }
    }

    pub fn from_dims(n: usize, p: usize) -> Result<Self> {
        Ok(Self::new(VecLayout::new(n, p)?))
    }

    pub fn layout(&self) -> VecLayout {
        self.layout
    }

    pub fn n(&self) -> usize {
        self.layout.n
    }

    pub fn p(&self) -> usize {
        self.layout.p
    }

    /// Lexicographically ordered pairs `(i, i')`, `i < i'`, 0-based.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// `p * n(n-1)/2`.
    pub fn rows(&self) -> usize {
        self.pairs.len() * self.layout.p
    }

    /// `np`.
    pub fn cols(&self) -> usize {
        self.layout.len()
    }

    /// Position of pair `(i, i')` (with `i < i'`) in the pair list.
    #[inline]
    pub fn pair_index(&self, i: usize, k: usize) -> usize {
        debug_assert!(i < k && k < self.layout.n);
        let n = self.layout.n;
        i * (2 * n - i - 1) / 2 + (k - i - 1)
    }

    /// Row range `C(i, i')` of the block owned by pair number `pair`.
    #[inline]
    pub fn block(&self, pair: usize) -> std::ops::Range<usize> {
        pair * self.layout.p..(pair + 1) * self.layout.p
    }

    fn check_len(&self, context: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected != actual {
            return Err(Error::DimensionMismatch {
                context,
                expected,
                actual,
            });
        }
        Ok(())
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len("DifferenceOperator::apply", self.cols(), u.len())?;
        let mut out = vec![0.0; self.rows()];
        self.apply_into(u, &mut out);
        Ok(out)
    }

    /// `out = D u` without length checks.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let p = self.layout.p;
        for (block, &(i, k)) in out.chunks_exact_mut(p).zip(&self.pairs) {
            let a = &u[i * p..(i + 1) * p];
            let b = &u[k * p..(k + 1) * p];
            for ((o, x), y) in block.iter_mut().zip(a).zip(b) {
                *o = x - y;
            }
        }
    }

    pub fn apply_adjoint(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len("DifferenceOperator::apply_adjoint", self.rows(), v.len())?;
        let mut out = vec![0.0; self.cols()];
        self.apply_adjoint_into(v, &mut out);
        Ok(out)
    }

    /// `out = D^T v` without length checks.
    pub fn apply_adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        let p = self.layout.p;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (block, &(i, k)) in v.chunks_exact(p).zip(&self.pairs) {
            for (j, b) in block.iter().enumerate() {
                out[i * p + j] += b;
                out[k * p + j] -= b;
            }
        }
    }

    /// `(1/n) D D^T v`, the orthogonal projection onto the column space of `D`.
    pub fn project_column_space(&self, v: &[f64]) -> Result<Vec<f64>> {
        let dtv = self.apply_adjoint(v)?;
        let mut out = self.apply(&dtv)?;
        let inv_n = 1.0 / self.n() as f64;
        out.iter_mut().for_each(|o| *o *= inv_n);
        Ok(out)
    }

    /// `D^† v = (1/n) D^T v`.
    pub fn pseudo_inverse_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.apply_adjoint(v)?;
        let inv_n = 1.0 / self.n() as f64;
        out.iter_mut().for_each(|o| *o *= inv_n);
        Ok(out)
    }

    /// Dense copy of `D`; refused above [`DENSE_COLUMN_LIMIT`] columns.
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        if self.cols() > DENSE_COLUMN_LIMIT {
            return Err(Error::TooLarge {
                what: "difference operator",
                size: self.cols(),
                limit: DENSE_COLUMN_LIMIT,
                hint: "use the matrix-free apply/apply_adjoint checks instead",
            });
        }
        let p = self.layout.p;
        let mut d = DMatrix::zeros(self.rows(), self.cols());
        for (pair, &(i, k)) in self.pairs.iter().enumerate() {
            for j in 0..p {
                d[(pair * p + j, i * p + j)] = 1.0;
                d[(pair * p + j, k * p + j)] = -1.0;
            }
        }
        Ok(d)
    }

    /// Dense SVD of `D`: rank and extreme nonzero singular values.
    pub fn spectrum_check(&self) -> Result<SpectrumReport> {
        let d = self.to_dense()?;
        let svd = d.svd(false, false);
        let sigma = svd.singular_values;
        let max = sigma.iter().cloned().fold(0.0_f64, f64::max);
        let cutoff = 1e-10 * max.max(1.0);
        let nonzero: Vec<f64> = sigma.iter().cloned().filter(|s| *s > cutoff).collect();
        let min_nonzero = nonzero.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(SpectrumReport {
            rank: nonzero.len(),
            min_nonzero_singular_value: if nonzero.is_empty() { 0.0 } else { min_nonzero },
            max_singular_value: max,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumReport {
    pub rank: usize,
    pub min_nonzero_singular_value: f64,
    pub max_singular_value: f64,
}

/// Each row minus the mean row.
pub fn row_center(u: &[f64], layout: VecLayout) -> Vec<f64> {
    let mean = crate::data::column_means(u, layout.n(), layout.p());
    let mut out = u.to_vec();
    for row in out.chunks_exact_mut(layout.p()) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    out
}
