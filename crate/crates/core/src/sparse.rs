//! Compressed-row sparse matrices.
//!
//! [`CsrPattern`] stores a boolean sparsity pattern with sorted, deduplicated
//! column indices per row. [`SparseMatrix`] attaches one value per stored
//! entry and provides the sparse-dense products used by graph propagation.

use std::sync::Arc;

use ndarray::Array2;

use crate::autodiff::Real;

/// Boolean sparse matrix in compressed-row form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsrPattern {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl CsrPattern {
    /// An all-zero pattern.
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
        }
    }

    /// Builds a pattern from `(row, col)` pairs. Duplicates collapse.
    ///
    /// Panics if a coordinate is out of bounds.
    pub fn from_entries<I>(rows: usize, cols: usize, entries: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut per_row: Vec<Vec<usize>> = vec![Vec::new(); rows];
        for (r, c) in entries {
            assert!(r < rows && c < cols, "entry ({r}, {c}) out of bounds {rows}x{cols}");
            per_row[r].push(c);
        }
        Self::from_rows(cols, per_row)
    }

    fn from_rows(cols: usize, mut per_row: Vec<Vec<usize>>) -> Self {
        let rows = per_row.len();
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for row in per_row.iter_mut() {
            row.sort_unstable();
            row.dedup();
            indices.extend_from_slice(row);
            indptr.push(indices.len());
        }
        Self { rows, cols, indptr, indices }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Sorted column indices of row `r`.
    pub fn row(&self, r: usize) -> &[usize] {
        &self.indices[self.indptr[r]..self.indptr[r + 1]]
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r < self.rows && self.row(r).binary_search(&c).is_ok()
    }

    /// Iterates `(row, col)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).iter().map(move |&c| (r, c)))
    }

    /// Row index of every stored entry, in storage order.
    pub fn entry_rows(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            out.extend(std::iter::repeat_n(r, self.row_nnz(r)));
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.cols {
            counts[i + 1] += counts[i];
        }
        let indptr = counts.clone();
        let mut cursor = counts;
        let mut indices = vec![0usize; self.nnz()];
        // Rows are visited in ascending order, so each transposed row comes out sorted.
        for r in 0..self.rows {
            for &c in self.row(r) {
                indices[cursor[c]] = r;
                cursor[c] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            indptr,
            indices,
        }
    }

    /// Boolean product: entry `(i, k)` is set iff some `j` has `(i, j)` in
    /// `self` and `(j, k)` in `other`.
    pub fn bool_product(&self, other: &CsrPattern) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut marker = vec![usize::MAX; other.cols];
        let mut per_row = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let mut row = Vec::new();
            for &j in self.row(r) {
                for &k in other.row(j) {
                    if marker[k] != r {
                        marker[k] = r;
                        row.push(k);
                    }
                }
            }
            per_row.push(row);
        }
        Self::from_rows(other.cols, per_row)
    }

    /// Product that keeps the number of distinct paths as a count per entry.
    pub fn count_product(&self, other: &CsrPattern) -> CountMatrix {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut acc = vec![0u64; other.cols];
        let mut touched = Vec::new();
        let mut per_row = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            for &j in self.row(r) {
                for &k in other.row(j) {
                    if acc[k] == 0 {
                        touched.push(k);
                    }
                    acc[k] += 1;
                }
            }
            touched.sort_unstable();
            let row: Vec<(usize, u64)> = touched.iter().map(|&k| (k, acc[k])).collect();
            for &k in &touched {
                acc[k] = 0;
            }
            touched.clear();
            per_row.push(row);
        }
        CountMatrix {
            rows: self.rows,
            cols: other.cols,
            per_row,
        }
    }

    /// Copy with every `(i, i)` entry removed.
    pub fn without_diagonal(&self) -> Self {
        let per_row = (0..self.rows).map(|r| self.row(r).iter().copied().filter(|&c| c != r).collect()).collect();
        Self::from_rows(self.cols, per_row)
    }

    /// Copy with every `(i, i)` entry present. Requires a square pattern.
    pub fn with_self_loops(&self) -> Self {
        assert_eq!(self.rows, self.cols, "self loops need a square pattern");
        let per_row = (0..self.rows)
            .map(|r| {
                let mut row = self.row(r).to_vec();
                row.push(r);
                row
            })
            .collect();
        Self::from_rows(self.cols, per_row)
    }

    pub fn union(&self, other: &CsrPattern) -> Self {
        assert_eq!(self.shape(), other.shape(), "shapes differ");
        let per_row = (0..self.rows)
            .map(|r| {
                let mut row = self.row(r).to_vec();
                row.extend_from_slice(other.row(r));
                row
            })
            .collect();
        Self::from_rows(self.cols, per_row)
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && *self == self.transpose()
    }

    pub fn to_dense(&self) -> Array2<bool> {
        let mut out = Array2::from_elem((self.rows, self.cols), false);
        for (r, c) in self.entries() {
            out[[r, c]] = true;
        }
        out
    }
}

/// Sparse matrix of path counts, one sorted `(col, count)` list per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountMatrix {
    rows: usize,
    cols: usize,
    per_row: Vec<Vec<(usize, u64)>>,
}

impl CountMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[(usize, u64)] {
        &self.per_row[r]
    }

    pub fn get(&self, r: usize, c: usize) -> u64 {
        let row = &self.per_row[r];
        match row.binary_search_by_key(&c, |&(k, _)| k) {
            Ok(i) => row[i].1,
            Err(_) => 0,
        }
    }

    /// Extends a count chain by one more boolean hop.
    pub fn then(&self, next: &CsrPattern) -> CountMatrix {
        assert_eq!(self.cols, next.rows(), "inner dimensions differ");
        let mut acc = vec![0u64; next.cols()];
        let mut touched = Vec::new();
        let mut per_row = Vec::with_capacity(self.rows);
        for row in &self.per_row {
            for &(j, n) in row {
                for &k in next.row(j) {
                    if acc[k] == 0 {
                        touched.push(k);
                    }
                    acc[k] += n;
                }
            }
            touched.sort_unstable();
            per_row.push(touched.iter().map(|&k| (k, acc[k])).collect());
            for &k in &touched {
                acc[k] = 0;
            }
            touched.clear();
        }
        CountMatrix {
            rows: self.rows,
            cols: next.cols(),
            per_row,
        }
    }

    /// Boolean support of the counts.
    pub fn pattern(&self) -> CsrPattern {
        CsrPattern::from_rows(self.cols, self.per_row.iter().map(|row| row.iter().map(|&(c, _)| c).collect()).collect())
    }

    pub fn from_pattern(p: &CsrPattern) -> Self {
        Self {
            rows: p.rows(),
            cols: p.cols(),
            per_row: (0..p.rows()).map(|r| p.row(r).iter().map(|&c| (c, 1)).collect()).collect(),
        }
    }
}

/// A sparsity pattern with one value per stored entry.
#[derive(Clone, Debug)]
pub struct SparseMatrix<T> {
    pattern: Arc<CsrPattern>,
    values: Vec<T>,
}

impl<T: Real> SparseMatrix<T> {
    pub fn new(pattern: Arc<CsrPattern>, values: Vec<T>) -> Self {
        assert_eq!(pattern.nnz(), values.len(), "one value per stored entry");
        Self { pattern, values }
    }

    /// `D^{-1/2} A D^{-1/2}` where `D` holds the row degrees of `A`.
    ///
    /// Requires a square pattern; rows of degree zero stay zero.
    pub fn sym_normalized(pattern: Arc<CsrPattern>) -> Self {
        assert_eq!(pattern.rows(), pattern.cols());
        let inv_sqrt: Vec<T> = (0..pattern.rows())
            .map(|r| match pattern.row_nnz(r) {
                0 => T::zero(),
                d => T::one() / T::from_usize(d).unwrap().sqrt(),
            })
            .collect();
        let values = pattern.entries().map(|(r, c)| inv_sqrt[r] * inv_sqrt[c]).collect();
        Self { pattern, values }
    }

    /// Symmetric normalisation of a bipartite block `R` (users x items):
    /// entry `(u, i)` becomes `1 / sqrt(deg(u) deg(i))`.
    pub fn bipartite_normalized(pattern: Arc<CsrPattern>) -> Self {
        let mut col_deg = vec![0usize; pattern.cols()];
        for &c in pattern.indices() {
            col_deg[c] += 1;
        }
        let values = pattern
            .entries()
            .map(|(r, c)| {
                let d = T::from_usize(pattern.row_nnz(r) * col_deg[c]).unwrap();
                T::one() / d.sqrt()
            })
            .collect();
        Self { pattern, values }
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.pattern.shape()
    }

    pub fn transpose(&self) -> Self {
        let t = self.pattern.transpose();
        // Position of each original entry inside the transposed storage.
        let mut cursor = t.indptr().to_vec();
        let mut values = vec![T::zero(); self.values.len()];
        for (e, (_, c)) in self.pattern.entries().enumerate() {
            values[cursor[c]] = self.values[e];
            cursor[c] += 1;
        }
        Self { pattern: Arc::new(t), values }
    }

    /// `self · x`.
    pub fn spmm(&self, x: &Array2<T>) -> Array2<T> {
        spmm_weighted(&self.pattern, &self.values, x)
    }

    /// `selfᵀ · g` without materialising the transpose.
    pub fn spmm_t(&self, g: &Array2<T>) -> Array2<T> {
        spmm_weighted_t(&self.pattern, &self.values, g)
    }

    pub fn to_dense(&self) -> Array2<T> {
        let mut out = Array2::zeros(self.shape());
        for (e, (r, c)) in self.pattern.entries().enumerate() {
            out[[r, c]] = self.values[e];
        }
        out
    }
}

/// `A · x` for a pattern with explicit entry weights.
pub fn spmm_weighted<T: Real>(p: &CsrPattern, w: &[T], x: &Array2<T>) -> Array2<T> {
    assert_eq!(p.cols(), x.nrows(), "spmm inner dimension");
    let d = x.ncols();
    let mut out = Array2::zeros((p.rows(), d));
    for r in 0..p.rows() {
        let (lo, hi) = (p.indptr()[r], p.indptr()[r + 1]);
        let mut acc = out.row_mut(r);
        for e in lo..hi {
            let c = p.indices()[e];
            acc.scaled_add(w[e], &x.row(c));
        }
    }
    out
}

/// `Aᵀ · g` for a pattern with explicit entry weights.
pub fn spmm_weighted_t<T: Real>(p: &CsrPattern, w: &[T], g: &Array2<T>) -> Array2<T> {
    assert_eq!(p.rows(), g.nrows(), "spmm_t inner dimension");
    let d = g.ncols();
    let mut out = Array2::zeros((p.cols(), d));
    for r in 0..p.rows() {
        let (lo, hi) = (p.indptr()[r], p.indptr()[r + 1]);
        let src = g.row(r);
        for e in lo..hi {
            let c = p.indices()[e];
            out.row_mut(c).scaled_add(w[e], &src);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> CsrPattern {
        CsrPattern::from_entries(3, 4, [(0, 1), (0, 3), (2, 0), (0, 1), (1, 2)])
    }

    #[test]
    fn entries_sorted_and_deduplicated() {
        let p = toy();
        assert_eq!(p.nnz(), 4);
        assert_eq!(p.row(0), &[1, 3]);
        assert!(p.contains(2, 0));
        assert!(!p.contains(2, 1));
    }

    #[test]
    fn transpose_twice_is_identity() {
        let p = toy();
        assert_eq!(p.transpose().transpose(), p);
        assert_eq!(p.transpose().row(1), &[0]);
    }

    #[test]
    fn bool_product_matches_dense() {
        let a = toy();
        let b = a.transpose();
        let prod = a.bool_product(&b);
        let (da, db) = (a.to_dense(), b.to_dense());
        for i in 0..3 {
            for k in 0..3 {
                let want = (0..4).any(|j| da[[i, j]] && db[[j, k]]);
                assert_eq!(prod.contains(i, k), want);
            }
        }
        let counts = a.count_product(&b);
        assert_eq!(counts.get(0, 0), 2);
        assert_eq!(counts.pattern(), prod);
    }

    #[test]
    fn weighted_transpose_and_spmm_agree() {
        let p = Arc::new(toy());
        let m = SparseMatrix::new(p, vec![1.0f64, 2.0, 3.0, 4.0]);
        let x = Array2::from_shape_fn((4, 2), |(i, j)| (i * 2 + j) as f64);
        let dense = m.to_dense();
        assert_eq!(m.spmm(&x), dense.dot(&x));
        let g = Array2::from_shape_fn((3, 2), |(i, j)| (i + j) as f64 - 1.0);
        assert_eq!(m.spmm_t(&g), dense.t().dot(&g));
        assert_eq!(m.transpose().to_dense(), dense.t().to_owned());
    }

    #[test]
    fn self_loops_and_diagonal() {
        let p = CsrPattern::from_entries(3, 3, [(0, 1), (1, 0), (1, 1)]);
        assert_eq!(p.without_diagonal().nnz(), 2);
        let s = p.with_self_loops();
        assert_eq!(s.nnz(), 5);
        assert!(s.contains(2, 2));
    }
}
