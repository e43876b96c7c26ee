//! Column-sparse matrices.
//!
//! Storage is compressed by column with rows sorted inside each column. A
//! row-major copy is materialized at construction so that transposed
//! products run as contiguous dot products.

use std::fmt::Write as _;

use crate::error::{check_len, Error, Result};

/// The matrix-vector products a box-simplex iteration needs.
pub trait LinearOperator {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `out = M x`
    fn apply(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
    /// `out = Mᵀ y`
    fn apply_t(&self, y: &[f64], out: &mut [f64]) -> Result<()>;
    /// `out = |M| x`
    fn apply_abs(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
    /// `out = |M|ᵀ y`
    fn apply_abs_t(&self, y: &[f64], out: &mut [f64]) -> Result<()>;
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn rows(&self) -> usize {
        (**self).rows()
    }

    fn cols(&self) -> usize {
        (**self).cols()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).apply(x, out)
    }

    fn apply_t(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).apply_t(y, out)
    }

    fn apply_abs(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).apply_abs(x, out)
    }

    fn apply_abs_t(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).apply_abs_t(y, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColSparseMatrix {
    rows: usize,
    cols: usize,
    bound: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    row_values: Vec<f64>,
}

impl ColSparseMatrix {
    /// Builds from explicit columns. Each column must have distinct row
    /// indices and at most `bound` entries; explicit zeros are dropped.
    pub fn from_columns(rows: usize, columns: Vec<Vec<(usize, f64)>>, bound: usize) -> Result<Self> {
        let cols = columns.len();
        let mut col_ptr = Vec::with_capacity(cols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for (j, mut col) in columns.into_iter().enumerate() {
            col.retain(|&(_, v)| v != 0.0);
            col.sort_by_key(|&(r, _)| r);
            if col.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Parameter(format!("column {j} has a duplicate row index")));
            }
            if col.len() > bound {
                return Err(Error::Parameter(format!(
                    "column {j} has {} nonzeros, bound is {bound}",
                    col.len()
                )));
            }
            for (r, v) in col {
                if r >= rows {
                    return Err(Error::Parameter(format!("row {r} out of range in column {j}")));
                }
                if !v.is_finite() {
                    return Err(Error::NumericOverflow(format!("entry ({r}, {j})")));
                }
                row_idx.push(r);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        Ok(Self::finish(rows, cols, bound, col_ptr, row_idx, values))
    }

    /// Builds from `(row, col, value)` triplets, summing duplicates. The
    /// declared bound is the largest column count.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut columns = vec![Vec::new(); cols];
        for &(r, c, v) in triplets {
            if c >= cols {
                return Err(Error::Parameter(format!("column {c} out of range")));
            }
            columns[c].push((r, v));
        }
        for col in &mut columns {
            col.sort_by_key(|&(r, _)| r);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(col.len());
            for &(r, v) in col.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == r => last.1 += v,
                    _ => merged.push((r, v)),
                }
            }
            *col = merged;
        }
        let bound = columns.iter().map(|c| c.iter().filter(|e| e.1 != 0.0).count()).max().unwrap_or(0);
        Self::from_columns(rows, columns, bound)
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let columns = diag.iter().enumerate().map(|(i, &v)| vec![(i, v)]).collect();
        Self::from_columns(n, columns, 1).expect("diagonal entries must be finite")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::finish(rows, cols, 0, vec![0; cols + 1], Vec::new(), Vec::new())
    }

    fn finish(
        rows: usize,
        cols: usize,
        bound: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        let mut counts = vec![0usize; rows + 1];
        for &r in &row_idx {
            counts[r + 1] += 1;
        }
        for r in 0..rows {
            counts[r + 1] += counts[r];
        }
        let row_ptr = counts.clone();
        let mut fill = counts;
        let mut col_idx = vec![0; row_idx.len()];
        let mut row_values = vec![0.0; row_idx.len()];
        for j in 0..cols {
            for k in col_ptr[j]..col_ptr[j + 1] {
                let r = row_idx[k];
                col_idx[fill[r]] = j;
                row_values[fill[r]] = values[k];
                fill[r] += 1;
            }
        }
        ColSparseMatrix { rows, cols, bound, col_ptr, row_idx, values, row_ptr, col_idx, row_values }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    /// Declared per-column nonzero bound.
    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn max_column_nnz(&self) -> usize {
        (0..self.cols).map(|j| self.col_ptr[j + 1] - self.col_ptr[j]).max().unwrap_or(0)
    }

    /// Row indices and values of column `j`, rows ascending.
    pub fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        (&self.row_idx[a..b], &self.values[a..b])
    }

    /// Column indices and values of row `i`, columns ascending.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.row_values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (rows, vals) = self.column(j);
        rows.binary_search(&i).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for j in 0..self.cols {
            let (rows, vals) = self.column(j);
            for (&r, &v) in rows.iter().zip(vals) {
                d[r][j] = v;
            }
        }
        d
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows];
        self.apply(x, &mut out)?;
        Ok(out)
    }

    pub fn matvec_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.cols];
        self.apply_t(y, &mut out)?;
        Ok(out)
    }

    pub fn abs_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows];
        self.apply_abs(x, &mut out)?;
        Ok(out)
    }

    pub fn abs_matvec_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.cols];
        self.apply_abs_t(y, &mut out)?;
        Ok(out)
    }

    /// `self · other`. Rows hit more than once in a column are summed in
    /// the order they are produced; exact zeros are dropped.
    pub fn compose(&self, other: &ColSparseMatrix) -> Result<ColSparseMatrix> {
        check_len(self.cols, other.rows)?;
        let mut acc = vec![0.0; self.rows];
        let mut mark = vec![false; self.rows];
        let mut touched = Vec::new();
        let mut col_ptr = Vec::with_capacity(other.cols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for j in 0..other.cols {
            let (ks, vs) = other.column(j);
            for (&k, &v2) in ks.iter().zip(vs) {
                let (rs, v1s) = self.column(k);
                for (&r, &v1) in rs.iter().zip(v1s) {
                    if !mark[r] {
                        mark[r] = true;
                        touched.push(r);
                    }
                    acc[r] += v1 * v2;
                }
            }
            touched.sort_unstable();
            for &r in &touched {
                if acc[r] != 0.0 {
                    row_idx.push(r);
                    values.push(acc[r]);
                }
                acc[r] = 0.0;
                mark[r] = false;
            }
            touched.clear();
            col_ptr.push(row_idx.len());
        }
        let bound = self.bound * other.bound;
        Ok(Self::finish(self.rows, other.cols, bound, col_ptr, row_idx, values))
    }

    pub fn transpose(&self) -> ColSparseMatrix {
        let bound = (0..self.rows).map(|i| self.row_ptr[i + 1] - self.row_ptr[i]).max().unwrap_or(0);
        Self::finish(
            self.cols,
            self.rows,
            bound,
            self.row_ptr.clone(),
            self.col_idx.clone(),
            self.row_values.clone(),
        )
    }

    pub fn scaled(&self, factor: f64) -> ColSparseMatrix {
        let values = self.values.iter().map(|v| v * factor).collect();
        let mut m = Self::finish(self.rows, self.cols, self.bound, self.col_ptr.clone(), self.row_idx.clone(), values);
        if factor == 0.0 {
            m = Self::zeros(self.rows, self.cols);
        }
        m
    }

    /// `[M₁, M₂, …]`, column blocks side by side.
    pub fn hstack(blocks: &[&ColSparseMatrix]) -> Result<ColSparseMatrix> {
        let rows = blocks.first().map_or(0, |b| b.rows);
        let mut columns = Vec::new();
        let mut bound = 0;
        for b in blocks {
            check_len(rows, b.rows)?;
            bound = bound.max(b.bound);
            for j in 0..b.cols {
                let (rs, vs) = b.column(j);
                columns.push(rs.iter().copied().zip(vs.iter().copied()).collect());
            }
        }
        Self::from_columns(rows, columns, bound)
    }

    /// Blocks stacked vertically.
    pub fn vstack(blocks: &[&ColSparseMatrix]) -> Result<ColSparseMatrix> {
        let cols = blocks.first().map_or(0, |b| b.cols);
        let mut columns = vec![Vec::new(); cols];
        let mut offset = 0;
        let mut bound = 0;
        for b in blocks {
            check_len(cols, b.cols)?;
            bound += b.bound;
            for (j, col) in columns.iter_mut().enumerate() {
                let (rs, vs) = b.column(j);
                col.extend(rs.iter().map(|r| r + offset).zip(vs.iter().copied()));
            }
            offset += b.rows;
        }
        Self::from_columns(offset, columns, bound)
    }

    /// `‖M‖₁→₁`, the largest column ℓ₁ norm.
    pub fn one_to_one_norm(&self) -> f64 {
        (0..self.cols)
            .map(|j| self.column(j).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Nonzeros in column-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.values.len());
        for j in 0..self.cols {
            let (rs, vs) = self.column(j);
            out.extend(rs.iter().zip(vs).map(|(&r, &v)| (r, j, v)));
        }
        out
    }

    /// Replaces the declared column bound, checking that it holds.
    pub fn with_bound(mut self, bound: usize) -> Result<Self> {
        if self.max_column_nnz() > bound {
            return Err(Error::Parameter(format!(
                "a column has {} nonzeros, bound is {bound}",
                self.max_column_nnz()
            )));
        }
        self.bound = bound;
        Ok(self)
    }

    /// `row col value` lines.
    pub fn to_triplet_text(&self) -> String {
        let mut s = format!("# {} {}\n", self.rows, self.cols);
        for j in 0..self.cols {
            let (rs, vs) = self.column(j);
            for (r, v) in rs.iter().zip(vs) {
                let _ = writeln!(s, "{r} {j} {v:?}");
            }
        }
        s
    }

    /// Inverse of [`to_triplet_text`](Self::to_triplet_text); the `# rows cols`
    /// header is required.
    pub fn from_triplet_text(text: &str) -> Result<ColSparseMatrix> {
        let mut lines = text.lines().enumerate();
        let (rows, cols) = match lines.next() {
            Some((_, h)) if h.starts_with('#') => {
                let dims: Vec<usize> = h[1..]
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| Error::Parse { line: 1, msg: "bad header".into() }))
                    .collect::<Result<_>>()?;
                if dims.len() != 2 {
                    return Err(Error::Parse { line: 1, msg: "header needs `# rows cols`".into() });
                }
                (dims[0], dims[1])
            }
            _ => return Err(Error::Parse { line: 1, msg: "missing `# rows cols` header".into() }),
        };
        let mut trips = Vec::new();
        for (idx, line) in lines {
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.is_empty() {
                continue;
            }
            let bad = || Error::Parse { line: idx + 1, msg: format!("bad triplet `{line}`") };
            if t.len() != 3 {
                return Err(bad());
            }
            let r: usize = t[0].parse().map_err(|_| bad())?;
            let c: usize = t[1].parse().map_err(|_| bad())?;
            let v: f64 = t[2].parse().map_err(|_| bad())?;
            trips.push((r, c, v));
        }
        Self::from_triplets(rows, cols, &trips)
    }
}

impl LinearOperator for ColSparseMatrix {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(self.cols, x.len())?;
        check_len(self.rows, out.len())?;
        for (i, o) in out.iter_mut().enumerate() {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            *o = self.col_idx[a..b]
                .iter()
                .zip(&self.row_values[a..b])
                .map(|(&j, &v)| v * x[j])
                .sum();
        }
        Ok(())
    }

    fn apply_t(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(self.rows, y.len())?;
        check_len(self.cols, out.len())?;
        for (j, o) in out.iter_mut().enumerate() {
            let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
            *o = self.row_idx[a..b].iter().zip(&self.values[a..b]).map(|(&r, &v)| v * y[r]).sum();
        }
        Ok(())
    }

    fn apply_abs(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(self.cols, x.len())?;
        check_len(self.rows, out.len())?;
        for (i, o) in out.iter_mut().enumerate() {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            *o = self.col_idx[a..b]
                .iter()
                .zip(&self.row_values[a..b])
                .map(|(&j, &v)| v.abs() * x[j])
                .sum();
        }
        Ok(())
    }

    fn apply_abs_t(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(self.rows, y.len())?;
        check_len(self.cols, out.len())?;
        for (j, o) in out.iter_mut().enumerate() {
            let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
            *o = self.row_idx[a..b]
                .iter()
                .zip(&self.values[a..b])
                .map(|(&r, &v)| v.abs() * y[r])
                .sum();
        }
        Ok(())
    }
}
