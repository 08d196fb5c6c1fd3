//! Sparse linear algebra for the fine-scale and corrector problems.
//!
//! Corrector problems are equality constrained: minimize `w'Sw/2 - b'w`
//! subject to `Cw = 0` with `S` symmetric positive definite on the patch and a
//! handful of Clément constraint rows `C`. They are solved through the Schur
//! complement `C S^-1 C'`, formed explicitly from an envelope Cholesky factor
//! of `S` that is reused for every right-hand side of the patch.

use log::warn;

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMat {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMat {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; n_rows + 1];
        for &(r, c, _) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::Dimension(format!(
                    "triplet ({r}, {c}) outside a {n_rows}x{n_cols} matrix"
                )));
            }
            counts[r + 1] += 1;
        }
        for r in 0..n_rows {
            counts[r + 1] += counts[r];
        }
        let mut fill = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0f64; triplets.len()];
        for &(r, c, v) in triplets {
            cols[fill[r]] = c;
            vals[fill[r]] = v;
            fill[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..n_rows {
            scratch.clear();
            scratch.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_by_key(|&(c, _)| c);
            for &(c, v) in &scratch {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseMat { n_rows, n_cols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        SparseMat {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        SparseMat { n_rows, n_cols, row_ptr: vec![0; n_rows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of one row.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|r| self.get(r, r)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols, "matvec input length");
        assert_eq!(y.len(), self.n_rows, "matvec output length");
        for (r, out) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *out = s;
        }
    }

    /// `y = A' x`.
    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_rows, "transpose matvec input length");
        let mut y = vec![0.0; self.n_cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.values[k] * xr;
            }
        }
        y
    }

    /// `x' A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        dot(x, &ay)
    }

    pub fn transpose(&self) -> SparseMat {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0f64; self.nnz()];
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                col_idx[fill[c]] = r;
                values[fill[c]] = self.values[k];
                fill[c] += 1;
            }
        }
        SparseMat { n_rows: self.n_cols, n_cols: self.n_rows, row_ptr: counts, col_idx, values }
    }

    /// Sparse product `A B`.
    pub fn matmul(&self, other: &SparseMat) -> Result<SparseMat> {
        if self.n_cols != other.n_rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.n_rows, self.n_cols, other.n_rows, other.n_cols
            )));
        }
        let mut row_ptr = Vec::with_capacity(self.n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut acc = vec![0.0; other.n_cols];
        let mut marker = vec![usize::MAX; other.n_cols];
        let mut touched: Vec<usize> = Vec::new();
        for r in 0..self.n_rows {
            touched.clear();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let (a, mid) = (self.values[k], self.col_idx[k]);
                for kk in other.row_ptr[mid]..other.row_ptr[mid + 1] {
                    let c = other.col_idx[kk];
                    if marker[c] != r {
                        marker[c] = r;
                        acc[c] = 0.0;
                        touched.push(c);
                    }
                    acc[c] += a * other.values[kk];
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                col_idx.push(c);
                values.push(acc[c]);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseMat { n_rows: self.n_rows, n_cols: other.n_cols, row_ptr, col_idx, values })
    }

    /// Sum `A + factor * B` of two matrices with equal shape.
    pub fn add_scaled(&self, other: &SparseMat, factor: f64) -> Result<SparseMat> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::Dimension("matrix sum of different shapes".into()));
        }
        let mut trip = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.n_rows {
            let (c, v) = self.row(r);
            trip.extend(c.iter().zip(v).map(|(&c, &v)| (r, c, v)));
            let (c, v) = other.row(r);
            trip.extend(c.iter().zip(v).map(|(&c, &v)| (r, c, factor * v)));
        }
        SparseMat::from_triplets(self.n_rows, self.n_cols, &trip)
    }

    /// Submatrix with the given rows and columns; `col_map[c]` gives the new
    /// column of old column `c`, or `usize::MAX` to drop it.
    pub fn select(&self, rows: &[usize], col_map: &[usize], n_new_cols: usize) -> SparseMat {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for &r in rows {
            scratch.clear();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let nc = col_map[self.col_idx[k]];
                if nc != usize::MAX {
                    scratch.push((nc, self.values[k]));
                }
            }
            scratch.sort_by_key(|&(c, _)| c);
            for &(c, v) in &scratch {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMat { n_rows: rows.len(), n_cols: n_new_cols, row_ptr, col_idx, values }
    }

    /// Maximum of `|a_ij - a_ji|` over all stored entries.
    pub fn asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                m = m.max((v - self.get(c, r)).abs());
            }
        }
        m
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (r, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
        }
        d
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for SPD `s`.
pub fn cg_solve(s: &SparseMat, b: &[f64], tol: f64, max_iter: usize) -> Result<CgOutcome> {
    if s.n_rows() != s.n_cols() || s.n_rows() != b.len() {
        return Err(Error::Dimension(format!(
            "cg: matrix {}x{} with rhs of length {}",
            s.n_rows(),
            s.n_cols(),
            b.len()
        )));
    }
    if tol <= 0.0 {
        return Err(Error::Config("cg tolerance must be positive".into()));
    }
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(CgOutcome { x: vec![0.0; n], iterations: 0, relative_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = s
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut rel = 1.0;
    for it in 1..=max_iter {
        s.mul_vec_into(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            return Err(Error::NotPositiveDefinite { row: it, pivot: pq });
        }
        let alpha = rz / pq;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * q[k];
        }
        rel = norm2(&r) / bnorm;
        if rel <= tol {
            return Ok(CgOutcome { x, iterations: it, relative_residual: rel });
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: rel })
}

/// Envelope (skyline) Cholesky factor `S = L L'` of a sparse SPD matrix.
///
/// Row `i` of `L` is stored densely from its first structural nonzero column
/// to the diagonal. Fill stays inside the envelope, so for row-major ordered
/// patches of a structured grid the cost is `O(n * w^2)` with `w` the row width.
#[derive(Clone, Debug)]
pub struct SkylineCholesky {
    n: usize,
    first: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    pub fn factor(s: &SparseMat) -> Result<Self> {
        let n = s.n_rows();
        if n != s.n_cols() {
            return Err(Error::Dimension("cholesky of a non-square matrix".into()));
        }
        let mut first = vec![0usize; n];
        for i in 0..n {
            let (cols, _) = s.row(i);
            first[i] = cols.first().map(|&c| c.min(i)).unwrap_or(i);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for i in 0..n {
            offsets.push(offsets[i] + (i - first[i] + 1));
        }
        let mut data = vec![0.0; offsets[n]];
        for i in 0..n {
            let (cols, vals) = s.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                if c <= i {
                    data[offsets[i] + c - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            let oi = offsets[i];
            for j in fi..i {
                let fj = first[j];
                let oj = offsets[j];
                let start = fi.max(fj);
                let len = j - start;
                let (head, tail) = data.split_at_mut(oi);
                let row_j = &head[oj + start - fj..oj + start - fj + len];
                let row_i = &tail[start - fi..start - fi + len];
                let s_ij = dot(row_i, row_j);
                let ljj = head[oj + j - fj];
                tail[j - fi] = (tail[j - fi] - s_ij) / ljj;
            }
            let row_i = &data[oi..oi + (i - fi)];
            let d = data[oi + i - fi] - dot(row_i, row_i);
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite { row: i, pivot: d });
            }
            data[oi + i - fi] = d.sqrt();
        }
        Ok(SkylineCholesky { n, first, offsets, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn stored_entries(&self) -> usize {
        self.data.len()
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let fi = self.first[i];
            let oi = self.offsets[i];
            let s = dot(&self.data[oi..oi + i - fi], &x[fi..i]);
            x[i] = (x[i] - s) / self.data[oi + i - fi];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let oi = self.offsets[i];
            x[i] /= self.data[oi + i - fi];
            let xi = x[i];
            for (k, l) in (fi..i).zip(&self.data[oi..oi + i - fi]) {
                x[k] -= l * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Dense symmetric positive semidefinite factorization with diagonal pivoting.
/// Pivots below `drop_tol * max_diag` are treated as dependent and dropped.
#[derive(Clone, Debug)]
pub struct PivotedCholesky {
    n: usize,
    /// Factor rows for the kept pivots, in pivot order; `l[k][j]` for original index j.
    rows: Vec<Vec<f64>>,
    pivots: Vec<usize>,
    dropped: Vec<usize>,
}

impl PivotedCholesky {
    /// `a` is a dense symmetric matrix in row-major order.
    pub fn factor(a: &[f64], n: usize, drop_tol: f64) -> Self {
        assert_eq!(a.len(), n * n);
        let mut work = a.to_vec();
        let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0, f64::max);
        let mut remaining: Vec<usize> = (0..n).collect();
        let mut rows = Vec::new();
        let mut pivots = Vec::new();
        while !remaining.is_empty() {
            let (pos, &p) = remaining
                .iter()
                .enumerate()
                .max_by(|x, y| work[x.1 * n + x.1].total_cmp(&work[y.1 * n + y.1]))
                .unwrap();
            let d = work[p * n + p];
            if !(d > drop_tol * max_diag) || max_diag <= 0.0 {
                break;
            }
            remaining.swap_remove(pos);
            let sd = d.sqrt();
            let mut row = vec![0.0; n];
            row[p] = sd;
            for &j in &remaining {
                row[j] = work[p * n + j] / sd;
            }
            for &i in &remaining {
                for &j in &remaining {
                    work[i * n + j] -= row[i] * row[j];
                }
            }
            rows.push(row);
            pivots.push(p);
        }
        remaining.sort_unstable();
        PivotedCholesky { n, rows, pivots, dropped: remaining }
    }

    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    /// Solves on the kept pivots; dropped unknowns are set to zero.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let r = self.rank();
        let mut y = vec![0.0; r];
        for k in 0..r {
            let mut s = b[self.pivots[k]];
            for m in 0..k {
                s -= self.rows[m][self.pivots[k]] * y[m];
            }
            y[k] = s / self.rows[k][self.pivots[k]];
        }
        let mut x = vec![0.0; self.n];
        for k in (0..r).rev() {
            let mut s = y[k];
            for m in k + 1..r {
                s -= self.rows[k][self.pivots[m]] * x[self.pivots[m]];
            }
            x[self.pivots[k]] = s / self.rows[k][self.pivots[k]];
        }
        x
    }
}

/// Equality constrained quadratic problem `min w'Sw/2 - b'w  s.t.  Cw = 0`.
#[derive(Clone, Debug)]
pub struct KktSystem {
    pub s: SparseMat,
    pub c: SparseMat,
    pub b: Vec<f64>,
}

/// Relative pivot size below which a Schur complement row counts as dependent.
pub const SCHUR_DROP_TOL: f64 = 1e-13;

/// Factorization of a KKT operator, reusable for many right-hand sides.
#[derive(Clone, Debug)]
pub struct SaddleFactor {
    chol: SkylineCholesky,
    c: SparseMat,
    /// `S^-1 C'`, column-major: one vector of length n per constraint.
    y: Vec<Vec<f64>>,
    schur: PivotedCholesky,
}

impl SaddleFactor {
    pub fn new(s: &SparseMat, c: &SparseMat) -> Result<Self> {
        if c.n_rows() > 0 && c.n_cols() != s.n_cols() {
            return Err(Error::Dimension(format!(
                "constraints have {} columns, matrix has {}",
                c.n_cols(),
                s.n_cols()
            )));
        }
        let chol = SkylineCholesky::factor(s)?;
        let n = s.n_rows();
        let m = c.n_rows();
        let mut y = Vec::with_capacity(m);
        for r in 0..m {
            let mut col = vec![0.0; n];
            let (cols, vals) = c.row(r);
            for (&k, &v) in cols.iter().zip(vals) {
                col[k] = v;
            }
            chol.solve_in_place(&mut col);
            y.push(col);
        }
        let mut g = vec![0.0; m * m];
        for r in 0..m {
            let (cols, vals) = c.row(r);
            for q in r..m {
                let v: f64 = cols.iter().zip(vals).map(|(&k, &cv)| cv * y[q][k]).sum();
                g[r * m + q] = v;
                g[q * m + r] = v;
            }
        }
        let schur = PivotedCholesky::factor(&g, m, SCHUR_DROP_TOL);
        if !schur.dropped().is_empty() {
            warn!("dropped {} dependent constraint rows of {}", schur.dropped().len(), m);
        }
        Ok(SaddleFactor { chol, c: c.clone(), y, schur })
    }

    pub fn n_constraints(&self) -> usize {
        self.c.n_rows()
    }

    pub fn dropped_constraints(&self) -> &[usize] {
        self.schur.dropped()
    }

    /// Returns the constrained minimizer and the multipliers.
    pub fn solve(&self, b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut w = self.chol.solve(b);
        if self.c.n_rows() == 0 {
            return (w, Vec::new());
        }
        let cw = self.c.mul_vec(&w);
        let lambda = self.schur.solve(&cw);
        for (l, col) in lambda.iter().zip(&self.y) {
            if *l != 0.0 {
                for (wi, yi) in w.iter_mut().zip(col) {
                    *wi -= l * yi;
                }
            }
        }
        (w, lambda)
    }
}

/// One-shot constrained solve with residual checks on `Sw + C'λ = b` and `Cw = 0`.
pub fn saddle_solve(sys: &KktSystem, tol_r: f64, tol_c: f64) -> Result<Vec<f64>> {
    let factor = SaddleFactor::new(&sys.s, &sys.c)?;
    let (w, lambda) = factor.solve(&sys.b);
    let mut res = sys.s.mul_vec(&w);
    if sys.c.n_rows() > 0 {
        let ct = sys.c.mul_transpose_vec(&lambda);
        for (r, v) in res.iter_mut().zip(ct) {
            *r += v;
        }
    }
    for (r, bi) in res.iter_mut().zip(&sys.b) {
        *r -= bi;
    }
    let bnorm = norm2(&sys.b);
    let rel = if bnorm > 0.0 { norm2(&res) / bnorm } else { norm2(&res) };
    if rel > tol_r {
        return Err(Error::NoConvergence { iterations: 1, residual: rel });
    }
    if sys.c.n_rows() > 0 {
        let energy = sys.s.bilinear(&w, &w).sqrt();
        let cw = norm2(&sys.c.mul_vec(&w));
        let scale = sys.c.max_abs() * energy.max(f64::MIN_POSITIVE) / sys.s.max_abs().sqrt();
        if cw > tol_c * scale.max(f64::MIN_POSITIVE) && cw > tol_c * norm2(&w) * sys.c.max_abs() {
            return Err(Error::NoConvergence { iterations: 1, residual: cw });
        }
    }
    Ok(w)
}
