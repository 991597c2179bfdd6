//! Sparse storage and direct solvers.
//!
//! Matrices are assembled as triplets and compressed to CSR. Solves go through
//! a reverse Cuthill–McKee reordering followed by a banded factorization:
//! Cholesky for symmetric positive-definite operators, LU with partial
//! pivoting otherwise. Both factorizations support transposed solves, which
//! is what the adjoint machinery needs.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative residual every direct solve must reach.
pub const SOLVE_RTOL: f64 = 1e-10;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Coordinate-format accumulator; duplicate entries are summed on compression.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn extend(&mut self, other: Triplets) {
        debug_assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        self.entries.extend(other.entries);
    }

    pub fn to_csr(mut self) -> CsrMatrix {
        self.entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl CsrMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterate the stored entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map(|(_, v)| v).unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols);
        DVector::from_iterator(self.nrows, (0..self.nrows).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum::<f64>()))
    }

    pub fn transpose_mul_vec(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.nrows);
        let mut out = DVector::zeros(self.ncols);
        for i in 0..self.nrows {
            let yi = y[i];
            if yi != 0.0 {
                for (c, v) in self.row(i) {
                    out[c] += v * yi;
                }
            }
        }
        out
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (0..self.nrows)
            .map(|i| x[i] * self.row(i).map(|(c, v)| v * y[c]).sum::<f64>())
            .sum()
    }

    pub fn scaled(&self, alpha: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `alpha·self + beta·other`, patterns merged.
    pub fn add(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t = Triplets::with_capacity(self.nrows, self.ncols, self.nnz() + other.nnz());
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                t.push(i, c, alpha * v);
            }
            for (c, v) in other.row(i) {
                t.push(i, c, beta * v);
            }
        }
        t.to_csr()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut t = Triplets::with_capacity(self.ncols, self.nrows, self.nnz());
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                t.push(c, i, v);
            }
        }
        t.to_csr()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                d[(i, c)] += v;
            }
        }
        d
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `‖A − Aᵀ‖_F / ‖A‖_F`.
    pub fn symmetry_defect(&self) -> f64 {
        let diff = self.add(1.0, &self.transpose(), -1.0);
        let norm = self.frobenius_norm();
        if norm == 0.0 {
            0.0
        } else {
            diff.frobenius_norm() / norm
        }
    }

    /// Row sums, i.e. `A·1`.
    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        let mut cols = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                cols[j] += v.abs();
            }
        }
        cols.into_iter().fold(0.0, f64::max)
    }

    pub fn row_sums(&self) -> DVector<f64> {
        DVector::from_iterator(self.nrows, (0..self.nrows).map(|i| self.row(i).map(|(_, v)| v).sum()))
    }

    /// Reverse Cuthill–McKee ordering of the symmetrized pattern.
    /// Returns `perm` with `perm[new] = old`.
    pub fn rcm_ordering(&self) -> Vec<usize> {
        assert_eq!(self.nrows, self.ncols);
        let n = self.nrows;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            for (c, _) in self.row(i) {
                if c != i {
                    adj[i].push(c);
                    adj[c].push(i);
                }
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut by_degree: Vec<usize> = (0..n).collect();
        by_degree.sort_by_key(|&i| (degree[i], i));
        for &seed in &by_degree {
            if visited[seed] {
                continue;
            }
            let start = pseudo_peripheral(seed, &adj, &degree);
            visited[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                order.push(v);
                let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
                next.sort_by_key(|&w| (degree[w], w));
                for w in next {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
        order.reverse();
        order
    }

    /// Symmetric permutation `P A Pᵀ` with `perm[new] = old`.
    fn permuted(&self, perm: &[usize]) -> CsrMatrix {
        let n = self.nrows;
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut t = Triplets::with_capacity(n, n, self.nnz());
        for i in 0..n {
            for (c, v) in self.row(i) {
                t.push(inv[i], inv[c], v);
            }
        }
        t.to_csr()
    }

    fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                if v != 0.0 {
                    if c < i {
                        kl = kl.max(i - c);
                    } else {
                        ku = ku.max(c - i);
                    }
                }
            }
        }
        (kl, ku)
    }
}

fn bfs_levels(start: usize, adj: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let mut level = vec![usize::MAX; adj.len()];
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut last = start;
    while let Some(v) = queue.pop_front() {
        last = v;
        for &w in &adj[v] {
            if level[w] == usize::MAX {
                level[w] = level[v] + 1;
                queue.push_back(w);
            }
        }
    }
    let depth = level[last];
    (level, depth)
}

fn pseudo_peripheral(seed: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut root = seed;
    let (mut level, mut depth) = bfs_levels(root, adj);
    loop {
        let candidate = (0..adj.len())
            .filter(|&i| level[i] == depth)
            .min_by_key(|&i| (degree[i], i))
            .unwrap_or(root);
        let (l2, d2) = bfs_levels(candidate, adj);
        if d2 > depth {
            root = candidate;
            level = l2;
            depth = d2;
        } else {
            return root;
        }
    }
}

/// Banded LU factorization with partial pivoting of `P A Pᵀ`.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
    perm: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::Argument("LU requires a square matrix".into()));
        }
        let n = a.nrows;
        let perm = a.rcm_ordering();
        let ap = a.permuted(&perm);
        let (kl, ku) = ap.bandwidths();
        let kv = kl + ku;
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0; ldab * n];
        for i in 0..n {
            for (j, v) in ap.row(i) {
                ab[(kv + i - j) + j * ldab] += v;
            }
        }
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            ldab,
            ab,
            ipiv: vec![0; n],
            perm,
        };
        lu.factor_in_place()?;
        Ok(lu)
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        (self.kl + self.ku + r - c) + c * self.ldab
    }

    fn factor_in_place(&mut self) -> Result<()> {
        let n = self.n;
        let kl = self.kl;
        let ku = self.ku;
        let mut ju = 0usize;
        let scale = self.ab.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = self.ab[self.idx(j, j)].abs();
            for i in 1..=km {
                let v = self.ab[self.idx(j + i, j)].abs();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            self.ipiv[j] = j + jp;
            if best == 0.0 || best <= scale * 1e-300 {
                return Err(Error::Solver {
                    message: format!("zero pivot in column {j}; matrix is singular"),
                    residual: f64::INFINITY,
                });
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let a = self.idx(j, c);
                    let b = self.idx(j + jp, c);
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.ab[self.idx(j, j)];
            for i in 1..=km {
                let k = self.idx(j + i, j);
                self.ab[k] /= pivot;
            }
            if km > 0 {
                let (ldab, offset) = (self.ldab, self.kl + self.ku + j);
                let start = self.idx(j + 1, j);
                let (head, tail) = self.ab.split_at_mut((j + 1) * ldab);
                let mult = &head[start..start + km];
                for c in (j + 1)..=ju {
                    // entry (j, c) relative to the start of column j + 1
                    let base = offset - c + (c - j - 1) * ldab;
                    let f = tail[base];
                    if f != 0.0 {
                        for (t, &l) in tail[base + 1..base + 1 + km].iter_mut().zip(mult) {
                            *t -= l * f;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn solve_permuted(&self, b: &mut [f64]) {
        let n = self.n;
        let kv = self.kl + self.ku;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = self.kl.min(n - 1 - j);
            let bj = b[j];
            if bj != 0.0 {
                for i in 1..=km {
                    b[j + i] -= self.ab[self.idx(j + i, j)] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= self.ab[self.idx(j, j)];
            let bj = b[j];
            if bj != 0.0 {
                for i in j.saturating_sub(kv)..j {
                    b[i] -= self.ab[self.idx(i, j)] * bj;
                }
            }
        }
    }

    fn solve_transpose_permuted(&self, b: &mut [f64]) {
        let n = self.n;
        let kv = self.kl + self.ku;
        for j in 0..n {
            let mut s = b[j];
            for i in j.saturating_sub(kv)..j {
                s -= self.ab[self.idx(i, j)] * b[i];
            }
            b[j] = s / self.ab[self.idx(j, j)];
        }
        for j in (0..n).rev() {
            let km = self.kl.min(n - 1 - j);
            let mut s = b[j];
            for i in 1..=km {
                s -= self.ab[self.idx(j + i, j)] * b[j + i];
            }
            b[j] = s;
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut w: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        self.solve_permuted(&mut w);
        unpermute(&self.perm, &w)
    }

    pub fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut w: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        self.solve_transpose_permuted(&mut w);
        unpermute(&self.perm, &w)
    }

    pub fn bandwidth(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }
}

/// Dot product with four independent accumulators, so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn unpermute(perm: &[usize], w: &[f64]) -> DVector<f64> {
    let mut x = DVector::zeros(w.len());
    for (new, &old) in perm.iter().enumerate() {
        x[old] = w[new];
    }
    x
}

/// Banded Cholesky factorization `P A Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    kd: usize,
    /// Row-major band of `L`: row `i` holds columns `i−kd..=i`.
    l: Vec<f64>,
    perm: Vec<usize>,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::Argument("Cholesky requires a square matrix".into()));
        }
        let n = a.nrows;
        let perm = a.rcm_ordering();
        let ap = a.permuted(&perm);
        let (kl, ku) = ap.bandwidths();
        let kd = kl.max(ku);
        let w = kd + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in ap.row(i) {
                if j <= i {
                    l[i * w + (j + kd - i)] = v;
                }
            }
        }
        for i in 0..n {
            let first = i.saturating_sub(kd);
            for j in first..=i {
                let lo = first.max(j.saturating_sub(kd));
                let (done, row_i) = l.split_at_mut(i * w);
                let mut s = row_i[j + kd - i];
                if j < i {
                    let row_j = &done[j * w..(j + 1) * w];
                    s -= dot(&row_i[lo + kd - i..j + kd - i], &row_j[lo + kd - j..kd]);
                } else {
                    s -= dot(&row_i[lo + kd - i..kd], &row_i[lo + kd - i..kd]);
                }
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Solver {
                            message: format!("matrix is not positive definite (pivot {s:e} at row {i})"),
                            residual: f64::INFINITY,
                        });
                    }
                    l[i * w + kd] = s.sqrt();
                } else {
                    l[i * w + (j + kd - i)] = s / l[j * w + kd];
                }
            }
        }
        Ok(BandedCholesky { n, kd, l, perm })
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.l[i * (self.kd + 1) + (j + self.kd - i)]
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut w: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        let width = self.kd + 1;
        for i in 0..n {
            let lo = i.saturating_sub(self.kd);
            let row = &self.l[i * width..(i + 1) * width];
            let s = w[i] - dot(&row[lo + self.kd - i..self.kd], &w[lo..i]);
            w[i] = s / row[self.kd];
        }
        for i in (0..n).rev() {
            let mut s = w[i];
            for k in (i + 1)..(i + self.kd + 1).min(n) {
                s -= self.at(k, i) * w[k];
            }
            w[i] = s / self.at(i, i);
        }
        unpermute(&self.perm, &w)
    }

    /// `G ξ` for the factor `G = Pᵀ L`, so that `G Gᵀ = A`.
    pub fn factor_mul(&self, xi: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut w = vec![0.0; n];
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = (i.saturating_sub(self.kd)..=i).map(|k| self.at(i, k) * xi[k]).sum();
        }
        unpermute(&self.perm, &w)
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// A factorized square operator ready for repeated (transposed) solves.
#[derive(Debug, Clone)]
pub enum Factorization {
    Cholesky(BandedCholesky),
    Lu(BandedLu),
}

impl Factorization {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            Factorization::Cholesky(c) => c.solve(b),
            Factorization::Lu(lu) => lu.solve(b),
        }
    }

    pub fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            Factorization::Cholesky(c) => c.solve(b),
            Factorization::Lu(lu) => lu.solve_transpose(b),
        }
    }
}

/// A matrix together with its factorization. Every solve is refined until
/// the normwise backward error `‖b − Ax‖∞ / (‖A‖∞‖x‖∞ + ‖b‖∞)` is below
/// [`SOLVE_RTOL`], or fails.
#[derive(Debug, Clone)]
pub struct FactoredMatrix {
    pub matrix: CsrMatrix,
    pub factor: Factorization,
    norms: (f64, f64),
}

impl FactoredMatrix {
    pub fn spd(matrix: CsrMatrix) -> Result<Self> {
        let factor = Factorization::Cholesky(BandedCholesky::factor(&matrix)?);
        Ok(Self::with_factor(matrix, factor))
    }

    pub fn general(matrix: CsrMatrix) -> Result<Self> {
        let factor = Factorization::Lu(BandedLu::factor(&matrix)?);
        Ok(Self::with_factor(matrix, factor))
    }

    fn with_factor(matrix: CsrMatrix, factor: Factorization) -> Self {
        let norms = (matrix.norm_inf(), matrix.norm_one());
        Self { matrix, factor, norms }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.checked(b, false)
    }

    pub fn solve_transpose(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.checked(b, true)
    }

    fn checked(&self, b: &DVector<f64>, transpose: bool) -> Result<DVector<f64>> {
        let bnorm = b.amax();
        // ‖Aᵀ‖∞ = ‖A‖₁
        let anorm = if transpose { self.norms.1 } else { self.norms.0 };
        let backward = |x: &DVector<f64>, r: &DVector<f64>| r.amax() / (anorm * x.amax() + bnorm);
        if bnorm == 0.0 {
            return Ok(DVector::zeros(b.len()));
        }
        let apply = |x: &DVector<f64>| {
            if transpose {
                self.matrix.transpose_mul_vec(x)
            } else {
                self.matrix.mul_vec(x)
            }
        };
        let inner = |r: &DVector<f64>| {
            if transpose {
                self.factor.solve_transpose(r)
            } else {
                self.factor.solve(r)
            }
        };
        let mut x = inner(b);
        let mut r = b - apply(&x);
        let mut res = backward(&x, &r);
        for _ in 0..2 {
            if !(res > SOLVE_RTOL * 1e-2 && res.is_finite()) {
                break;
            }
            x += inner(&r);
            r = b - apply(&x);
            res = backward(&x, &r);
        }
        if !(res <= SOLVE_RTOL) {
            return Err(Error::Solver {
                message: "direct solve did not reach the residual tolerance".into(),
                residual: res,
            });
        }
        Ok(x)
    }
}
