//! Sparse symmetric matrices and an envelope Cholesky factorisation.
//!
//! Matrices are stored in compressed-row form with both triangles present
//! and sorted column indices. The factorisation reorders with reverse
//! Cuthill-McKee and stores each row of L from its first nonzero onwards,
//! which is compact for the banded matrices that come out of mesh FEM.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from `(i, j, v)` triplets of the full matrix. Duplicates are
    /// summed; explicit zeros are kept so the pattern stays structural.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            assert!(i < n && j < n, "triplet index out of range");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_idx.push(j);
            values.push(v);
            row_ptr[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    /// Build from triplets of the lower triangle (`j <= i`), mirroring the
    /// off-diagonal entries so the result is symmetric by construction.
    pub fn from_lower_triplets(n: usize, lower: &[(usize, usize, f64)]) -> Self {
        let mut full = Vec::with_capacity(2 * lower.len());
        for &(i, j, v) in lower {
            let (i, j) = (i.max(j), i.min(j));
            full.push((i, j, v));
            if i != j {
                full.push((j, i, v));
            }
        }
        Self::from_triplets(n, &full)
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        CsrMatrix { n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: d.to_vec() }
    }

    /// Sparse copy of a dense matrix, keeping entries with `|a_ij| > drop`.
    pub fn from_dense(a: &DMatrix<f64>, drop: f64) -> Self {
        let mut t = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)].abs() > drop {
                    t.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), &t)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Sorted `(i, j, v)` triplets of all stored entries.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n).flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v))).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `alpha * self + beta * other`.
    pub fn add_scaled(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        assert_eq!(self.n, other.n);
        let mut t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (i, j, alpha * v)).collect();
        t.extend(other.triplets().into_iter().map(|(i, j, v)| (i, j, beta * v)));
        Self::from_triplets(self.n, &t)
    }

    /// `self * diag(d) * self` for symmetric `self`; symmetric by
    /// construction since only the lower triangle is computed.
    pub fn sandwich_diag(&self, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.n);
        let mut lower = Vec::new();
        let mut acc = vec![0.0; self.n];
        let mut touched = Vec::new();
        let mut mark = vec![false; self.n];
        for i in 0..self.n {
            // row i of A D A = sum_k a_ik d_k a_k.
            for (k, a_ik) in self.row(i) {
                let w = a_ik * d[k];
                for (j, a_kj) in self.row(k) {
                    if j > i {
                        continue;
                    }
                    if !mark[j] {
                        mark[j] = true;
                        touched.push(j);
                    }
                    acc[j] += w * a_kj;
                }
            }
            for &j in &touched {
                lower.push((i, j, acc[j]));
                acc[j] = 0.0;
                mark[j] = false;
            }
            touched.clear();
        }
        Self::from_lower_triplets(self.n, &lower)
    }

    /// Rows and columns `idx` of the matrix, in the given order.
    pub fn principal_submatrix(&self, idx: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &i) in idx.iter().enumerate() {
            pos[i] = k;
        }
        let mut t = Vec::new();
        for (k, &i) in idx.iter().enumerate() {
            for (j, v) in self.row(i) {
                if pos[j] != usize::MAX {
                    t.push((k, pos[j], v));
                }
            }
        }
        Self::from_triplets(idx.len(), &t)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                a[(i, j)] = v;
            }
        }
        a
    }

    /// Largest `|a_ij - a_ji|` over stored entries.
    pub fn asymmetry(&self) -> f64 {
        self.triplets().into_iter().map(|(i, j, v)| (v - self.get(j, i)).abs()).fold(0.0, f64::max)
    }

    /// Adjacency lists of the off-diagonal pattern.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        (0..self.n).map(|i| self.row(i).map(|(j, _)| j).filter(|&j| j != i).collect()).collect()
    }
}

/// Reverse Cuthill-McKee ordering of a symmetric pattern. Entry `k` of the
/// result is the original index placed at position `k`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let adj = a.adjacency();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n).filter(|&v| !visited[v]).min_by_key(|&v| (degree[v], v)).unwrap();
        let start = peripheral(&adj, &degree, seed);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
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

/// Pseudo-peripheral vertex of the component containing `seed`.
fn peripheral(adj: &[Vec<usize>], degree: &[usize], seed: usize) -> usize {
    let depth_of = |levels: &[Option<usize>]| levels.iter().filter_map(|&l| l).max().unwrap_or(0);
    let mut root = seed;
    let mut levels = bfs_levels(adj, root);
    let mut depth = depth_of(&levels);
    loop {
        let far = (0..adj.len()).filter(|&v| levels[v] == Some(depth)).min_by_key(|&v| (degree[v], v)).unwrap();
        let next = bfs_levels(adj, far);
        let d = depth_of(&next);
        if d <= depth {
            return root;
        }
        root = far;
        levels = next;
        depth = d;
    }
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let l = level[v].unwrap();
        for &w in &adj[v] {
            if level[w].is_none() {
                level[w] = Some(l + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

/// Cholesky factor `P A P' = L L'` with L stored row-wise over its envelope.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    /// `perm[k]` is the original index at permuted position `k`.
    perm: Vec<usize>,
    /// First stored column of each row of L.
    first: Vec<usize>,
    /// Offset of row `i` in `data`; the row spans columns `first[i]..=i`.
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SparseCholesky {
    /// Factorise with a reverse Cuthill-McKee ordering.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        Self::factor_with_ordering(a, reverse_cuthill_mckee(a))
    }

    pub fn factor_with_ordering(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.dim();
        assert_eq!(perm.len(), n);
        let mut inv = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (k, &p) in perm.iter().enumerate() {
            for (j, _) in a.row(p) {
                first[k] = first[k].min(inv[j]);
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut total = 0;
        for i in 0..n {
            start.push(total);
            total += i - first[i] + 1;
        }
        start.push(total);
        let mut data = vec![0.0; total];
        for (k, &p) in perm.iter().enumerate() {
            for (j, v) in a.row(p) {
                let c = inv[j];
                if c <= k {
                    data[start[k] + c - first[k]] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let lo = fi.max(fj);
                let ri = start[i] - fi;
                let rj = start[j] - fj;
                let mut s = data[ri + j];
                for k in lo..j {
                    s -= data[ri + k] * data[rj + k];
                }
                if j < i {
                    data[ri + j] = s / data[rj + j];
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite(perm[i]));
                    }
                    data[ri + i] = s.sqrt();
                }
            }
        }
        Ok(SparseCholesky { n, perm, first, start, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries of L.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.data[self.start[i] + j - self.first[i]]
    }

    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l(i, i).ln()).sum::<f64>()
    }

    /// Solve `L y = b` in the permuted space.
    fn forward(&self, y: &mut [f64]) {
        for i in 0..self.n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i] + (i - fi)];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(l, x)| l * x).sum();
            y[i] = (y[i] - s) / self.l(i, i);
        }
    }

    /// Solve `L' x = y` in the permuted space.
    fn backward(&self, x: &mut [f64]) {
        for i in (0..self.n).rev() {
            x[i] /= self.l(i, i);
            let xi = x[i];
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i] + (i - fi)];
            for (k, l) in row.iter().enumerate() {
                x[fi + k] -= l * xi;
            }
        }
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![0.0; self.n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }

    /// `x = P' L'^{-1} w`, so that `x ~ N(0, A^{-1})` when `w ~ N(0, I)`.
    pub fn solve_transpose_factor(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.n);
        let mut y = w.to_vec();
        self.backward(&mut y);
        let mut x = vec![0.0; self.n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }
}

/// `log|A|` of a sparse symmetric positive-definite matrix.
pub fn sparse_logdet(a: &CsrMatrix) -> Result<f64> {
    Ok(SparseCholesky::factor(a)?.logdet())
}

/// Dense Cholesky log-determinant.
pub fn dense_logdet(a: &DMatrix<f64>) -> Result<f64> {
    let chol = a.clone().cholesky().ok_or(Error::CholeskyFailure)?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Inverse of a dense symmetric positive-definite matrix, symmetrised.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = a.clone().cholesky().ok_or(Error::CholeskyFailure)?;
    let inv = chol.inverse();
    Ok(symmetrize(&inv))
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}
