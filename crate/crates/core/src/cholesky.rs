//! Sparse Cholesky factorization with a greedy minimum-degree ordering.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sparse::SparseSymmetricMatrix;

/// Pivots below this fraction of the original diagonal entry are treated as
/// a loss of positive definiteness.
const PIVOT_REL_TOL: f64 = 1e-13;

/// `P A P^T = L L^T` for a symmetric positive definite `A`.
#[derive(Clone, Debug)]
pub struct SparseCholesky {
    n: usize,
    /// `perm[k]` is the original index eliminated at step `k`.
    perm: Vec<usize>,
    /// Column `k` of `L`: diagonal first, then strictly-lower rows ascending.
    col_rows: Vec<Vec<usize>>,
    col_vals: Vec<Vec<f64>>,
}

/// Greedy minimum-degree elimination order. Returns the order and, for each
/// step, the later-eliminated neighbours (the column pattern of `L`, in
/// original indices).
fn minimum_degree(a: &SparseSymmetricMatrix) -> (Vec<usize>, Vec<Vec<usize>>) {
    let n = a.n();
    let mut adj: Vec<BTreeSet<usize>> = (0..n)
        .map(|i| {
            a.row(i)
                .iter()
                .map(|&(j, _)| j)
                .filter(|&j| j != i)
                .collect()
        })
        .collect();
    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|i| Reverse((adj[i].len(), i))).collect();
    let mut order = Vec::with_capacity(n);
    let mut patterns = Vec::with_capacity(n);
    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &nbrs {
            adj[u].remove(&v);
        }
        for (k, &a_) in nbrs.iter().enumerate() {
            for &b in &nbrs[k + 1..] {
                adj[a_].insert(b);
                adj[b].insert(a_);
            }
        }
        for &u in &nbrs {
            heap.push(Reverse((adj[u].len(), u)));
        }
        order.push(v);
        patterns.push(nbrs);
    }
    (order, patterns)
}

impl SparseCholesky {
    pub fn factor(a: &SparseSymmetricMatrix) -> Result<Self> {
        let n = a.n();
        let (perm, patterns) = minimum_degree(a);
        let mut iperm = vec![0; n];
        for (k, &i) in perm.iter().enumerate() {
            iperm[i] = k;
        }
        let mut col_rows: Vec<Vec<usize>> = patterns
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let mut rows: Vec<usize> = p.iter().map(|&i| iperm[i]).collect();
                rows.sort_unstable();
                let mut full = Vec::with_capacity(rows.len() + 1);
                full.push(k);
                full.extend(rows);
                full
            })
            .collect();
        // Columns j that update column k, i.e. L[k, j] != 0 with j < k.
        let mut row_lists: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (j, rows) in col_rows.iter().enumerate() {
            for &i in &rows[1..] {
                row_lists[i].push(j);
            }
        }
        let mut col_vals: Vec<Vec<f64>> = col_rows.iter().map(|r| vec![0.0; r.len()]).collect();
        let mut next = vec![1usize; n];
        let mut work = vec![0.0; n];
        for k in 0..n {
            let orig = perm[k];
            let mut a_kk = 0.0;
            for &(c, v) in a.row(orig) {
                let i = iperm[c];
                if i >= k {
                    work[i] += v;
                }
                if c == orig {
                    a_kk = v;
                }
            }
            for &j in &row_lists[k] {
                let p = next[j];
                debug_assert_eq!(col_rows[j][p], k);
                let l_kj = col_vals[j][p];
                for t in p..col_rows[j].len() {
                    work[col_rows[j][t]] -= l_kj * col_vals[j][t];
                }
                next[j] += 1;
            }
            let d = work[k];
            if !(d > PIVOT_REL_TOL * a_kk.abs()) || !d.is_finite() || d <= 0.0 {
                return Err(Error::NotPositiveDefinite {
                    pivot: orig,
                    value: d,
                });
            }
            let l_kk = d.sqrt();
            work[k] = 0.0;
            col_vals[k][0] = l_kk;
            for t in 1..col_rows[k].len() {
                let i = col_rows[k][t];
                col_vals[k][t] = work[i] / l_kk;
                work[i] = 0.0;
            }
        }
        col_rows.shrink_to_fit();
        Ok(Self {
            n,
            perm,
            col_rows,
            col_vals,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored entries of `L`, diagonal included.
    pub fn nnz(&self) -> usize {
        self.col_rows.iter().map(Vec::len).sum()
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for k in 0..self.n {
            y[k] /= self.col_vals[k][0];
            let yk = y[k];
            for t in 1..self.col_rows[k].len() {
                y[self.col_rows[k][t]] -= self.col_vals[k][t] * yk;
            }
        }
        for k in (0..self.n).rev() {
            let mut s = y[k];
            for t in 1..self.col_rows[k].len() {
                s -= self.col_vals[k][t] * y[self.col_rows[k][t]];
            }
            y[k] = s / self.col_vals[k][0];
        }
        let mut x = vec![0.0; self.n];
        for (k, &i) in self.perm.iter().enumerate() {
            x[i] = y[k];
        }
        x
    }

    /// Solves column by column.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.n);
        let mut x = DMatrix::zeros(self.n, b.ncols());
        for c in 0..b.ncols() {
            let col: Vec<f64> = b.column(c).iter().copied().collect();
            x.set_column(c, &nalgebra::DVector::from_vec(self.solve_vec(&col)));
        }
        x
    }
}
