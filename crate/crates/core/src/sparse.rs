//! Symmetric sparse matrices in row-list storage.
//!
//! Both triangles are stored so row access is direct; every constructor goes
//! through upper-triangular triplets, which keeps the matrix exactly symmetric.
//! The text format written by [`SparseSymmetricMatrix::write_triplets`] is
//!
//! ```text
//! # n <n> nnz <upper-triangular count>
//! <row> <col> <value>      (row <= col, zero-based, one entry per line)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymmetricMatrix {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseSymmetricMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            rows: vec![Vec::new(); n],
        }
    }

    /// Builds from `(i, j, value)` triplets; `(i, j)` and `(j, i)` denote the
    /// same entry and duplicates are summed. Exact zeros are dropped.
    pub fn from_triplets<I>(n: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut upper: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, j, v) in triplets {
            assert!(
                i < n && j < n,
                "triplet ({i}, {j}) out of range for n = {n}"
            );
            let key = if i <= j { (i, j) } else { (j, i) };
            *upper.entry(key).or_insert(0.0) += v;
        }
        let mut rows = vec![Vec::new(); n];
        for (&(i, j), &v) in &upper {
            if v == 0.0 {
                continue;
            }
            rows[i].push((j, v));
            if i != j {
                rows[j].push((i, v));
            }
        }
        for row in &mut rows {
            row.sort_unstable_by_key(|&(c, _)| c);
        }
        Self { n, rows }
    }

    /// Sparse copy of the upper triangle of a dense matrix, dropping entries
    /// with magnitude `<= drop_tol`.
    pub fn from_dense_upper(m: &DMatrix<f64>, drop_tol: f64) -> Self {
        let n = m.nrows();
        let triplets = (0..n)
            .flat_map(|i| (i..n).map(move |j| (i, j)))
            .filter_map(|(i, j)| {
                let v = m[(i, j)];
                (v.abs() > drop_tol).then_some((i, j, v))
            });
        Self::from_triplets(n, triplets)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|k| self.rows[i][k].1)
            .unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Stored upper-triangular entries `(i, j, v)` with `i <= j`, row-major.
    pub fn upper_triplets(&self) -> Vec<(usize, usize, f64)> {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter()
                    .filter(move |&&(j, _)| j >= i)
                    .map(move |&(j, v)| (i, j, v))
            })
            .collect()
    }

    /// Number of stored upper-triangular values; this is the upload size of
    /// the matrix in scalars.
    pub fn nnz_upper(&self) -> usize {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().filter(|&&(j, _)| j >= i).count())
            .sum()
    }

    /// Number of strictly-upper off-diagonal entries.
    pub fn off_diagonal_count(&self) -> usize {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().filter(|&&(j, _)| j > i).count())
            .sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n);
        let mut y = DMatrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            for (i, row) in self.rows.iter().enumerate() {
                y[(i, c)] = row.iter().map(|&(j, v)| v * x[(j, c)]).sum();
            }
        }
        y
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `sqrt(trace(X^T A X))`; the energy norm when `A` is PSD.
    pub fn energy_norm(&self, x: &DMatrix<f64>) -> f64 {
        let ax = self.mul_dense(x);
        x.dot(&ax).max(0.0).sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            rows: self
                .rows
                .iter()
                .map(|row| row.iter().map(|&(j, v)| (j, v * s)).collect())
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self::from_triplets(
            self.n,
            self.upper_triplets()
                .into_iter()
                .chain(other.upper_triplets()),
        )
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|row| row.iter().map(|&(_, v)| v * v))
            .sum::<f64>()
            .sqrt()
    }

    /// Principal submatrix on `indices`, renumbered in the given order.
    pub fn principal_submatrix(&self, indices: &[usize]) -> Self {
        let mut local = vec![usize::MAX; self.n];
        for (k, &i) in indices.iter().enumerate() {
            local[i] = k;
        }
        let triplets = indices.iter().enumerate().flat_map(|(a, &i)| {
            let local = &local;
            self.rows[i]
                .iter()
                .filter(move |&&(j, _)| local[j] != usize::MAX && local[j] >= a)
                .map(move |&(j, v)| (a, local[j], v))
        });
        Self::from_triplets(indices.len(), triplets)
    }

    /// Renumbers into a larger matrix: local index `k` becomes `map[k]`.
    pub fn embed(&self, map: &[usize], n: usize) -> Self {
        assert_eq!(map.len(), self.n);
        Self::from_triplets(
            n,
            self.upper_triplets()
                .into_iter()
                .map(|(i, j, v)| (map[i], map[j], v)),
        )
    }

    /// Rows `rows` and columns `cols` as a rectangular sparse block.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> SparseRows {
        let mut col_local = vec![usize::MAX; self.n];
        for (k, &j) in cols.iter().enumerate() {
            col_local[j] = k;
        }
        let data = rows
            .iter()
            .map(|&i| {
                self.rows[i]
                    .iter()
                    .filter(|&&(j, _)| col_local[j] != usize::MAX)
                    .map(|&(j, v)| (col_local[j], v))
                    .collect()
            })
            .collect();
        SparseRows {
            ncols: cols.len(),
            rows: data,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(_, v)| v).sum())
            .collect()
    }

    /// Checks the Laplacian sign pattern and zero row sums, the latter relative
    /// to the largest diagonal entry.
    pub fn is_laplacian(&self, rel_tol: f64) -> bool {
        let scale = self
            .diagonal()
            .into_iter()
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let signs_ok = self.rows.iter().enumerate().all(|(i, row)| {
            row.iter()
                .all(|&(j, v)| if i == j { v >= 0.0 } else { v <= 0.0 })
        });
        signs_ok && self.row_sums().iter().all(|s| s.abs() <= rel_tol * scale)
    }

    /// Connected components of the off-diagonal support, labelled in order of
    /// their smallest vertex.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut stack = Vec::new();
        for s in 0..self.n {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.rows[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn write_triplets(&self) -> String {
        let upper = self.upper_triplets();
        let mut out = format!("# n {} nnz {}\n", self.n, upper.len());
        for (i, j, v) in upper {
            writeln!(out, "{i} {j} {v:e}").expect("writing to a String cannot fail");
        }
        out
    }

    pub fn read_triplets(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "empty triplet file".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let n = match fields.as_slice() {
            ["#", "n", n, "nnz", _] => n.parse::<usize>().ok(),
            _ => None,
        }
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("bad header {header:?}"),
        })?;
        let mut triplets = Vec::new();
        for (k, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = || Error::Parse {
                line: k + 1,
                message: format!("bad triplet {line:?}"),
            };
            let mut it = line.split_whitespace();
            let i: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(parse_err)?;
            let j: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(parse_err)?;
            let v: f64 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(parse_err)?;
            if i >= n || j >= n {
                return Err(parse_err());
            }
            triplets.push((i, j, v));
        }
        Ok(Self::from_triplets(n, triplets))
    }
}

/// Rectangular sparse matrix stored by rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `A x`.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.ncols);
        let mut y = DMatrix::zeros(self.rows.len(), x.ncols());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                for c in 0..x.ncols() {
                    y[(i, c)] += v * x[(j, c)];
                }
            }
        }
        y
    }

    /// `A^T x`.
    pub fn transpose_mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.rows.len());
        let mut y = DMatrix::zeros(self.ncols, x.ncols());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                for c in 0..x.ncols() {
                    y[(j, c)] += v * x[(i, c)];
                }
            }
        }
        y
    }

    /// Columns with at least one stored entry.
    pub fn nonzero_columns(&self) -> Vec<usize> {
        let mut seen = vec![false; self.ncols];
        for row in &self.rows {
            for &(j, _) in row {
                seen[j] = true;
            }
        }
        (0..self.ncols).filter(|&j| seen[j]).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] = v;
            }
        }
        m
    }
}
