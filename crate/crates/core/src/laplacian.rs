//! Weighted graphs, Laplacians, Schur complements, effective resistances and
//! spectral sparsification.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;

use crate::cholesky::SparseCholesky;
use crate::error::{Error, Result};
use crate::sparse::SparseSymmetricMatrix;

/// Components larger than this use sparse grounded solves for effective
/// resistances instead of a dense pseudoinverse.
pub const DENSE_RESISTANCE_LIMIT: usize = 3000;

/// Relative eigenvalue threshold separating kernel from image in
/// [`check_epsilon_dense`].
const KERNEL_REL_TOL: f64 = 1e-9;

/// Largest principal angle (radians) at which two kernels count as equal.
const KERNEL_ANGLE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedEdge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// Undirected weighted graph with at most one edge per vertex pair, stored
/// with `i < j` in sorted order.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<WeightedEdge>,
}

impl WeightedGraph {
    /// Parallel edges are merged by adding their weights.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::Invalid(format!(
                    "edge ({i}, {j}) out of range for n = {n}"
                )));
            }
            if i == j {
                return Err(Error::Invalid(format!("self-loop at vertex {i}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Invalid(format!(
                    "edge ({i}, {j}) has non-positive weight {w}"
                )));
            }
            *merged.entry((i.min(j), i.max(j))).or_insert(0.0) += w;
        }
        Ok(Self {
            n,
            edges: merged
                .into_iter()
                .map(|((i, j), w)| WeightedEdge { i, j, w })
                .collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[WeightedEdge] {
        &self.edges
    }

    /// Reads the graph back out of a Laplacian's negative off-diagonals.
    /// Non-negative off-diagonal entries (roundoff) are ignored.
    pub fn from_laplacian(l: &SparseSymmetricMatrix) -> Self {
        let edges = l
            .upper_triplets()
            .into_iter()
            .filter(|&(i, j, v)| i != j && v < 0.0)
            .map(|(i, j, v)| WeightedEdge { i, j, w: -v })
            .collect();
        Self { n: l.n(), edges }
    }

    /// Number of connected components, isolated vertices included.
    pub fn component_count(&self) -> usize {
        let mut sets = DisjointSets::new(self.n);
        for e in &self.edges {
            sets.union(e.i, e.j);
        }
        sets.count()
    }
}

/// Union-find with path halving and union by size.
#[derive(Clone, Debug)]
pub(crate) struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
    count: usize,
}

impl DisjointSets {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            count: n,
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns true when `a` and `b` were in different sets.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        self.count -= 1;
        true
    }

    pub(crate) fn count(&self) -> usize {
        self.count
    }
}

pub fn laplacian(g: &WeightedGraph) -> SparseSymmetricMatrix {
    let triplets = g
        .edges
        .iter()
        .flat_map(|e| [(e.i, e.i, e.w), (e.j, e.j, e.w), (e.i, e.j, -e.w)]);
    SparseSymmetricMatrix::from_triplets(g.n, triplets)
}

/// Vertex lists of the connected components of a matrix's support, each
/// sorted ascending, ordered by smallest vertex.
pub fn component_lists(m: &SparseSymmetricMatrix) -> Vec<Vec<usize>> {
    let labels = m.components();
    let count = labels.iter().copied().max().map_or(0, |c| c + 1);
    let mut lists = vec![Vec::new(); count];
    for (v, &c) in labels.iter().enumerate() {
        lists[c].push(v);
    }
    lists
}

/// `L_CC − L_CF L_FF^{-1} L_FC` over the kept vertices `C = V \ F`.
///
/// Returns the Schur complement together with the kept vertex indices in
/// ascending order; row `k` of the result corresponds to `kept[k]`.
pub fn schur_complement(
    l: &SparseSymmetricMatrix,
    eliminate: &[usize],
) -> Result<(SparseSymmetricMatrix, Vec<usize>)> {
    let n = l.n();
    let mut eliminated = vec![false; n];
    for &v in eliminate {
        if v >= n {
            return Err(Error::Invalid(format!(
                "vertex {v} out of range for n = {n}"
            )));
        }
        eliminated[v] = true;
    }
    let kept: Vec<usize> = (0..n).filter(|&v| !eliminated[v]).collect();
    let mut local = vec![usize::MAX; n];
    for (k, &v) in kept.iter().enumerate() {
        local[v] = k;
    }

    // Components of the subgraph induced on F.
    let mut label = vec![usize::MAX; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for s in (0..n).filter(|&v| eliminated[v]) {
        if label[s] != usize::MAX {
            continue;
        }
        let c = comps.len();
        label[s] = c;
        let mut members = vec![s];
        let mut head = 0;
        while head < members.len() {
            let u = members[head];
            head += 1;
            for &(v, _) in l.row(u) {
                if eliminated[v] && label[v] == usize::MAX {
                    label[v] = c;
                    members.push(v);
                }
            }
        }
        members.sort_unstable();
        comps.push(members);
    }

    let updates: Vec<Vec<(usize, usize, f64)>> = comps
        .par_iter()
        .map(|comp| {
            let mut boundary: Vec<usize> = comp
                .iter()
                .flat_map(|&u| l.row(u).iter().map(|&(v, _)| v))
                .filter(|&v| !eliminated[v])
                .collect();
            boundary.sort_unstable();
            boundary.dedup();
            if boundary.is_empty() {
                return Err(Error::IsolatedEliminated { vertex: comp[0] });
            }
            let factor = SparseCholesky::factor(&l.principal_submatrix(comp))?;
            let l_fb = l.block(comp, &boundary).to_dense();
            let y = factor.solve(&l_fb);
            let update = l_fb.transpose() * y;
            let mut out = Vec::with_capacity(boundary.len() * (boundary.len() + 1) / 2);
            for a in 0..boundary.len() {
                for b in a..boundary.len() {
                    out.push((local[boundary[a]], local[boundary[b]], -update[(a, b)]));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let base = l.principal_submatrix(&kept).upper_triplets();
    let s = SparseSymmetricMatrix::from_triplets(
        kept.len(),
        base.into_iter().chain(updates.into_iter().flatten()),
    );
    Ok((s, kept))
}

/// `(e_i − e_j)^T L^† (e_i − e_j)` for each pair.
pub fn effective_resistances(
    l: &SparseSymmetricMatrix,
    pairs: &[(usize, usize)],
) -> Result<Vec<f64>> {
    effective_resistances_with_limit(l, pairs, DENSE_RESISTANCE_LIMIT)
}

pub(crate) fn effective_resistances_with_limit(
    l: &SparseSymmetricMatrix,
    pairs: &[(usize, usize)],
    dense_limit: usize,
) -> Result<Vec<f64>> {
    let labels = l.components();
    let lists = component_lists(l);
    let mut by_component: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, &(i, j)) in pairs.iter().enumerate() {
        if i >= l.n() || j >= l.n() {
            return Err(Error::Invalid(format!("pair ({i}, {j}) out of range")));
        }
        if labels[i] != labels[j] {
            return Err(Error::DifferentComponents { i, j });
        }
        by_component.entry(labels[i]).or_default().push(k);
    }
    let mut out = vec![0.0; pairs.len()];
    let results: Vec<Vec<(usize, f64)>> = by_component
        .into_par_iter()
        .map(|(c, ks)| {
            let comp = &lists[c];
            let mut local = BTreeMap::new();
            for (a, &v) in comp.iter().enumerate() {
                local.insert(v, a);
            }
            let sub = l.principal_submatrix(comp);
            let k = comp.len();
            let mut res = Vec::with_capacity(ks.len());
            if k <= dense_limit {
                let shift = 1.0 / k as f64;
                let m = sub.to_dense().add_scalar(shift);
                let inv = m
                    .cholesky()
                    .ok_or(Error::NotPositiveDefinite {
                        pivot: comp[0],
                        value: f64::NAN,
                    })?
                    .inverse();
                for &p in &ks {
                    let (a, b) = (local[&pairs[p].0], local[&pairs[p].1]);
                    let r = inv[(a, a)] + inv[(b, b)] - 2.0 * inv[(a, b)];
                    res.push((p, if a == b { 0.0 } else { r }));
                }
            } else {
                let solver = LaplacianSolver::new(&sub)?;
                for &p in &ks {
                    let (a, b) = (local[&pairs[p].0], local[&pairs[p].1]);
                    if a == b {
                        res.push((p, 0.0));
                        continue;
                    }
                    let mut rhs = DMatrix::zeros(k, 1);
                    rhs[(a, 0)] = 1.0;
                    rhs[(b, 0)] = -1.0;
                    let x = solver.solve(&rhs)?;
                    res.push((p, x[(a, 0)] - x[(b, 0)]));
                }
            }
            Ok(res)
        })
        .collect::<Result<_>>()?;
    for (p, r) in results.into_iter().flatten() {
        out[p] = r;
    }
    Ok(out)
}

/// Tuning for [`sparsify_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparsifyConfig {
    /// The constant `C₀` in the sample budget.
    pub oversampling: f64,
    /// Resampling attempts when a draw disconnects a component.
    pub max_attempts: usize,
}

impl Default for SparsifyConfig {
    fn default() -> Self {
        Self {
            oversampling: 4.0,
            max_attempts: 10,
        }
    }
}

/// Number of importance-sampling draws for `n_c` non-isolated vertices:
/// `ceil(C₀ n_c ln(max(n_c, 2)) / ε′²)` with `ε′ = 1 − e^{−ε}`.
pub fn sample_budget(n_c: usize, epsilon: f64, oversampling: f64) -> usize {
    let eps_prime = 1.0 - (-epsilon).exp();
    let n_c = n_c as f64;
    (oversampling * n_c * n_c.max(2.0).ln() / (eps_prime * eps_prime)).ceil() as usize
}

pub fn sparsify<R: Rng + ?Sized>(
    s: &SparseSymmetricMatrix,
    epsilon: f64,
    rng: &mut R,
) -> Result<SparseSymmetricMatrix> {
    sparsify_with(s, epsilon, &SparsifyConfig::default(), rng)
}

/// Effective-resistance importance sampling. The result keeps the kernel of
/// `s`; when the budget covers every edge, or sampling keeps disconnecting a
/// component, `s` is returned unchanged.
pub fn sparsify_with<R: Rng + ?Sized>(
    s: &SparseSymmetricMatrix,
    epsilon: f64,
    config: &SparsifyConfig,
    rng: &mut R,
) -> Result<SparseSymmetricMatrix> {
    if !(epsilon > 0.0) {
        return Err(Error::Invalid(format!(
            "sparsification needs epsilon > 0, got {epsilon}"
        )));
    }
    let graph = WeightedGraph::from_laplacian(s);
    let edges = graph.edges();
    let mut touched = vec![false; s.n()];
    for e in edges {
        touched[e.i] = true;
        touched[e.j] = true;
    }
    let n_c = touched.iter().filter(|&&t| t).count();
    let q = sample_budget(n_c, epsilon, config.oversampling);
    if q >= edges.len() {
        return Ok(s.clone());
    }
    let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.i, e.j)).collect();
    let resistances = effective_resistances(s, &pairs)?;
    let importance: Vec<f64> = edges
        .iter()
        .zip(&resistances)
        .map(|(e, r)| e.w * r.max(0.0))
        .collect();
    let total: f64 = importance.iter().sum();
    let dist = WeightedIndex::new(&importance)
        .map_err(|e| Error::Invalid(format!("degenerate sampling weights: {e}")))?;
    let components = graph.component_count();
    for _ in 0..config.max_attempts {
        let mut counts = vec![0usize; edges.len()];
        for _ in 0..q {
            counts[dist.sample(rng)] += 1;
        }
        let sampled: Vec<(usize, usize, f64)> = edges
            .iter()
            .zip(&importance)
            .zip(&counts)
            .filter(|(_, &c)| c > 0)
            .map(|((e, &imp), &c)| (e.i, e.j, c as f64 * e.w * total / (q as f64 * imp)))
            .collect();
        let candidate = WeightedGraph::new(s.n(), sampled)?;
        if candidate.component_count() == components {
            return Ok(laplacian(&candidate));
        }
    }
    Ok(s.clone())
}

/// Outcome of comparing two PSD matrices in the `e^{−ε} B ⪯ A ⪯ e^{ε} B` sense.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApproxReport {
    pub epsilon_target: Option<f64>,
    /// `max |ln λ|` over the generalized eigenvalues on the image of `B`.
    /// Only meaningful when `kernel_match` holds.
    pub epsilon_achieved: f64,
    pub kernel_match: bool,
}

impl ApproxReport {
    pub fn with_target(mut self, epsilon: f64) -> Self {
        self.epsilon_target = Some(epsilon);
        self
    }

    /// Kernels agree and the achieved ε is within the target (plus roundoff).
    pub fn satisfied(&self) -> bool {
        self.kernel_match
            && self
                .epsilon_target
                .is_none_or(|t| self.epsilon_achieved <= t + 1e-9)
    }
}

pub fn check_epsilon(a: &SparseSymmetricMatrix, b: &SparseSymmetricMatrix) -> ApproxReport {
    check_epsilon_dense(&a.to_dense(), &b.to_dense())
}

fn kernel_basis(eig: &SymmetricEigen<f64, nalgebra::Dyn>, tol: f64) -> (Vec<usize>, Vec<usize>) {
    let (mut kernel, mut image) = (Vec::new(), Vec::new());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() <= tol {
            kernel.push(k);
        } else {
            image.push(k);
        }
    }
    (kernel, image)
}

/// Dense version of [`check_epsilon`] for any pair of symmetric PSD matrices.
pub fn check_epsilon_dense(a: &DMatrix<f64>, b: &DMatrix<f64>) -> ApproxReport {
    assert_eq!(a.shape(), b.shape());
    let n = a.nrows();
    let eb = SymmetricEigen::new(b.clone());
    let ea = SymmetricEigen::new(a.clone());
    let scale_b = eb.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let scale_a = ea.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let (kb, ib) = kernel_basis(&eb, KERNEL_REL_TOL * scale_b);
    let (ka, _) = kernel_basis(&ea, KERNEL_REL_TOL * scale_a);

    let kernel_match = ka.len() == kb.len() && {
        if ka.is_empty() {
            true
        } else {
            let basis_a = columns(&ea.eigenvectors, &ka);
            let basis_b = columns(&eb.eigenvectors, &kb);
            let residual = &basis_a - &basis_b * (basis_b.transpose() * &basis_a);
            residual.singular_values().max() <= KERNEL_ANGLE_TOL
        }
    };

    if ib.is_empty() {
        let zero_a = ea.eigenvalues.amax() <= KERNEL_REL_TOL * scale_b.max(1.0);
        return ApproxReport {
            epsilon_target: None,
            epsilon_achieved: if zero_a { 0.0 } else { f64::INFINITY },
            kernel_match,
        };
    }
    let q = columns(&eb.eigenvectors, &ib);
    let inv_sqrt: Vec<f64> = ib.iter().map(|&k| 1.0 / eb.eigenvalues[k].sqrt()).collect();
    let mut m = q.transpose() * a * &q;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            m[(r, c)] *= inv_sqrt[r] * inv_sqrt[c];
        }
    }
    let m = (&m + m.transpose()) * 0.5;
    let mu = m.symmetric_eigenvalues();
    let epsilon_achieved = mu
        .iter()
        .map(|&l| if l > 0.0 { l.ln().abs() } else { f64::INFINITY })
        .fold(0.0, f64::max);
    debug_assert!(n == 0 || epsilon_achieved >= 0.0);
    ApproxReport {
        epsilon_target: None,
        epsilon_achieved,
        kernel_match,
    }
}

fn columns(vectors: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(vectors.nrows(), cols.len(), |r, c| vectors[(r, cols[c])])
}

/// Baseline sparsity patterns with no approximation guarantee.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeuristicMode {
    /// Keep only the diagonal.
    BlockDiagonal,
    /// Keep the diagonal and the off-diagonals of a maximum-weight spanning
    /// tree of each component.
    Tree,
}

pub fn heuristic_sparsify(s: &SparseSymmetricMatrix, mode: HeuristicMode) -> SparseSymmetricMatrix {
    let diagonal = s.diagonal().into_iter().enumerate().map(|(i, v)| (i, i, v));
    match mode {
        HeuristicMode::BlockDiagonal => SparseSymmetricMatrix::from_triplets(s.n(), diagonal),
        HeuristicMode::Tree => {
            let mut edges = WeightedGraph::from_laplacian(s).edges().to_vec();
            edges.sort_by(|a, b| b.w.total_cmp(&a.w).then((a.i, a.j).cmp(&(b.i, b.j))));
            let mut sets = DisjointSets::new(s.n());
            let tree = edges
                .into_iter()
                .filter(|e| sets.union(e.i, e.j))
                .map(|e| (e.i, e.j, -e.w));
            SparseSymmetricMatrix::from_triplets(s.n(), diagonal.chain(tree))
        }
    }
}

#[derive(Clone, Debug)]
struct SolverBlock {
    vertices: Vec<usize>,
    /// Positions within `vertices` that enter the factorization.
    factored: Vec<usize>,
    factor: Option<SparseCholesky>,
    grounded: bool,
}

/// Direct solver for PSD matrices whose components are either Laplacians
/// (singular, handled by grounding the lowest vertex and returning the
/// zero-mean solution) or positive definite.
#[derive(Clone, Debug)]
pub struct LaplacianSolver {
    n: usize,
    blocks: Vec<SolverBlock>,
}

impl LaplacianSolver {
    pub fn new(m: &SparseSymmetricMatrix) -> Result<Self> {
        let blocks = component_lists(m)
            .into_par_iter()
            .map(|vertices| {
                let sub = m.principal_submatrix(&vertices);
                let scale = sub.diagonal().into_iter().fold(0.0, f64::max);
                let grounded = sub
                    .row_sums()
                    .iter()
                    .all(|s| s.abs() <= 1e-9 * scale.max(f64::MIN_POSITIVE))
                    || scale == 0.0;
                let factored: Vec<usize> = if grounded {
                    (1..vertices.len()).collect()
                } else {
                    (0..vertices.len()).collect()
                };
                let factor = if factored.is_empty() {
                    None
                } else {
                    let reduced = sub.principal_submatrix(&factored);
                    Some(SparseCholesky::factor(&reduced).map_err(|e| match e {
                        Error::NotPositiveDefinite { pivot, value } => Error::NotPositiveDefinite {
                            pivot: vertices[factored[pivot]],
                            value,
                        },
                        other => other,
                    })?)
                };
                Ok(SolverBlock {
                    vertices,
                    factored,
                    factor,
                    grounded,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { n: m.n(), blocks })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves `M X = B`. For grounded components each column of `B` must sum
    /// to zero over the component (within `1e-8` of its ℓ1 norm); the tiny
    /// remainder is projected out before solving.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.solve_inner(b, true)
    }

    /// Like [`LaplacianSolver::solve`] but projects the right-hand side onto
    /// the image without checking it first.
    pub fn solve_projected(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.solve_inner(b, false)
            .expect("projection removes the kernel component")
    }

    fn solve_inner(&self, b: &DMatrix<f64>, check: bool) -> Result<DMatrix<f64>> {
        assert_eq!(b.nrows(), self.n);
        let mut x = DMatrix::zeros(self.n, b.ncols());
        for block in &self.blocks {
            let k = block.vertices.len();
            for c in 0..b.ncols() {
                let mut rhs: Vec<f64> = block.vertices.iter().map(|&v| b[(v, c)]).collect();
                if block.grounded {
                    let sum: f64 = rhs.iter().sum();
                    let l1: f64 = rhs.iter().map(|v| v.abs()).sum();
                    if check && sum.abs() > 1e-8 * l1 {
                        return Err(Error::RhsNotInImage { column: c, sum });
                    }
                    let mean = sum / k as f64;
                    rhs.iter_mut().for_each(|v| *v -= mean);
                }
                let mut local = vec![0.0; k];
                if let Some(f) = &block.factor {
                    let reduced: Vec<f64> = block.factored.iter().map(|&p| rhs[p]).collect();
                    for (&p, v) in block.factored.iter().zip(f.solve_vec(&reduced)) {
                        local[p] = v;
                    }
                }
                if block.grounded {
                    let mean = local.iter().sum::<f64>() / k as f64;
                    local.iter_mut().for_each(|v| *v -= mean);
                }
                for (&v, val) in block.vertices.iter().zip(local) {
                    x[(v, c)] = val;
                }
            }
        }
        Ok(x)
    }
}

/// Grounded direct solve of a (possibly disconnected) Laplacian system,
/// returning the zero-mean representative per component.
pub fn grounded_solve(l: &SparseSymmetricMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    LaplacianSolver::new(l)?.solve(b)
}

/// Random connected graph: a random recursive tree plus each remaining pair
/// independently with probability `extra_prob`; weights uniform in `[0.5, 2)`.
pub fn random_connected_graph<R: Rng + ?Sized>(
    n: usize,
    extra_prob: f64,
    rng: &mut R,
) -> WeightedGraph {
    let mut edges = Vec::new();
    for v in 1..n {
        let parent = rng.random_range(0..v);
        edges.push((parent, v, rng.random_range(0.5..2.0)));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < extra_prob {
                edges.push((i, j, rng.random_range(0.5..2.0)));
            }
        }
    }
    WeightedGraph::new(n, edges).expect("generated edges are valid")
}
