//! Domain-decomposition Laplacian solver over a robot partition, with
//! metered robot-to-server uploads.
//!
//! Each robot eliminates its interior vertices and uploads a (possibly
//! sparsified) Schur complement once. Every solve then costs one upload of
//! the reduced right-hand side per robot, a server solve over the separators
//! and a local back-substitution.

use std::fmt;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cholesky::SparseCholesky;
use crate::error::{Error, Result};
use crate::laplacian::{
    check_epsilon, heuristic_sparsify, schur_complement, sparsify_with, ApproxReport,
    HeuristicMode, LaplacianSolver, SparsifyConfig, WeightedGraph,
};
use crate::pose_graph::Partition;
use crate::sparse::{SparseRows, SparseSymmetricMatrix};

/// Bytes per uploaded scalar (double precision).
pub const BYTES_PER_SCALAR: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    Schur,
    Rhs,
    PartialGrad,
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Schur => "schur",
            Self::Rhs => "rhs",
            Self::PartialGrad => "partial_grad",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LedgerEvent {
    pub round: usize,
    pub robot: usize,
    pub kind: PayloadKind,
    pub scalars: usize,
}

/// Append-only record of robot-to-server uploads.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommsLedger {
    events: Vec<LedgerEvent>,
}

impl CommsLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Zero-sized uploads are not recorded.
    pub fn record(&mut self, round: usize, robot: usize, kind: PayloadKind, scalars: usize) {
        if scalars > 0 {
            self.events.push(LedgerEvent {
                round,
                robot,
                kind,
                scalars,
            });
        }
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn scalars(&self) -> usize {
        self.events.iter().map(|e| e.scalars).sum()
    }

    pub fn bytes(&self) -> usize {
        BYTES_PER_SCALAR * self.scalars()
    }

    pub fn bytes_of(&self, kind: PayloadKind) -> usize {
        BYTES_PER_SCALAR
            * self
                .events
                .iter()
                .filter(|e| e.kind == kind)
                .map(|e| e.scalars)
                .sum::<usize>()
    }

    pub fn bytes_of_robot(&self, robot: usize, kind: PayloadKind) -> usize {
        BYTES_PER_SCALAR
            * self
                .events
                .iter()
                .filter(|e| e.robot == robot && e.kind == kind)
                .map(|e| e.scalars)
                .sum::<usize>()
    }

    /// CSV with header `round,robot,kind,scalars,bytes`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,robot,kind,scalars,bytes\n");
        for e in &self.events {
            writeln!(
                out,
                "{},{},{},{},{}",
                e.round,
                e.robot,
                e.kind,
                e.scalars,
                BYTES_PER_SCALAR * e.scalars
            )
            .unwrap();
        }
        out
    }
}

/// How each robot's Schur complement is reduced before upload.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reduction {
    Exact,
    Sparsified {
        epsilon: f64,
        config: SparsifyConfig,
    },
    Heuristic(HeuristicMode),
}

impl Reduction {
    /// Spectral sparsification at `epsilon` with default tuning; `0` means
    /// exact.
    pub fn spectral(epsilon: f64) -> Self {
        if epsilon == 0.0 {
            Self::Exact
        } else {
            Self::Sparsified {
                epsilon,
                config: SparsifyConfig::default(),
            }
        }
    }
}

/// Robot-local blocks of the Laplacian.
#[derive(Clone, Debug)]
pub struct RobotBlock {
    robot: usize,
    /// `F_α`, global ids ascending.
    interior: Vec<usize>,
    /// Separators touched by the robot's own edges, global ids ascending.
    local_separators: Vec<usize>,
    /// Separators adjacent to an interior vertex, as indices into `C`.
    boundary: Vec<usize>,
    l_ff: SparseSymmetricMatrix,
    /// `L_αc` with columns indexed by position in `C`.
    l_fc: SparseRows,
    /// `L(G_α)` over `F_α` followed by `local_separators`.
    local_laplacian: SparseSymmetricMatrix,
    factor: Option<SparseCholesky>,
    schur: Option<SparseSymmetricMatrix>,
    reduced: Option<SparseSymmetricMatrix>,
}

impl RobotBlock {
    pub fn robot(&self) -> usize {
        self.robot
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn local_separators(&self) -> &[usize] {
        &self.local_separators
    }

    /// Separators adjacent to an interior vertex, as positions in `C`.
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn l_ff(&self) -> &SparseSymmetricMatrix {
        &self.l_ff
    }

    pub fn l_fc(&self) -> &SparseRows {
        &self.l_fc
    }

    pub fn local_laplacian(&self) -> &SparseSymmetricMatrix {
        &self.local_laplacian
    }

    /// Exact `S_α` over `local_separators`, once computed.
    pub fn schur(&self) -> Option<&SparseSymmetricMatrix> {
        self.schur.as_ref()
    }

    /// Uploaded `S̃_α` over `local_separators`, once computed.
    pub fn reduced(&self) -> Option<&SparseSymmetricMatrix> {
        self.reduced.as_ref()
    }

    fn solve_interior(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.factor {
            Some(f) => f.solve(b),
            None => DMatrix::zeros(0, b.ncols()),
        }
    }
}

/// Server-side data: separators, inter-robot Laplacian and the reduced
/// system.
#[derive(Clone, Debug)]
pub struct ServerState {
    separators: Vec<usize>,
    /// Global id to position in `separators`, `usize::MAX` elsewhere.
    position: Vec<usize>,
    l_c: SparseSymmetricMatrix,
    reduced: Option<SparseSymmetricMatrix>,
    solver: Option<LaplacianSolver>,
}

impl ServerState {
    pub fn separators(&self) -> &[usize] {
        &self.separators
    }

    /// `L(G_c)` over the separators.
    pub fn inter_robot_laplacian(&self) -> &SparseSymmetricMatrix {
        &self.l_c
    }

    /// `S̃ = L(G_c) + Σ S̃_α`, once assembled.
    pub fn reduced(&self) -> Option<&SparseSymmetricMatrix> {
        self.reduced.as_ref()
    }
}

/// Blocks and server state for one Laplacian and partition.
#[derive(Clone, Debug)]
pub struct DomainDecomposition {
    n: usize,
    blocks: Vec<RobotBlock>,
    server: ServerState,
    /// Used when there are no separators (single robot).
    whole: Option<LaplacianSolver>,
}

impl DomainDecomposition {
    /// Splits `l` according to `partition` and factors every interior block.
    pub fn build(l: &SparseSymmetricMatrix, partition: &Partition) -> Result<Self> {
        let n = l.n();
        if partition.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: partition.n(),
            });
        }
        let separators = partition.separators().to_vec();
        if separators.is_empty() {
            return Ok(Self {
                n,
                blocks: Vec::new(),
                server: ServerState {
                    separators,
                    position: vec![usize::MAX; n],
                    l_c: SparseSymmetricMatrix::zeros(0),
                    reduced: None,
                    solver: None,
                },
                whole: Some(LaplacianSolver::new(l)?),
            });
        }
        let mut position = vec![usize::MAX; n];
        for (k, &v) in separators.iter().enumerate() {
            position[v] = k;
        }
        let graph = WeightedGraph::from_laplacian(l);
        let mut local_edges: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); partition.m()];
        let mut cross = Vec::new();
        for e in graph.edges() {
            match partition.edge_owner(e.i, e.j) {
                Some(a) => local_edges[a].push((e.i, e.j, e.w)),
                None => cross.push((position[e.i], position[e.j], e.w)),
            }
        }
        let l_c = crate::laplacian::laplacian(&WeightedGraph::new(separators.len(), cross)?);

        let blocks = (0..partition.m())
            .into_par_iter()
            .map(|a| {
                let interior = partition.interior(a).to_vec();
                let mut local_separators: Vec<usize> = local_edges[a]
                    .iter()
                    .flat_map(|&(i, j, _)| [i, j])
                    .filter(|&v| partition.is_separator(v))
                    .collect();
                local_separators.sort_unstable();
                local_separators.dedup();
                let mut local = vec![usize::MAX; n];
                for (k, &v) in interior.iter().chain(&local_separators).enumerate() {
                    local[v] = k;
                }
                let local_laplacian = crate::laplacian::laplacian(&WeightedGraph::new(
                    interior.len() + local_separators.len(),
                    local_edges[a]
                        .iter()
                        .map(|&(i, j, w)| (local[i], local[j], w)),
                )?);
                let l_ff = l.principal_submatrix(&interior);
                let l_fc = l.block(&interior, &separators);
                let boundary = l_fc.nonzero_columns();
                let factor = if interior.is_empty() {
                    None
                } else {
                    Some(
                        SparseCholesky::factor(&l_ff)
                            .map_err(|_| Error::SingularInterior { robot: a })?,
                    )
                };
                Ok(RobotBlock {
                    robot: a,
                    interior,
                    local_separators,
                    boundary,
                    l_ff,
                    l_fc,
                    local_laplacian,
                    factor,
                    schur: None,
                    reduced: None,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            n,
            blocks,
            server: ServerState {
                separators,
                position,
                l_c,
                reduced: None,
                solver: None,
            },
            whole: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[RobotBlock] {
        &self.blocks
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    /// True when there is a single robot and solves bypass the reduction.
    pub fn is_whole(&self) -> bool {
        self.whole.is_some()
    }

    /// Computes each `S_α`, reduces it, meters the upload in `round` and
    /// assembles `S̃` on the server. Robot randomness is seeded from `rng` in
    /// robot order.
    pub fn reduce<R: Rng + ?Sized>(
        &mut self,
        reduction: Reduction,
        rng: &mut R,
        ledger: &mut CommsLedger,
        round: usize,
    ) -> Result<()> {
        if self.whole.is_some() {
            return Ok(());
        }
        let seeds: Vec<u64> = self.blocks.iter().map(|_| rng.random()).collect();
        self.blocks
            .par_iter_mut()
            .zip(seeds)
            .try_for_each(|(block, seed)| -> Result<()> {
                let f: Vec<usize> = (0..block.interior.len()).collect();
                let (s, _) = schur_complement(&block.local_laplacian, &f)?;
                let mut robot_rng = ChaCha8Rng::seed_from_u64(seed);
                let reduced = match reduction {
                    Reduction::Exact => s.clone(),
                    Reduction::Sparsified { epsilon, config } => {
                        sparsify_with(&s, epsilon, &config, &mut robot_rng)?
                    }
                    Reduction::Heuristic(mode) => heuristic_sparsify(&s, mode),
                };
                block.schur = Some(s);
                block.reduced = Some(reduced);
                Ok(())
            })?;
        let c = self.server.separators.len();
        let mut total = self.server.l_c.clone();
        for block in &self.blocks {
            let reduced = block.reduced.as_ref().expect("set above");
            ledger.record(round, block.robot, PayloadKind::Schur, reduced.nnz_upper());
            let map: Vec<usize> = block
                .local_separators
                .iter()
                .map(|&v| self.server.position[v])
                .collect();
            total = total.add(&reduced.embed(&map, c));
        }
        self.server.solver = Some(LaplacianSolver::new(&total)?);
        self.server.reduced = Some(total);
        Ok(())
    }

    /// `S = L(G_c) + Σ S_α` from the exact per-robot Schur complements.
    pub fn exact_reduced(&self) -> Option<SparseSymmetricMatrix> {
        let c = self.server.separators.len();
        self.blocks
            .iter()
            .try_fold(self.server.l_c.clone(), |acc, block| {
                let map: Vec<usize> = block
                    .local_separators
                    .iter()
                    .map(|&v| self.server.position[v])
                    .collect();
                Some(acc.add(&block.schur.as_ref()?.embed(&map, c)))
            })
    }

    /// Compares the assembled `S̃` with the exact `S` (dense; small separator
    /// sets only). `None` before `reduce` or for a single robot.
    pub fn reduction_report(&self) -> Option<ApproxReport> {
        let reduced = self.server.reduced.as_ref()?;
        Some(check_epsilon(reduced, &self.exact_reduced()?))
    }

    /// Solves `L̃ X = B`. Each robot uploads the rows of `L_cα L_αα^{-1} B_α`
    /// for separators next to its interior, metered in `round`.
    pub fn solve(
        &self,
        b: &DMatrix<f64>,
        ledger: &mut CommsLedger,
        round: usize,
    ) -> Result<DMatrix<f64>> {
        if b.nrows() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: b.nrows(),
            });
        }
        for (c, col) in b.column_iter().enumerate() {
            let sum: f64 = col.sum();
            if sum.abs() > 1e-8 * col.lp_norm(1) {
                return Err(Error::RhsNotInImage { column: c, sum });
            }
        }
        if let Some(whole) = &self.whole {
            return whole.solve(b);
        }
        let solver = self.server.solver.as_ref().ok_or_else(|| {
            Error::Invalid("reduced system not assembled; call reduce first".into())
        })?;
        let p = b.ncols();
        let rows = |idx: &[usize]| DMatrix::from_fn(idx.len(), p, |r, c| b[(idx[r], c)]);

        let uploads: Vec<DMatrix<f64>> = self
            .blocks
            .par_iter()
            .map(|block| {
                block
                    .l_fc
                    .transpose_mul_dense(&block.solve_interior(&rows(&block.interior)))
            })
            .collect();
        let mut u = rows(&self.server.separators);
        for (block, up) in self.blocks.iter().zip(&uploads) {
            ledger.record(
                round,
                block.robot,
                PayloadKind::Rhs,
                block.boundary.len() * p,
            );
            u -= up;
        }
        let x_c = solver.solve_projected(&u);

        let interiors: Vec<DMatrix<f64>> = self
            .blocks
            .par_iter()
            .map(|block| {
                let rhs = rows(&block.interior) - block.l_fc.mul_dense(&x_c);
                block.solve_interior(&rhs)
            })
            .collect();
        let mut x = DMatrix::zeros(self.n, p);
        for (k, &v) in self.server.separators.iter().enumerate() {
            x.set_row(v, &x_c.row(k));
        }
        for (block, xi) in self.blocks.iter().zip(&interiors) {
            for (k, &v) in block.interior.iter().enumerate() {
                x.set_row(v, &xi.row(k));
            }
        }
        Ok(x)
    }
}

/// Subtracts each column's mean.
pub fn zero_mean(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}
