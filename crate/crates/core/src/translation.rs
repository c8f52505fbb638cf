//! Translation recovery with fixed rotations: the Laplacian system
//! `L(G;τ) M_t = B_t` and its collaborative iterative refinement.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dd::{zero_mean, CommsLedger, DomainDecomposition, PayloadKind, Reduction};
use crate::error::{Error, Result};
use crate::laplacian::{laplacian, ApproxReport, LaplacianSolver, SparsifyConfig};
use crate::pose_graph::{MeasurementGraph, Partition};
use crate::so::RotationState;
use crate::sparse::SparseSymmetricMatrix;
use crate::trace::TraceRow;

/// `L(G;τ)`.
pub fn translation_laplacian(g: &MeasurementGraph) -> SparseSymmetricMatrix {
    laplacian(&g.weighted(|e| e.tau))
}

/// Right-hand side `B_t`: each edge adds `τ R̂_i t̃_ij` to row `j` and
/// subtracts it from row `i`.
pub fn assemble_bt(g: &MeasurementGraph, r_hat: &RotationState) -> Result<DMatrix<f64>> {
    if r_hat.n() != g.n() || r_hat.d != g.d() {
        return Err(Error::DimensionMismatch {
            expected: g.n(),
            got: r_hat.n(),
        });
    }
    let mut b = DMatrix::zeros(g.n(), g.d());
    for e in g.edges() {
        let rotated = &r_hat.rotations[e.i] * &e.t_tilde * e.tau;
        for a in 0..g.d() {
            b[(e.j, a)] += rotated[a];
            b[(e.i, a)] -= rotated[a];
        }
    }
    Ok(b)
}

/// `Σ τ/2 ||t_j − t_i − R̂_i t̃_ij||²`.
pub fn translation_cost(g: &MeasurementGraph, r_hat: &RotationState, t: &DMatrix<f64>) -> f64 {
    g.edges()
        .iter()
        .map(|e| {
            let diff = (t.row(e.j) - t.row(e.i)).transpose() - &r_hat.rotations[e.i] * &e.t_tilde;
            0.5 * e.tau * diff.norm_squared()
        })
        .sum()
}

/// Zero-mean solution of `L M_t = B_t`.
pub fn exact_solve(l: &SparseSymmetricMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    LaplacianSolver::new(l)?.solve(b)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TranslationConfig {
    /// Sparsification parameter; `0` uploads exact Schur complements.
    pub epsilon: f64,
    /// Stop once `||B_t − L M_t||_F` is at most this.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub sparsify: SparsifyConfig,
    pub record_iterates: bool,
    /// Measure the achieved `ε` of the reduced system (dense check).
    pub verify_reduction: bool,
}

impl Default for TranslationConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            tol: 1e-8,
            max_iters: 50,
            seed: 0,
            sparsify: SparsifyConfig::default(),
            record_iterates: false,
            verify_reduction: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TranslationSolution {
    /// Zero-mean representative.
    pub translations: DMatrix<f64>,
    /// `grad_norm` is the residual `||B_t − L M_t^k||_F`.
    pub trace: Vec<TraceRow>,
    pub ledger: CommsLedger,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    /// `M_t^0, M_t^1, …` when requested.
    pub iterates: Vec<DMatrix<f64>>,
    pub reduction: Option<ApproxReport>,
}

/// Iterative refinement `M^{k+1} = M^k + D^k` with `L̃ D^k = B_t − L M^k`,
/// starting from `M^0 = 0`.
pub fn collaborative_solve(
    g: &MeasurementGraph,
    partition: &Partition,
    r_hat: &RotationState,
    config: &TranslationConfig,
) -> Result<TranslationSolution> {
    if !(config.epsilon >= 0.0 && config.epsilon.is_finite()) {
        return Err(Error::Invalid(format!(
            "epsilon must be non-negative, got {}",
            config.epsilon
        )));
    }
    let d = g.d();
    let l = translation_laplacian(g);
    let b = assemble_bt(g, r_hat)?;
    let mut dd = DomainDecomposition::build(&l, partition)?;
    let mut ledger = CommsLedger::new();
    let reduction = if config.epsilon > 0.0 {
        Reduction::Sparsified {
            epsilon: config.epsilon,
            config: config.sparsify,
        }
    } else {
        Reduction::Exact
    };
    dd.reduce(
        reduction,
        &mut ChaCha8Rng::seed_from_u64(config.seed),
        &mut ledger,
        0,
    )?;
    let reduction = if config.verify_reduction {
        dd.reduction_report().map(|r| r.with_target(config.epsilon))
    } else {
        None
    };

    let mut m = DMatrix::zeros(g.n(), d);
    let mut trace = Vec::new();
    let mut iterates = Vec::new();
    for k in 0..=config.max_iters {
        if config.record_iterates {
            iterates.push(m.clone());
        }
        let round = k + 1;
        // The server completes the separator rows of E^k from partial sums.
        for block in dd.blocks() {
            ledger.record(
                round,
                block.robot(),
                PayloadKind::PartialGrad,
                block.local_separators().len() * d,
            );
        }
        let residual = zero_mean(&(&b - l.mul_dense(&m)));
        let norm = residual.norm();
        trace.push(TraceRow {
            iter: k,
            grad_norm: norm,
            cost: translation_cost(g, r_hat, &m),
            cum_upload_bytes: ledger.bytes(),
        });
        if norm <= config.tol || k == config.max_iters {
            return Ok(TranslationSolution {
                translations: zero_mean(&m),
                trace,
                ledger,
                converged: norm <= config.tol,
                iterations: k,
                residual: norm,
                iterates,
                reduction,
            });
        }
        m += dd.solve(&residual, &mut ledger, round)?;
    }
    unreachable!("the loop returns at k == max_iters")
}
