//! Rotation averaging: objective, per-edge derivatives, the approximate
//! Newton iteration with a constant Laplacian, its collaborative version and
//! the baselines.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dd::{zero_mean, CommsLedger, DomainDecomposition, PayloadKind, Reduction};
use crate::error::{Error, Result};
use crate::laplacian::{
    check_epsilon_dense, laplacian, ApproxReport, HeuristicMode, LaplacianSolver, SparsifyConfig,
    WeightedGraph,
};
use crate::metrics::gamma_factor;
use crate::pose_graph::{MeasurementGraph, Partition};
use crate::so::{self, RotationState};
use crate::sparse::SparseSymmetricMatrix;
use crate::trace::TraceRow;

/// Below this residual angle the geodesic `α` uses its Taylor series.
const ALPHA_SERIES_THRESHOLD: f64 = 1e-4;

/// Largest `n p` accepted by the dense Hessian report.
pub const DENSE_HESSIAN_LIMIT: usize = 3000;

/// Reshaped distance `ρ(θ)` applied to each residual angle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DistanceKind {
    /// `ρ(θ) = θ²/2`.
    Geodesic,
    /// `ρ(θ) = 2 − 2cos θ`.
    Chordal,
}

impl DistanceKind {
    pub fn rho(self, theta: f64) -> f64 {
        match self {
            Self::Geodesic => 0.5 * theta * theta,
            Self::Chordal => 2.0 - 2.0 * theta.cos(),
        }
    }

    pub fn rho_dot(self, theta: f64) -> f64 {
        match self {
            Self::Geodesic => theta,
            Self::Chordal => 2.0 * theta.sin(),
        }
    }

    pub fn rho_ddot(self, theta: f64) -> f64 {
        match self {
            Self::Geodesic => 1.0,
            Self::Chordal => 2.0 * theta.cos(),
        }
    }

    /// `ρ̈(0)`: the factor between `κ` and the Laplacian weight.
    pub fn laplacian_scale(self) -> f64 {
        self.rho_ddot(0.0)
    }

    /// `(α, β, γ)` of the edge Hessian.
    pub fn hessian_coefficients(self, theta: f64) -> (f64, f64, f64) {
        let alpha = match self {
            Self::Geodesic if theta < ALPHA_SERIES_THRESHOLD => 1.0 - theta * theta / 12.0,
            Self::Geodesic => 0.5 * theta / (0.5 * theta).tan(),
            Self::Chordal => 2.0 * (0.5 * theta).cos().powi(2),
        };
        (
            alpha,
            0.5 * self.rho_dot(theta),
            self.rho_ddot(theta) - alpha,
        )
    }
}

/// Angle and axis of the residual `R̃^T R_i^T R_j`. For `d = 2` the axis is
/// the one-element sign of the signed angle.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeGeometry {
    pub theta: f64,
    pub u: DVector<f64>,
}

pub fn edge_geometry(
    ri: &DMatrix<f64>,
    rj: &DMatrix<f64>,
    r_tilde: &DMatrix<f64>,
) -> Result<EdgeGeometry> {
    let residual = r_tilde.transpose() * ri.transpose() * rj;
    let v = so::log_map(&residual)?;
    let theta = v.norm();
    let u = if theta > 0.0 {
        v / theta
    } else {
        DVector::zeros(v.len())
    };
    Ok(EdgeGeometry { theta, u })
}

/// Gradient blocks `(g_i, g_j)` of `ρ(θ_ij)` in the left-perturbation basis
/// `R ← Exp(v) R`.
pub fn edge_gradient(
    ri: &DMatrix<f64>,
    rj: &DMatrix<f64>,
    r_tilde: &DMatrix<f64>,
    kind: DistanceKind,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let EdgeGeometry { theta, u } = edge_geometry(ri, rj, r_tilde)?;
    let s = kind.rho_dot(theta);
    if ri.nrows() == 2 {
        return Ok((-s * &u, s * u));
    }
    Ok((-s * (ri * r_tilde) * &u, s * rj * u))
}

/// Hessian of `ρ(θ_ij)` with respect to `(v_i, v_j)`, a `2p × 2p` matrix.
pub fn edge_hessian(
    ri: &DMatrix<f64>,
    rj: &DMatrix<f64>,
    r_tilde: &DMatrix<f64>,
    kind: DistanceKind,
) -> Result<DMatrix<f64>> {
    let EdgeGeometry { theta, u } = edge_geometry(ri, rj, r_tilde)?;
    if ri.nrows() == 2 {
        let c = kind.rho_ddot(theta);
        return Ok(DMatrix::from_row_slice(2, 2, &[c, -c, -c, c]));
    }
    let (alpha, beta, gamma) = kind.hessian_coefficients(theta);
    let uu = &u * u.transpose();
    let sym = DMatrix::identity(3, 3) * alpha + &uu * gamma;
    let h = &sym + so::hat(&u)? * beta;
    let p1 = ri * r_tilde;
    let p2 = rj;
    let mut out = DMatrix::zeros(6, 6);
    out.view_mut((0, 0), (3, 3))
        .copy_from(&(&p1 * &sym * p1.transpose()));
    out.view_mut((3, 3), (3, 3))
        .copy_from(&(p2 * &sym * p2.transpose()));
    let off = -(&p1 * &h * p2.transpose());
    out.view_mut((0, 3), (3, 3)).copy_from(&off);
    out.view_mut((3, 0), (3, 3)).copy_from(&off.transpose());
    Ok(out)
}

fn at_pi(
    i: usize,
    j: usize,
    ri: &DMatrix<f64>,
    rj: &DMatrix<f64>,
    r_tilde: &DMatrix<f64>,
) -> impl FnOnce(Error) -> Error {
    let theta = so::rotation_angle(&(r_tilde.transpose() * ri.transpose() * rj));
    move |e| match e {
        Error::LogSingularity { .. } => Error::ResidualAtPi { i, j, theta },
        other => other,
    }
}

/// `Σ κ_ij ρ(θ_ij)`.
pub fn cost(g: &MeasurementGraph, r: &RotationState, kind: DistanceKind) -> f64 {
    g.edges()
        .iter()
        .map(|e| {
            let residual = e.r_tilde.transpose() * r.rotations[e.i].transpose() * &r.rotations[e.j];
            e.kappa * kind.rho(so::rotation_angle(&residual))
        })
        .sum()
}

/// `B(R)`: row `i` is minus the Riemannian gradient block of vertex `i`.
pub fn assemble_b(
    g: &MeasurementGraph,
    r: &RotationState,
    kind: DistanceKind,
) -> Result<DMatrix<f64>> {
    let mut b = DMatrix::zeros(g.n(), g.p());
    for e in g.edges() {
        let (ri, rj) = (&r.rotations[e.i], &r.rotations[e.j]);
        let (gi, gj) =
            edge_gradient(ri, rj, &e.r_tilde, kind).map_err(at_pi(e.i, e.j, ri, rj, &e.r_tilde))?;
        for a in 0..g.p() {
            b[(e.i, a)] -= e.kappa * gi[a];
            b[(e.j, a)] -= e.kappa * gj[a];
        }
    }
    Ok(b)
}

/// Laplacian weights `w = ρ̈(0) κ`: `κ` for geodesic and `2κ` for chordal.
pub fn laplacian_weights(g: &MeasurementGraph, kind: DistanceKind) -> WeightedGraph {
    g.weighted(|e| kind.laplacian_scale() * e.kappa)
}

pub fn rotation_laplacian(g: &MeasurementGraph, kind: DistanceKind) -> SparseSymmetricMatrix {
    laplacian(&laplacian_weights(g, kind))
}

/// One approximate Newton step `R_i ← Exp(v_i) R_i` with `L V = B(R)`
/// solved for the zero-mean `V`.
pub fn centralized_step(
    g: &MeasurementGraph,
    r: &RotationState,
    kind: DistanceKind,
) -> Result<RotationState> {
    let solver = LaplacianSolver::new(&rotation_laplacian(g, kind))?;
    Ok(r.retract(&solver.solve(&zero_mean(&assemble_b(g, r, kind)?))?))
}

/// Full `H̄(R)` as a dense `np × np` matrix, vertex-major.
pub fn full_hessian_dense(
    g: &MeasurementGraph,
    r: &RotationState,
    kind: DistanceKind,
) -> Result<DMatrix<f64>> {
    let p = g.p();
    let mut h = DMatrix::zeros(g.n() * p, g.n() * p);
    for e in g.edges() {
        let (ri, rj) = (&r.rotations[e.i], &r.rotations[e.j]);
        let he = edge_hessian(ri, rj, &e.r_tilde, kind)
            .map_err(at_pi(e.i, e.j, ri, rj, &e.r_tilde))?
            * e.kappa;
        for (bi, vi) in [(0, e.i), (1, e.j)] {
            for (bj, vj) in [(0, e.i), (1, e.j)] {
                let mut block = h.view_mut((vi * p, vj * p), (p, p));
                block += he.view((bi * p, bj * p), (p, p));
            }
        }
    }
    Ok(h)
}

/// `P_H = I − (1/n)(1 1^T ⊗ I_p)`.
pub fn horizontal_projector(n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n * p, n * p, |r, c| {
        let same = if r % p == c % p { 1.0 / n as f64 } else { 0.0 };
        if r == c {
            1.0 - same
        } else {
            -same
        }
    })
}

/// `L ⊗ I_p`, vertex-major.
pub fn kron_identity(l: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let n = l.nrows();
    DMatrix::from_fn(n * p, n * p, |r, c| {
        if r % p == c % p {
            l[(r / p, c / p)]
        } else {
            0.0
        }
    })
}

/// Spectral comparison of the Hessian with the constant Laplacian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HessianReport {
    /// Smallest `δ` with `H(R) ≈_δ L ⊗ I_p`.
    pub delta_empirical: f64,
    pub kernel_match: bool,
    pub lambda2: f64,
    pub lambda_max: f64,
    pub mu_h: f64,
    pub l_h: f64,
    pub kappa_h: f64,
    pub epsilon: f64,
    /// `γ(δ + ε)`.
    pub gamma: f64,
    /// `||H(R) − L ⊗ I_p||_F`.
    pub deviation: f64,
}

pub fn hessian_report(
    g: &MeasurementGraph,
    r: &RotationState,
    kind: DistanceKind,
    epsilon: f64,
) -> Result<HessianReport> {
    let (n, p) = (g.n(), g.p());
    if n * p > DENSE_HESSIAN_LIMIT {
        return Err(Error::Invalid(format!(
            "dense Hessian report needs n p <= {DENSE_HESSIAN_LIMIT}, got {}",
            n * p
        )));
    }
    let proj = horizontal_projector(n, p);
    let h = &proj * full_hessian_dense(g, r, kind)? * &proj;
    let h = (&h + h.transpose()) * 0.5;
    let l = rotation_laplacian(g, kind).to_dense();
    let lp = kron_identity(&l, p);
    let approx = check_epsilon_dense(&h, &lp);
    let mut eig: Vec<f64> = SymmetricEigen::new(l).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let lambda2 = eig.get(1).copied().unwrap_or(0.0);
    let lambda_max = eig.last().copied().unwrap_or(0.0);
    let delta = approx.epsilon_achieved;
    let mu_h = (-delta).exp() * lambda2;
    let l_h = delta.exp() * lambda_max;
    let kappa_h = l_h / mu_h;
    Ok(HessianReport {
        delta_empirical: delta,
        kernel_match: approx.kernel_match,
        lambda2,
        lambda_max,
        mu_h,
        l_h,
        kappa_h,
        epsilon,
        gamma: gamma_factor(kappa_h, delta + epsilon),
        deviation: (h - lp).norm(),
    })
}

/// Sparse `H̄(R)` kept as weighted per-edge blocks for matrix-free products.
struct EdgeHessians {
    n: usize,
    p: usize,
    blocks: Vec<(usize, usize, DMatrix<f64>)>,
}

impl EdgeHessians {
    fn new(g: &MeasurementGraph, r: &RotationState, kind: DistanceKind) -> Result<Self> {
        let blocks = g
            .edges()
            .iter()
            .map(|e| {
                let (ri, rj) = (&r.rotations[e.i], &r.rotations[e.j]);
                let he = edge_hessian(ri, rj, &e.r_tilde, kind)
                    .map_err(at_pi(e.i, e.j, ri, rj, &e.r_tilde))?;
                Ok((e.i, e.j, he * e.kappa))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            n: g.n(),
            p: g.p(),
            blocks,
        })
    }

    fn mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.p;
        let mut y = DMatrix::zeros(self.n, p);
        let mut local = DVector::zeros(2 * p);
        for (i, j, h) in &self.blocks {
            for a in 0..p {
                local[a] = x[(*i, a)];
                local[p + a] = x[(*j, a)];
            }
            let out = h * &local;
            for a in 0..p {
                y[(*i, a)] += out[a];
                y[(*j, a)] += out[p + a];
            }
        }
        y
    }
}

fn column_means(x: &DMatrix<f64>) -> DMatrix<f64> {
    x - zero_mean(x)
}

/// Min-norm solution of `P_H H̄ P_H v = B` (with `B ⊥ N`), by conjugate
/// gradients on `P_H H̄ P_H + P_N` preconditioned with `(L ⊗ I_p)^† + P_N`.
fn newton_direction(
    hessian: &EdgeHessians,
    b: &DMatrix<f64>,
    preconditioner: &LaplacianSolver,
) -> Result<DMatrix<f64>> {
    let apply = |x: &DMatrix<f64>| {
        let xh = zero_mean(x);
        zero_mean(&hessian.mul(&xh)) + column_means(x)
    };
    let precondition =
        |r: &DMatrix<f64>| preconditioner.solve_projected(&zero_mean(r)) + column_means(r);
    let b = zero_mean(b);
    let b_norm = b.norm();
    let mut x = DMatrix::zeros(b.nrows(), b.ncols());
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.clone();
    let mut z = precondition(&r);
    let mut d = z.clone();
    let mut rz = r.dot(&z);
    let max_iter = 10 * b.len() + 100;
    for _ in 0..max_iter {
        let ad = apply(&d);
        let curvature = d.dot(&ad);
        if !(curvature > 0.0) {
            return Err(Error::IndefiniteHessian {
                curvature: curvature / d.norm_squared(),
            });
        }
        let step = rz / curvature;
        x += &d * step;
        r -= &ad * step;
        if r.norm() <= 1e-12 * b_norm {
            break;
        }
        z = precondition(&r);
        let rz_next = r.dot(&z);
        d = &z + &d * (rz_next / rz);
        rz = rz_next;
    }
    Ok(zero_mean(&x))
}

/// One exact Newton step with the min-norm direction.
pub fn exact_newton_step(
    g: &MeasurementGraph,
    r: &RotationState,
    kind: DistanceKind,
) -> Result<RotationState> {
    let solver = LaplacianSolver::new(&rotation_laplacian(g, kind))?;
    let v = newton_direction(
        &EdgeHessians::new(g, r, kind)?,
        &assemble_b(g, r, kind)?,
        &solver,
    )?;
    Ok(r.retract(&v))
}

/// Collaborative solvers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Approximate Newton with spectrally sparsified Schur complements.
    Sparsified,
    /// Exact Newton; the Hessian Schur complement is uploaded every iteration.
    Newton,
    /// Approximate Newton keeping only the diagonal of each Schur complement.
    BlockDiagonal,
    /// Approximate Newton keeping a maximum-weight spanning tree pattern.
    BlockTree,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Sparsification parameter; `0` uploads exact Schur complements.
    pub epsilon: f64,
    pub distance: DistanceKind,
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Subtract the column means of each update.
    pub project_horizontal: bool,
    pub seed: u64,
    pub method: Method,
    pub sparsify: SparsifyConfig,
    /// Keep every iterate in the solution.
    pub record_iterates: bool,
    /// Measure the achieved `ε` of the reduced system (dense check).
    pub verify_reduction: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            distance: DistanceKind::Chordal,
            grad_tol: 1e-5,
            max_iters: 50,
            project_horizontal: false,
            seed: 0,
            method: Method::Sparsified,
            sparsify: SparsifyConfig::default(),
            record_iterates: false,
            verify_reduction: false,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Invalid(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::Invalid(format!(
                "gradient tolerance must be positive, got {}",
                self.grad_tol
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RotationSolution {
    pub rotations: RotationState,
    pub trace: Vec<TraceRow>,
    pub ledger: CommsLedger,
    pub converged: bool,
    /// Number of updates applied.
    pub iterations: usize,
    pub grad_norm: f64,
    pub cost: f64,
    /// Iterates `R^0, R^1, …` when requested.
    pub iterates: Vec<RotationState>,
    pub reduction: Option<ApproxReport>,
}

/// Shared iteration: evaluate, record, stop or update.
fn iterate(
    g: &MeasurementGraph,
    r0: &RotationState,
    config: &SolverConfig,
    mut ledger: CommsLedger,
    mut meter: impl FnMut(&mut CommsLedger, usize),
    mut direction: impl FnMut(
        &RotationState,
        &DMatrix<f64>,
        &mut CommsLedger,
        usize,
    ) -> Result<DMatrix<f64>>,
) -> Result<RotationSolution> {
    config.validate()?;
    if r0.n() != g.n() || r0.d != g.d() {
        return Err(Error::DimensionMismatch {
            expected: g.n(),
            got: r0.n(),
        });
    }
    let mut r = r0.clone();
    let mut trace = Vec::new();
    let mut iterates = Vec::new();
    for k in 0..=config.max_iters {
        if config.record_iterates {
            iterates.push(r.clone());
        }
        let round = k + 1;
        let b = assemble_b(g, &r, config.distance)?;
        meter(&mut ledger, round);
        let grad_norm = b.norm();
        let cost = cost(g, &r, config.distance);
        trace.push(TraceRow {
            iter: k,
            grad_norm,
            cost,
            cum_upload_bytes: ledger.bytes(),
        });
        if grad_norm <= config.grad_tol || k == config.max_iters {
            return Ok(RotationSolution {
                rotations: r,
                trace,
                ledger,
                converged: grad_norm <= config.grad_tol,
                iterations: k,
                grad_norm,
                cost,
                iterates,
                reduction: None,
            });
        }
        // B is in the image of L; remove the roundoff in its column sums.
        let mut v = direction(&r, &zero_mean(&b), &mut ledger, round)?;
        if config.project_horizontal {
            v = zero_mean(&v);
        }
        r = r.retract(&v);
    }
    unreachable!("the loop returns at k == max_iters")
}

/// Centralized approximate Newton iteration with a cached Laplacian factor.
pub fn centralized_solve(
    g: &MeasurementGraph,
    r0: &RotationState,
    config: &SolverConfig,
) -> Result<RotationSolution> {
    let solver = LaplacianSolver::new(&rotation_laplacian(g, config.distance))?;
    iterate(
        g,
        r0,
        config,
        CommsLedger::new(),
        |_, _| {},
        |_, b, _, _| solver.solve(b),
    )
}

/// Centralized exact Newton iteration.
pub fn centralized_newton_solve(
    g: &MeasurementGraph,
    r0: &RotationState,
    config: &SolverConfig,
) -> Result<RotationSolution> {
    let solver = LaplacianSolver::new(&rotation_laplacian(g, config.distance))?;
    iterate(
        g,
        r0,
        config,
        CommsLedger::new(),
        |_, _| {},
        |r, b, _, _| newton_direction(&EdgeHessians::new(g, r, config.distance)?, b, &solver),
    )
}

/// Robots upload their separator rows of `B(R)` each round.
fn partial_gradient_meter(
    dd: &DomainDecomposition,
    p: usize,
) -> impl FnMut(&mut CommsLedger, usize) + '_ {
    move |ledger, round| {
        for block in dd.blocks() {
            ledger.record(
                round,
                block.robot(),
                PayloadKind::PartialGrad,
                block.local_separators().len() * p,
            );
        }
    }
}

/// Collaborative solve over `partition` with the method in `config`.
pub fn collaborative_solve(
    g: &MeasurementGraph,
    partition: &Partition,
    r0: &RotationState,
    config: &SolverConfig,
) -> Result<RotationSolution> {
    config.validate()?;
    let p = g.p();
    let l = rotation_laplacian(g, config.distance);
    let mut dd = DomainDecomposition::build(&l, partition)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ledger = CommsLedger::new();
    let reduction = match config.method {
        Method::Sparsified if config.epsilon > 0.0 => Reduction::Sparsified {
            epsilon: config.epsilon,
            config: config.sparsify,
        },
        Method::Sparsified | Method::Newton => Reduction::Exact,
        Method::BlockDiagonal => Reduction::Heuristic(HeuristicMode::BlockDiagonal),
        Method::BlockTree => Reduction::Heuristic(HeuristicMode::Tree),
    };
    if config.method == Method::Newton {
        // Only the Schur sparsity pattern is needed; its uploads are metered
        // per iteration below.
        dd.reduce(reduction, &mut rng, &mut CommsLedger::new(), 0)?;
        let solver = LaplacianSolver::new(&l)?;
        let hessian_uploads: Vec<(usize, usize, usize)> = dd
            .blocks()
            .iter()
            .map(|b| {
                let pattern = b.schur().map_or(0, |s| s.off_diagonal_count());
                let scalars = b.local_separators().len() * p * (p + 1) / 2 + pattern * p * p;
                (b.robot(), scalars, b.boundary().len() * p)
            })
            .collect();
        let mut meter = partial_gradient_meter(&dd, p);
        return iterate(g, r0, config, ledger, &mut meter, |r, b, ledger, round| {
            for &(robot, schur, rhs) in &hessian_uploads {
                ledger.record(round, robot, PayloadKind::Schur, schur);
                ledger.record(round, robot, PayloadKind::Rhs, rhs);
            }
            newton_direction(&EdgeHessians::new(g, r, config.distance)?, b, &solver)
        });
    }
    dd.reduce(reduction, &mut rng, &mut ledger, 0)?;
    let report = if config.verify_reduction {
        dd.reduction_report().map(|r| {
            if config.epsilon > 0.0 {
                r.with_target(config.epsilon)
            } else {
                r
            }
        })
    } else {
        None
    };
    let meter = partial_gradient_meter(&dd, p);
    let mut sol = iterate(g, r0, config, ledger, meter, |_, b, ledger, round| {
        dd.solve(b, ledger, round)
    })?;
    sol.reduction = report;
    Ok(sol)
}
