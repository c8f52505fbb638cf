//! Acceptance criteria. Each criterion prints one `PASS`, `FAIL` or `SKIP`
//! line; the process exits non-zero when any criterion fails.

use std::path::PathBuf;
use std::time::Instant;

use lapra::dd::{CommsLedger, DomainDecomposition, PayloadKind, Reduction};
use lapra::laplacian::{
    grounded_solve, laplacian, random_connected_graph, LaplacianSolver, SparsifyConfig,
};
use lapra::metrics::{
    c_epsilon, gamma_factor, rate_estimate, rotation_rmse, spearman, translation_rmse,
};
use lapra::pose_graph::{
    generate_grid, load_g2o, load_poses, partition_contiguous, spanning_tree_init,
    MeasurementGraph, Partition, SyntheticSpec,
};
use lapra::rotation::{
    self, edge_gradient, edge_hessian, hessian_report, DistanceKind, Method, SolverConfig,
};
use lapra::so::{self, RotationState};
use lapra::sparse::SparseSymmetricMatrix;
use lapra::translation::{self, TranslationConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::{Fail, Pass, Skip};

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

const KINDS: [DistanceKind; 2] = [DistanceKind::Geodesic, DistanceKind::Chordal];

fn random_tangent(rng: &mut ChaCha8Rng, p: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(p, |_, _| rng.random_range(-scale..scale))
}

/// Random edge whose residual has angle `theta`.
fn random_edge(
    rng: &mut ChaCha8Rng,
    d: usize,
    theta: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let p = so::tangent_dim(d);
    let ri = so::exp_map(&random_tangent(rng, p, 3.0));
    let rt = so::exp_map(&random_tangent(rng, p, 3.0));
    let w = random_tangent(rng, p, 1.0).normalize() * theta;
    let rj = &ri * &rt * so::exp_map(&w);
    (ri, rj, rt)
}

/// Left Jacobian of `Exp` at `v`.
fn left_jacobian(v: &DVector<f64>) -> DMatrix<f64> {
    let p = v.len();
    if p == 1 {
        return DMatrix::identity(1, 1);
    }
    let theta = v.norm();
    let t2 = theta * theta;
    // Series below 1e-3 avoids the cancellation in 1 − cos θ.
    let (a, b) = if theta < 1e-3 {
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    let k = so::hat(v).unwrap();
    DMatrix::identity(3, 3) + &k * a + &k * &k * b
}

fn split(v: &DVector<f64>, p: usize) -> (DVector<f64>, DVector<f64>) {
    (v.rows(0, p).into_owned(), v.rows(p, p).into_owned())
}

/// Euclidean gradient of `v ↦ ρ(θ(Exp(v_i) R_i, Exp(v_j) R_j))`.
fn pulled_back_gradient(
    ri: &DMatrix<f64>,
    rj: &DMatrix<f64>,
    rt: &DMatrix<f64>,
    kind: DistanceKind,
    v: &DVector<f64>,
) -> DVector<f64> {
    let p = v.len() / 2;
    let (vi, vj) = split(v, p);
    let (gi, gj) =
        edge_gradient(&(so::exp_map(&vi) * ri), &(so::exp_map(&vj) * rj), rt, kind).unwrap();
    let (gi, gj) = (
        left_jacobian(&vi).transpose() * gi,
        left_jacobian(&vj).transpose() * gj,
    );
    DVector::from_iterator(2 * p, gi.iter().chain(gj.iter()).copied())
}

fn pulled_back_value(
    ri: &DMatrix<f64>,
    rj: &DMatrix<f64>,
    rt: &DMatrix<f64>,
    kind: DistanceKind,
    v: &DVector<f64>,
) -> f64 {
    let p = v.len() / 2;
    let (vi, vj) = split(v, p);
    let ri = so::exp_map(&vi) * ri;
    let rj = so::exp_map(&vj) * rj;
    kind.rho(so::rotation_angle(&(rt.transpose() * ri.transpose() * rj)))
}

fn criterion_1() -> Outcome {
    const STEP: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_g, mut worst_h, mut checked) = (0.0f64, 0.0f64, 0);
    for d in [2, 3] {
        let p = so::tangent_dim(d);
        for kind in KINDS {
            for _ in 0..100 {
                let theta = rng.random_range(0.01..3.0);
                let (ri, rj, rt) = random_edge(&mut rng, d, theta);
                let (gi, gj) = edge_gradient(&ri, &rj, &rt, kind).unwrap();
                let g = DVector::from_iterator(2 * p, gi.iter().chain(gj.iter()).copied());
                let h = edge_hessian(&ri, &rj, &rt, kind).unwrap();
                let mut fd_g = DVector::zeros(2 * p);
                let mut fd_h = DMatrix::zeros(2 * p, 2 * p);
                for k in 0..2 * p {
                    let mut e = DVector::zeros(2 * p);
                    e[k] = STEP;
                    fd_g[k] = (pulled_back_value(&ri, &rj, &rt, kind, &e)
                        - pulled_back_value(&ri, &rj, &rt, kind, &-&e))
                        / (2.0 * STEP);
                    let col = (pulled_back_gradient(&ri, &rj, &rt, kind, &e)
                        - pulled_back_gradient(&ri, &rj, &rt, kind, &-&e))
                        / (2.0 * STEP);
                    fd_h.set_column(k, &col);
                }
                worst_g = worst_g.max((fd_g - &g).norm() / g.norm().max(1.0));
                worst_h = worst_h.max((fd_h - &h).norm() / h.norm().max(1.0));
                checked += 1;
            }
        }
    }
    verdict(
        worst_g <= 1e-6 && worst_h <= 1e-5,
        format!("{checked} configurations, worst relative gradient error {worst_g:.2e}, Hessian {worst_h:.2e}"),
    )
}

fn criterion_2() -> Outcome {
    let mut ok = true;
    let mut worst_cont = 0.0f64;
    for d in [2, 3] {
        let p = so::tangent_dim(d);
        let id = DMatrix::<f64>::identity(d, d);
        let mut block = DMatrix::zeros(2 * p, 2 * p);
        for (r, c, s) in [(0, 0, 1.0), (p, p, 1.0), (0, p, -1.0), (p, 0, -1.0)] {
            block
                .view_mut((r, c), (p, p))
                .copy_from(&(DMatrix::identity(p, p) * s));
        }
        ok &= edge_hessian(&id, &id, &id, DistanceKind::Geodesic).unwrap() == block;
        ok &= edge_hessian(&id, &id, &id, DistanceKind::Chordal).unwrap() == &block * 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(202 + d as u64);
        for _ in 0..20 {
            let (ri, rj0, rt) = random_edge(&mut rng, d, 0.0);
            let u = random_tangent(&mut rng, p, 1.0).normalize();
            let rj = &ri * &rt * so::exp_map(&(u * 1e-4));
            for kind in KINDS {
                let h0 = edge_hessian(&ri, &rj0, &rt, kind).unwrap();
                let h1 = edge_hessian(&ri, &rj, &rt, kind).unwrap();
                worst_cont = worst_cont.max((h1 - h0).norm());
            }
        }
    }
    verdict(
        ok && worst_cont <= 1e-3,
        format!("exact limits at identity: {ok}, worst ||H(1e-4) - H(0)||_F = {worst_cont:.2e}"),
    )
}

fn converged_minimizer(g: &MeasurementGraph, kind: DistanceKind) -> RotationState {
    let config = SolverConfig {
        distance: kind,
        grad_tol: 1e-10,
        max_iters: 100,
        ..Default::default()
    };
    rotation::centralized_solve(g, &spanning_tree_init(g), &config)
        .unwrap()
        .rotations
}

fn criterion_3() -> Outcome {
    let (g, truth) = generate_grid(&SyntheticSpec::default()).unwrap();
    let anchor = hessian_report(&g, &truth.rotations, DistanceKind::Chordal, 0.0).unwrap();
    let anchor_ok =
        anchor.deviation <= 1e-8 && anchor.delta_empirical <= 1e-8 && anchor.kernel_match;
    let (mut sigmas, mut deltas) = (Vec::new(), Vec::new());
    for sigma_deg in [2.0f64, 5.0, 10.0] {
        for seed in 0..20 {
            let spec = SyntheticSpec {
                sigma_rot: sigma_deg.to_radians(),
                seed,
                ..Default::default()
            };
            let (g, _) = generate_grid(&spec).unwrap();
            let r = converged_minimizer(&g, DistanceKind::Chordal);
            let report = hessian_report(&g, &r, DistanceKind::Chordal, 0.0).unwrap();
            sigmas.push(sigma_deg);
            deltas.push(report.delta_empirical);
        }
    }
    let rho = spearman(&sigmas, &deltas);
    let mean = |k: usize| deltas[20 * k..20 * (k + 1)].iter().sum::<f64>() / 20.0;
    verdict(
        anchor_ok && rho > 0.9,
        format!(
            "zero noise ||H - L⊗I||_F = {:.1e}, δ̂ = {:.1e}; mean δ̂ at 2°/5°/10° = {:.3}/{:.3}/{:.3}, Spearman {rho:.3}",
            anchor.deviation,
            anchor.delta_empirical,
            mean(0),
            mean(1),
            mean(2)
        ),
    )
}

fn random_partition(
    n: usize,
    m: usize,
    pairs: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> Partition {
    let mut owner: Vec<usize> = (0..n)
        .map(|v| if v < m { v } else { rng.random_range(0..m) })
        .collect();
    // Shuffle so every robot owns a random subset.
    for v in (1..n).rev() {
        owner.swap(v, rng.random_range(0..=v));
    }
    Partition::from_owner(owner, m, pairs).unwrap()
}

fn dense_schur(l: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    let elim: Vec<usize> = (0..l.nrows()).filter(|v| !keep.contains(v)).collect();
    let pick = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| l[(rows[r], cols[c])])
    };
    if elim.is_empty() {
        return pick(keep, keep);
    }
    let lff = pick(&elim, &elim);
    let lfc = pick(&elim, keep);
    pick(keep, keep) - lfc.transpose() * lff.lu().solve(&lfc).unwrap()
}

fn random_instance(
    rng: &mut ChaCha8Rng,
    n_max: usize,
    m: usize,
) -> (SparseSymmetricMatrix, Partition) {
    let n = rng.random_range(m.max(20)..=n_max);
    let g = random_connected_graph(n, rng.random_range(0.02..0.1), rng);
    let pairs: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.i, e.j)).collect();
    let partition = random_partition(n, m, &pairs, rng);
    (laplacian(&g), partition)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let m = [2, 3, 5][k % 3];
        let (l, partition) = random_instance(&mut rng, 100, m);
        let mut dd = DomainDecomposition::build(&l, &partition).unwrap();
        dd.reduce(Reduction::Exact, &mut rng, &mut CommsLedger::new(), 0)
            .unwrap();
        let s = dd.exact_reduced().unwrap().to_dense();
        let oracle = dense_schur(&l.to_dense(), dd.server().separators());
        worst = worst.max((s - &oracle).norm() / oracle.norm());
    }
    verdict(
        worst <= 1e-9,
        format!("50 instances, worst relative error {worst:.2e}"),
    )
}

fn zero_mean_rhs(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    lapra::dd::zero_mean(&DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0)))
}

#[derive(Default)]
struct SparsifiedTally {
    confirmed: usize,
    sampled: usize,
    violations: usize,
    /// Runs checked against `c(ε̂)` with the achieved `ε̂`.
    achieved_checked: usize,
    achieved_violations: usize,
}

/// Reduced-solve error bound over 50 random instances.
fn sparsified_runs(epsilon: f64, config: SparsifyConfig, seed: u64) -> SparsifiedTally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = SparsifiedTally::default();
    for k in 0..50 {
        let m = [2, 3, 5][k % 3];
        let (l, partition) = random_instance(&mut rng, 200, m);
        let b = zero_mean_rhs(l.n(), &mut rng);
        let exact = LaplacianSolver::new(&l).unwrap().solve(&b).unwrap();
        let mut dd = DomainDecomposition::build(&l, &partition).unwrap();
        dd.reduce(
            Reduction::Sparsified { epsilon, config },
            &mut rng,
            &mut CommsLedger::new(),
            0,
        )
        .unwrap();
        let report = dd.reduction_report().unwrap().with_target(epsilon);
        if dd
            .blocks()
            .iter()
            .any(|b| b.reduced().unwrap().nnz_upper() < b.schur().unwrap().nnz_upper())
        {
            tally.sampled += 1;
        }
        let x = dd.solve(&b, &mut CommsLedger::new(), 1).unwrap();
        let error = l.energy_norm(&(x - &exact));
        let base = l.energy_norm(&exact) * (1.0 + 1e-9);
        if report.kernel_match {
            tally.achieved_checked += 1;
            tally.achieved_violations +=
                usize::from(error > c_epsilon(report.epsilon_achieved) * base);
        }
        if report.satisfied() {
            tally.confirmed += 1;
            tally.violations += usize::from(error > c_epsilon(epsilon) * base);
        }
    }
    tally
}

fn criterion_5() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, eps) in [0.25, 0.5, 1.0].into_iter().enumerate() {
        let t = sparsified_runs(eps, SparsifyConfig::default(), 500 + k as u64);
        ok &= t.confirmed * 100 >= 95 * 50 && t.violations == 0 && t.achieved_violations == 0;
        parts.push(format!(
            "ε={eps}: {}/50 confirmed, {} sampled, {} violations",
            t.confirmed, t.sampled, t.violations
        ));
    }
    // Lower oversampling so the bound is also exercised on sampled reductions,
    // using the achieved ε̂ of each run.
    for (k, (eps, c0)) in [(0.5, 0.1), (1.0, 0.3)].into_iter().enumerate() {
        let low = SparsifyConfig {
            oversampling: c0,
            ..Default::default()
        };
        let t = sparsified_runs(eps, low, 550 + k as u64);
        ok &= t.violations == 0 && t.achieved_violations == 0;
        parts.push(format!(
            "C0={c0} ε={eps}: {} sampled, {} confirmed, {}/{} violate c(ε̂)",
            t.sampled, t.confirmed, t.achieved_violations, t.achieved_checked
        ));
    }
    verdict(ok, parts.join("; "))
}

fn translation_instance(seed: u64, side: usize) -> (MeasurementGraph, RotationState) {
    let spec = SyntheticSpec {
        side,
        sigma_rot: 2f64.to_radians(),
        edge_prob: 0.5,
        seed,
        ..Default::default()
    };
    let (g, truth) = generate_grid(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let edges = g
        .edges()
        .iter()
        .map(|e| {
            let mut e = e.clone();
            e.t_tilde += DVector::from_fn(3, |_, _| rng.random_range(-0.05..0.05));
            e.tau = rng.random_range(0.5..2.0);
            e
        })
        .collect();
    (
        MeasurementGraph::new(3, g.n(), edges).unwrap(),
        truth.rotations,
    )
}

fn criterion_6() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let (g, r) = translation_instance(1, 5);
    let partition = partition_contiguous(&g, 5).unwrap();
    let l = translation::translation_laplacian(&g);
    let b = translation::assemble_bt(&g, &r).unwrap();
    let exact = translation::collaborative_solve(&g, &partition, &r, &TranslationConfig::default())
        .unwrap();
    let residual = (l.mul_dense(&exact.translations) - &b).norm();
    ok &= exact.iterations == 1 && exact.converged && residual <= 1e-8;
    parts.push(format!(
        "ε=0: {} iteration, residual {residual:.1e}",
        exact.iterations
    ));

    let runs: Vec<(f64, f64)> = [0.25, 0.5]
        .iter()
        .flat_map(|&e| [(e, 4.0), (e, 0.1)])
        .collect();
    let (mut confirmed, mut violations, mut total) = (0, 0, 0);
    for (k, (eps, c0)) in runs.into_iter().enumerate() {
        for seed in 0..5 {
            total += 1;
            let (g, r) = translation_instance(600 + 10 * k as u64 + seed, 4);
            let partition = partition_contiguous(&g, [2, 3, 5][seed as usize % 3]).unwrap();
            let l = translation::translation_laplacian(&g);
            let oracle =
                translation::exact_solve(&l, &translation::assemble_bt(&g, &r).unwrap()).unwrap();
            let config = TranslationConfig {
                epsilon: eps,
                tol: 0.0,
                max_iters: 10,
                seed,
                sparsify: SparsifyConfig {
                    oversampling: c0,
                    ..Default::default()
                },
                record_iterates: true,
                verify_reduction: true,
            };
            let sol = translation::collaborative_solve(&g, &partition, &r, &config).unwrap();
            if !sol.reduction.unwrap().satisfied() {
                continue;
            }
            confirmed += 1;
            let base = l.energy_norm(&oracle);
            let c = c_epsilon(eps);
            let bad = sol.iterates.iter().enumerate().skip(1).any(|(k, m)| {
                l.energy_norm(&(m - &oracle))
                    > c.powi(k as i32) * base * (1.0 + 1e-9) + 1e-12 * base
            });
            violations += usize::from(bad);
        }
    }
    ok &= violations == 0;
    parts.push(format!(
        "{confirmed}/{total} runs ε-confirmed, {violations} violate the k = 1..10 bound"
    ));
    verdict(ok, parts.join("; "))
}

/// Solves `c(ε) = target` by bisection on `[0, ln 2 / 3]`.
fn epsilon_for_c(target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, lapra::metrics::C_EPSILON_UNIT_ROOT);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if c_epsilon(mid) < target {
            lo = mid
        } else {
            hi = mid
        }
    }
    lo
}

/// Tail contraction of the aligned RMSE to truth, ignoring iterates at roundoff.
fn rmse_rate(iterates: &[RotationState], truth: &RotationState) -> Option<f64> {
    let seq: Vec<f64> = iterates
        .iter()
        .map(|r| rotation_rmse(r, truth).frobenius)
        .take_while(|&e| e > 1e-10)
        .collect();
    let tail = seq.len().saturating_sub(1).min(3);
    rate_estimate(&seq, tail)
        .ok()
        .map(|r| r.tail_geometric_mean)
}

fn criterion_7() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    let spec = SyntheticSpec {
        seed: 7,
        ..Default::default()
    };
    let (g, truth) = generate_grid(&spec).unwrap();
    let report = hessian_report(&g, &truth.rotations, DistanceKind::Chordal, 0.25).unwrap();
    let partition = partition_contiguous(&g, 5).unwrap();
    let init = spanning_tree_init(&g);
    // Perturb the exact tree initialization so there is something to contract.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let start = init.retract(&DMatrix::from_fn(g.n(), 3, |_, _| {
        rng.random_range(-0.1..0.1)
    }));
    let gamma = report.gamma;
    let mut rate_ok = None;
    if gamma >= 1.0 {
        parts.push(format!(
            "ε=0.25 rate check skipped: κ_H = {:.2}, γ(δ̂+ε) = {gamma:.2} ≥ 1",
            report.kappa_h
        ));
    } else {
        let config = SolverConfig {
            epsilon: 0.25,
            grad_tol: 1e-12,
            record_iterates: true,
            ..Default::default()
        };
        let sol = rotation::collaborative_solve(&g, &partition, &start, &config).unwrap();
        let rate = rmse_rate(&sol.iterates, &truth.rotations).unwrap_or(0.0);
        rate_ok = Some(rate <= gamma);
        parts.push(format!("ε=0.25 rate {rate:.3} vs γ {gamma:.3}"));
    }
    // Supplementary check at an ε small enough for γ < 1.
    let eps_small = epsilon_for_c(0.5 / (2.0 * report.kappa_h.sqrt()));
    let gamma_small = gamma_factor(report.kappa_h, report.delta_empirical + eps_small);
    let config = SolverConfig {
        epsilon: eps_small,
        grad_tol: 1e-12,
        record_iterates: true,
        ..Default::default()
    };
    let sol = rotation::collaborative_solve(&g, &partition, &start, &config).unwrap();
    let rate = rmse_rate(&sol.iterates, &truth.rotations).unwrap_or(0.0);
    ok &= rate <= gamma_small && rate_ok.unwrap_or(true);
    parts.push(format!(
        "supplementary ε={eps_small:.2e}: rate {rate:.3} vs γ {gamma_small:.3}"
    ));

    let mut worst = 0;
    for eps in [0.0, 0.5, 1.5] {
        for seed in 0..3 {
            let spec = SyntheticSpec {
                sigma_rot: 5f64.to_radians(),
                seed: 70 + seed,
                ..Default::default()
            };
            let (g, _) = generate_grid(&spec).unwrap();
            let partition = partition_contiguous(&g, 5).unwrap();
            let config = SolverConfig {
                epsilon: eps,
                seed,
                ..Default::default()
            };
            let sol =
                rotation::collaborative_solve(&g, &partition, &spanning_tree_init(&g), &config)
                    .unwrap();
            ok &= sol.converged && sol.iterations <= 15;
            worst = worst.max(if sol.converged {
                sol.iterations
            } else {
                usize::MAX
            });
        }
    }
    parts.push(format!(
        "σ=5° convergence for ε ∈ {{0, 0.5, 1.5}}: worst {worst} iterations"
    ));
    let line = parts.join("; ");
    match (ok, rate_ok) {
        (true, None) => Skip(format!("{line} (convergence part passed)")),
        (true, Some(_)) => Pass(line),
        (false, _) => Fail(line),
    }
}

fn criterion_8() -> Outcome {
    let spec = SyntheticSpec {
        side: 4,
        sigma_rot: 5f64.to_radians(),
        seed: 8,
        ..Default::default()
    };
    let (g, _) = generate_grid(&spec).unwrap();
    let init = spanning_tree_init(&g);
    let config = SolverConfig {
        project_horizontal: true,
        record_iterates: true,
        ..Default::default()
    };
    let central = rotation::centralized_solve(&g, &init, &config).unwrap();
    let collab =
        rotation::collaborative_solve(&g, &partition_contiguous(&g, 5).unwrap(), &init, &config)
            .unwrap();
    let worst = central
        .iterates
        .iter()
        .zip(&collab.iterates)
        .map(|(a, b)| a.max_difference(b))
        .fold(0.0, f64::max);
    let same_len = central.iterates.len() == collab.iterates.len();

    let l = rotation::rotation_laplacian(&g, DistanceKind::Chordal);
    let b = rotation::assemble_b(&g, &init, DistanceKind::Chordal).unwrap();
    let whole = Partition::contiguous(g.n(), 1, &g.pairs()).unwrap();
    let mut dd = DomainDecomposition::build(&l, &whole).unwrap();
    let mut ledger = CommsLedger::new();
    dd.reduce(
        Reduction::Exact,
        &mut ChaCha8Rng::seed_from_u64(0),
        &mut ledger,
        0,
    )
    .unwrap();
    let single = dd.solve(&b, &mut ledger, 1).unwrap();
    let grounded = lapra::dd::zero_mean(&grounded_solve(&l, &b).unwrap());
    let m1 = (single - grounded).abs().max();
    verdict(
        same_len && worst <= 1e-8 && m1 <= 1e-10 && ledger.events().is_empty(),
        format!(
            "{} iterates, worst per-iterate difference {worst:.1e}; m=1 vs grounded solve {m1:.1e}",
            collab.iterates.len()
        ),
    )
}

fn criterion_9() -> Outcome {
    let spec = SyntheticSpec {
        side: 16,
        sigma_rot: 5f64.to_radians(),
        edge_prob: 0.6,
        seed: 9,
        ..Default::default()
    };
    let (g, _) = generate_grid(&spec).unwrap();
    let partition = partition_contiguous(&g, 5).unwrap();
    let init = spanning_tree_init(&g);
    // At the default C0 = 4 the ε = 0.5 budget exceeds every Schur edge count
    // at this size; C0 = 1 puts both nonzero ε in the sampling regime.
    let sparsify = SparsifyConfig {
        oversampling: 1.0,
        ..Default::default()
    };
    let run = |method: Method, epsilon: f64, max_iters: usize, sparsify: SparsifyConfig| {
        let config = SolverConfig {
            epsilon,
            method,
            grad_tol: 1e-3,
            max_iters,
            seed: 9,
            sparsify,
            ..Default::default()
        };
        rotation::collaborative_solve(&g, &partition, &init, &config)
    };
    let mut schur = Vec::new();
    let mut default_schur = Vec::new();
    let mut sparsified_iters = 0;
    for eps in [0.0, 0.5, 1.5] {
        let sol = run(Method::Sparsified, eps, 50, sparsify).unwrap();
        if eps == 0.5 {
            sparsified_iters = sol.iterations;
        }
        schur.push(sol.ledger.bytes_of(PayloadKind::Schur));
        let sol = run(Method::Sparsified, eps, 0, SparsifyConfig::default()).unwrap();
        default_schur.push(sol.ledger.bytes_of(PayloadKind::Schur));
    }
    let decreasing = schur[0] > schur[1] && schur[1] > schur[2];
    let budget = 3 * sparsified_iters.max(1);
    // A baseline that errors out or stalls before the budget counts as slower.
    let baseline = |method| match run(method, 0.0, budget, sparsify) {
        Ok(sol) if sol.converged => sol.iterations.to_string(),
        Ok(_) => format!(">{}", budget - 1),
        Err(e) => format!("failed ({e})"),
    };
    let (diag, tree) = (baseline(Method::BlockDiagonal), baseline(Method::BlockTree));
    let slow = |s: &str| s.parse::<usize>().map_or(true, |k| k >= budget);
    verdict(
        decreasing && slow(&diag) && slow(&tree),
        format!(
            "schur bytes ε=0/0.5/1.5 at C0=1: {}/{}/{} (C0=4: {}/{}/{}); iterations to 1e-3: ε=0.5 {sparsified_iters}, block-diagonal {diag}, block-tree {tree}",
            schur[0], schur[1], schur[2], default_schur[0], default_schur[1], default_schur[2]
        ),
    )
}

fn criterion_10() -> Outcome {
    let Some(dir) = std::env::var_os("LAPRA_DATASETS").map(PathBuf::from) else {
        return Skip("LAPRA_DATASETS not set; benchmark files are not bundled".into());
    };
    let graph_path = dir.join("cubicle.g2o");
    if !graph_path.exists() {
        return Skip(format!("{} not found", graph_path.display()));
    }
    let (g, _) = load_g2o(&graph_path).unwrap();
    let partition = partition_contiguous(&g, 5).unwrap();
    let init = spanning_tree_init(&g);
    let config = SolverConfig::default();
    let sol = rotation::collaborative_solve(&g, &partition, &init, &config).unwrap();
    let mut ok = sol.converged && sol.iterations.abs_diff(5) <= 2;
    let mut line = format!("{} iterations to 1e-5", sol.iterations);
    let reference = dir.join("cubicle_reference.txt");
    if reference.exists() {
        let reference = load_poses(&reference).unwrap();
        let t = translation::collaborative_solve(
            &g,
            &partition,
            &sol.rotations,
            &TranslationConfig::default(),
        )
        .unwrap();
        let rot = rotation_rmse(&sol.rotations, &reference.rotations).geodesic_deg;
        let trans = translation_rmse(&t.translations, &reference.translations);
        ok &= rot <= 5.0 && trans <= 1.0;
        line.push_str(&format!(
            "; rotation RMSE {rot:.3}°, translation RMSE {trans:.3} m"
        ));
    }
    verdict(ok, line)
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("edge derivatives match finite differences", criterion_1),
        ("Hessian limits at zero residual", criterion_2),
        ("zero-noise Hessian anchor and δ̂ trend", criterion_3),
        ("Schur complement composition", criterion_4),
        ("sparsified reduced solve error bound", criterion_5),
        ("translation refinement error bound", criterion_6),
        ("empirical rotation rate and convergence", criterion_7),
        ("exactness chain", criterion_8),
        ("communication trends", criterion_9),
        ("benchmark reproduction", criterion_10),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {}", k + 1);
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| label.ends_with(&format!(" {f}")) || name.contains(f.as_str()))
        {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Fail(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("{tag} {label} ({name}, {secs:.1}s): {detail}");
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
