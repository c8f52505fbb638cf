//! `lapra` command-line driver.
//!
//! Exit codes: 0 on success, 2 for usage, input and I/O errors, 3 when the
//! numerics fail (residual at π, indefinite Hessian, singular blocks).

mod report;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lapra::laplacian::SparsifyConfig;
use lapra::metrics::{aligned_translation_rmse, rotation_rmse};
use lapra::pose_graph::{
    generate_grid, load_g2o, load_poses, partition_contiguous, spanning_tree_init, write_g2o,
    write_poses, MeasurementGraph, Poses, SyntheticSpec,
};
use lapra::rotation::{self, hessian_report, DistanceKind, Method, RotationSolution, SolverConfig};
use lapra::so::RotationState;
use lapra::trace::trace_csv;
use lapra::translation::{self, TranslationConfig, TranslationSolution};
use nalgebra::DMatrix;
use serde::Serialize;

use report::{trace_entries, Metrics, RunReport, Uploads};

#[derive(Parser)]
#[command(
    name = "lapra",
    version,
    about = "Collaborative rotation averaging and translation recovery"
)]
struct Cli {
    /// Worker threads for per-robot work (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic 3D grid problem.
    Synth(SynthArgs),
    /// Collaborative rotation averaging.
    SolveRotation(RotationArgs),
    /// Collaborative translation recovery with fixed rotations.
    SolveTranslation(TranslationArgs),
    /// Measure how far the Hessian is from the constant Laplacian.
    ValidateHessian(HessianArgs),
    /// Rotation averaging followed by translation recovery.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum DistanceArg {
    Geodesic,
    Chordal,
}

impl From<DistanceArg> for DistanceKind {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::Geodesic => DistanceKind::Geodesic,
            DistanceArg::Chordal => DistanceKind::Chordal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MethodArg {
    Sparsified,
    Newton,
    BlockDiagonal,
    BlockTree,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Sparsified => Method::Sparsified,
            MethodArg::Newton => Method::Newton,
            MethodArg::BlockDiagonal => Method::BlockDiagonal,
            MethodArg::BlockTree => Method::BlockTree,
        }
    }
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    side: usize,
    /// Rotation noise standard deviation in degrees.
    #[arg(long, default_value_t = 0.0)]
    sigma_deg: f64,
    /// Probability of each non-tree lattice edge.
    #[arg(long, default_value_t = 0.3)]
    edge_prob: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, env = "LAPRA_SEED", default_value_t = 0)]
    seed: u64,
    /// Output g2o file (measurements only).
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth poses file.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Serialize, Clone)]
struct Outputs {
    /// JSON report path (default: stdout).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-iteration trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Upload ledger CSV.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Estimated poses file.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Serialize, Clone)]
struct RotationArgs {
    /// g2o measurement file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 5)]
    robots: usize,
    /// Sparsification parameter; 0 uploads exact Schur complements.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = DistanceArg::Chordal)]
    distance: DistanceArg,
    #[arg(long, value_enum, default_value_t = MethodArg::Sparsified)]
    method: MethodArg,
    #[arg(long, default_value_t = 1e-5)]
    grad_tol: f64,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long, env = "LAPRA_SEED", default_value_t = 0)]
    seed: u64,
    /// Sample budget constant of the sparsifier.
    #[arg(long, default_value_t = 4.0)]
    oversampling: f64,
    /// Remove the mean of every update.
    #[arg(long)]
    project_horizontal: bool,
    /// Reference poses for RMSE.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[command(flatten)]
    outputs: Outputs,
}

#[derive(Args, Serialize)]
struct TranslationArgs {
    #[arg(long)]
    input: PathBuf,
    /// Poses file whose rotations are held fixed.
    #[arg(long)]
    rotations: PathBuf,
    #[arg(long, default_value_t = 5)]
    robots: usize,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Stop once the residual norm is at most this.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long, env = "LAPRA_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4.0)]
    oversampling: f64,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[command(flatten)]
    outputs: Outputs,
}

#[derive(Args, Serialize)]
struct HessianArgs {
    /// Evaluate a g2o file instead of synthetic grids.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    side: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![2.0, 5.0, 10.0])]
    sigma_deg: Vec<f64>,
    /// Seeds per noise level.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 0.3)]
    edge_prob: f64,
    #[arg(long, env = "LAPRA_SEED", default_value_t = 0)]
    seed: u64,
    /// ε added to the measured δ̂ in γ(δ̂ + ε).
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = DistanceArg::Chordal)]
    distance: DistanceArg,
    /// CSV path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct PipelineArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 5)]
    robots: usize,
    /// One run per value.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0])]
    epsilon: Vec<f64>,
    #[arg(long, value_enum, default_value_t = DistanceArg::Chordal)]
    distance: DistanceArg,
    #[arg(long, default_value_t = 1e-5)]
    grad_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long, env = "LAPRA_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4.0)]
    oversampling: f64,
    #[arg(long)]
    reference: Option<PathBuf>,
    /// JSON report path (default: stdout).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Directory for per-run traces, ledgers and poses.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<lapra::Error> for Failure {
    fn from(e: lapra::Error) -> Self {
        if e.is_numerical() {
            Self::Numerical(e.to_string())
        } else {
            Self::Usage(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents)
        .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn emit(path: Option<&Path>, contents: &str) -> CliResult<()> {
    match path {
        Some(p) => write_file(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn sparsify_config(oversampling: f64) -> CliResult<SparsifyConfig> {
    if oversampling.is_nan() || oversampling <= 0.0 {
        return Err(Failure::Usage(format!(
            "--oversampling must be positive, got {oversampling}"
        )));
    }
    Ok(SparsifyConfig {
        oversampling,
        ..Default::default()
    })
}

fn load_reference(path: Option<&PathBuf>, g: &MeasurementGraph) -> CliResult<Option<Poses>> {
    let Some(path) = path else { return Ok(None) };
    let poses = load_poses(path)?;
    if poses.rotations.n() != g.n() || poses.rotations.d != g.d() {
        return Err(Failure::Usage(format!(
            "reference has {} poses of dimension {}, the graph has {} of dimension {}",
            poses.rotations.n(),
            poses.rotations.d,
            g.n(),
            g.d()
        )));
    }
    Ok(Some(poses))
}

fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let spec = SyntheticSpec {
        side: args.side,
        sigma_rot: args.sigma_deg.to_radians(),
        edge_prob: args.edge_prob,
        kappa: args.kappa,
        tau: args.tau,
        seed: args.seed,
    };
    let (g, truth) = generate_grid(&spec)?;
    write_file(&args.out, &write_g2o(&g, None))?;
    if let Some(path) = &args.truth {
        write_file(path, &write_poses(&truth))?;
    }
    eprintln!("wrote {} vertices and {} edges", g.n(), g.edges().len());
    Ok(())
}

fn rotation_config(args: &RotationArgs) -> CliResult<SolverConfig> {
    Ok(SolverConfig {
        epsilon: args.epsilon,
        distance: args.distance.into(),
        grad_tol: args.grad_tol,
        max_iters: args.max_iters,
        project_horizontal: args.project_horizontal,
        seed: args.seed,
        method: args.method.into(),
        sparsify: sparsify_config(args.oversampling)?,
        ..Default::default()
    })
}

fn solve_rotations(
    g: &MeasurementGraph,
    robots: usize,
    config: &SolverConfig,
) -> CliResult<RotationSolution> {
    let partition = partition_contiguous(g, robots)?;
    let sol = rotation::collaborative_solve(g, &partition, &spanning_tree_init(g), config)?;
    if !sol.converged {
        eprintln!(
            "warning: rotation solve stopped at max_iters with gradient norm {:.3e}",
            sol.grad_norm
        );
    }
    Ok(sol)
}

fn rotation_metrics(sol: &RotationSolution, reference: Option<&Poses>, wall_time: f64) -> Metrics {
    Metrics {
        converged: sol.converged,
        iterations: sol.iterations,
        grad_norm: sol.grad_norm,
        cost: sol.cost,
        total_upload_bytes: sol.ledger.bytes(),
        uploads: Uploads::from_ledger(&sol.ledger),
        rotation_rmse: reference.map(|r| rotation_rmse(&sol.rotations, &r.rotations).into()),
        translation_rmse: None,
        wall_time,
    }
}

fn rotations_only(r: &RotationState) -> Poses {
    Poses {
        rotations: r.clone(),
        translations: DMatrix::zeros(r.n(), r.d),
    }
}

fn cmd_solve_rotation(args: &RotationArgs) -> CliResult<()> {
    let (g, _) = load_g2o(&args.input)?;
    let reference = load_reference(args.reference.as_ref(), &g)?;
    let config = rotation_config(args)?;
    let start = Instant::now();
    let sol = solve_rotations(&g, args.robots, &config)?;
    let wall_time = start.elapsed().as_secs_f64();
    let out = &args.outputs;
    if let Some(p) = &out.trace {
        write_file(p, &trace_csv(&sol.trace))?;
    }
    if let Some(p) = &out.ledger {
        write_file(p, &sol.ledger.to_csv())?;
    }
    if let Some(p) = &out.output {
        write_file(p, &write_poses(&rotations_only(&sol.rotations)))?;
    }
    let report = RunReport {
        command: "solve-rotation",
        config: args,
        trace: trace_entries(&sol.trace),
        metrics: rotation_metrics(&sol, reference.as_ref(), wall_time),
    };
    emit(out.report.as_deref(), &to_json(&report))
}

fn solve_translations(
    g: &MeasurementGraph,
    robots: usize,
    rotations: &RotationState,
    config: &TranslationConfig,
) -> CliResult<TranslationSolution> {
    let partition = partition_contiguous(g, robots)?;
    let sol = translation::collaborative_solve(g, &partition, rotations, config)?;
    if !sol.converged {
        eprintln!(
            "warning: translation solve stopped at max_iters with residual {:.3e}",
            sol.residual
        );
    }
    Ok(sol)
}

fn translation_metrics(
    sol: &TranslationSolution,
    rotations: &RotationState,
    reference: Option<&Poses>,
    wall_time: f64,
) -> Metrics {
    let estimate = Poses {
        rotations: rotations.clone(),
        translations: sol.translations.clone(),
    };
    let last = sol.trace.last().expect("trace has at least one row");
    Metrics {
        converged: sol.converged,
        iterations: sol.iterations,
        grad_norm: sol.residual,
        cost: last.cost,
        total_upload_bytes: sol.ledger.bytes(),
        uploads: Uploads::from_ledger(&sol.ledger),
        rotation_rmse: reference.map(|r| rotation_rmse(rotations, &r.rotations).into()),
        translation_rmse: reference.map(|r| aligned_translation_rmse(&estimate, r)),
        wall_time,
    }
}

fn cmd_solve_translation(args: &TranslationArgs) -> CliResult<()> {
    let (g, _) = load_g2o(&args.input)?;
    let rotations = load_poses(&args.rotations)?.rotations;
    if rotations.n() != g.n() || rotations.d != g.d() {
        return Err(Failure::Usage(format!(
            "rotation file has {} poses, the graph has {} vertices",
            rotations.n(),
            g.n()
        )));
    }
    rotations.validate(1e-9)?;
    let reference = load_reference(args.reference.as_ref(), &g)?;
    let config = TranslationConfig {
        epsilon: args.epsilon,
        tol: args.tol,
        max_iters: args.max_iters,
        seed: args.seed,
        sparsify: sparsify_config(args.oversampling)?,
        ..Default::default()
    };
    let start = Instant::now();
    let sol = solve_translations(&g, args.robots, &rotations, &config)?;
    let wall_time = start.elapsed().as_secs_f64();
    let out = &args.outputs;
    if let Some(p) = &out.trace {
        write_file(p, &trace_csv(&sol.trace))?;
    }
    if let Some(p) = &out.ledger {
        write_file(p, &sol.ledger.to_csv())?;
    }
    if let Some(p) = &out.output {
        write_file(
            p,
            &write_poses(&Poses {
                rotations: rotations.clone(),
                translations: sol.translations.clone(),
            }),
        )?;
    }
    let report = RunReport {
        command: "solve-translation",
        config: args,
        trace: trace_entries(&sol.trace),
        metrics: translation_metrics(&sol, &rotations, reference.as_ref(), wall_time),
    };
    emit(out.report.as_deref(), &to_json(&report))
}

fn hessian_row(
    out: &mut String,
    label: &str,
    g: &MeasurementGraph,
    args: &HessianArgs,
) -> CliResult<()> {
    let kind: DistanceKind = args.distance.into();
    let config = SolverConfig {
        distance: kind,
        grad_tol: 1e-10,
        max_iters: 100,
        ..Default::default()
    };
    let minimizer = rotation::centralized_solve(g, &spanning_tree_init(g), &config)?;
    let r = hessian_report(g, &minimizer.rotations, kind, args.epsilon)?;
    writeln!(
        out,
        "{label},{:e},{:e},{:e},{:e},{:e},{:e}",
        r.delta_empirical, r.lambda2, r.lambda_max, r.kappa_h, r.gamma, r.deviation
    )
    .unwrap();
    Ok(())
}

fn cmd_validate_hessian(args: &HessianArgs) -> CliResult<()> {
    let mut out = String::new();
    if let Some(path) = &args.input {
        let (g, _) = load_g2o(path)?;
        out.push_str("input,delta,lambda2,lambda_max,kappa_h,gamma,deviation\n");
        hessian_row(
            &mut out,
            &path.display().to_string().replace(',', "_"),
            &g,
            args,
        )?;
    } else {
        out.push_str("sigma_deg,seed,delta,lambda2,lambda_max,kappa_h,gamma,deviation\n");
        for &sigma in &args.sigma_deg {
            for k in 0..args.seeds {
                let seed = args.seed + k;
                let spec = SyntheticSpec {
                    side: args.side,
                    sigma_rot: sigma.to_radians(),
                    edge_prob: args.edge_prob,
                    seed,
                    ..Default::default()
                };
                let (g, _) = generate_grid(&spec)?;
                hessian_row(&mut out, &format!("{sigma},{seed}"), &g, args)?;
            }
        }
    }
    emit(args.out.as_deref(), &out)
}

#[derive(Serialize)]
struct PipelineRun {
    epsilon: f64,
    rotation: Stage,
    translation: Stage,
    total_upload_bytes: usize,
}

#[derive(Serialize)]
struct Stage {
    trace: Vec<report::TraceEntry>,
    metrics: Metrics,
}

#[derive(Serialize)]
struct PipelineReport<'a> {
    command: &'static str,
    config: &'a PipelineArgs,
    runs: Vec<PipelineRun>,
}

fn cmd_pipeline(args: &PipelineArgs) -> CliResult<()> {
    let (g, _) = load_g2o(&args.input)?;
    let reference = load_reference(args.reference.as_ref(), &g)?;
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))?;
    }
    let sparsify = sparsify_config(args.oversampling)?;
    let mut runs = Vec::new();
    let mut table = String::from("epsilon  rot_iters  trans_iters  schur_bytes  total_bytes\n");
    for &epsilon in &args.epsilon {
        let rot_config = SolverConfig {
            epsilon,
            distance: args.distance.into(),
            grad_tol: args.grad_tol,
            max_iters: args.max_iters,
            seed: args.seed,
            sparsify,
            ..Default::default()
        };
        let start = Instant::now();
        let rot = solve_rotations(&g, args.robots, &rot_config)?;
        let rot_time = start.elapsed().as_secs_f64();
        let trans_config = TranslationConfig {
            epsilon,
            tol: args.tol,
            max_iters: args.max_iters,
            seed: args.seed,
            sparsify,
            ..Default::default()
        };
        let start = Instant::now();
        let trans = solve_translations(&g, args.robots, &rot.rotations, &trans_config)?;
        let trans_time = start.elapsed().as_secs_f64();
        if let Some(dir) = &args.out_dir {
            let stem = format!("eps_{epsilon}");
            write_file(
                &dir.join(format!("{stem}_rotation_trace.csv")),
                &trace_csv(&rot.trace),
            )?;
            write_file(
                &dir.join(format!("{stem}_translation_trace.csv")),
                &trace_csv(&trans.trace),
            )?;
            write_file(
                &dir.join(format!("{stem}_rotation_ledger.csv")),
                &rot.ledger.to_csv(),
            )?;
            write_file(
                &dir.join(format!("{stem}_translation_ledger.csv")),
                &trans.ledger.to_csv(),
            )?;
            let poses = Poses {
                rotations: rot.rotations.clone(),
                translations: trans.translations.clone(),
            };
            write_file(&dir.join(format!("{stem}_poses.g2o")), &write_poses(&poses))?;
        }
        let total = rot.ledger.bytes() + trans.ledger.bytes();
        let schur =
            Uploads::from_ledger(&rot.ledger).schur + Uploads::from_ledger(&trans.ledger).schur;
        writeln!(
            table,
            "{epsilon:<8} {:<10} {:<12} {schur:<12} {total}",
            rot.iterations, trans.iterations
        )
        .unwrap();
        runs.push(PipelineRun {
            epsilon,
            rotation: Stage {
                trace: trace_entries(&rot.trace),
                metrics: rotation_metrics(&rot, reference.as_ref(), rot_time),
            },
            translation: Stage {
                trace: trace_entries(&trans.trace),
                metrics: translation_metrics(
                    &trans,
                    &rot.rotations,
                    reference.as_ref(),
                    trans_time,
                ),
            },
            total_upload_bytes: total,
        });
    }
    eprint!("{table}");
    emit(
        args.report.as_deref(),
        &to_json(&PipelineReport {
            command: "pipeline",
            config: args,
            runs,
        }),
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .expect("thread pool is built once");
    }
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::SolveRotation(a) => cmd_solve_rotation(a),
        Command::SolveTranslation(a) => cmd_solve_translation(a),
        Command::ValidateHessian(a) => cmd_validate_hessian(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}
