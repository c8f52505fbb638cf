//! Pose-graph data model, g2o input/output, partitioning and synthetic grids.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::laplacian::{DisjointSets, WeightedGraph};
use crate::so::{self, RotationState};

/// Tolerance on `R^T R = I` and `det R = 1` for measured rotations.
const ROTATION_TOL: f64 = 1e-9;

/// One directed relative measurement `i -> j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub i: usize,
    pub j: usize,
    pub r_tilde: DMatrix<f64>,
    pub t_tilde: DVector<f64>,
    /// Rotation weight.
    pub kappa: f64,
    /// Translation weight.
    pub tau: f64,
}

/// Connected measurement graph with at most one measurement per vertex pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementGraph {
    d: usize,
    n: usize,
    edges: Vec<Measurement>,
}

impl MeasurementGraph {
    pub fn new(d: usize, n: usize, edges: Vec<Measurement>) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(Error::Invalid(format!("dimension must be 2 or 3, got {d}")));
        }
        let mut seen = BTreeSet::new();
        for e in &edges {
            if e.i >= n || e.j >= n || e.i == e.j {
                return Err(Error::Invalid(format!(
                    "bad edge ({}, {}) for n = {n}",
                    e.i, e.j
                )));
            }
            if !seen.insert((e.i.min(e.j), e.i.max(e.j))) {
                return Err(Error::DuplicateEdge { i: e.i, j: e.j });
            }
            if e.r_tilde.shape() != (d, d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: e.r_tilde.nrows(),
                });
            }
            if e.t_tilde.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: e.t_tilde.len(),
                });
            }
            if !so::is_rotation(&e.r_tilde, ROTATION_TOL) {
                return Err(Error::Invalid(format!(
                    "measurement ({}, {}) is not a rotation",
                    e.i, e.j
                )));
            }
            if !(e.kappa > 0.0 && e.tau > 0.0 && e.kappa.is_finite() && e.tau.is_finite()) {
                return Err(Error::Invalid(format!(
                    "measurement ({}, {}) has a non-positive weight",
                    e.i, e.j
                )));
            }
        }
        let mut sets = DisjointSets::new(n);
        for e in &edges {
            sets.union(e.i, e.j);
        }
        if n > 0 && sets.count() != 1 {
            return Err(Error::Disconnected {
                components: sets.count(),
            });
        }
        Ok(Self { d, n, edges })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Tangent dimension `d(d-1)/2`.
    pub fn p(&self) -> usize {
        so::tangent_dim(self.d)
    }

    pub fn edges(&self) -> &[Measurement] {
        &self.edges
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.i, e.j)).collect()
    }

    /// Weighted graph with per-edge weight `f(measurement)`.
    pub fn weighted(&self, f: impl Fn(&Measurement) -> f64) -> WeightedGraph {
        WeightedGraph::new(self.n, self.edges.iter().map(|e| (e.i, e.j, f(e))))
            .expect("validated graph")
    }
}

/// Absolute poses: rotations plus an `n × d` translation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Poses {
    pub rotations: RotationState,
    pub translations: DMatrix<f64>,
}

fn rotation_2d(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

fn quaternion_to_matrix(qx: f64, qy: f64, qz: f64, qw: f64) -> Result<DMatrix<f64>> {
    let q = Quaternion::new(qw, qx, qy, qz);
    if !(q.norm() > 0.0) {
        return Err(Error::Invalid("zero quaternion".into()));
    }
    let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
    Ok(DMatrix::from_column_slice(3, 3, r.matrix().as_slice()))
}

/// `(qx, qy, qz, qw)` of a 3×3 rotation.
fn matrix_to_quaternion(r: &DMatrix<f64>) -> Vector4<f64> {
    let m = Matrix3::from_column_slice(r.as_slice());
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
    Vector4::new(q.i, q.j, q.k, q.w)
}

/// Mean that returns the common value exactly when all entries agree, so
/// weights survive a write/read round trip bit for bit.
fn exact_mean(values: &[f64]) -> f64 {
    if values.iter().all(|&v| v == values[0]) {
        values[0]
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Indices of the diagonal entries in a row-major upper-triangular listing
/// of a `k × k` matrix.
fn upper_diagonal_positions(k: usize) -> Vec<usize> {
    let mut pos = Vec::with_capacity(k);
    let mut offset = 0;
    for r in 0..k {
        pos.push(offset);
        offset += k - r;
    }
    pos
}

struct RawEdge {
    i: i64,
    j: i64,
    r: DMatrix<f64>,
    t: DVector<f64>,
    kappa: f64,
    tau: f64,
}

/// Parses g2o text. Vertex ids are renumbered to `0..n` in ascending order.
/// Poses are returned when every vertex has a vertex record.
pub fn parse_g2o(text: &str) -> Result<(MeasurementGraph, Option<Poses>)> {
    let mut dim: Option<(usize, usize)> = None;
    let mut vertices: BTreeMap<i64, (DMatrix<f64>, DVector<f64>)> = BTreeMap::new();
    let mut raw_edges: Vec<(usize, RawEdge)> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let Some(&tag) = tokens.first() else { continue };
        if tag.starts_with('#') || tag == "FIX" {
            continue;
        }
        let d = match tag {
            "VERTEX_SE2" | "EDGE_SE2" => 2,
            "VERTEX_SE3:QUAT" | "EDGE_SE3:QUAT" => 3,
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unknown record {tag:?}"),
                });
            }
        };
        match dim {
            None => dim = Some((d, line_no)),
            Some((d0, _)) if d0 != d => return Err(Error::MixedDimension { line: line_no }),
            _ => {}
        }
        let expected = match tag {
            "VERTEX_SE2" => 5,
            "EDGE_SE2" => 12,
            "VERTEX_SE3:QUAT" => 9,
            _ => 31,
        };
        if tokens.len() != expected {
            return Err(Error::Parse {
                line: line_no,
                message: format!(
                    "{tag} needs {} fields, found {}",
                    expected - 1,
                    tokens.len() - 1
                ),
            });
        }
        let bad = |what: &str| Error::Parse {
            line: line_no,
            message: format!("cannot parse {what}"),
        };
        let ids: Vec<i64> = tokens[1..]
            .iter()
            .take(if tag.starts_with("EDGE") { 2 } else { 1 })
            .map(|s| s.parse().map_err(|_| bad("vertex id")))
            .collect::<Result<_>>()?;
        let first_num = ids.len() + 1;
        let nums: Vec<f64> = tokens[first_num..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(s))
            })
            .collect::<Result<_>>()?;
        let (r, t) = if d == 2 {
            (
                rotation_2d(nums[2]),
                DVector::from_column_slice(&nums[0..2]),
            )
        } else {
            (
                quaternion_to_matrix(nums[3], nums[4], nums[5], nums[6])
                    .map_err(|_| bad("quaternion"))?,
                DVector::from_column_slice(&nums[0..3]),
            )
        };
        if tag.starts_with("VERTEX") {
            if vertices.insert(ids[0], (r, t)).is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate vertex {}", ids[0]),
                });
            }
            continue;
        }
        let (info, k_info) = if d == 2 {
            (&nums[3..], 3)
        } else {
            (&nums[7..], 6)
        };
        let diag: Vec<f64> = upper_diagonal_positions(k_info)
            .into_iter()
            .map(|p| info[p])
            .collect();
        let (tau, kappa) = if d == 2 {
            (exact_mean(&diag[0..2]), diag[2])
        } else {
            (exact_mean(&diag[0..3]), exact_mean(&diag[3..6]))
        };
        if !(tau > 0.0 && kappa > 0.0) {
            return Err(Error::Parse {
                line: line_no,
                message: "information diagonal must be positive".into(),
            });
        }
        raw_edges.push((
            line_no,
            RawEdge {
                i: ids[0],
                j: ids[1],
                r,
                t,
                kappa,
                tau,
            },
        ));
    }
    let (d, _) = dim.ok_or_else(|| Error::Parse {
        line: 0,
        message: "no g2o records found".into(),
    })?;
    let mut ids: BTreeSet<i64> = vertices.keys().copied().collect();
    for (_, e) in &raw_edges {
        ids.insert(e.i);
        ids.insert(e.j);
    }
    let index: BTreeMap<i64, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let n = index.len();
    let mut edges = Vec::with_capacity(raw_edges.len());
    for (line_no, e) in raw_edges {
        if e.i == e.j {
            return Err(Error::Parse {
                line: line_no,
                message: "self-loop edge".into(),
            });
        }
        edges.push(Measurement {
            i: index[&e.i],
            j: index[&e.j],
            r_tilde: e.r,
            t_tilde: e.t,
            kappa: e.kappa,
            tau: e.tau,
        });
    }
    let graph = MeasurementGraph::new(d, n, edges)?;
    let poses = (vertices.len() == n).then(|| {
        let mut translations = DMatrix::zeros(n, d);
        let mut rotations = Vec::with_capacity(n);
        for (k, (_, (r, t))) in vertices.into_iter().enumerate() {
            translations.set_row(k, &t.transpose());
            rotations.push(r);
        }
        Poses {
            rotations: RotationState { d, rotations },
            translations,
        }
    });
    Ok((graph, poses))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_g2o(path: impl AsRef<Path>) -> Result<(MeasurementGraph, Option<Poses>)> {
    parse_g2o(&read_file(path.as_ref())?)
}

fn write_vertices(out: &mut String, poses: &Poses) {
    let d = poses.rotations.d;
    for (k, r) in poses.rotations.rotations.iter().enumerate() {
        let t = poses.translations.row(k);
        if d == 2 {
            let theta = r[(1, 0)].atan2(r[(0, 0)]);
            writeln!(out, "VERTEX_SE2 {k} {} {} {theta}", t[0], t[1]).unwrap();
        } else {
            let q = matrix_to_quaternion(r);
            writeln!(
                out,
                "VERTEX_SE3:QUAT {k} {} {} {} {} {} {} {}",
                t[0], t[1], t[2], q[0], q[1], q[2], q[3]
            )
            .unwrap();
        }
    }
}

/// g2o text with isotropic information matrices built from `kappa`/`tau`.
pub fn write_g2o(g: &MeasurementGraph, poses: Option<&Poses>) -> String {
    let mut out = String::new();
    if let Some(p) = poses {
        write_vertices(&mut out, p);
    }
    for e in &g.edges {
        let t = &e.t_tilde;
        if g.d == 2 {
            let theta = e.r_tilde[(1, 0)].atan2(e.r_tilde[(0, 0)]);
            writeln!(
                out,
                "EDGE_SE2 {} {} {} {} {theta} {} 0 0 {} 0 {}",
                e.i, e.j, t[0], t[1], e.tau, e.tau, e.kappa
            )
            .unwrap();
        } else {
            let q = matrix_to_quaternion(&e.r_tilde);
            let mut line = format!(
                "EDGE_SE3:QUAT {} {} {} {} {} {} {} {} {}",
                e.i, e.j, t[0], t[1], t[2], q[0], q[1], q[2], q[3]
            );
            for r in 0..6 {
                for c in r..6 {
                    let v = match (r == c, r < 3) {
                        (true, true) => e.tau,
                        (true, false) => e.kappa,
                        _ => 0.0,
                    };
                    write!(line, " {v}").unwrap();
                }
            }
            writeln!(out, "{line}").unwrap();
        }
    }
    out
}

/// Vertex-only g2o text.
pub fn write_poses(poses: &Poses) -> String {
    let mut out = String::new();
    write_vertices(&mut out, poses);
    out
}

/// Reads poses from vertex records; edge records, if any, are ignored.
pub fn parse_poses(text: &str) -> Result<Poses> {
    let vertex_lines: String = text
        .lines()
        .filter(|l| l.trim_start().starts_with("VERTEX"))
        .flat_map(|l| [l, "\n"])
        .collect();
    if vertex_lines.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no vertex records found".into(),
        });
    }
    let mut d = None;
    let mut rotations = Vec::new();
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut seen = BTreeMap::new();
    for (k, line) in vertex_lines.lines().enumerate() {
        // Reuse the full parser on a one-vertex document with no edges.
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let id: i64 = tokens
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                line: k + 1,
                message: "bad vertex id".into(),
            })?;
        let (_, poses) = parse_g2o(line).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                line: k + 1,
                message,
            },
            other => other,
        })?;
        let p = poses.expect("single vertex document always has poses");
        if *d.get_or_insert(p.rotations.d) != p.rotations.d {
            return Err(Error::MixedDimension { line: k + 1 });
        }
        seen.insert(id, rotations.len());
        rotations.push(p.rotations.rotations[0].clone());
        rows.push(p.translations.row(0).transpose());
    }
    let d = d.unwrap();
    let order: Vec<usize> = seen.values().copied().collect();
    let mut translations = DMatrix::zeros(order.len(), d);
    for (k, &src) in order.iter().enumerate() {
        translations.set_row(k, &rows[src].transpose());
    }
    Ok(Poses {
        rotations: RotationState {
            d,
            rotations: order.iter().map(|&k| rotations[k].clone()).collect(),
        },
        translations,
    })
}

pub fn load_poses(path: impl AsRef<Path>) -> Result<Poses> {
    parse_poses(&read_file(path.as_ref())?)
}

/// Robot ownership of vertices with interior/separator classification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    m: usize,
    owner: Vec<usize>,
    is_separator: Vec<bool>,
    interior: Vec<Vec<usize>>,
    separators: Vec<usize>,
}

impl Partition {
    /// `owner[v]` is the robot of vertex `v`; `pairs` are the graph edges.
    pub fn from_owner(owner: Vec<usize>, m: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        if m == 0 {
            return Err(Error::Invalid("robot count must be at least 1".into()));
        }
        if let Some(&bad) = owner.iter().find(|&&a| a >= m) {
            return Err(Error::Invalid(format!(
                "owner {bad} out of range for m = {m}"
            )));
        }
        let n = owner.len();
        let mut is_separator = vec![false; n];
        for &(i, j) in pairs {
            if owner[i] != owner[j] {
                is_separator[i] = true;
                is_separator[j] = true;
            }
        }
        let mut interior = vec![Vec::new(); m];
        let mut separators = Vec::new();
        for v in 0..n {
            if is_separator[v] {
                separators.push(v);
            } else {
                interior[owner[v]].push(v);
            }
        }
        Ok(Self {
            m,
            owner,
            is_separator,
            interior,
            separators,
        })
    }

    /// Contiguous near-equal blocks of vertex ids, earlier blocks larger.
    pub fn contiguous(n: usize, m: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        if m == 0 || m > n {
            return Err(Error::Invalid(format!(
                "cannot split {n} vertices among {m} robots"
            )));
        }
        let (base, extra) = (n / m, n % m);
        let owner = (0..m)
            .flat_map(|a| std::iter::repeat_n(a, base + usize::from(a < extra)))
            .collect();
        Self::from_owner(owner, m, pairs)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.owner.len()
    }

    pub fn owner(&self, v: usize) -> usize {
        self.owner[v]
    }

    pub fn owners(&self) -> &[usize] {
        &self.owner
    }

    pub fn is_separator(&self, v: usize) -> bool {
        self.is_separator[v]
    }

    /// Interior vertices `F_α` of robot `alpha`, ascending.
    pub fn interior(&self, alpha: usize) -> &[usize] {
        &self.interior[alpha]
    }

    /// All separators `C`, ascending.
    pub fn separators(&self) -> &[usize] {
        &self.separators
    }

    /// Robot owning both endpoints, or `None` for an inter-robot edge.
    pub fn edge_owner(&self, i: usize, j: usize) -> Option<usize> {
        (self.owner[i] == self.owner[j]).then_some(self.owner[i])
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.m];
        for &a in &self.owner {
            sizes[a] += 1;
        }
        sizes
    }
}

pub fn partition_contiguous(g: &MeasurementGraph, m: usize) -> Result<Partition> {
    Partition::contiguous(g.n(), m, &g.pairs())
}

/// Parameters of a synthetic 3D lattice problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub side: usize,
    /// Rotation noise standard deviation in radians.
    pub sigma_rot: f64,
    pub edge_prob: f64,
    pub kappa: f64,
    pub tau: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            side: 5,
            sigma_rot: 0.0,
            edge_prob: 0.3,
            kappa: 1.0,
            tau: 1.0,
            seed: 0,
        }
    }
}

/// `Exp(v)` with `v ~ N(0, sigma² I_p)`.
pub fn sample_rotation_noise<R: Rng + ?Sized>(d: usize, sigma: f64, rng: &mut R) -> DMatrix<f64> {
    let normal = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
    let v = DVector::from_fn(so::tangent_dim(d), |_, _| normal.sample(rng));
    so::exp_map(&v)
}

fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> DMatrix<f64> {
    loop {
        let q: Vec<f64> = (0..4).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(r) = quaternion_to_matrix(q[0], q[1], q[2], q[3]) {
            return r;
        }
    }
}

/// Lattice problem with uniform ground-truth rotations, a fixed spanning
/// tree and Bernoulli extra edges between lattice neighbours. Translations
/// are the lattice coordinates and their measurements are noise-free.
pub fn generate_grid(spec: &SyntheticSpec) -> Result<(MeasurementGraph, Poses)> {
    if spec.side < 2 {
        return Err(Error::Invalid(format!(
            "grid side must be at least 2, got {}",
            spec.side
        )));
    }
    if !(0.0..=1.0).contains(&spec.edge_prob) {
        return Err(Error::Invalid(format!(
            "edge probability {} outside [0, 1]",
            spec.edge_prob
        )));
    }
    if !(spec.sigma_rot >= 0.0 && spec.sigma_rot.is_finite()) {
        return Err(Error::Invalid(format!(
            "bad rotation noise {}",
            spec.sigma_rot
        )));
    }
    let side = spec.side;
    let n = side * side * side;
    let id = |x: usize, y: usize, z: usize| x + side * (y + side * z);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let truth: Vec<DMatrix<f64>> = (0..n).map(|_| uniform_rotation(&mut rng)).collect();
    let mut translations = DMatrix::zeros(n, 3);
    let mut pairs = Vec::new();
    for z in 0..side {
        for y in 0..side {
            for x in 0..side {
                let v = id(x, y, z);
                translations.set_row(
                    v,
                    &nalgebra::RowDVector::from_row_slice(&[x as f64, y as f64, z as f64]),
                );
                let steps = [
                    (x + 1 < side, id(x + 1, y, z), true),
                    (y + 1 < side, id(x, y + 1, z), x == 0),
                    (z + 1 < side, id(x, y, z + 1), x == 0 && y == 0),
                ];
                for (inside, w, in_tree) in steps {
                    if inside && (in_tree || rng.random::<f64>() < spec.edge_prob) {
                        pairs.push((v, w));
                    }
                }
            }
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(i, j)| {
            let noise = sample_rotation_noise(3, spec.sigma_rot, &mut rng);
            let delta = (translations.row(j) - translations.row(i)).transpose();
            Measurement {
                i,
                j,
                r_tilde: so::reorthonormalize(truth[i].transpose() * &truth[j] * noise),
                t_tilde: truth[i].transpose() * delta,
                kappa: spec.kappa,
                tau: spec.tau,
            }
        })
        .collect();
    let graph = MeasurementGraph::new(3, n, edges)?;
    Ok((
        graph,
        Poses {
            rotations: RotationState {
                d: 3,
                rotations: truth,
            },
            translations,
        },
    ))
}

/// Composes measurements along a breadth-first spanning tree rooted at
/// vertex 0, which is fixed to the identity.
pub fn spanning_tree_init(g: &MeasurementGraph) -> RotationState {
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); g.n];
    for (k, e) in g.edges.iter().enumerate() {
        adjacency[e.i].push(k);
        adjacency[e.j].push(k);
    }
    let mut rotations: Vec<Option<DMatrix<f64>>> = vec![None; g.n];
    if g.n == 0 {
        return RotationState {
            d: g.d,
            rotations: Vec::new(),
        };
    }
    rotations[0] = Some(DMatrix::identity(g.d, g.d));
    let mut queue = VecDeque::from([0]);
    while let Some(u) = queue.pop_front() {
        let ru = rotations[u].clone().expect("queued vertices are assigned");
        for &k in &adjacency[u] {
            let e = &g.edges[k];
            let (v, rv) = if e.i == u {
                (e.j, &ru * &e.r_tilde)
            } else {
                (e.i, &ru * e.r_tilde.transpose())
            };
            if rotations[v].is_none() {
                rotations[v] = Some(so::reorthonormalize(rv));
                queue.push_back(v);
            }
        }
    }
    RotationState {
        d: g.d,
        rotations: rotations
            .into_iter()
            .map(|r| r.expect("graph is connected"))
            .collect(),
    }
}
