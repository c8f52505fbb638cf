//! Rotation-group primitives for SO(2) and SO(3).
//!
//! Tangent vectors live in `R^p` with `p = d(d-1)/2`: a scalar angle in the
//! plane, an axis-angle vector in space. `hat` maps them to skew-symmetric
//! matrices using
//!
//! ```text
//! d = 3: [[0, -v3, v2], [v3, 0, -v1], [-v2, v1, 0]]
//! d = 2: [[0, -v], [v, 0]]
//! ```
//!
//! and `exp_map`/`log_map` are the matrix exponential and its principal inverse.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type TangentVector = DVector<f64>;

/// Angles within this distance of pi are rejected by [`log_map`].
pub const LOG_PI_MARGIN: f64 = 1e-6;

/// Below this angle the logarithm uses a Taylor series for `theta / (2 sin theta)`.
const LOG_SERIES_THRESHOLD: f64 = 1e-4;

/// Re-orthonormalization kicks in above this `||R^T R - I||_F`.
pub const REORTHONORMALIZE_TOL: f64 = 1e-12;

/// Dimension of the tangent space of SO(d).
pub fn tangent_dim(d: usize) -> usize {
    d * (d - 1) / 2
}

fn dim_from_tangent(p: usize) -> Result<usize> {
    match p {
        1 => Ok(2),
        3 => Ok(3),
        _ => Err(Error::DimensionMismatch {
            expected: 3,
            got: p,
        }),
    }
}

pub fn hat(v: &TangentVector) -> Result<DMatrix<f64>> {
    match dim_from_tangent(v.len())? {
        2 => Ok(DMatrix::from_row_slice(2, 2, &[0.0, -v[0], v[0], 0.0])),
        _ => Ok(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0],
        )),
    }
}

/// Inverse of [`hat`]; reads the lower-triangular entries of a skew matrix.
pub fn vee(m: &DMatrix<f64>) -> Result<TangentVector> {
    match m.nrows() {
        2 => Ok(DVector::from_element(1, m[(1, 0)])),
        3 => Ok(DVector::from_vec(vec![m[(2, 1)], m[(0, 2)], m[(1, 0)]])),
        d => Err(Error::DimensionMismatch {
            expected: 3,
            got: d,
        }),
    }
}

/// `Exp(v) = exp(hat(v))`, closed form for both dimensions.
pub fn exp_map(v: &TangentVector) -> DMatrix<f64> {
    match v.len() {
        1 => {
            let (s, c) = v[0].sin_cos();
            DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
        }
        3 => {
            let theta = v.norm();
            let k = hat(v).expect("length checked");
            let (a, b) = if theta < LOG_SERIES_THRESHOLD {
                let t2 = theta * theta;
                (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
            } else {
                (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
            };
            DMatrix::identity(3, 3) + &k * a + (&k * &k) * b
        }
        p => panic!("exp_map: tangent vector of length {p} is not so(2) or so(3)"),
    }
}

/// Principal logarithm. Errors within [`LOG_PI_MARGIN`] of a half turn, where
/// the axis is not unique.
pub fn log_map(r: &DMatrix<f64>) -> Result<TangentVector> {
    match r.nrows() {
        2 => {
            let theta = r[(1, 0)].atan2(r[(0, 0)]);
            if std::f64::consts::PI - theta.abs() < LOG_PI_MARGIN {
                return Err(Error::LogSingularity { theta: theta.abs() });
            }
            Ok(DVector::from_element(1, theta))
        }
        3 => {
            let w = DVector::from_vec(vec![
                r[(2, 1)] - r[(1, 2)],
                r[(0, 2)] - r[(2, 0)],
                r[(1, 0)] - r[(0, 1)],
            ]);
            let sin_theta = 0.5 * w.norm();
            let cos_theta = 0.5 * (r.trace() - 1.0);
            let theta = sin_theta.atan2(cos_theta);
            if std::f64::consts::PI - theta < LOG_PI_MARGIN {
                return Err(Error::LogSingularity { theta });
            }
            if theta < LOG_SERIES_THRESHOLD {
                let t2 = theta * theta;
                let factor = 0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0;
                return Ok(w * factor);
            }
            if theta < 3.0 {
                return Ok(w * (theta / (2.0 * sin_theta)));
            }
            // Close to pi the skew part is tiny; recover the axis from the
            // symmetric part and take its sign from the skew part.
            let sym = (r + r.transpose()) * 0.5 - DMatrix::identity(3, 3) * cos_theta;
            let denom = 1.0 - cos_theta;
            let k = (0..3)
                .max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)]))
                .expect("three diagonal entries");
            let mut axis = sym.column(k).into_owned() / denom;
            axis /= axis.norm();
            if axis.dot(&w) < 0.0 {
                axis = -axis;
            }
            Ok(axis * theta)
        }
        d => Err(Error::DimensionMismatch {
            expected: 3,
            got: d,
        }),
    }
}

/// `||Log(R1^T R2)||`.
pub fn geodesic_dist(r1: &DMatrix<f64>, r2: &DMatrix<f64>) -> Result<f64> {
    Ok(log_map(&(r1.transpose() * r2))?.norm())
}

/// Rotation angle of `R` computed without the logarithm; valid on all of SO(d).
pub fn rotation_angle(r: &DMatrix<f64>) -> f64 {
    match r.nrows() {
        2 => r[(1, 0)].atan2(r[(0, 0)]).abs(),
        _ => {
            let s = 0.5
                * ((r[(2, 1)] - r[(1, 2)]).powi(2)
                    + (r[(0, 2)] - r[(2, 0)]).powi(2)
                    + (r[(1, 0)] - r[(0, 1)]).powi(2))
                .sqrt();
            s.atan2(0.5 * (r.trace() - 1.0))
        }
    }
}

/// `||R1 - R2||_F^2`.
pub fn chordal_sq(r1: &DMatrix<f64>, r2: &DMatrix<f64>) -> f64 {
    (r1 - r2).norm_squared()
}

/// `||R^T R - I||_F`.
pub fn orthonormality_error(r: &DMatrix<f64>) -> f64 {
    (r.transpose() * r - DMatrix::identity(r.nrows(), r.ncols())).norm()
}

pub fn is_rotation(r: &DMatrix<f64>, tol: f64) -> bool {
    r.is_square()
        && (r.nrows() == 2 || r.nrows() == 3)
        && orthonormality_error(r) <= tol
        && (r.determinant() - 1.0).abs() <= tol
}

/// Closest rotation in Frobenius norm (polar factor with determinant correction).
pub fn project_to_so(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut correction = DMatrix::identity(d, d);
    if (&u * &v_t).determinant() < 0.0 {
        correction[(d - 1, d - 1)] = -1.0;
    }
    u * correction * v_t
}

/// Polar projection applied only when the drift exceeds [`REORTHONORMALIZE_TOL`].
pub fn reorthonormalize(r: DMatrix<f64>) -> DMatrix<f64> {
    if orthonormality_error(&r) > REORTHONORMALIZE_TOL {
        project_to_so(&r)
    } else {
        r
    }
}

/// Current estimate `R = (R_1, ..., R_n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationState {
    pub d: usize,
    pub rotations: Vec<DMatrix<f64>>,
}

impl RotationState {
    pub fn identity(d: usize, n: usize) -> Self {
        Self {
            d,
            rotations: vec![DMatrix::identity(d, d); n],
        }
    }

    pub fn new(d: usize, rotations: Vec<DMatrix<f64>>) -> Result<Self> {
        let state = Self { d, rotations };
        state.validate(1e-9)?;
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.rotations.len()
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        for (i, r) in self.rotations.iter().enumerate() {
            if r.nrows() != self.d || !is_rotation(r, tol) {
                return Err(Error::Invalid(format!(
                    "entry {i} is not a rotation in SO({})",
                    self.d
                )));
            }
        }
        Ok(())
    }

    /// `R_i <- Exp(v_i) R_i` with `v_i` the i-th row of `v`.
    pub fn retract(&self, v: &DMatrix<f64>) -> Self {
        let rotations = self
            .rotations
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let vi = v.row(i).transpose();
                reorthonormalize(exp_map(&vi) * r)
            })
            .collect();
        Self {
            d: self.d,
            rotations,
        }
    }

    /// Applies a global gauge transformation `R_i <- S R_i`.
    pub fn left_multiply(&self, s: &DMatrix<f64>) -> Self {
        Self {
            d: self.d,
            rotations: self.rotations.iter().map(|r| s * r).collect(),
        }
    }

    /// Largest entrywise Frobenius difference to another state.
    pub fn max_difference(&self, other: &Self) -> f64 {
        self.rotations
            .iter()
            .zip(&other.rotations)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}
