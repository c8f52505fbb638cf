//! Gauge-aligned errors, convergence constants and rate estimates.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::pose_graph::Poses;
use crate::so::{self, RotationState};

/// `sqrt(1 + e^{2ε} − 2e^{−ε})`, the error amplification of a solve with an
/// ε-approximate reduced system.
pub fn c_epsilon(eps: f64) -> f64 {
    (1.0 + (2.0 * eps).exp() - 2.0 * (-eps).exp())
        .max(0.0)
        .sqrt()
}

/// `2 sqrt(κ_H) c(x)`.
pub fn gamma_factor(kappa_h: f64, x: f64) -> f64 {
    2.0 * kappa_h.sqrt() * c_epsilon(x)
}

/// The ε at which `c(ε) = 1`. Solving `e^{2ε} = 2e^{−ε}` gives `ln(2)/3`.
pub const C_EPSILON_UNIT_ROOT: f64 = std::f64::consts::LN_2 / 3.0;

/// Rotation error after the best global alignment, in three units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationRmse {
    /// `sqrt(1/n Σ ||S R_a − R_b||_F²)`.
    pub frobenius: f64,
    /// The Frobenius value converted to an angle through `||·||² = 4 − 4cos θ`.
    pub chordal_deg: f64,
    /// `sqrt(1/n Σ θ_i²)` with `θ_i` the angle of `S R_a,i R_b,i^T`.
    pub geodesic_deg: f64,
}

/// Global rotation `S` minimizing `Σ ||S A_i − B_i||_F²`.
pub fn align_rotations(a: &RotationState, b: &RotationState) -> DMatrix<f64> {
    let d = a.d;
    let m = a
        .rotations
        .iter()
        .zip(&b.rotations)
        .fold(DMatrix::zeros(d, d), |acc, (ra, rb)| {
            acc + rb * ra.transpose()
        });
    so::project_to_so(&m)
}

pub fn rotation_rmse(a: &RotationState, b: &RotationState) -> RotationRmse {
    assert_eq!((a.d, a.n()), (b.d, b.n()), "rotation sets differ in shape");
    let n = a.n().max(1) as f64;
    let s = align_rotations(a, b);
    let mut sq = 0.0;
    let mut theta_sq = 0.0;
    for (ra, rb) in a.rotations.iter().zip(&b.rotations) {
        let aligned = &s * ra;
        sq += (&aligned - rb).norm_squared();
        theta_sq += so::rotation_angle(&(aligned * rb.transpose())).powi(2);
    }
    let frobenius = (sq / n).sqrt();
    RotationRmse {
        frobenius,
        chordal_deg: (1.0 - frobenius * frobenius / 4.0)
            .clamp(-1.0, 1.0)
            .acos()
            .to_degrees(),
        geodesic_deg: (theta_sq / n).sqrt().to_degrees(),
    }
}

/// Translation RMSE after the rotation alignment `S` of the two pose sets is
/// applied to `a`'s positions.
pub fn aligned_translation_rmse(a: &Poses, b: &Poses) -> f64 {
    let s = align_rotations(&a.rotations, &b.rotations);
    translation_rmse(&(&a.translations * s.transpose()), &b.translations)
}

/// RMSE between translation sets (rows) after removing each set's mean.
pub fn translation_rmse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "translation sets differ in shape");
    if a.nrows() == 0 {
        return 0.0;
    }
    let center = |m: &DMatrix<f64>| {
        let mean = m.row_mean();
        DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] - mean[c])
    };
    ((center(a) - center(b)).norm_squared() / a.nrows() as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateEstimate {
    /// `s_{k+1} / s_k`.
    pub ratios: Vec<f64>,
    /// Geometric mean of the last `tail` ratios.
    pub tail_geometric_mean: f64,
}

pub fn rate_estimate(seq: &[f64], tail: usize) -> Result<RateEstimate> {
    if tail < 2 || seq.len() <= tail {
        return Err(Error::Invalid(format!(
            "rate estimate needs 2 <= tail < length, got tail {tail} for length {}",
            seq.len()
        )));
    }
    if let Some(bad) = seq.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::Invalid(format!(
            "rate estimate needs positive entries, found {bad}"
        )));
    }
    let ratios: Vec<f64> = seq.windows(2).map(|w| w[1] / w[0]).collect();
    let tail_slice = &ratios[ratios.len() - tail..];
    let tail_geometric_mean = (tail_slice.iter().map(|r| r.ln()).sum::<f64>() / tail as f64).exp();
    Ok(RateEstimate {
        ratios,
        tail_geometric_mean,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng, d: usize, n: usize) -> RotationState {
        let p = so::tangent_dim(d);
        RotationState {
            d,
            rotations: (0..n)
                .map(|_| so::exp_map(&DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0))))
                .collect(),
        }
    }

    #[test]
    fn c_epsilon_values() {
        assert_eq!(c_epsilon(0.0), 0.0);
        // Reference values from an independent double-precision evaluation.
        assert!((c_epsilon(0.5) - 1.582_788_839_053_958_6).abs() < 1e-12);
        assert!((c_epsilon(1.0) - 2.7665).abs() < 1e-4);
        assert!((gamma_factor(1.0, 0.5) - 3.165_58).abs() < 1e-5);
        assert_eq!(gamma_factor(7.0, 0.0), 0.0);
    }

    #[test]
    fn unit_root_matches_bisection() {
        let (mut lo, mut hi) = (0.0, 1.0);
        while hi - lo > 1e-9 {
            let mid = 0.5 * (lo + hi);
            if c_epsilon(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - C_EPSILON_UNIT_ROOT).abs() < 1e-6);
        assert!((C_EPSILON_UNIT_ROOT - 0.231_049).abs() < 1e-6);
        assert!(
            c_epsilon(C_EPSILON_UNIT_ROOT - 1e-3) < 1.0
                && c_epsilon(C_EPSILON_UNIT_ROOT + 1e-3) > 1.0
        );
    }

    #[test]
    fn rmse_gauge_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_state(&mut rng, 3, 20);
        assert!(rotation_rmse(&a, &a).frobenius < 1e-12);
        let s = random_state(&mut rng, 3, 1).rotations.remove(0);
        let r = rotation_rmse(&a.left_multiply(&s), &a);
        assert!(r.frobenius < 1e-9 && r.geodesic_deg < 1e-6 && r.chordal_deg < 1e-4);
    }

    #[test]
    fn planar_alignment_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_state(&mut rng, 2, 15);
        let b = random_state(&mut rng, 2, 15);
        let closed = rotation_rmse(&a, &b).frobenius;
        let n = a.n() as f64;
        let brute = (0..100_000)
            .map(|k| {
                let s = so::exp_map(&DVector::from_element(
                    1,
                    k as f64 * std::f64::consts::TAU / 100_000.0,
                ));
                let sum: f64 = a
                    .rotations
                    .iter()
                    .zip(&b.rotations)
                    .map(|(ra, rb)| (&s * ra - rb).norm_squared())
                    .sum();
                (sum / n).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        assert!((closed - brute).abs() < 1e-4);
    }

    #[test]
    fn degree_conversions_agree_for_uniform_error() {
        // Errors of +θ and −θ about one axis: the best alignment is I and
        // both degree forms equal θ.
        let theta = 0.2;
        let a = RotationState::identity(3, 2);
        let b = RotationState {
            d: 3,
            rotations: vec![
                so::exp_map(&DVector::from_vec(vec![0.0, 0.0, theta])),
                so::exp_map(&DVector::from_vec(vec![0.0, 0.0, -theta])),
            ],
        };
        let r = rotation_rmse(&a, &b);
        assert!((r.geodesic_deg - theta.to_degrees()).abs() < 1e-9);
        assert!((r.chordal_deg - theta.to_degrees()).abs() < 1e-6);
    }

    #[test]
    fn aligned_translation_rmse_ignores_rigid_motion() {
        let spec = crate::pose_graph::SyntheticSpec {
            side: 3,
            ..Default::default()
        };
        let (_, truth) = crate::pose_graph::generate_grid(&spec).unwrap();
        let s = so::exp_map(&DVector::from_vec(vec![0.3, -0.2, 1.1]));
        let moved = Poses {
            rotations: truth.rotations.left_multiply(&s),
            translations: DMatrix::from_fn(27, 3, |i, c| {
                (&s * truth.translations.row(i).transpose())[c] + [4.0, -1.0, 2.0][c]
            }),
        };
        assert!(aligned_translation_rmse(&moved, &truth) < 1e-12);
        assert!(translation_rmse(&moved.translations, &truth.translations) > 0.1);
    }

    #[test]
    fn translation_rmse_examples() {
        let a = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        let b = DMatrix::zeros(2, 1);
        assert!((translation_rmse(&a, &b) - 1.0).abs() < 1e-15);
        let shifted = b.add_scalar(3.0);
        assert!(translation_rmse(&shifted, &b) < 1e-15);
    }

    #[test]
    fn rate_examples() {
        let geometric: Vec<f64> = (0..10).map(|k| 0.5f64.powi(k)).collect();
        assert!((rate_estimate(&geometric, 4).unwrap().tail_geometric_mean - 0.5).abs() < 1e-15);
        assert!((rate_estimate(&[3.0; 6], 3).unwrap().tail_geometric_mean - 1.0).abs() < 1e-15);
        assert!(rate_estimate(&[1.0, 0.0, 1.0], 2).is_err());
        assert!(rate_estimate(&[1.0, 0.5], 2).is_err());
    }

    #[test]
    fn spearman_with_ties() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        // Tied x groups with perfectly separated y values.
        let x = [1.0, 1.0, 2.0, 2.0];
        let y = [0.1, 0.2, 0.3, 0.4];
        assert!((spearman(&x, &y) - 0.894_427_190_999_915_9).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn c_and_gamma_increase(a in 0.0f64..3.0, b in 0.0f64..3.0, k1 in 1.0f64..50.0, k2 in 1.0f64..50.0) {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assume!(hi - lo > 1e-9);
            prop_assert!(c_epsilon(lo) < c_epsilon(hi));
            let (kl, kh) = (k1.min(k2), k1.max(k2));
            prop_assert!(gamma_factor(kl, hi) <= gamma_factor(kh, hi));
            prop_assert!(gamma_factor(kl, lo) < gamma_factor(kl, hi));
        }

        #[test]
        fn rmse_is_a_pseudometric(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_state(&mut rng, 3, 8);
            let b = random_state(&mut rng, 3, 8);
            let c = random_state(&mut rng, 3, 8);
            let d = |x: &RotationState, y: &RotationState| rotation_rmse(x, y).frobenius;
            prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-9);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
        }
    }
}
