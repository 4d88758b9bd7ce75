//! Rotation-group primitives.
//!
//! Rotations are stored as plain `Matrix3<f64>`; tangent vectors are axis-angle
//! `Vector3<f64>` with the norm equal to the rotation angle. Perturbations are
//! applied on the right (`R exp(θ)`), which makes every tangent vector in this
//! crate a body-frame quantity.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Below this angle the exponential and its differential use Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Above `π - NEAR_PI` the logarithm recovers the axis from the symmetric part.
pub const NEAR_PI: f64 = 1e-4;

/// Tolerance used when validating rotation matrices passed to [`log_so3`].
pub const ROTATION_CHECK_TOL: f64 = 1e-6;

/// Skew-symmetric matrix such that `skew(u) * w == u.cross(&w)`.
#[inline]
pub fn skew(u: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0)
}

/// Inverse of [`skew`]; reads the antisymmetric part of `m`.
#[inline]
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues formula.
pub fn exp_so3(theta: &Vector3<f64>) -> Matrix3<f64> {
    let angle = theta.norm();
    let k = skew(theta);
    let k2 = k * k;
    if angle < SMALL_ANGLE {
        let a2 = angle * angle;
        return Matrix3::identity() + (1.0 - a2 / 6.0) * k + (0.5 - a2 / 24.0) * k2;
    }
    let half = 0.5 * angle;
    let s = half.sin();
    Matrix3::identity() + (angle.sin() / angle) * k + (2.0 * s * s / (angle * angle)) * k2
}

/// Orthonormality defect `‖RᵀR − I‖_F` and determinant.
pub fn rotation_defect(r: &Matrix3<f64>) -> (f64, f64) {
    ((r.transpose() * r - Matrix3::identity()).norm(), r.determinant())
}

/// Fails when `r` is not a rotation within [`ROTATION_CHECK_TOL`].
pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let (orthonormality, det) = rotation_defect(r);
    if !(orthonormality <= ROTATION_CHECK_TOL && (det - 1.0).abs() <= ROTATION_CHECK_TOL) {
        return Err(Error::NotARotation { orthonormality, det });
    }
    Ok(())
}

/// Rotation angle in `[0, π]`, computed with `atan2` so it stays accurate near 0 and π.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let sin_part = vee(r).norm();
    let cos_part = 0.5 * (r.trace() - 1.0);
    sin_part.atan2(cos_part)
}

/// Logarithm returning the canonical axis-angle vector with norm in `[0, π]`.
pub fn log_so3(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    check_rotation(r)?;
    Ok(log_so3_unchecked(r))
}

pub(crate) fn log_so3_unchecked(r: &Matrix3<f64>) -> Vector3<f64> {
    let angle = rotation_angle(r);
    // antisymmetric part: sin(angle) axis
    let w = vee(r);
    if angle < SMALL_ANGLE {
        return w * (1.0 + angle * angle / 6.0);
    }
    if angle > std::f64::consts::PI - NEAR_PI {
        // (R + Rᵀ)/2 = cos I + (1 - cos) n nᵀ: its dominant eigenvector is the axis.
        let sym = 0.5 * (r + r.transpose());
        let c = angle.cos();
        let outer = (sym - c * Matrix3::identity()) / (1.0 - c);
        let (mut best, mut best_diag) = (0, outer[(0, 0)]);
        for i in 1..3 {
            if outer[(i, i)] > best_diag {
                best = i;
                best_diag = outer[(i, i)];
            }
        }
        let mut axis = outer.column(best).into_owned() / best_diag.max(f64::MIN_POSITIVE).sqrt();
        axis.normalize_mut();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return axis * angle;
    }
    w * (angle / angle.sin())
}

/// Coefficients `(1 - cos a)/a²` and `(a - sin a)/a³` of the left Jacobian.
fn nu_coefficients(angle: f64) -> (f64, f64) {
    let half = 0.5 * angle;
    let s = half.sin();
    let a2 = angle * angle;
    (2.0 * s * s / a2, (angle - angle.sin()) / (a2 * angle))
}

pub(crate) fn dexp_so3_closed(theta: &Vector3<f64>) -> Matrix3<f64> {
    let (c1, c2) = nu_coefficients(theta.norm());
    let k = skew(theta);
    Matrix3::identity() + c1 * k + c2 * k * k
}

pub(crate) fn dexp_so3_series(theta: &Vector3<f64>) -> Matrix3<f64> {
    let a2 = theta.norm_squared();
    let k = skew(theta);
    Matrix3::identity() + (0.5 - a2 / 24.0) * k + (1.0 / 6.0 - a2 / 120.0) * k * k
}

/// Left Jacobian of the exponential, `exp(θ + δ) ≈ exp(dexp(θ) δ) exp(θ)`.
///
/// The right Jacobian is `dexp_so3(-θ)`.
pub fn dexp_so3(theta: &Vector3<f64>) -> Matrix3<f64> {
    if theta.norm() < SMALL_ANGLE {
        dexp_so3_series(theta)
    } else {
        dexp_so3_closed(theta)
    }
}

/// Inverse of [`dexp_so3`]; valid for `‖θ‖ < 2π`.
pub fn dexp_inv_so3(theta: &Vector3<f64>) -> Matrix3<f64> {
    let angle = theta.norm();
    let k = skew(theta);
    let c = if angle < SMALL_ANGLE {
        1.0 / 12.0 + angle * angle / 720.0
    } else {
        let half = 0.5 * angle;
        (1.0 - half * half.cos() / half.sin()) / (angle * angle)
    };
    Matrix3::identity() - 0.5 * k + c * k * k
}

/// Projects a nearly orthonormal matrix onto the closest rotation.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * v_t;
    }
    out
}

/// Yaw of a ZYX (yaw-pitch-roll) Euler decomposition, in radians.
pub fn yaw_of(r: &Matrix3<f64>) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

/// `Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn from_euler_zyx(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    exp_so3(&Vector3::new(0.0, 0.0, yaw))
        * exp_so3(&Vector3::new(0.0, pitch, 0.0))
        * exp_so3(&Vector3::new(roll, 0.0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ) * scale
    }

    fn random_rotation_vector(rng: &mut ChaCha8Rng, max_angle: f64) -> Vector3<f64> {
        let axis = random_vec(rng, 1.0).normalize();
        axis * rng.random_range(0.0..max_angle)
    }

    fn series_exp(m: &Matrix3<f64>, terms: usize) -> Matrix3<f64> {
        let mut out = Matrix3::identity();
        let mut term = Matrix3::identity();
        for j in 1..terms {
            term = term * m / j as f64;
            out += term;
        }
        out
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        let z = skew(&Vector3::z());
        assert_eq!(z, Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(z.transpose(), -z);
    }

    #[test]
    fn skew_matches_cross_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let u = random_vec(&mut rng, 1.0);
            let w = random_vec(&mut rng, 1.0);
            let cross = Vector3::new(
                u.y * w.z - u.z * w.y,
                u.z * w.x - u.x * w.z,
                u.x * w.y - u.y * w.x,
            );
            assert!((skew(&u) * w - cross).amax() < 1e-15);
        }
    }

    #[test]
    fn exp_examples() {
        assert_eq!(exp_so3(&Vector3::zeros()), Matrix3::identity());
        let quarter = exp_so3(&Vector3::new(0.0, 0.0, PI / 2.0));
        assert!((quarter * Vector3::x() - Vector3::y()).amax() < 1e-15);
    }

    #[test]
    fn exp_matches_truncated_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let theta = random_rotation_vector(&mut rng, PI);
            // 30 terms: π^30/30! ≈ 3e-18, below the tolerance for every angle up to π
            let oracle = series_exp(&skew(&theta), 30);
            assert!((exp_so3(&theta) - oracle).amax() < 1e-12);
            assert!((exp_so3(&theta) * theta - theta).amax() < 1e-14);
        }
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_so3(&Matrix3::identity()).unwrap(), Vector3::zeros());
        let theta = Vector3::new(0.3, -0.2, 0.1);
        assert!((log_so3(&exp_so3(&theta)).unwrap() - theta).amax() < 1e-12);
    }

    #[test]
    fn log_near_pi_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let axis = random_vec(&mut rng, 1.0).normalize();
            let r = exp_so3(&(axis * (PI - 1e-7)));
            let back = exp_so3(&log_so3(&r).unwrap());
            assert!((back - r).amax() < 1e-6);
            assert!(log_so3(&r).unwrap().norm() <= PI);
        }
    }

    #[test]
    fn log_rejects_non_rotation() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 1e-3;
        assert!(matches!(log_so3(&m), Err(Error::NotARotation { .. })));
        assert!(log_so3(&(-Matrix3::identity())).is_err());
    }

    #[test]
    fn exp_log_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let theta = random_rotation_vector(&mut rng, PI - 1e-6);
            let r = exp_so3(&theta);
            assert!((exp_so3(&log_so3(&r).unwrap()) - r).amax() < 1e-9);
        }
    }

    #[test]
    fn dexp_at_zero_is_identity() {
        assert_eq!(dexp_so3(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn dexp_is_left_jacobian() {
        // exp(θ + εδ) ≈ exp(ε dexp(θ) δ) exp(θ), checked by central differences.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps = 1e-6;
        for _ in 0..200 {
            let theta = random_rotation_vector(&mut rng, 3.0);
            let jac = dexp_so3(&theta);
            let base_t = exp_so3(&theta).transpose();
            let mut fd = Matrix3::zeros();
            for k in 0..3 {
                let mut d = Vector3::zeros();
                d[k] = eps;
                let plus = log_so3(&(exp_so3(&(theta + d)) * base_t)).unwrap();
                let minus = log_so3(&(exp_so3(&(theta - d)) * base_t)).unwrap();
                fd.set_column(k, &((plus - minus) / (2.0 * eps)));
            }
            assert!((fd - jac).norm() / jac.norm() < 1e-5);
        }
    }

    #[test]
    fn dexp_branches_agree_near_zero() {
        let theta = Vector3::new(0.6, -0.8, 0.0) * 1e-9;
        assert!((dexp_so3_closed(&theta) - dexp_so3_series(&theta)).amax() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let axis = random_vec(&mut rng, 1.0).normalize();
            let theta = axis * rng.random_range(1e-7..1e-5);
            assert!((dexp_so3_closed(&theta) - dexp_so3_series(&theta)).amax() < 1e-13);
        }
    }

    #[test]
    fn dexp_inverse() {
        assert_eq!(dexp_inv_so3(&Vector3::zeros()), Matrix3::identity());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let theta = random_rotation_vector(&mut rng, 6.0);
            let prod = dexp_inv_so3(&theta) * dexp_so3(&theta);
            assert!((prod - Matrix3::identity()).amax() < 1e-10);
        }
    }

    #[test]
    fn dexp_inverse_cot_form() {
        let m = dexp_inv_so3(&Vector3::z());
        let sym = 0.5 * (m + m.transpose());
        let half_cot = 0.5 / 0.5f64.tan();
        let expected = Matrix3::from_diagonal(&Vector3::new(half_cot, half_cot, 1.0));
        assert!((sym - expected).amax() < 1e-15);
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let r = exp_so3(&random_rotation_vector(&mut rng, PI));
            let theta = random_vec(&mut rng, 1.0);
            let lhs = exp_so3(&theta) * r;
            let rhs = r * exp_so3(&(r.transpose() * theta));
            assert!((lhs - rhs).amax() < 1e-14);
        }
    }

    #[test]
    fn orthonormalize_restores_rotation() {
        let mut r = exp_so3(&Vector3::new(0.4, 0.1, -1.2));
        r[(0, 0)] += 1e-6;
        let fixed = orthonormalize(&r);
        let (defect, det) = rotation_defect(&fixed);
        assert!(defect < 1e-14 && (det - 1.0).abs() < 1e-14);
    }

    #[test]
    fn euler_yaw_extraction() {
        let r = from_euler_zyx(0.1, -0.2, 2.5);
        assert!((yaw_of(&r) - 2.5).abs() < 1e-14);
    }
}
