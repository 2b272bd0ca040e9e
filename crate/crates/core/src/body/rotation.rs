//! Axis-angle rotations.
//!
//! Poses are stored as axis-angle triples (direction = axis, norm = angle in
//! radians). The optimizer needs the derivative of the rotation matrix with
//! respect to each axis-angle component, so [`rodrigues_with_jacobian`]
//! evaluates `R = I + a K + b K²` together with `∂R/∂v_i`, using series
//! expansions for the coefficients near zero so the result is smooth
//! everywhere.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use std::f64::consts::PI;

/// Below this angle the trigonometric coefficients switch to Taylor series.
const SMALL_ANGLE: f64 = 1e-4;

/// Skew-symmetric cross-product matrix `[v]×`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Coefficients `a = sin θ/θ`, `b = (1 − cos θ)/θ²` and their derivatives
/// divided by θ: `a'/θ`, `b'/θ`.
fn coefficients(theta_sq: f64) -> (f64, f64, f64, f64) {
    let theta = theta_sq.sqrt();
    if theta < SMALL_ANGLE {
        let t2 = theta_sq;
        let a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
        let b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
        let da = -1.0 / 3.0 + t2 / 30.0;
        let db = -1.0 / 12.0 + t2 / 180.0;
        (a, b, da, db)
    } else {
        let (s, c) = theta.sin_cos();
        let a = s / theta;
        let b = (1.0 - c) / theta_sq;
        let da = (theta * c - s) / (theta_sq * theta);
        let db = (theta * s - 2.0 * (1.0 - c)) / (theta_sq * theta_sq);
        (a, b, da, db)
    }
}

/// Rotation matrix of an axis-angle vector.
pub fn rodrigues(v: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b, _, _) = coefficients(v.norm_squared());
    let k = skew(v);
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation matrix together with the three partial derivatives `∂R/∂v_i`.
pub fn rodrigues_with_jacobian(v: &Vector3<f64>) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let (a, b, da, db) = coefficients(v.norm_squared());
    let k = skew(v);
    let k2 = k * k;
    let r = Matrix3::identity() + k * a + k2 * b;
    let mut jac = [Matrix3::zeros(); 3];
    for (i, d) in jac.iter_mut().enumerate() {
        let e = skew(&Vector3::ith(i, 1.0));
        *d = e * a + (e * k + k * e) * b + k * (da * v[i]) + k2 * (db * v[i]);
    }
    (r, jac)
}

/// Axis-angle vector of a rotation matrix, angle in `[0, π]`.
pub fn log_map(r: &Matrix3<f64>) -> Vector3<f64> {
    let rot = Rotation3::from_matrix_unchecked(*r);
    UnitQuaternion::from_rotation_matrix(&rot).scaled_axis()
}

/// Reduce an axis-angle vector so its angle lies in `[0, π]`.
///
/// Vectors of norm `θ` and `θ − 2π` (along the opposite axis) describe the
/// same rotation; the representative with the smallest angle is returned.
pub fn canonicalize(v: &Vector3<f64>) -> Vector3<f64> {
    let theta = v.norm();
    if theta <= PI + 1e-12 {
        return *v;
    }
    let axis = v / theta;
    let mut reduced = theta.rem_euclid(2.0 * PI);
    if reduced > PI {
        reduced -= 2.0 * PI;
    }
    axis * reduced
}

/// Spherical interpolation between two axis-angle rotations, `w ∈ [0, 1]`.
pub fn slerp(a: &Vector3<f64>, b: &Vector3<f64>, w: f64) -> Vector3<f64> {
    let qa = UnitQuaternion::from_scaled_axis(*a);
    let qb = UnitQuaternion::from_scaled_axis(*b);
    // nalgebra's slerp takes the short path; fall back to nlerp for antipodal pairs.
    let q = qa.try_slerp(&qb, w, 1e-12).unwrap_or_else(|| qa.nlerp(&qb, w));
    q.scaled_axis()
}

/// Rotation about the world z axis by `angle` radians.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation about the y axis by `angle` radians.
pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about the x axis by `angle` radians.
pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Geodesic angle between two rotation matrices, radians.
pub fn angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let c = ((a.transpose() * b).trace() - 1.0) * 0.5;
    c.clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_is_identity() {
        assert_eq!(rodrigues(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn half_turn_about_x() {
        let r = rodrigues(&Vector3::new(PI, 0.0, 0.0));
        assert_relative_eq!(r, Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)), epsilon = 1e-12);
    }

    #[test]
    fn quarter_turn_about_z() {
        // cos(π/2) = 0, sin(π/2) = 1 in R = cI + s[k]× + (1 − c)kkᵀ with k = e_z.
        let r = rodrigues(&Vector3::new(0.0, 0.0, PI / 2.0));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(r, expected, epsilon = 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let h = 1e-6;
        for v in [
            Vector3::new(0.3, -0.2, 0.9),
            Vector3::new(1e-7, 2e-7, -1e-7),
            Vector3::new(2.9, 0.1, -0.3),
            Vector3::zeros(),
        ] {
            let (_, jac) = rodrigues_with_jacobian(&v);
            for i in 0..3 {
                let dv = Vector3::ith(i, h);
                let fd = (rodrigues(&(v + dv)) - rodrigues(&(v - dv))) / (2.0 * h);
                assert_relative_eq!(jac[i], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn log_inverts_rodrigues() {
        let v = Vector3::new(0.4, -1.1, 0.7);
        assert_relative_eq!(log_map(&rodrigues(&v)), v, epsilon = 1e-12);
    }

    #[test]
    fn canonicalize_wraps_large_angles() {
        let v = Vector3::new(0.0, 0.0, 2.0 * PI + 0.25);
        assert_relative_eq!(canonicalize(&v), Vector3::new(0.0, 0.0, 0.25), epsilon = 1e-12);
        let w = Vector3::new(1.5 * PI, 0.0, 0.0);
        assert_relative_eq!(canonicalize(&w), Vector3::new(-0.5 * PI, 0.0, 0.0), epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn rotations_are_orthonormal(x in -10.0..10.0f64, y in -10.0..10.0f64, z in -10.0..10.0f64) {
            let r = rodrigues(&Vector3::new(x, y, z));
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn canonicalize_is_idempotent(x in -20.0..20.0f64, y in -20.0..20.0f64, z in -20.0..20.0f64) {
            let v = Vector3::new(x, y, z);
            let once = canonicalize(&v);
            prop_assert_eq!(canonicalize(&once), once);
            prop_assert!(once.norm() <= PI + 1e-12);
            prop_assert!((rodrigues(&once) - rodrigues(&v)).norm() < 1e-9);
        }
    }
}
