//! Rotation conventions and conversions.
//!
//! Head-pose channels are Euler angles in degrees composed as
//! `R = Rz(roll) · Ry(yaw) · Rx(pitch)`. Rig joints use axis-angle vectors in
//! radians.

use nalgebra::Rotation3;

use crate::error::{ensure, Result};
use crate::keypoints::{Mat3, Vec3};

pub fn rot_x(rad: f64) -> Mat3 {
    let (s, c) = rad.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(rad: f64) -> Mat3 {
    let (s, c) = rad.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(rad: f64) -> Mat3 {
    let (s, c) = rad.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `Rz(roll) · Ry(yaw) · Rx(pitch)`, angles in degrees.
pub fn rotation_from_euler(pitch_deg: f64, yaw_deg: f64, roll_deg: f64) -> Mat3 {
    rot_z(roll_deg.to_radians()) * rot_y(yaw_deg.to_radians()) * rot_x(pitch_deg.to_radians())
}

/// Inverse of [`rotation_from_euler`]; returns `(pitch, yaw, roll)` in degrees
/// with yaw in `[-90, 90]`.
pub fn euler_from_rotation(r: &Mat3) -> (f64, f64, f64) {
    let yaw = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let (pitch, roll) = if yaw.cos().abs() > 1e-12 {
        (r[(2, 1)].atan2(r[(2, 2)]), r[(1, 0)].atan2(r[(0, 0)]))
    } else {
        // gimbal lock: fold everything into pitch
        ((-r[(1, 2)]).atan2(r[(1, 1)]), 0.0)
    };
    (pitch.to_degrees(), yaw.to_degrees(), roll.to_degrees())
}

/// Rodrigues map from an axis-angle vector (radians) to a rotation matrix.
pub fn axis_angle_to_matrix(aa: &Vec3) -> Mat3 {
    if aa.iter().all(|&v| v == 0.0) {
        return Mat3::identity();
    }
    Rotation3::from_scaled_axis(*aa).into_inner()
}

pub fn matrix_to_axis_angle(r: &Mat3) -> Vec3 {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

/// Geodesic angle between two rotations, radians. Uses `atan2(sin, cos)`
/// so small angles keep full precision.
pub fn rotation_angle_between(a: &Mat3, b: &Mat3) -> f64 {
    let m = a.transpose() * b;
    let sin = 0.5 * Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
    let cos = 0.5 * (m.trace() - 1.0);
    sin.atan2(cos)
}

pub fn is_rotation(r: &Mat3, tol: f64) -> bool {
    r.iter().all(|v| v.is_finite())
        && (r * r.transpose() - Mat3::identity()).abs().max() <= tol
        && (r.determinant() - 1.0).abs() <= tol
}

pub fn check_rotation(r: &Mat3, what: &str) -> Result<()> {
    ensure!(is_rotation(r, 1e-9), Parameter, "{what}: not a proper rotation matrix");
    Ok(())
}

pub fn check_axis_angle(aa: &Vec3, what: &str) -> Result<()> {
    ensure!(aa.iter().all(|v| v.is_finite()), Domain, "{what}: non-finite axis-angle");
    ensure!(
        aa.norm() < std::f64::consts::PI,
        Parameter,
        "{what}: axis-angle magnitude {} must be < pi",
        aa.norm()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoints::row_mul;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_angles_give_identity() {
        assert_eq!(rotation_from_euler(0.0, 0.0, 0.0), Mat3::identity());
    }

    #[test]
    fn yaw_90_on_row_x() {
        // Ry(90) = [[0,0,1],[0,1,0],[-1,0,0]]; row (1,0,0) picks its first row.
        let r = rotation_from_euler(0.0, 90.0, 0.0);
        let v = row_mul(&Vec3::x(), &r);
        assert_abs_diff_eq!(v, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn axis_angle_zero_is_identity_bitwise() {
        assert_eq!(axis_angle_to_matrix(&Vec3::zeros()), Mat3::identity());
    }

    #[test]
    fn axis_angle_matches_rot_z() {
        let r = axis_angle_to_matrix(&Vec3::new(0.0, 0.0, 0.3));
        assert_abs_diff_eq!(r, rot_z(0.3), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn euler_is_orthonormal(p in -360.0..360.0f64, y in -360.0..360.0f64, r in -360.0..360.0f64) {
            let m = rotation_from_euler(p, y, r);
            prop_assert!(is_rotation(&m, 1e-12));
        }

        #[test]
        fn euler_round_trip(p in -80.0..80.0f64, y in -80.0..80.0f64, r in -80.0..80.0f64) {
            let m = rotation_from_euler(p, y, r);
            let (p2, y2, r2) = euler_from_rotation(&m);
            prop_assert!((p - p2).abs() < 1e-9 && (y - y2).abs() < 1e-9 && (r - r2).abs() < 1e-9);
        }

        #[test]
        fn axis_angle_round_trip(x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64) {
            let aa = Vec3::new(x, y, z);
            let back = matrix_to_axis_angle(&axis_angle_to_matrix(&aa));
            prop_assert!((aa - back).norm() < 1e-10);
        }
    }
}
