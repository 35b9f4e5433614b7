//! Rotation helpers: exponential and logarithm maps, re-orthonormalization.

use nalgebra::{Matrix3, Vector3};

type Vec3 = Vector3<f64>;
type Mat3 = Matrix3<f64>;

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix `exp([v]x)` (Rodrigues).
pub fn exp(v: &Vec3) -> Mat3 {
    let theta2 = v.norm_squared();
    let k = skew(v);
    let k2 = k * k;
    if theta2 < 1e-16 {
        return Mat3::identity() + k + 0.5 * k2;
    }
    let theta = theta2.sqrt();
    Mat3::identity() + (theta.sin() / theta) * k + ((1.0 - theta.cos()) / theta2) * k2
}

/// Rotation vector `v` with `exp([v]x) = r`, `|v| <= pi`.
pub fn log(r: &Mat3) -> Vec3 {
    let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin2 = w.norm(); // 2 sin(theta)
    let cos2 = r.trace() - 1.0; // 2 cos(theta)
    let theta = sin2.atan2(cos2);
    if sin2 < 1e-12 {
        if cos2 > 0.0 {
            // theta / (2 sin theta) -> 1/2
            return 0.5 * w;
        }
        // theta ~ pi: axis from the symmetric part, (R + I) / 2 = n n^T.
        let b = 0.5 * (r + Mat3::identity());
        let col = (0..3).max_by(|&a, &c| b[(a, a)].total_cmp(&b[(c, c)])).unwrap_or(0);
        let axis = b.column(col) / b[(col, col)].max(1e-300).sqrt();
        return axis.normalize() * theta;
    }
    w * (theta / sin2)
}

/// One Newton-Schulz step toward the orthogonal polar factor; quadratically
/// convergent for frames already close to orthonormal.
pub fn orthonormalize(q: &Mat3) -> Mat3 {
    0.5 * q * (3.0 * Mat3::identity() - q.transpose() * q)
}
