//! Axis-angle rotations and small fixed-size linear algebra.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Below this angle the rotation uses its series expansion.
pub const SMALL_ANGLE: f64 = 1e-6;
/// Below this angle the Jacobian coefficients use their series expansions;
/// the closed forms lose digits to cancellation well before `SMALL_ANGLE`.
const SMALL_ANGLE_JACOBIAN: f64 = 1e-2;

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Rotation as axis × angle (radians). The zero vector is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxisAngle(pub Vec3);

impl AxisAngle {
    pub const IDENTITY: AxisAngle = AxisAngle([0.0; 3]);

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle([x, y, z])
    }

    pub fn from_axis(axis: Vec3, angle: f64) -> Self {
        let n = norm(axis);
        assert!(n > 0.0, "zero rotation axis");
        AxisAngle(scale(axis, angle / n))
    }

    pub fn angle(&self) -> f64 {
        norm(self.0)
    }

    /// Same rotation with angle wrapped into [-π, π], so the magnitude is ≤ π.
    pub fn canonical(&self) -> Self {
        let theta = self.angle();
        if theta <= PI {
            return *self;
        }
        let wrapped = theta - 2.0 * PI * (theta / (2.0 * PI)).round();
        AxisAngle(scale(self.0, wrapped / theta))
    }

    pub fn to_matrix(&self) -> Mat3 {
        axis_angle_to_matrix(self.0)
    }
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

pub fn determinant(m: &Mat3) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

pub fn skew(v: Vec3) -> Mat3 {
    [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
}

fn mat_axpy(acc: &mut Mat3, s: f64, m: &Mat3) {
    for i in 0..3 {
        for j in 0..3 {
            acc[i][j] += s * m[i][j];
        }
    }
}

/// Coefficients of `R = I + a[r]× + b[r]×²` and their angle derivatives
/// divided by the angle: `c = a'(θ)/θ`, `d = b'(θ)/θ`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64, f64) {
    let t2 = theta * theta;
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        let half = 0.5 * theta;
        let s = half.sin() / half;
        (theta.sin() / theta, 0.5 * s * s)
    };
    let (c, d) = if theta < SMALL_ANGLE_JACOBIAN {
        let t4 = t2 * t2;
        (
            -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0,
        )
    } else {
        let t3 = t2 * theta;
        let half_sin = (0.5 * theta).sin();
        (
            (theta * theta.cos() - theta.sin()) / t3,
            (theta * theta.sin() - 4.0 * half_sin * half_sin) / (t3 * theta),
        )
    };
    (a, b, c, d)
}

/// Rodrigues' formula.
pub fn axis_angle_to_matrix(r: Vec3) -> Mat3 {
    let (a, b, _, _) = rodrigues_coefficients(norm(r));
    let k = skew(r);
    let k2 = mat_mul(&k, &k);
    let mut m = IDENTITY;
    mat_axpy(&mut m, a, &k);
    mat_axpy(&mut m, b, &k2);
    m
}

/// Partial derivatives `∂R/∂r_i` for i = 0, 1, 2.
pub fn axis_angle_jacobian(r: Vec3) -> [Mat3; 3] {
    let (a, b, c, d) = rodrigues_coefficients(norm(r));
    let k = skew(r);
    let k2 = mat_mul(&k, &k);
    let mut out = [[[0.0; 3]; 3]; 3];
    for (i, di) in out.iter_mut().enumerate() {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        let ei = skew(e);
        mat_axpy(di, a, &ei);
        mat_axpy(di, b, &mat_mul(&ei, &k));
        mat_axpy(di, b, &mat_mul(&k, &ei));
        mat_axpy(di, c * r[i], &k);
        mat_axpy(di, d * r[i], &k2);
    }
    out
}

/// Inverse of Rodrigues' formula, returning a vector of magnitude ≤ π.
pub fn matrix_to_axis_angle(m: &Mat3) -> Vec3 {
    let tr = m[0][0] + m[1][1] + m[2][2];
    let cos = ((tr - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let v = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
    if theta < 1e-8 {
        return scale(v, 0.5);
    }
    if PI - theta > 1e-6 {
        return scale(v, theta / (2.0 * theta.sin()));
    }
    // Near π: axis from the symmetric part, R + I = 2 n nᵀ (approximately).
    let diag = [m[0][0], m[1][1], m[2][2]];
    let i = (0..3).max_by(|&a, &b| diag[a].total_cmp(&diag[b])).unwrap_or(0);
    let mut n = [0.0; 3];
    n[i] = ((diag[i] + 1.0) * 0.5).max(0.0).sqrt();
    for j in 0..3 {
        if j != i {
            n[j] = (m[i][j] + m[j][i]) / (4.0 * n[i]);
        }
    }
    let n = scale(n, 1.0 / norm(n));
    let n = if dot(n, v) < 0.0 { scale(n, -1.0) } else { n };
    scale(n, theta)
}

/// Angle of the relative rotation between two axis-angle vectors.
pub fn geodesic_angle(a: Vec3, b: Vec3) -> f64 {
    let rel = mat_mul(&transpose(&axis_angle_to_matrix(a)), &axis_angle_to_matrix(b));
    let tr = rel[0][0] + rel[1][1] + rel[2][2];
    ((tr - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_vector_is_identity() {
        assert_eq!(axis_angle_to_matrix([0.0; 3]), IDENTITY);
    }

    #[test]
    fn quarter_turn_about_z() {
        let m = axis_angle_to_matrix([0.0, 0.0, FRAC_PI_2]);
        let v = mat_vec(&m, [1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15 && v[2].abs() < 1e-15);
    }

    #[test]
    fn canonical_wraps_magnitude() {
        let r = AxisAngle::from_axis([0.0, 1.0, 0.0], 1.5 * PI);
        let c = r.canonical();
        assert!(c.angle() <= PI + 1e-15);
        let (a, b) = (r.to_matrix(), c.to_matrix());
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[i][j] - b[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_map_inverts_exp_map() {
        for r in [[0.3, -0.2, 0.9], [1e-9, 0.0, 2e-9], [0.0, 3.0, 0.0], [2.0, -1.0, 1.5]] {
            let back = matrix_to_axis_angle(&axis_angle_to_matrix(r));
            let want = AxisAngle(r).canonical().0;
            for k in 0..3 {
                assert!((back[k] - want[k]).abs() < 1e-7, "{r:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn geodesic_of_antipodal_pair_is_small() {
        let axis = [0.6, 0.0, 0.8];
        let a = scale(axis, PI - 1e-3);
        let b = scale(axis, -(PI - 1e-3));
        assert!(geodesic_angle(a, b) < 3e-3);
    }

    #[test]
    fn jacobian_series_and_closed_form_meet() {
        let (_, _, c0, d0) = rodrigues_coefficients(SMALL_ANGLE_JACOBIAN * 0.999_999);
        let (_, _, c1, d1) = rodrigues_coefficients(SMALL_ANGLE_JACOBIAN * 1.000_001);
        assert!((c0 - c1).abs() < 1e-9);
        assert!((d0 - d1).abs() < 1e-6);
    }
}
