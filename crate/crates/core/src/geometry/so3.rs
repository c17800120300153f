//! Axis-angle helpers on SO(3).

use nalgebra::{Matrix3, Vector3};

const SMALL_ANGLE: f64 = 1e-8;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula.
pub fn exp(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = r.norm_squared();
    let k = skew(r);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Matrix3::identity() + a * k + b * k * k
}

/// Inverse of [`exp`] for rotation angles in `[0, pi]`.
pub fn log(rot: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((rot.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let w = Vector3::new(
        rot[(2, 1)] - rot[(1, 2)],
        rot[(0, 2)] - rot[(2, 0)],
        rot[(1, 0)] - rot[(0, 1)],
    );
    if theta < 1e-6 {
        return 0.5 * w;
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // Near pi the antisymmetric part vanishes; recover the axis from the
        // symmetric part instead.
        let b = (rot + Matrix3::identity()) * 0.5;
        let mut axis = Vector3::new(b[(0, 0)].max(0.0).sqrt(), b[(1, 1)].max(0.0).sqrt(), b[(2, 2)].max(0.0).sqrt());
        if axis.x >= axis.y && axis.x >= axis.z {
            axis.y = axis.y.copysign(b[(0, 1)]);
            axis.z = axis.z.copysign(b[(0, 2)]);
        } else if axis.y >= axis.z {
            axis.x = axis.x.copysign(b[(0, 1)]);
            axis.z = axis.z.copysign(b[(1, 2)]);
        } else {
            axis.x = axis.x.copysign(b[(0, 2)]);
            axis.y = axis.y.copysign(b[(1, 2)]);
        }
        return axis.normalize() * theta;
    }
    w * (theta / (2.0 * theta.sin()))
}

/// Left Jacobian: `exp(r + d) ~ exp(J_l(r) d) * exp(r)` for small `d`.
pub fn left_jacobian(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = r.norm_squared();
    let k = skew(r);
    if theta2 < 1e-10 {
        return Matrix3::identity() + 0.5 * k + (1.0 / 6.0) * k * k;
    }
    let theta = theta2.sqrt();
    let a = (1.0 - theta.cos()) / theta2;
    let b = (theta - theta.sin()) / (theta2 * theta);
    Matrix3::identity() + a * k + b * k * k
}

/// Projects a near-rotation matrix onto SO(3) (closest in Frobenius norm).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_log_round_trip() {
        for r in [
            Vector3::new(0.1, -0.2, 0.3),
            Vector3::new(1e-9, 0.0, 0.0),
            Vector3::new(0.0, 2.5, -1.0),
            Vector3::new(3.1, 0.0, 0.0),
        ] {
            let back = log(&exp(&r));
            assert!((back - r).norm() < 1e-7, "{r:?} -> {back:?}");
        }
    }

    #[test]
    fn exp_is_orthonormal() {
        let rot = exp(&Vector3::new(0.4, -1.3, 0.7));
        assert!((rot.transpose() * rot - Matrix3::identity()).norm() < 1e-12);
        assert!((rot.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn left_jacobian_matches_finite_difference() {
        let r = Vector3::new(0.3, -0.7, 1.1);
        let jl = left_jacobian(&r);
        let base = exp(&r);
        let h = 1e-6;
        for k in 0..3 {
            let mut rp = r;
            rp[k] += h;
            let mut rm = r;
            rm[k] -= h;
            let d = (exp(&rp) - exp(&rm)) / (2.0 * h);
            // d = [w]x R with w = J_l e_k
            let expected = skew(&jl.column(k).into_owned()) * base;
            assert!((d - expected).norm() < 1e-8);
        }
    }
}
