use nalgebra::{DMatrix, Matrix3, Matrix6, SymmetricEigen, Vector2, Vector3, Vector6};

use super::camera::{Extrinsics, Intrinsics};
use super::so3;
use super::GeometryError;

pub const MIN_CORRESPONDENCES: usize = 6;
/// Smallest/largest eigenvalue ratio of the point covariance below which the
/// world points count as coplanar.
pub const PLANARITY_TOL: f64 = 1e-9;
const MAX_REFINE_ITERATIONS: usize = 50;
const REFINE_REL_TOL: f64 = 1e-10;

/// Estimates camera-from-world extrinsics from 3D-2D correspondences.
///
/// DLT on normalized image coordinates, projected onto SO(3), then
/// Gauss-Newton on the pixel reprojection error. All correspondences are
/// used jointly (no outlier rejection).
pub fn solve_pnp(intrinsics: &Intrinsics, correspondences: &[(Vector3<f64>, Vector2<f64>)]) -> Result<Extrinsics, GeometryError> {
    let n = correspondences.len();
    if n < MIN_CORRESPONDENCES {
        return Err(GeometryError::InsufficientPoints(n));
    }

    let centroid = correspondences.iter().map(|(x, _)| x).sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for (x, _) in correspondences {
        let d = x - centroid;
        cov += d * d.transpose();
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if hi <= 0.0 || lo / hi < PLANARITY_TOL {
        return Err(GeometryError::DegenerateConfiguration);
    }

    let mean_dist = correspondences.iter().map(|(x, _)| (x - centroid).norm()).sum::<f64>() / n as f64;
    let scale = 3f64.sqrt() / mean_dist;

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (x, pixel)) in correspondences.iter().enumerate() {
        let xn = (x - centroid) * scale;
        let h = [xn.x, xn.y, xn.z, 1.0];
        let m = intrinsics.normalize(pixel);
        for k in 0..4 {
            a[(2 * i, k)] = h[k];
            a[(2 * i, 8 + k)] = -m.x * h[k];
            a[(2 * i + 1, 4 + k)] = h[k];
            a[(2 * i + 1, 8 + k)] = -m.y * h[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateConfiguration)?;
    let smallest = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .ok_or(GeometryError::DegenerateConfiguration)?;
    let p = v_t.row(smallest);
    let m_norm = Matrix3::new(p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]);
    let t_norm = Vector3::new(p[3], p[7], p[11]);
    // Undo the world normalization: x_n = s (x - c).
    let mut m = m_norm * scale;
    let mut t = t_norm - m * centroid;

    // Fix the overall sign so the points sit in front of the camera.
    let in_front = correspondences.iter().filter(|(x, _)| (m * x + t).z > 0.0).count();
    if 2 * in_front < n {
        m = -m;
        t = -t;
    }
    let sv = m.svd(false, false).singular_values;
    let s = (sv[0] + sv[1] + sv[2]) / 3.0;
    if s <= 0.0 {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let rotation = so3::nearest_rotation(&(m / s));
    let translation = t / s;

    let refined = refine(intrinsics, correspondences, rotation, translation);
    Extrinsics::new(so3::nearest_rotation(&refined.0), refined.1)
}

fn residuals(k: &Intrinsics, pts: &[(Vector3<f64>, Vector2<f64>)], r: &Matrix3<f64>, t: &Vector3<f64>) -> Option<f64> {
    let mut total = 0.0;
    for (x, pixel) in pts {
        let p = r * x + t;
        if p.z <= 1e-12 {
            return None;
        }
        let uv = Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
        total += (uv - pixel).norm_squared();
    }
    Some(total)
}

fn refine(
    k: &Intrinsics,
    pts: &[(Vector3<f64>, Vector2<f64>)],
    mut r: Matrix3<f64>,
    mut t: Vector3<f64>,
) -> (Matrix3<f64>, Vector3<f64>) {
    let Some(mut cost) = residuals(k, pts, &r, &t) else {
        return (r, t);
    };
    for _ in 0..MAX_REFINE_ITERATIONS {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for (x, pixel) in pts {
            let rx = r * x;
            let p = rx + t;
            let iz = 1.0 / p.z;
            let uv = Vector2::new(k.fx * p.x * iz + k.cx, k.fy * p.y * iz + k.cy);
            let res = uv - pixel;
            let d_proj = nalgebra::Matrix2x3::new(k.fx * iz, 0.0, -k.fx * p.x * iz * iz, 0.0, k.fy * iz, -k.fy * p.y * iz * iz);
            // p = exp(w) R x + t  =>  dp/dw = -[R x]_x, dp/dt = I
            let mut dp = nalgebra::Matrix3x6::zeros();
            dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-so3::skew(&rx)));
            dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = d_proj * dp;
            jtj += j.transpose() * j;
            jtr += j.transpose() * res;
        }
        let Some(delta) = jtj.lu().solve(&(-jtr)) else {
            break;
        };
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..10 {
            let w = Vector3::new(delta[0], delta[1], delta[2]) * step;
            let dt = Vector3::new(delta[3], delta[4], delta[5]) * step;
            let r_new = so3::exp(&w) * r;
            let t_new = t + dt;
            if let Some(c) = residuals(k, pts, &r_new, &t_new) {
                if c <= cost {
                    accepted = Some((r_new, t_new, c));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((r_new, t_new, c)) = accepted else {
            break;
        };
        let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
        r = r_new;
        t = t_new;
        cost = c;
        if rel < REFINE_REL_TOL || cost == 0.0 {
            break;
        }
    }
    (r, t)
}
