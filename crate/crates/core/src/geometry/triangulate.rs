use nalgebra::{DMatrix, Matrix3, Vector2, Vector3, Vector4};

use super::camera::{project, CameraRig};
use super::GeometryError;

/// Ratio `sigma_3 / sigma_1` below which the DLT design matrix is rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Triangulates one point from per-view pixel observations (`None` = unseen).
///
/// Linear DLT in normalized image coordinates followed by one Gauss-Newton
/// step on the pixel reprojection error. The refinement is kept only if it
/// lowers the reprojection error.
pub fn triangulate(rig: &CameraRig, observations: &[Option<Vector2<f64>>]) -> Result<Vector3<f64>, GeometryError> {
    if observations.len() != rig.len() {
        return Err(GeometryError::WeightCount { expected: rig.len(), got: observations.len() });
    }
    let seen: Vec<(usize, Vector2<f64>)> = observations
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.map(|p| (i, p)))
        .collect();
    if seen.len() < 2 {
        return Err(GeometryError::InsufficientViews(seen.len()));
    }

    let mut a = DMatrix::<f64>::zeros(2 * seen.len(), 4);
    for (row, (view, pixel)) in seen.iter().enumerate() {
        let cam = &rig.cameras()[*view];
        let n = cam.intrinsics.normalize(pixel);
        let r = &cam.extrinsics.rotation;
        let t = &cam.extrinsics.translation;
        let p = |i: usize| Vector4::new(r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]);
        let r1 = p(2) * n.x - p(0);
        let r2 = p(2) * n.y - p(1);
        for (k, row_vec) in [r1, r2].iter().enumerate() {
            let norm = row_vec.norm();
            let scaled = if norm > 0.0 { row_vec / norm } else { *row_vec };
            for c in 0..4 {
                a[(2 * row + k, c)] = scaled[c];
            }
        }
    }

    // Eigen-decomposition of the 4x4 normal matrix would square the condition
    // number; use the SVD of the design matrix itself.
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().ok_or(GeometryError::DegenerateGeometry)?;
    let mut sv: Vec<(f64, usize)> = svd.singular_values.iter().copied().zip(0..).collect();
    sv.sort_by(|x, y| y.0.total_cmp(&x.0));
    if sv.len() < 3 || sv[0].0 <= 0.0 || sv[2].0 / sv[0].0 < RANK_TOL {
        return Err(GeometryError::DegenerateGeometry);
    }
    // Rows of v_t beyond the singular value count do not exist when 2m < 4,
    // which cannot happen with at least two views.
    let smallest = sv.last().expect("nonempty").1;
    let h = v_t.row(smallest);
    if h[3].abs() < 1e-15 {
        return Err(GeometryError::DegenerateGeometry);
    }
    let dlt = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);

    Ok(refine_once(rig, &seen, dlt))
}

fn reprojection_sq(rig: &CameraRig, seen: &[(usize, Vector2<f64>)], x: &Vector3<f64>) -> Option<f64> {
    let mut total = 0.0;
    for (view, pixel) in seen {
        let uv = project(&rig.cameras()[*view], x).ok()?;
        total += (uv - pixel).norm_squared();
    }
    Some(total)
}

fn refine_once(rig: &CameraRig, seen: &[(usize, Vector2<f64>)], x: Vector3<f64>) -> Vector3<f64> {
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    for (view, pixel) in seen {
        let Ok((uv, jac)) = rig.cameras()[*view].project_with_jacobian(&x) else {
            return x;
        };
        let r = uv - pixel;
        jtj += jac.transpose() * jac;
        jtr += jac.transpose() * r;
    }
    let Some(delta) = jtj.lu().solve(&(-jtr)) else {
        return x;
    };
    let candidate = x + delta;
    match (reprojection_sq(rig, seen, &x), reprojection_sq(rig, seen, &candidate)) {
        (Some(before), Some(after)) if after <= before => candidate,
        (None, Some(_)) => candidate,
        _ => x,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Camera, Extrinsics, Intrinsics};

    fn rig_with_baseline(baseline: f64) -> CameraRig {
        let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let c0 = Camera::new(k, Extrinsics::identity(), 0.5).unwrap();
        let ext = Extrinsics::new(Matrix3::identity(), Vector3::new(-baseline, 0.0, 0.0)).unwrap();
        let c1 = Camera::new(k, ext, 0.5).unwrap();
        CameraRig::new(vec![c0, c1]).unwrap()
    }

    #[test]
    fn recovers_point_from_two_views() {
        let rig = rig_with_baseline(0.2);
        let x = Vector3::new(0.0, 0.0, 1.0);
        let obs: Vec<_> = rig.cameras().iter().map(|c| Some(project(c, &x).unwrap())).collect();
        let got = triangulate(&rig, &obs).unwrap();
        assert!((got - x).norm() < 1e-9);
    }

    #[test]
    fn single_view_is_insufficient() {
        let rig = rig_with_baseline(0.2);
        let obs = vec![Some(Vector2::new(320.0, 240.0)), None];
        assert!(matches!(triangulate(&rig, &obs), Err(GeometryError::InsufficientViews(1))));
    }

    #[test]
    fn identical_cameras_are_degenerate() {
        let rig = rig_with_baseline(0.0);
        let obs = vec![Some(Vector2::new(330.0, 250.0)), Some(Vector2::new(330.0, 250.0))];
        assert!(matches!(triangulate(&rig, &obs), Err(GeometryError::DegenerateGeometry)));
    }

    #[test]
    fn noisy_refinement_does_not_increase_error() {
        let rig = rig_with_baseline(0.3);
        let x = Vector3::new(0.05, -0.02, 1.2);
        let mut obs: Vec<_> = rig.cameras().iter().map(|c| Some(project(c, &x).unwrap())).collect();
        obs[0] = obs[0].map(|p| p + Vector2::new(1.5, -0.7));
        let got = triangulate(&rig, &obs).unwrap();
        assert!((got - x).norm() < 0.03);
    }
}
