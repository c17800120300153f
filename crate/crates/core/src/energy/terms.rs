use nalgebra::Vector3;

use super::distance::Cell;
use super::{EnergyError, FrameObservation, PointIndex, PreparedFrame, TriangulatedJoints, ViewObservation};
use crate::geometry::CameraRig;
use crate::hand_model::{HandPose, HandShape, JointLimits, JointSet, ARTICULATION_DIMS, NUM_JOINTS};
use crate::par;

/// Residual charged for a point at or behind a camera plane, in pixels.
pub const BEHIND_CAMERA_PENALTY_PX: f64 = 1e4;

const VERTEX_CHUNK: usize = 64;

type Joints = [Vector3<f64>; NUM_JOINTS];

/// `x / |x|`, or zero at `x = 0`.
fn unit(x: Vector3<f64>, norm: f64) -> Vector3<f64> {
    if norm > 0.0 {
        x / norm
    } else {
        Vector3::zeros()
    }
}

pub(crate) fn j2d_available(rig: &CameraRig, views: &[ViewObservation]) -> bool {
    rig.cameras().iter().zip(views).any(|(c, v)| c.weight > 0.0 && v.confidence.iter().any(|&w| w > 0.0))
}

pub(crate) fn j2d_kernel(rig: &CameraRig, joints: &Joints, views: &[ViewObservation]) -> Result<(f64, Joints), EnergyError> {
    if !j2d_available(rig, views) {
        return Err(EnergyError::NoValidObservations);
    }
    let mut value = 0.0;
    let mut grads = [Vector3::zeros(); NUM_JOINTS];
    for (cam, view) in rig.cameras().iter().zip(views) {
        if cam.weight == 0.0 {
            continue;
        }
        for i in 0..NUM_JOINTS {
            let w = cam.weight * view.confidence[i];
            if w == 0.0 {
                continue;
            }
            match cam.project_with_jacobian(&joints[i]) {
                Ok((uv, jac)) => {
                    let r = uv - view.joints2d[i];
                    let n = r.norm();
                    value += w * n;
                    if n > 0.0 {
                        grads[i] += jac.transpose() * (r * (w / n));
                    }
                }
                Err(_) => value += w * BEHIND_CAMERA_PENALTY_PX,
            }
        }
    }
    Ok((value, grads))
}

pub(crate) fn mask_available(rig: &CameraRig, frame: &PreparedFrame) -> Result<(), EnergyError> {
    let mut any = false;
    for (k, cam) in rig.cameras().iter().enumerate() {
        if cam.weight > 0.0 {
            any = true;
            if frame.mask_field(k).is_none() {
                return Err(EnergyError::EmptyMask(k));
            }
        }
    }
    if any {
        Ok(())
    } else {
        Err(EnergyError::NoValidObservations)
    }
}

pub(crate) struct MaskOut {
    pub value: f64,
    pub grads: Vec<Vector3<f64>>,
    /// Bilinear cell per `(vertex, view)`, `vertex * views + view`.
    pub cells: Vec<Option<Cell>>,
}

pub(crate) fn mask_kernel(
    rig: &CameraRig,
    vertices: &[Vector3<f64>],
    frame: &PreparedFrame,
    frozen: Option<&[Option<Cell>]>,
) -> Result<MaskOut, EnergyError> {
    mask_available(rig, frame)?;
    let nviews = rig.len();
    let per_chunk = par::map_chunks(vertices.len(), VERTEX_CHUNK, |range| {
        let mut out = Vec::with_capacity(range.len());
        for v in range {
            let mut value = 0.0;
            let mut grad = Vector3::zeros();
            let mut cells = vec![None; nviews];
            for (c, cam) in rig.cameras().iter().enumerate() {
                if cam.weight == 0.0 {
                    continue;
                }
                let field = frame.mask_field(c).expect("checked above");
                match cam.project_with_jacobian(&vertices[v]) {
                    Ok((uv, jac)) => {
                        let fixed = frozen.and_then(|f| f[v * nviews + c]);
                        let s = field.sample(&uv, fixed);
                        value += cam.weight * s.value;
                        grad += jac.transpose() * (s.grad * cam.weight);
                        cells[c] = Some(s.cell);
                    }
                    Err(_) => value += cam.weight * BEHIND_CAMERA_PENALTY_PX,
                }
            }
            out.push((value, grad, cells));
        }
        out
    });
    let mut result = MaskOut { value: 0.0, grads: Vec::with_capacity(vertices.len()), cells: Vec::with_capacity(vertices.len() * nviews) };
    for (value, grad, cells) in per_chunk.into_iter().flatten() {
        result.value += value;
        result.grads.push(grad);
        result.cells.extend(cells);
    }
    Ok(result)
}

pub(crate) fn j3d_kernel(joints: &Joints, triangulated: &TriangulatedJoints) -> Result<(f64, Joints), EnergyError> {
    if triangulated.iter().all(|t| t.is_none()) {
        return Err(EnergyError::NoValidJoints);
    }
    let mut value = 0.0;
    let mut grads = [Vector3::zeros(); NUM_JOINTS];
    for i in 0..NUM_JOINTS {
        if let Some(t) = triangulated[i] {
            let r = joints[i] - t;
            let n = r.norm();
            value += n;
            grads[i] = unit(r, n);
        }
    }
    Ok((value, grads))
}

pub(crate) struct MeshOut {
    pub value: f64,
    pub grads: Vec<Vector3<f64>>,
    /// Nearest cloud point per vertex.
    pub targets: Vec<Vector3<f64>>,
}

pub(crate) fn mesh_kernel(
    vertices: &[Vector3<f64>],
    index: Option<&PointIndex>,
    frozen: Option<&[Vector3<f64>]>,
) -> Result<MeshOut, EnergyError> {
    let index = index.ok_or(EnergyError::EmptyCloud)?;
    let per_chunk = par::map_chunks(vertices.len(), VERTEX_CHUNK, |range| {
        range
            .map(|v| {
                let target = match frozen {
                    Some(f) => f[v],
                    None => index.nearest(&vertices[v]).1,
                };
                let r = vertices[v] - target;
                let n = r.norm();
                (n, unit(r, n), target)
            })
            .collect::<Vec<_>>()
    });
    let mut out = MeshOut { value: 0.0, grads: Vec::with_capacity(vertices.len()), targets: Vec::with_capacity(vertices.len()) };
    for (n, g, t) in per_chunk.into_iter().flatten() {
        out.value += n;
        out.grads.push(g);
        out.targets.push(t);
    }
    Ok(out)
}

/// Value and gradient of the limit penalty over the articulation angles.
pub(crate) fn reg_kernel(pose: &HandPose, limits: &JointLimits) -> (f64, [f64; ARTICULATION_DIMS]) {
    let mut value = 0.0;
    let mut grad = [0.0; ARTICULATION_DIMS];
    for i in 0..ARTICULATION_DIMS {
        let a = pose.articulation[i];
        if a < limits.lower[i] {
            value += limits.lower[i] - a;
            grad[i] = -1.0;
        } else if a > limits.upper[i] {
            value += a - limits.upper[i];
            grad[i] = 1.0;
        }
    }
    (value, grad)
}

/// Confidence- and view-weighted sum of 2D joint reprojection distances, pixels.
pub fn e_j2d(rig: &CameraRig, joints: &JointSet, frame: &FrameObservation) -> Result<f64, EnergyError> {
    j2d_kernel(rig, &joints.joints, &frame.views).map(|(v, _)| v)
}

/// View-weighted sum over vertices of the distance from each projected vertex
/// to the nearest mask pixel, pixels.
pub fn e_mask(rig: &CameraRig, vertices: &[Vector3<f64>], frame: &PreparedFrame) -> Result<f64, EnergyError> {
    mask_kernel(rig, vertices, frame, None).map(|m| m.value)
}

/// Sum of distances between model joints and the triangulated joints, meters.
pub fn e_j3d(joints: &JointSet, triangulated: &TriangulatedJoints) -> Result<f64, EnergyError> {
    j3d_kernel(&joints.joints, triangulated).map(|(v, _)| v)
}

/// Sum over vertices of the distance to the nearest cloud point, meters.
pub fn e_mesh(vertices: &[Vector3<f64>], index: Option<&PointIndex>) -> Result<f64, EnergyError> {
    mesh_kernel(vertices, index, None).map(|m| m.value)
}

/// Total violation of the articulation limits, radians.
pub fn e_reg(pose: &HandPose, limits: &JointLimits) -> f64 {
    reg_kernel(pose, limits).0
}

/// `|beta|^2`.
pub fn e_shape(shape: &HandShape) -> f64 {
    shape.beta.iter().map(|b| b * b).sum()
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector2;

    use super::*;
    use crate::energy::BinaryMask;
    use crate::geometry::project;
    use crate::hand_model::HandModel;
    use crate::synth::{ring_rig, SynthConfig};

    fn joints() -> Joints {
        std::array::from_fn(|j| Vector3::new(0.01 * j as f64 - 0.1, 0.005 * j as f64, 0.02))
    }

    fn views(rig: &CameraRig, pts: &Joints) -> Vec<ViewObservation> {
        rig.cameras()
            .iter()
            .map(|c| ViewObservation {
                joints2d: std::array::from_fn(|j| project(c, &pts[j]).unwrap()),
                confidence: [1.0; NUM_JOINTS],
                mask: BinaryMask::new(c.intrinsics.width as usize, c.intrinsics.height as usize),
            })
            .collect()
    }

    #[test]
    fn j2d_vanishes_at_exact_projections() {
        let rig = ring_rig(&SynthConfig::default());
        let pts = joints();
        let (value, _) = j2d_kernel(&rig, &pts, &views(&rig, &pts)).unwrap();
        assert!(value < 1e-9, "{value}");
    }

    #[test]
    fn j2d_charges_the_penalty_behind_the_camera() {
        let rig = ring_rig(&SynthConfig { views: 1, ..Default::default() });
        let pts = joints();
        let obs = views(&rig, &pts);
        let mut moved = pts;
        moved[3] = rig.cameras()[0].extrinsics.center() * 2.0;
        let (value, _) = j2d_kernel(&rig, &moved, &obs).unwrap();
        assert_eq!(value, BEHIND_CAMERA_PENALTY_PX * rig.cameras()[0].weight);
    }

    #[test]
    fn j2d_needs_a_confident_weighted_view() {
        let rig = ring_rig(&SynthConfig::default());
        let pts = joints();
        let mut obs = views(&rig, &pts);
        obs[0].confidence = [0.0; NUM_JOINTS];
        let zeroed = rig.with_weights(&[0.0, 1.0]).unwrap();
        obs[1].joints2d[0] += Vector2::new(3.0, 4.0);
        assert!((j2d_kernel(&zeroed, &pts, &obs).unwrap().0 - 5.0).abs() < 1e-9);
        obs[1].confidence = [0.0; NUM_JOINTS];
        assert_eq!(j2d_kernel(&zeroed, &pts, &obs).unwrap_err(), EnergyError::NoValidObservations);
    }

    #[test]
    fn mesh_is_zero_on_its_own_vertices_and_needs_a_cloud() {
        let model = HandModel::builtin(crate::hand_model::Handedness::Right);
        let verts = &model.template.vertices;
        let index = PointIndex::new(verts);
        assert_eq!(e_mesh(verts, index.as_ref()).unwrap(), 0.0);
        assert_eq!(e_mesh(verts, None).unwrap_err(), EnergyError::EmptyCloud);
    }

    #[test]
    fn reg_is_the_l1_violation() {
        let limits = JointLimits { lower: [-1.0; ARTICULATION_DIMS], upper: [1.0; ARTICULATION_DIMS] };
        let mut pose = HandPose::default();
        assert_eq!(e_reg(&pose, &limits), 0.0);
        pose.articulation[0] = 1.5;
        pose.articulation[7] = -3.0;
        let (value, grad) = reg_kernel(&pose, &limits);
        assert_eq!(value, 2.5);
        assert_eq!((grad[0], grad[7], grad[1]), (1.0, -1.0, 0.0));
    }

    #[test]
    fn j3d_skips_missing_joints() {
        let pts = joints();
        let mut tri: TriangulatedJoints = [None; NUM_JOINTS];
        assert_eq!(e_j3d(&JointSet { joints: pts }, &tri).unwrap_err(), EnergyError::NoValidJoints);
        tri[2] = Some(pts[2] + Vector3::new(0.0, 0.003, 0.004));
        assert!((e_j3d(&JointSet { joints: pts }, &tri).unwrap() - 0.005).abs() < 1e-15);
    }
}
