use nalgebra::{Matrix3, SVector, Vector3};

use super::{HandMesh, HandModel, HandPose, HandShape, JointSet, ShapeBlock, Skeleton, NUM_JOINTS, POSE_DIMS, SHAPE_DIMS};
use crate::geometry::so3;
use crate::par;

const VERTEX_CHUNK: usize = 128;

/// Gradient of a scalar with respect to the pose (51) and shape (10) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub pose: [f64; POSE_DIMS],
    pub shape: [f64; SHAPE_DIMS],
}

impl Default for ParamGradient {
    fn default() -> Self {
        Self { pose: [0.0; POSE_DIMS], shape: [0.0; SHAPE_DIMS] }
    }
}

/// Evaluated kinematic state for one `(shape, pose)`: joint frames, skinned
/// vertices, and what is needed to back-propagate gradients through them.
#[derive(Debug, Clone)]
pub struct PosedHand {
    pub joints: JointSet,
    pub vertices: Vec<Vector3<f64>>,
    rotations: [Matrix3<f64>; NUM_JOINTS],
    /// `pos_j - R_j * rest_j`: the translation part of each skinning transform.
    offsets: [Vector3<f64>; NUM_JOINTS],
    rest_shape_jac: [ShapeBlock; NUM_JOINTS],
    pos_shape_jac: [ShapeBlock; NUM_JOINTS],
    /// World rotation axes of the articulation DoF, indexed by joint.
    axes: [[Vector3<f64>; 3]; NUM_JOINTS],
    global_axes: [Vector3<f64>; 3],
    shaped_template: Vec<Vector3<f64>>,
}

fn beta_vec(shape: &HandShape) -> SVector<f64, SHAPE_DIMS> {
    SVector::<f64, SHAPE_DIMS>::from(shape.beta)
}

struct Frames {
    positions: [Vector3<f64>; NUM_JOINTS],
    rotations: [Matrix3<f64>; NUM_JOINTS],
    rest: [Vector3<f64>; NUM_JOINTS],
    rest_shape_jac: [ShapeBlock; NUM_JOINTS],
    pos_shape_jac: [ShapeBlock; NUM_JOINTS],
    axes: [[Vector3<f64>; 3]; NUM_JOINTS],
    global_axes: [Vector3<f64>; 3],
}

fn frames(skeleton: &Skeleton, shape: &HandShape, pose: &HandPose) -> Frames {
    let beta = beta_vec(shape);
    let global = so3::exp(&pose.global_rotation);
    let global_jl = so3::left_jacobian(&pose.global_rotation);
    let mut f = Frames {
        positions: [Vector3::zeros(); NUM_JOINTS],
        rotations: [Matrix3::identity(); NUM_JOINTS],
        rest: skeleton.rest_joints(shape),
        rest_shape_jac: [ShapeBlock::zeros(); NUM_JOINTS],
        pos_shape_jac: [ShapeBlock::zeros(); NUM_JOINTS],
        axes: [[Vector3::zeros(); 3]; NUM_JOINTS],
        global_axes: [global_jl.column(0).into(), global_jl.column(1).into(), global_jl.column(2).into()],
    };
    for j in 0..NUM_JOINTS {
        let offset = skeleton.rest_offsets[j] + skeleton.shape_basis[j] * beta;
        let (parent_rot, parent_pos) = match skeleton.parent[j] {
            Some(p) => {
                f.rest_shape_jac[j] = f.rest_shape_jac[p] + skeleton.shape_basis[j];
                f.pos_shape_jac[j] = f.pos_shape_jac[p] + f.rotations[p] * skeleton.shape_basis[j];
                (f.rotations[p], f.positions[p] + f.rotations[p] * offset)
            }
            None => {
                // The global rotation pivots at the wrist.
                f.rest_shape_jac[j] = skeleton.shape_basis[j];
                f.pos_shape_jac[j] = skeleton.shape_basis[j];
                (Matrix3::identity(), offset + pose.global_translation)
            }
        };
        f.positions[j] = parent_pos;
        f.rotations[j] = match (skeleton.parent[j], skeleton.articulated[j]) {
            (None, _) => global,
            (Some(_), Some(slot)) => {
                let r = pose.joint_rotation(slot);
                let jl = so3::left_jacobian(&r);
                for k in 0..3 {
                    f.axes[j][k] = parent_rot * jl.column(k);
                }
                parent_rot * so3::exp(&r)
            }
            (Some(_), None) => parent_rot,
        };
    }
    f
}

/// Joint positions `J(beta, theta)`.
pub fn forward_kinematics(skeleton: &Skeleton, shape: &HandShape, pose: &HandPose) -> JointSet {
    JointSet { joints: frames(skeleton, shape, pose).positions }
}

/// Linear blend skinning of the template. Triangles and weights are copied
/// through unchanged.
pub fn skin_mesh(skeleton: &Skeleton, template: &HandMesh, shape: &HandShape, pose: &HandPose) -> HandMesh {
    let f = frames(skeleton, shape, pose);
    let beta = beta_vec(shape);
    let vertices = template
        .vertices
        .iter()
        .zip(&template.shape_basis)
        .zip(&template.skinning_weights)
        .map(|((v, sb), w)| {
            let vs = v + sb * beta;
            let mut out = Vector3::zeros();
            for j in 0..NUM_JOINTS {
                if w[j] != 0.0 {
                    out += w[j] * (f.rotations[j] * (vs - f.rest[j]) + f.positions[j]);
                }
            }
            out
        })
        .collect();
    HandMesh {
        vertices,
        triangles: template.triangles.clone(),
        skinning_weights: template.skinning_weights.clone(),
        shape_basis: template.shape_basis.clone(),
    }
}

#[derive(Clone)]
struct Accum {
    torque: [Vector3<f64>; NUM_JOINTS],
    force: [Vector3<f64>; NUM_JOINTS],
    vertex_force: [Vector3<f64>; NUM_JOINTS],
    shape: SVector<f64, SHAPE_DIMS>,
}

impl Accum {
    fn new() -> Self {
        Self {
            torque: [Vector3::zeros(); NUM_JOINTS],
            force: [Vector3::zeros(); NUM_JOINTS],
            vertex_force: [Vector3::zeros(); NUM_JOINTS],
            shape: SVector::zeros(),
        }
    }

    fn add(&mut self, other: &Accum) {
        for j in 0..NUM_JOINTS {
            self.torque[j] += other.torque[j];
            self.force[j] += other.force[j];
            self.vertex_force[j] += other.vertex_force[j];
        }
        self.shape += other.shape;
    }
}

impl PosedHand {
    /// Evaluates joints and skinned vertices for the model.
    pub fn new(model: &HandModel, shape: &HandShape, pose: &HandPose) -> Self {
        Self::evaluate(model, shape, pose, true)
    }

    /// Joints only; vertex-dependent queries on the result see an empty mesh.
    pub fn joints_only(model: &HandModel, shape: &HandShape, pose: &HandPose) -> Self {
        Self::evaluate(model, shape, pose, false)
    }

    fn evaluate(model: &HandModel, shape: &HandShape, pose: &HandPose, with_vertices: bool) -> Self {
        let f = frames(&model.skeleton, shape, pose);
        let beta = beta_vec(shape);
        let mut offsets = [Vector3::zeros(); NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            offsets[j] = f.positions[j] - f.rotations[j] * f.rest[j];
        }
        let (shaped_template, vertices) = if with_vertices {
            let tpl = &model.template;
            let shaped: Vec<Vector3<f64>> = tpl.vertices.iter().zip(&tpl.shape_basis).map(|(v, sb)| v + sb * beta).collect();
            let weights = model.sparse_weights();
            let posed = shaped
                .iter()
                .zip(weights)
                .map(|(vs, w)| {
                    let mut out = Vector3::zeros();
                    for &(j, wj) in w {
                        out += wj * (f.rotations[j] * vs + offsets[j]);
                    }
                    out
                })
                .collect();
            (shaped, posed)
        } else {
            (Vec::new(), Vec::new())
        };
        Self {
            joints: JointSet { joints: f.positions },
            vertices,
            rotations: f.rotations,
            offsets,
            rest_shape_jac: f.rest_shape_jac,
            pos_shape_jac: f.pos_shape_jac,
            axes: f.axes,
            global_axes: f.global_axes,
            shaped_template,
        }
    }

    /// Chain rule from world-space joint and vertex gradients to parameters.
    ///
    /// `joint_grads` and `vertex_grads` hold `dE/dJ_i` and `dE/dV_i`; an empty
    /// `vertex_grads` means the scalar does not depend on the mesh.
    pub fn backpropagate(
        &self,
        model: &HandModel,
        joint_grads: &[Vector3<f64>; NUM_JOINTS],
        vertex_grads: &[Vector3<f64>],
    ) -> ParamGradient {
        let skeleton = &model.skeleton;
        let weights = model.sparse_weights();
        let mut acc = Accum::new();

        if !vertex_grads.is_empty() {
            assert_eq!(vertex_grads.len(), self.vertices.len(), "one gradient per vertex");
            let partials = par::map_chunks(vertex_grads.len(), VERTEX_CHUNK, |range| {
                let mut a = Accum::new();
                for v in range {
                    let g = vertex_grads[v];
                    if g == Vector3::zeros() {
                        continue;
                    }
                    let vs = self.shaped_template[v];
                    let mut local = Vector3::zeros();
                    for &(j, w) in &weights[v] {
                        let attached = self.rotations[j] * vs + self.offsets[j];
                        let gw = g * w;
                        a.torque[j] += attached.cross(&gw);
                        a.force[j] += gw;
                        a.vertex_force[j] += gw;
                        local += self.rotations[j].transpose() * gw;
                    }
                    a.shape += model.template.shape_basis[v].transpose() * local;
                }
                a
            });
            for p in &partials {
                acc.add(p);
            }
        }

        let mut shape = acc.shape;
        for j in 0..NUM_JOINTS {
            let g = joint_grads[j];
            shape += self.pos_shape_jac[j].transpose() * g;
            // A joint rides on its parent's frame; the wrist on its own, which
            // pivots at the wrist itself.
            let frame = skeleton.parent[j].unwrap_or(j);
            acc.torque[frame] += self.joints.joints[j].cross(&g);
            acc.force[frame] += g;
        }
        for j in 0..NUM_JOINTS {
            let fv = acc.vertex_force[j];
            shape += self.pos_shape_jac[j].transpose() * fv - self.rest_shape_jac[j].transpose() * (self.rotations[j].transpose() * fv);
        }

        let mut out = ParamGradient::default();
        // Subtree sums, children before parents.
        let mut torque = acc.torque;
        let mut force = acc.force;
        for j in (0..NUM_JOINTS).rev() {
            let pivot = self.joints.joints[j];
            let moment = torque[j] - pivot.cross(&force[j]);
            if let Some(slot) = skeleton.articulated[j] {
                for k in 0..3 {
                    out.pose[3 * slot + k] = self.axes[j][k].dot(&moment);
                }
            }
            match skeleton.parent[j] {
                Some(p) => {
                    let (t, f) = (torque[j], force[j]);
                    torque[p] += t;
                    force[p] += f;
                }
                None => {
                    let a = super::ARTICULATION_DIMS;
                    for k in 0..3 {
                        out.pose[a + k] = self.global_axes[k].dot(&moment);
                        out.pose[a + 3 + k] = force[j][k];
                    }
                }
            }
        }
        for k in 0..SHAPE_DIMS {
            out.shape[k] = shape[k];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand_model::{Handedness, ARTICULATION_DIMS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng) -> (HandShape, HandPose) {
        let mut shape = HandShape::zero();
        for b in shape.beta.iter_mut() {
            *b = rng.random_range(-1.0..1.0);
        }
        let mut pose = HandPose::default();
        for a in pose.articulation.iter_mut() {
            *a = rng.random_range(-0.5..0.8);
        }
        pose.global_rotation = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        pose.global_translation = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(0.3..0.6));
        (shape, pose)
    }

    fn scalar(model: &HandModel, shape: &HandShape, pose: &HandPose, jw: &[Vector3<f64>; NUM_JOINTS], vw: &[Vector3<f64>]) -> f64 {
        let p = PosedHand::new(model, shape, pose);
        let mut s = 0.0;
        for j in 0..NUM_JOINTS {
            s += jw[j].dot(&p.joints.joints[j]);
        }
        for (v, w) in p.vertices.iter().zip(vw) {
            s += w.dot(v);
        }
        s
    }

    #[test]
    fn zero_pose_gives_cumulative_rest_offsets() {
        let model = HandModel::builtin(Handedness::Right);
        let joints = forward_kinematics(&model.skeleton, &HandShape::zero(), &HandPose::default());
        let rest = model.skeleton.rest_joints(&HandShape::zero());
        assert_eq!(joints.joints, rest);
    }

    #[test]
    fn zero_pose_skin_is_template() {
        let model = HandModel::builtin(Handedness::Right);
        let posed = skin_mesh(&model.skeleton, &model.template, &HandShape::zero(), &HandPose::default());
        for (a, b) in posed.vertices.iter().zip(&model.template.vertices) {
            assert!((a - b).norm() < 1e-12);
        }
        assert_eq!(posed.vertices.len(), 778);
    }

    #[test]
    fn posed_hand_matches_public_functions() {
        let model = HandModel::builtin(Handedness::Left);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (shape, pose) = random_params(&mut rng);
        let p = PosedHand::new(&model, &shape, &pose);
        let fk = forward_kinematics(&model.skeleton, &shape, &pose);
        let mesh = skin_mesh(&model.skeleton, &model.template, &shape, &pose);
        assert_eq!(p.joints, fk);
        for (a, b) in p.vertices.iter().zip(&mesh.vertices) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let model = HandModel::builtin(Handedness::Right);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let (shape, pose) = random_params(&mut rng);
            let mut jw = [Vector3::zeros(); NUM_JOINTS];
            for w in jw.iter_mut() {
                *w = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
            let vw: Vec<Vector3<f64>> = (0..model.vertex_count())
                .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let grad = PosedHand::new(&model, &shape, &pose).backpropagate(&model, &jw, &vw);
            let h = 1e-6;
            let base = pose.to_vec();
            for i in 0..POSE_DIMS {
                let mut a = base.clone();
                a[i] += h;
                let mut b = base.clone();
                b[i] -= h;
                let fd = (scalar(&model, &shape, &HandPose::from_slice(&a).unwrap(), &jw, &vw)
                    - scalar(&model, &shape, &HandPose::from_slice(&b).unwrap(), &jw, &vw))
                    / (2.0 * h);
                assert!((fd - grad.pose[i]).abs() < 1e-5 * (1.0 + fd.abs()), "pose {i}: fd {fd} vs {}", grad.pose[i]);
            }
            for k in 0..SHAPE_DIMS {
                let mut a = shape;
                a.beta[k] += h;
                let mut b = shape;
                b.beta[k] -= h;
                let fd = (scalar(&model, &a, &pose, &jw, &vw) - scalar(&model, &b, &pose, &jw, &vw)) / (2.0 * h);
                assert!((fd - grad.shape[k]).abs() < 1e-5 * (1.0 + fd.abs()), "shape {k}: fd {fd} vs {}", grad.shape[k]);
            }
        }
    }

    #[test]
    fn articulation_moves_only_descendants() {
        let model = HandModel::builtin(Handedness::Right);
        let base = forward_kinematics(&model.skeleton, &HandShape::zero(), &HandPose::default());
        for j in 0..NUM_JOINTS {
            let Some(slot) = model.skeleton.articulated[j] else { continue };
            let mut pose = HandPose::default();
            pose.articulation[3 * slot] = 0.4;
            let moved = forward_kinematics(&model.skeleton, &HandShape::zero(), &pose);
            for k in 0..NUM_JOINTS {
                let changed = (moved.joints[k] - base.joints[k]).norm() > 1e-12;
                let downstream = k != j && model.skeleton.is_ancestor_or_self(j, k);
                assert_eq!(changed, downstream, "joint {k} after moving {j}");
            }
        }
        assert_eq!(ARTICULATION_DIMS, 45);
    }
}
