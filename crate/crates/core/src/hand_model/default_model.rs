use nalgebra::Vector3;

use super::{
    Handedness, HandMesh, JointLimits, ShapeBlock, Skeleton, ARTICULATION_DIMS, NUM_ARTICULATED, NUM_JOINTS,
};

pub const DEFAULT_VERTEX_COUNT: usize = 778;

// Articulation axis bounds, radians: x = flexion, y = twist about the bone,
// z = abduction.
const FLEXION: (f64, f64) = (-0.26, 1.92);
const TWIST: (f64, f64) = (-0.35, 0.35);
const ABDUCTION: (f64, f64) = (-0.61, 0.61);

const RING_SEGMENTS: usize = 8;
const RING_FRACTIONS: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
const PALM_SEGMENTS: usize = 14;
const PALM_RINGS: usize = 19;

/// Right-hand rest joint positions, meters. Fingers point along +y, the palm
/// faces +z and the thumb sits on the +x side.
const RIGHT_REST: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    // thumb
    [0.022, 0.028, 0.006],
    [0.042, 0.052, 0.012],
    [0.058, 0.076, 0.014],
    [0.070, 0.098, 0.015],
    // index
    [0.024, 0.090, 0.0],
    [0.027, 0.131, 0.0],
    [0.028, 0.156, 0.0],
    [0.029, 0.177, 0.0],
    // middle
    [0.004, 0.094, 0.0],
    [0.004, 0.139, 0.0],
    [0.004, 0.167, 0.0],
    [0.004, 0.190, 0.0],
    // ring
    [-0.015, 0.089, 0.0],
    [-0.017, 0.130, 0.0],
    [-0.018, 0.156, 0.0],
    [-0.019, 0.177, 0.0],
    // pinky
    [-0.033, 0.080, 0.0],
    [-0.037, 0.110, 0.0],
    [-0.039, 0.130, 0.0],
    [-0.041, 0.148, 0.0],
];

const FINGER_RADIUS: [f64; 5] = [0.0100, 0.0090, 0.0092, 0.0086, 0.0076];

fn parents() -> [Option<usize>; NUM_JOINTS] {
    let mut parent = [None; NUM_JOINTS];
    for finger in 0..5 {
        let base = 1 + 4 * finger;
        parent[base] = Some(0);
        for k in 1..4 {
            parent[base + k] = Some(base + k - 1);
        }
    }
    parent
}

fn finger_of(joint: usize) -> Option<(usize, usize)> {
    (joint > 0).then(|| ((joint - 1) / 4, (joint - 1) % 4))
}

fn right_skeleton() -> Skeleton {
    let parent = parents();
    let rest: Vec<Vector3<f64>> = RIGHT_REST.iter().map(|p| Vector3::from(*p)).collect();
    let mut rest_offsets = [Vector3::zeros(); NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        rest_offsets[j] = match parent[j] {
            Some(p) => rest[j] - rest[p],
            None => rest[j],
        };
    }

    let mut articulated = [None; NUM_JOINTS];
    let mut slot = 0;
    for (j, a) in articulated.iter_mut().enumerate() {
        if let Some((_, seg)) = finger_of(j) {
            if seg < 3 {
                *a = Some(slot);
                slot += 1;
            }
        }
    }
    debug_assert_eq!(slot, NUM_ARTICULATED);

    // Shape components: 0 overall scale, 1..=5 per-finger phalanx length,
    // 6 palm width, 7 palm length, 8 thumb spread, 9 distal/proximal ratio.
    let mut shape_basis = [ShapeBlock::zeros(); NUM_JOINTS];
    for j in 1..NUM_JOINTS {
        let o = rest_offsets[j];
        let (finger, seg) = finger_of(j).expect("non-root joint");
        let block = &mut shape_basis[j];
        block.set_column(0, &(o * 0.06));
        if seg == 0 {
            block.set_column(6, &Vector3::new(0.08 * o.x, 0.0, 0.0));
            block.set_column(7, &Vector3::new(0.0, 0.06 * o.y, 0.0));
            if finger == 0 {
                block.set_column(8, &Vector3::new(0.15 * o.x, 0.0, 0.0));
            }
        } else {
            block.set_column(1 + finger, &(o * 0.08));
            let ratio = if seg == 1 { -0.08 } else { 0.08 };
            block.set_column(9, &(o * ratio));
        }
    }

    Skeleton { parent, rest_offsets, articulated, shape_basis }
}

/// Default articulation bounds: flexion [-0.26, 1.92], twist [-0.35, 0.35],
/// abduction [-0.61, 0.61] radians for every articulated joint.
pub fn default_limits() -> JointLimits {
    let mut lower = [0.0; ARTICULATION_DIMS];
    let mut upper = [0.0; ARTICULATION_DIMS];
    for slot in 0..NUM_ARTICULATED {
        for (axis, (lo, hi)) in [FLEXION, TWIST, ABDUCTION].into_iter().enumerate() {
            lower[3 * slot + axis] = lo;
            upper[3 * slot + axis] = hi;
        }
    }
    JointLimits { lower, upper }
}

struct MeshBuilder {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[usize; 3]>,
    weights: Vec<[f64; NUM_JOINTS]>,
    shape: Vec<ShapeBlock>,
}

impl MeshBuilder {
    fn push(&mut self, v: Vector3<f64>, weights: [f64; NUM_JOINTS], shape: ShapeBlock) -> usize {
        self.vertices.push(v);
        self.weights.push(weights);
        self.shape.push(shape);
        self.vertices.len() - 1
    }

    /// Stitches `rings` (each `segments` long, ordered along `+axis`) with
    /// outward-facing triangles and closes both ends with pole fans.
    fn stitch(&mut self, start_pole: usize, rings: &[usize], segments: usize, end_pole: usize) {
        for (i, &r0) in rings.iter().enumerate().take(rings.len() - 1) {
            let r1 = rings[i + 1];
            for k in 0..segments {
                let a = r0 + k;
                let b = r0 + (k + 1) % segments;
                let c = r1 + (k + 1) % segments;
                let d = r1 + k;
                self.triangles.push([a, b, c]);
                self.triangles.push([a, c, d]);
            }
        }
        let first = rings[0];
        let last = *rings.last().expect("at least one ring");
        for k in 0..segments {
            self.triangles.push([start_pole, first + (k + 1) % segments, first + k]);
            self.triangles.push([end_pole, last + k, last + (k + 1) % segments]);
        }
    }
}

/// Orthonormal `(e1, e2)` with `e1 x e2 = axis`.
fn frame_around(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if axis.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let e2 = axis.cross(&helper).normalize();
    let e1 = e2.cross(axis);
    (e1, e2)
}

fn right_mesh(skeleton: &Skeleton) -> HandMesh {
    let rest: Vec<Vector3<f64>> = RIGHT_REST.iter().map(|p| Vector3::from(*p)).collect();
    // Cumulative rest-joint shape Jacobians.
    let mut joint_shape = [ShapeBlock::zeros(); NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        joint_shape[j] = match skeleton.parent[j] {
            Some(p) => joint_shape[p] + skeleton.shape_basis[j],
            None => skeleton.shape_basis[j],
        };
    }

    let mut mb = MeshBuilder {
        vertices: Vec::with_capacity(DEFAULT_VERTEX_COUNT),
        triangles: Vec::new(),
        weights: Vec::with_capacity(DEFAULT_VERTEX_COUNT),
        shape: Vec::with_capacity(DEFAULT_VERTEX_COUNT),
    };

    // Phalanx capsules, one per articulated joint, spanning joint -> child.
    for j in 1..NUM_JOINTS {
        if skeleton.articulated[j].is_none() {
            continue;
        }
        let child = j + 1;
        let parent = skeleton.parent[j].expect("articulated joint has a parent");
        let (finger, _) = finger_of(j).expect("non-root");
        let start = rest[j];
        let bone = rest[child] - start;
        let axis = bone.normalize();
        let (e1, e2) = frame_around(&axis);
        let radius = FINGER_RADIUS[finger];

        let blend = |s: f64| -> [f64; NUM_JOINTS] {
            let mut w = [0.0; NUM_JOINTS];
            let to_parent = if s <= 0.0 {
                0.5
            } else if s < 0.5 {
                0.15
            } else {
                0.0
            };
            w[parent] = to_parent;
            w[j] = 1.0 - to_parent;
            w
        };
        let shape_at = |s: f64| joint_shape[j] * (1.0 - s) + joint_shape[child] * s;

        let start_pole = mb.push(start - axis * (0.6 * radius), blend(0.0), shape_at(0.0));
        let mut rings = Vec::with_capacity(RING_FRACTIONS.len());
        for &s in &RING_FRACTIONS {
            let r = radius * (1.0 - 0.15 * s);
            let centre = start + bone * s;
            let first = mb.vertices.len();
            for k in 0..RING_SEGMENTS {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / RING_SEGMENTS as f64;
                let p = centre + (e1 * phi.cos() + e2 * phi.sin()) * r;
                mb.push(p, blend(s), shape_at(s));
            }
            rings.push(first);
        }
        let tip_radius = radius * 0.85;
        let end_pole = mb.push(rest[child] + axis * tip_radius, blend(1.0), shape_at(1.0));
        mb.stitch(start_pole, &rings, RING_SEGMENTS, end_pole);
    }

    // Palm: ellipsoid rigid with the wrist, latitude rings along +y.
    let centre = Vector3::new(-0.003, 0.045, 0.0);
    let semi = Vector3::new(0.042, 0.055, 0.016);
    let bases = [0usize, 1, 5, 9, 13, 17];
    let palm_shape = |p: &Vector3<f64>| -> ShapeBlock {
        let mut acc = ShapeBlock::zeros();
        let mut total = 0.0;
        for &b in &bases {
            let d2 = (p - rest[b]).norm_squared() + 1e-6;
            let w = 1.0 / d2;
            acc += joint_shape[b] * w;
            total += w;
        }
        acc / total
    };
    let mut wrist_only = [0.0; NUM_JOINTS];
    wrist_only[0] = 1.0;
    let south = centre - Vector3::y() * semi.y;
    let start_pole = mb.push(south, wrist_only, palm_shape(&south));
    let mut rings = Vec::with_capacity(PALM_RINGS);
    for i in 0..PALM_RINGS {
        let psi = std::f64::consts::PI * (i + 1) as f64 / (PALM_RINGS + 1) as f64;
        let first = mb.vertices.len();
        for k in 0..PALM_SEGMENTS {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / PALM_SEGMENTS as f64;
            // e1 = z, e2 = x so that e1 x e2 = +y.
            let p = centre
                + Vector3::new(semi.x * psi.sin() * phi.sin(), -semi.y * psi.cos(), semi.z * psi.sin() * phi.cos());
            mb.push(p, wrist_only, palm_shape(&p));
        }
        rings.push(first);
    }
    let north = centre + Vector3::y() * semi.y;
    let end_pole = mb.push(north, wrist_only, palm_shape(&north));
    mb.stitch(start_pole, &rings, PALM_SEGMENTS, end_pole);

    debug_assert_eq!(mb.vertices.len(), DEFAULT_VERTEX_COUNT);
    HandMesh { vertices: mb.vertices, triangles: mb.triangles, skinning_weights: mb.weights, shape_basis: mb.shape }
}

fn mirror_block(b: &ShapeBlock) -> ShapeBlock {
    let mut m = *b;
    for c in 0..m.ncols() {
        m[(0, c)] = -m[(0, c)];
    }
    m
}

fn mirror_x(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-v.x, v.y, v.z)
}

/// Deterministic built-in skeleton, 778-vertex capsule template and default
/// limits. The left hand is the right hand reflected across `x = 0`.
pub fn build_default_model(handedness: Handedness) -> (Skeleton, HandMesh, JointLimits) {
    let skeleton = right_skeleton();
    let mesh = right_mesh(&skeleton);
    let limits = default_limits();
    match handedness {
        Handedness::Right => (skeleton, mesh, limits),
        Handedness::Left => {
            let mut s = skeleton;
            for j in 0..NUM_JOINTS {
                s.rest_offsets[j] = mirror_x(&s.rest_offsets[j]);
                s.shape_basis[j] = mirror_block(&s.shape_basis[j]);
            }
            let m = HandMesh {
                vertices: mesh.vertices.iter().map(mirror_x).collect(),
                // Reflection flips orientation; swap two corners to keep normals outward.
                triangles: mesh.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect(),
                skinning_weights: mesh.skinning_weights,
                shape_basis: mesh.shape_basis.iter().map(mirror_block).collect(),
            };
            (s, m, limits)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn right_skeleton_is_a_rooted_tree() {
        let (s, _, _) = build_default_model(Handedness::Right);
        assert_eq!(s.parent[0], None);
        assert_eq!(s.parent.iter().filter(|p| p.is_some()).count(), 20);
        s.validate().unwrap();
        // Five fingertips carry no DoF.
        for tip in [4, 8, 12, 16, 20] {
            assert!(s.articulated[tip].is_none());
            assert_eq!(s.children(tip).count(), 0);
        }
    }

    #[test]
    fn left_mirrors_right() {
        let (r, rm, _) = build_default_model(Handedness::Right);
        let (l, lm, _) = build_default_model(Handedness::Left);
        for j in 0..NUM_JOINTS {
            assert!((l.rest_offsets[j].x + r.rest_offsets[j].x).abs() < 1e-12);
            assert!((l.rest_offsets[j].y - r.rest_offsets[j].y).abs() < 1e-12);
            assert!((l.rest_offsets[j].z - r.rest_offsets[j].z).abs() < 1e-12);
        }
        assert_eq!(rm.vertices.len(), lm.vertices.len());
    }

    #[test]
    fn template_contracts() {
        for hand in [Handedness::Left, Handedness::Right] {
            let (_, mesh, limits) = build_default_model(hand);
            assert_eq!(mesh.vertices.len(), DEFAULT_VERTEX_COUNT);
            mesh.validate().unwrap();
            limits.validate().unwrap();
            for row in &mesh.skinning_weights {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn capsule_normals_point_outward() {
        let (_, mesh, _) = build_default_model(Handedness::Right);
        let centroid = mesh.vertices.iter().sum::<Vector3<f64>>() / mesh.vertices.len() as f64;
        // Palm triangles are the last block; their normals point away from the palm centre.
        let palm_centre = Vector3::new(-0.003, 0.045, 0.0);
        let palm_tris = &mesh.triangles[mesh.triangles.len() - (PALM_RINGS - 1) * PALM_SEGMENTS * 2 - 2 * PALM_SEGMENTS..];
        let outward = palm_tris
            .iter()
            .filter(|t| {
                let [a, b, c] = t.map(|i| mesh.vertices[i]);
                let n = (b - a).cross(&(c - a));
                n.dot(&((a + b + c) / 3.0 - palm_centre)) > 0.0
            })
            .count();
        assert_eq!(outward, palm_tris.len());
        assert!(centroid.y > 0.0);
    }
}
