//! Synthetic capture sessions with known ground truth.

use nalgebra::{Vector2, Vector3};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{BinaryMask, FrameObservation, ViewObservation};
use crate::geometry::{so3, Camera, CameraRig, Extrinsics, Intrinsics, MIN_DEPTH};
use crate::hand_model::{
    HandMesh, HandModel, HandPose, HandShape, Handedness, JointSet, PosedHand, ARTICULATION_DIMS, NUM_JOINTS, SHAPE_DIMS,
};
use crate::par;
use crate::session::{Session, SessionFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub frames: usize,
    pub views: usize,
    pub seed: u64,
    pub joint_noise_px: f64,
    pub cloud_noise_m: f64,
    pub cloud_points: usize,
    /// Largest per-step change of each articulation angle, radians.
    pub motion_scale: f64,
    pub dropout_rate: f64,
    pub handedness: Handedness,
    pub image_size: u32,
    pub focal_px: f64,
    pub ring_radius_m: f64,
    /// Angular spread of the cameras along the ring, degrees.
    pub ring_arc_deg: f64,
    pub ring_elevation_deg: f64,
    /// Keep only cloud samples visible from this view (depth-buffer test).
    pub cloud_visible_view: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 20,
            views: 2,
            seed: 0,
            joint_noise_px: 0.0,
            cloud_noise_m: 0.0,
            cloud_points: 1500,
            motion_scale: 0.01,
            dropout_rate: 0.0,
            handedness: Handedness::Right,
            image_size: 256,
            focal_px: 250.0,
            ring_radius_m: 0.5,
            ring_arc_deg: 120.0,
            ring_elevation_deg: 15.0,
            cloud_visible_view: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.frames < 1 {
            return bad("frames must be at least 1");
        }
        if self.views < 1 {
            return bad("views must be at least 1");
        }
        if !(self.joint_noise_px >= 0.0 && self.joint_noise_px.is_finite()) {
            return bad("joint_noise_px must be finite and non-negative");
        }
        if !(self.cloud_noise_m >= 0.0 && self.cloud_noise_m.is_finite()) {
            return bad("cloud_noise_m must be finite and non-negative");
        }
        if !(self.motion_scale >= 0.0 && self.motion_scale.is_finite()) {
            return bad("motion_scale must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1]");
        }
        if self.image_size < 2 || !(self.focal_px > 0.0) || !(self.ring_radius_m > 0.0) {
            return bad("image_size, focal_px and ring_radius_m must be positive");
        }
        if let Some(v) = self.cloud_visible_view {
            if v >= self.views {
                return bad("cloud_visible_view out of range");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub shape: HandShape,
    pub pose: HandPose,
    pub joints: JointSet,
    pub vertices: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthGroundTruth {
    pub handedness: Handedness,
    pub frames: Vec<GroundTruthFrame>,
}

/// Cameras on a horizontal arc around the origin, slightly elevated, all
/// looking at the origin with `+y` up.
pub fn ring_rig(config: &SynthConfig) -> CameraRig {
    let size = config.image_size;
    let c = (f64::from(size) - 1.0) / 2.0;
    let intr = Intrinsics::new(config.focal_px, config.focal_px, c, c, size, size).expect("valid synthetic intrinsics");
    let elev = config.ring_elevation_deg.to_radians();
    let cams = (0..config.views)
        .map(|k| {
            let phi = if config.views == 1 {
                0.0
            } else {
                config.ring_arc_deg.to_radians() * (k as f64 / (config.views - 1) as f64 - 0.5)
            };
            let eye = Vector3::new(phi.sin() * elev.cos(), elev.sin(), phi.cos() * elev.cos()) * config.ring_radius_m;
            let ext = Extrinsics::look_at(&eye, &Vector3::zeros(), &Vector3::y());
            Camera::new(intr, ext, 1.0 / config.views as f64).expect("valid weight")
        })
        .collect();
    CameraRig::new(cams).expect("at least one view")
}

fn frame_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let span = hi - lo;
    let mut y = (x - lo).rem_euclid(2.0 * span);
    if y > span {
        y = 2.0 * span - y;
    }
    lo + y
}

fn trajectory(config: &SynthConfig, model: &HandModel) -> (HandShape, Vec<HandPose>) {
    let mut rng = frame_rng(config.seed, 0);
    let mut shape = HandShape::zero();
    for b in shape.beta.iter_mut().take(SHAPE_DIMS) {
        *b = rng.random_range(-1.0..=1.0);
    }
    let limits = &model.limits;
    let mut pose = HandPose::default();
    for i in 0..ARTICULATION_DIMS {
        pose.articulation[i] = rng.random_range(limits.lower[i]..=limits.upper[i]);
    }
    // Palm roughly toward the cameras, with a random tilt of up to 0.5 rad.
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let angle = rng.random_range(0.0..0.5);
    pose.global_rotation = if axis.norm() > 1e-9 { axis.normalize() * angle } else { Vector3::zeros() };
    let centroid = PosedHand::new(model, &shape, &pose).vertices.iter().sum::<Vector3<f64>>() / model.vertex_count() as f64;
    pose.global_translation = -centroid;

    let mut poses = Vec::with_capacity(config.frames);
    poses.push(pose);
    let s = config.motion_scale;
    for _ in 1..config.frames {
        let mut next = *poses.last().expect("nonempty");
        for i in 0..ARTICULATION_DIMS {
            let step = rng.random_range(-s..=s);
            next.articulation[i] = reflect(next.articulation[i] + step, limits.lower[i], limits.upper[i]);
        }
        let dr = Vector3::new(rng.random_range(-s..=s), rng.random_range(-s..=s), rng.random_range(-s..=s)) * 0.3;
        next.global_rotation = so3::log(&(so3::exp(&dr) * so3::exp(&next.global_rotation)));
        let dt = Vector3::new(rng.random_range(-s..=s), rng.random_range(-s..=s), rng.random_range(-s..=s)) * 0.05;
        next.global_translation += dt;
        poses.push(next);
    }
    (shape, poses)
}

/// Generates a deterministic session and its ground truth.
pub fn generate_session(config: &SynthConfig, model: &HandModel) -> Result<(Session, SynthGroundTruth), SynthError> {
    config.validate()?;
    if model.handedness != config.handedness {
        return Err(SynthError::InvalidConfig(format!(
            "model is a {} hand, config asks for {}",
            model.handedness, config.handedness
        )));
    }
    let rig = ring_rig(config);
    let (shape, poses) = trajectory(config, model);

    let frames: Vec<(SessionFrame, GroundTruthFrame)> = par::map_indices(config.frames, |t| {
        let pose = poses[t];
        let posed = PosedHand::new(model, &shape, &pose);
        let mesh = HandMesh {
            vertices: posed.vertices.clone(),
            triangles: model.template.triangles.clone(),
            skinning_weights: Vec::new(),
            shape_basis: Vec::new(),
        };
        let mut rng = frame_rng(config.seed, t as u64 + 1);
        let joint_noise = Normal::new(0.0, config.joint_noise_px).expect("validated sigma");
        let mut views = Vec::with_capacity(rig.len());
        let mut depth_buffers = Vec::with_capacity(rig.len());
        for cam in rig.cameras() {
            let mut joints2d = [Vector2::zeros(); NUM_JOINTS];
            let mut confidence = [0.0; NUM_JOINTS];
            for i in 0..NUM_JOINTS {
                let noise = Vector2::new(joint_noise.sample(&mut rng), joint_noise.sample(&mut rng));
                let dropped = rng.random::<f64>() < config.dropout_rate;
                if let (Ok(uv), false) = (crate::geometry::project(cam, &posed.joints.joints[i]), dropped) {
                    joints2d[i] = uv + noise;
                    confidence[i] = 1.0;
                }
            }
            let (mask, depth) = rasterize_with_depth(&mesh, cam);
            views.push(ViewObservation { joints2d, confidence, mask });
            depth_buffers.push(depth);
        }
        let cloud_seed = rng.random::<u64>();
        let mut cloud = sample_point_cloud(&mesh, config.cloud_points, config.cloud_noise_m, cloud_seed);
        if let Some(v) = config.cloud_visible_view {
            let cam = &rig.cameras()[v];
            cloud.retain(|p| visible(cam, &depth_buffers[v], p));
        }
        let obs = FrameObservation { views, cloud, joints3d_triangulated: None };
        let gt = GroundTruthFrame { shape, pose, joints: posed.joints, vertices: posed.vertices };
        (SessionFrame::single(config.handedness, obs), gt)
    });
    let (session_frames, gt_frames): (Vec<_>, Vec<_>) = frames.into_iter().unzip();
    Ok((Session { rig, frames: session_frames }, SynthGroundTruth { handedness: config.handedness, frames: gt_frames }))
}

fn visible(cam: &Camera, depth: &[f64], p: &Vector3<f64>) -> bool {
    let Ok(uv) = crate::geometry::project(cam, p) else {
        return false;
    };
    let (w, h) = (cam.intrinsics.width as usize, cam.intrinsics.height as usize);
    let (x, y) = (uv.x.round(), uv.y.round());
    if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
        return false;
    }
    let z = cam.extrinsics.to_camera(p).z;
    z <= depth[y as usize * w + x as usize] + 2e-3
}

/// Silhouette of a posed mesh: pixel `(x, y)` is set iff its center `(x, y)`
/// lies inside (boundary included) the projection of some triangle whose
/// three vertices all have positive depth, regardless of facing.
pub fn rasterize_mask(mesh: &HandMesh, camera: &Camera) -> BinaryMask {
    rasterize_with_depth(mesh, camera).0
}

fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Point-in-triangle test for pixel centers, boundary inclusive.
pub fn covers(tri: &[Vector2<f64>; 3], p: &Vector2<f64>) -> bool {
    let area = edge(&tri[0], &tri[1], &tri[2]);
    if area == 0.0 || !area.is_finite() {
        return false;
    }
    let s = area.signum();
    let e0 = edge(&tri[1], &tri[2], p) * s;
    let e1 = edge(&tri[2], &tri[0], p) * s;
    let e2 = edge(&tri[0], &tri[1], p) * s;
    e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0
}

/// Mask plus a z-buffer of the nearest camera depth per pixel.
fn rasterize_with_depth(mesh: &HandMesh, camera: &Camera) -> (BinaryMask, Vec<f64>) {
    let (w, h) = (camera.intrinsics.width as usize, camera.intrinsics.height as usize);
    let mut mask = BinaryMask::new(w, h);
    let mut depth = vec![f64::INFINITY; w * h];
    let cam_pts: Vec<Vector3<f64>> = mesh.vertices.iter().map(|v| camera.extrinsics.to_camera(v)).collect();
    let k = &camera.intrinsics;
    for t in &mesh.triangles {
        let pts = [cam_pts[t[0]], cam_pts[t[1]], cam_pts[t[2]]];
        if pts.iter().any(|p| p.z <= MIN_DEPTH) {
            continue;
        }
        let uv = pts.map(|p| Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy));
        let area = edge(&uv[0], &uv[1], &uv[2]);
        if area == 0.0 {
            continue;
        }
        let min_x = uv.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_x = uv.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).floor().min(w as f64 - 1.0);
        let min_y = uv.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let max_y = uv.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).floor().min(h as f64 - 1.0);
        if min_x > max_x || min_y > max_y {
            continue;
        }
        for y in min_y as usize..=max_y as usize {
            for x in min_x as usize..=max_x as usize {
                let p = Vector2::new(x as f64, y as f64);
                if !covers(&uv, &p) {
                    continue;
                }
                // Perspective-correct depth from screen-space barycentrics.
                let b0 = edge(&uv[1], &uv[2], &p) / area;
                let b1 = edge(&uv[2], &uv[0], &p) / area;
                let b2 = 1.0 - b0 - b1;
                let inv_z = b0 / pts[0].z + b1 / pts[1].z + b2 / pts[2].z;
                let z = 1.0 / inv_z;
                let idx = y * w + x;
                mask.data[idx] = true;
                if z < depth[idx] {
                    depth[idx] = z;
                }
            }
        }
    }
    (mask, depth)
}

/// Area-uniform surface samples with isotropic Gaussian noise.
pub fn sample_point_cloud(mesh: &HandMesh, n: usize, noise_m: f64, seed: u64) -> Vec<Vector3<f64>> {
    sample_point_cloud_with_sources(mesh, n, noise_m, seed).into_iter().map(|(p, _)| p).collect()
}

/// As [`sample_point_cloud`], also returning the source triangle of each sample.
pub fn sample_point_cloud_with_sources(mesh: &HandMesh, n: usize, noise_m: f64, seed: u64) -> Vec<(Vector3<f64>, usize)> {
    if n == 0 || mesh.triangles.is_empty() {
        return Vec::new();
    }
    let areas: Vec<f64> = mesh
        .triangles
        .iter()
        .map(|t| {
            let [a, b, c] = t.map(|i| mesh.vertices[i]);
            0.5 * (b - a).cross(&(c - a)).norm()
        })
        .collect();
    let Ok(pick) = WeightedIndex::new(&areas) else {
        return Vec::new();
    };
    let noise = Normal::new(0.0, noise_m.max(0.0)).expect("non-negative sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let ti = pick.sample(&mut rng);
            let [a, b, c] = mesh.triangles[ti].map(|i| mesh.vertices[i]);
            let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let p = a + (b - a) * u + (c - a) * v;
            let jitter = if noise_m > 0.0 {
                Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                Vector3::zeros()
            };
            (p + jitter, ti)
        })
        .collect()
}
