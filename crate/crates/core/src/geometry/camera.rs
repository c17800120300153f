use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Minimum camera-frame depth accepted by [`project`].
pub const MIN_DEPTH: f64 = 1e-9;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Pinhole intrinsics in pixels. No distortion model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let ok = fx.is_finite()
            && fy.is_finite()
            && fx > 0.0
            && fy > 0.0
            && cx >= 0.0
            && cy >= 0.0
            && cx < f64::from(width)
            && cy < f64::from(height);
        if !ok {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "fx={fx} fy={fy} cx={cx} cy={cy} size={width}x{height}"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel to normalized image coordinates.
    pub fn normalize(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }
}

/// Rigid camera-from-world transform: `x_cam = rotation * x_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Extrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= ORTHONORMAL_TOL && (det - 1.0).abs() <= ORTHONORMAL_TOL) || !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidRotation { orthonormality: ortho, determinant: det });
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Camera looking from `eye` toward `target`, image y axis roughly along `-up`.
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let y = (-up + z * up.dot(&z)).normalize();
        let x = y.cross(&z);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        Self { rotation, translation }
    }

    /// `self` applied after `other` (world -> other -> self).
    pub fn compose(&self, other: &Extrinsics) -> Extrinsics {
        Extrinsics {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// One calibrated view. `weight` is the per-view balance factor of the image terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
    pub weight: f64,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, extrinsics: Extrinsics, weight: f64) -> Result<Self, GeometryError> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(GeometryError::InvalidWeight(weight));
        }
        Ok(Self { intrinsics, extrinsics, weight })
    }

    /// 3x4 projection matrix `K [R | t]`.
    pub fn projection_matrix(&self) -> nalgebra::Matrix3x4<f64> {
        let mut rt = nalgebra::Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.extrinsics.rotation);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.extrinsics.translation);
        self.intrinsics.matrix() * rt
    }

    /// Projection and its 2x3 Jacobian with respect to the world point.
    pub fn project_with_jacobian(&self, point: &Vector3<f64>) -> Result<(Vector2<f64>, Matrix2x3<f64>), GeometryError> {
        let p = self.extrinsics.to_camera(point);
        if p.z <= MIN_DEPTH {
            return Err(GeometryError::NonPositiveDepth(p.z));
        }
        let k = &self.intrinsics;
        let iz = 1.0 / p.z;
        let uv = Vector2::new(k.fx * p.x * iz + k.cx, k.fy * p.y * iz + k.cy);
        let d_cam = Matrix2x3::new(k.fx * iz, 0.0, -k.fx * p.x * iz * iz, 0.0, k.fy * iz, -k.fy * p.y * iz * iz);
        Ok((uv, d_cam * self.extrinsics.rotation))
    }
}

/// Pinhole projection `pi_c` of a world point to pixels.
///
/// The result may fall outside the image; visibility is the caller's call.
pub fn project(camera: &Camera, point: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
    let p = camera.extrinsics.to_camera(point);
    if p.z <= MIN_DEPTH {
        return Err(GeometryError::NonPositiveDepth(p.z));
    }
    let k = &camera.intrinsics;
    Ok(Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Inverse of [`project`] for a known camera-frame depth.
pub fn unproject(camera: &Camera, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
    let n = camera.intrinsics.normalize(pixel);
    let p_cam = Vector3::new(n.x * depth, n.y * depth, depth);
    camera.extrinsics.rotation.transpose() * (p_cam - camera.extrinsics.translation)
}

/// Ordered set of views; the index is the canonical view id.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cameras: Vec<Camera>,
}

impl CameraRig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self, GeometryError> {
        if cameras.is_empty() {
            return Err(GeometryError::EmptyRig);
        }
        Ok(Self { cameras })
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Camera> {
        self.cameras.get(index)
    }

    /// Copy of the rig with per-view weights replaced.
    pub fn with_weights(&self, weights: &[f64]) -> Result<Self, GeometryError> {
        if weights.len() != self.cameras.len() {
            return Err(GeometryError::WeightCount { expected: self.cameras.len(), got: weights.len() });
        }
        let cameras = self
            .cameras
            .iter()
            .zip(weights)
            .map(|(c, &w)| Camera::new(c.intrinsics, c.extrinsics, w))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { cameras })
    }
}

/// One entry of `cameras.json`. Rotation is row-major camera-from-world.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub weight: f64,
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let r = &c.extrinsics.rotation;
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i * 3 + j] = r[(i, j)];
            }
        }
        let t = &c.extrinsics.translation;
        Self {
            fx: c.intrinsics.fx,
            fy: c.intrinsics.fy,
            cx: c.intrinsics.cx,
            cy: c.intrinsics.cy,
            width: c.intrinsics.width,
            height: c.intrinsics.height,
            rotation,
            translation: [t.x, t.y, t.z],
            weight: c.weight,
        }
    }
}

impl TryFrom<&CameraRecord> for Camera {
    type Error = GeometryError;

    fn try_from(r: &CameraRecord) -> Result<Self, Self::Error> {
        let intrinsics = Intrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)?;
        let rotation = Matrix3::from_row_slice(&r.rotation);
        let extrinsics = Extrinsics::new(rotation, Vector3::from(r.translation))?;
        Camera::new(intrinsics, extrinsics, r.weight)
    }
}
