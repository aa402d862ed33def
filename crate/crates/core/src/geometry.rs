//! Reference frames, rigid transforms, the pinhole camera and the calibration set.
//!
//! Conventions used across the crate: world-scale quantities are meters, time is
//! microseconds, and pixel coordinates have their origin at the top-left of the
//! image with integer values at pixel centers.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (z = {0})")]
    PointBehindCamera(f64),
    #[error("pixel ({0}, {1}) is outside the image")]
    OutOfImageBounds(f64, f64),
    #[error("rotation is not orthonormal with det +1")]
    NotOrthonormal,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("no transform registered from {from:?} to {to:?}")]
    UnregisteredFrame { from: FrameId, to: FrameId },
    #[error("calibration file: {0}")]
    Io(String),
}

/// Microseconds since the start of a stream.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn from_secs(s: f64) -> Self {
        Timestamp((s * 1e6).round().max(0.0) as u64)
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 * 1e-6
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    /// Signed difference `self - earlier` in seconds.
    pub fn secs_since(self, earlier: Timestamp) -> f64 {
        (self.0 as f64 - earlier.0 as f64) * 1e-6
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// The four frames of the system. `E` (event camera) and `R` (radar) are rigidly
/// mounted; `O` (a tracked object) and `D` (the landing drone) move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FrameId {
    E,
    R,
    O,
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ORTHO_TOL: f64 = 1e-9;

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let gram = rotation.transpose() * rotation;
        if (gram - Matrix3::identity()).abs().max() > ORTHO_TOL
            || (rotation.determinant() - 1.0).abs() > ORTHO_TOL
        {
            return Err(GeometryError::NotOrthonormal);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation about the z axis by `angle` radians followed by `translation`.
    pub fn from_yaw(angle: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `rotation * p + translation`.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

pub fn transform_point(t: &RigidTransform, p: &Vector3<f64>) -> Vector3<f64> {
    t.transform_point(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(
                "focal lengths must be positive".into(),
            ));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= -0.5
            && px.y >= -0.5
            && px.x < self.width as f64 - 0.5
            && px.y < self.height as f64 - 0.5
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        project(self, p)
    }

    /// Jacobian of [`project`] with respect to the 3D point.
    pub fn project_jacobian(&self, p: &Vector3<f64>) -> nalgebra::Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        nalgebra::Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz2,
        )
    }
}

impl Default for CameraIntrinsics {
    /// A 346×260 sensor with a ~55° horizontal field of view.
    fn default() -> Self {
        Self {
            fx: 330.0,
            fy: 330.0,
            cx: 173.0,
            cy: 130.0,
            width: 346,
            height: 260,
        }
    }
}

/// Pinhole projection of a camera-frame point onto the image plane.
pub fn project(intr: &CameraIntrinsics, p: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
    if p.z <= 0.0 {
        return Err(GeometryError::PointBehindCamera(p.z));
    }
    Ok(Vector2::new(
        intr.fx * p.x / p.z + intr.cx,
        intr.fy * p.y / p.z + intr.cy,
    ))
}

/// Unit viewing ray through pixel `px` in the camera frame.
pub fn back_project_ray(
    intr: &CameraIntrinsics,
    px: &Vector2<f64>,
) -> Result<Vector3<f64>, GeometryError> {
    if !intr.contains(px) {
        return Err(GeometryError::OutOfImageBounds(px.x, px.y));
    }
    Ok(Vector3::new((px.x - intr.cx) / intr.fx, (px.y - intr.cy) / intr.fy, 1.0).normalize())
}

/// Lens undistortion applied to pixel measurements before back-projection.
pub trait Undistort: Send + Sync {
    fn undistort(&self, px: Vector2<f64>) -> Vector2<f64>;
}

/// Pass-through undistortion; the simulator renders distortion-free events.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoDistortion;

impl Undistort for NoDistortion {
    fn undistort(&self, px: Vector2<f64>) -> Vector2<f64> {
        px
    }
}

/// Static calibration: radar→camera extrinsics, camera intrinsics and the radar
/// antenna spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    transforms: BTreeMap<(FrameId, FrameId), RigidTransform>,
    pub intrinsics: CameraIntrinsics,
    pub antenna_spacing: f64,
}

impl CalibrationSet {
    pub fn new(t_er: RigidTransform, intrinsics: CameraIntrinsics, antenna_spacing: f64) -> Self {
        let mut transforms = BTreeMap::new();
        transforms.insert((FrameId::R, FrameId::E), t_er);
        Self {
            transforms,
            intrinsics,
            antenna_spacing,
        }
    }

    /// Transform mapping points expressed in `from` into `to`.
    pub fn transform(&self, from: FrameId, to: FrameId) -> Result<RigidTransform, GeometryError> {
        if from == to && matches!(from, FrameId::E | FrameId::R) {
            return Ok(RigidTransform::identity());
        }
        if let Some(t) = self.transforms.get(&(from, to)) {
            return Ok(*t);
        }
        if let Some(t) = self.transforms.get(&(to, from)) {
            return Ok(t.inverse());
        }
        Err(GeometryError::UnregisteredFrame { from, to })
    }

    /// Radar → event-camera extrinsics (`t_ER`).
    pub fn t_er(&self) -> RigidTransform {
        self.transforms[&(FrameId::R, FrameId::E)]
    }

    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, GeometryError> {
        let file: CalibrationFile =
            toml::from_str(text).map_err(|e| GeometryError::Io(e.to_string()))?;
        file.try_into()
    }

    pub fn to_toml(&self) -> String {
        let file = CalibrationFile::from(self);
        toml::to_string_pretty(&file).expect("calibration serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), GeometryError> {
        std::fs::write(path, self.to_toml())
            .map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))
    }

    /// Largest elementwise difference between two calibrations.
    pub fn max_difference(&self, other: &CalibrationSet) -> f64 {
        let a = self.t_er();
        let b = other.t_er();
        let mut d = (a.rotation - b.rotation).abs().max();
        d = d.max((a.translation - b.translation).abs().max());
        let (i, j) = (&self.intrinsics, &other.intrinsics);
        for (x, y) in [(i.fx, j.fx), (i.fy, j.fy), (i.cx, j.cx), (i.cy, j.cy)] {
            d = d.max((x - y).abs());
        }
        if i.width != j.width || i.height != j.height {
            d = f64::INFINITY;
        }
        d.max((self.antenna_spacing - other.antenna_spacing).abs())
    }
}

impl Default for CalibrationSet {
    fn default() -> Self {
        Self::new(
            RigidTransform::from_translation(Vector3::new(0.05, 0.0, 0.0)),
            CameraIntrinsics::default(),
            crate::radar::ChirpConfig::default().wavelength() / 2.0,
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CalibrationFile {
    extrinsics: ExtrinsicsSection,
    intrinsics: CameraIntrinsics,
    radar: RadarSection,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExtrinsicsSection {
    /// Row-major radar→camera rotation.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct RadarSection {
    antenna_spacing_m: f64,
}

impl From<&CalibrationSet> for CalibrationFile {
    fn from(c: &CalibrationSet) -> Self {
        let t = c.t_er();
        let r = t.rotation();
        let rotation = [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ];
        CalibrationFile {
            extrinsics: ExtrinsicsSection {
                rotation,
                translation: [t.translation.x, t.translation.y, t.translation.z],
            },
            intrinsics: c.intrinsics,
            radar: RadarSection {
                antenna_spacing_m: c.antenna_spacing,
            },
        }
    }
}

impl TryFrom<CalibrationFile> for CalibrationSet {
    type Error = GeometryError;

    fn try_from(f: CalibrationFile) -> Result<Self, GeometryError> {
        let r = f.extrinsics.rotation;
        let rotation = Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        let t = RigidTransform::new(rotation, Vector3::from(f.extrinsics.translation))?;
        f.intrinsics.validate()?;
        Ok(CalibrationSet::new(t, f.intrinsics, f.radar.antenna_spacing_m))
    }
}
