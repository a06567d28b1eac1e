//! Analog camera behavior: extrinsic transform, intrinsic projection, and
//! pixel quantization for single target vertices.
//!
//! The projection chain runs TCF -> CCF -> PCF. Pixel indices are 1-based
//! in this layer (`1 <= px <= W`); conversion to 0-based happens only at
//! image storage.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::target::{TargetModel, Vertex2};

/// Pinhole intrinsics with a square pixel pitch and the principal point
/// fixed at the image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length in pixels.
    pub f: f64,
    /// Image width in pixels.
    pub width: u32,
    /// Image height in pixels.
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(f: f64, width: u32, height: u32) -> Result<Self> {
        if !(f > 0.0) || width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "intrinsics need f > 0 and nonzero size, got f={f}, {width}x{height}"
            )));
        }
        Ok(Self { f, width, height })
    }

    /// Converts a physical focal length and pixel pitch into pixel units
    /// (8 mm with 15 um pixels gives f = 533.33 px).
    pub fn from_physical(focal_mm: f64, pixel_pitch_um: f64, width: u32, height: u32) -> Result<Self> {
        if !(focal_mm > 0.0) || !(pixel_pitch_um > 0.0) {
            return Err(Error::Config("focal length and pixel pitch must be positive".into()));
        }
        Self::new(focal_mm * 1000.0 / pixel_pitch_um, width, height)
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// 6-DoF camera pose relative to the target frame. Angles are radians and
/// are not normalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { x, y, z, roll, pitch, yaw }
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.x, self.y, self.z, self.roll, self.pitch, self.yaw]
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// Componentwise axis-aligned box in pose space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseBox {
    pub lower: Pose,
    pub upper: Pose,
}

impl PoseBox {
    pub fn new(lower: Pose, upper: Pose) -> Result<Self> {
        let lo = lower.to_array();
        let hi = upper.to_array();
        for i in 0..6 {
            if !(lo[i] <= hi[i]) {
                return Err(Error::Config(format!(
                    "pose box dimension {i} has lower {} > upper {}",
                    lo[i], hi[i]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn widths(&self) -> [f64; 6] {
        let lo = self.lower.to_array();
        let hi = self.upper.to_array();
        std::array::from_fn(|i| hi[i] - lo[i])
    }

    pub fn midpoint(&self) -> Pose {
        let lo = self.lower.to_array();
        let hi = self.upper.to_array();
        Pose::from_array(std::array::from_fn(|i| 0.5 * (lo[i] + hi[i])))
    }

    pub fn contains(&self, q: &Pose) -> bool {
        let lo = self.lower.to_array();
        let hi = self.upper.to_array();
        let qa = q.to_array();
        (0..6).all(|i| lo[i] <= qa[i] && qa[i] <= hi[i])
    }

    pub fn clamp(&self, q: &Pose) -> Pose {
        let lo = self.lower.to_array();
        let hi = self.upper.to_array();
        let qa = q.to_array();
        Pose::from_array(std::array::from_fn(|i| qa[i].clamp(lo[i], hi[i])))
    }

    /// Dimensions with zero width contribute a single grid index.
    pub fn free_dims(&self) -> Vec<usize> {
        self.widths()
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Homogeneous image-plane coordinates of a projected vertex (CCF). A
/// non-positive `pz` means the vertex sits behind the camera plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousProjection {
    pub px: f64,
    pub py: f64,
    pub pz: f64,
}

impl HomogeneousProjection {
    /// Normalized real-valued image coordinates (pixel units).
    pub fn normalized(&self) -> (f64, f64) {
        (self.px / self.pz, self.py / self.pz)
    }
}

/// Rotation R = Rz(yaw) * Ry(pitch) * Rx(roll).
pub fn rotation_matrix(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Extrinsic transform: R(q) * (vx, vy, 0)^T + (qx, qy, qz)^T.
pub fn to_camera_frame(v: Vertex2, q: &Pose) -> Vector3<f64> {
    let r = rotation_matrix(q.roll, q.pitch, q.yaw);
    r * Vector3::new(v.x, v.y, 0.0) + q.translation()
}

/// Full analog stage: K * (R * v + T).
pub fn analog_project(v: Vertex2, q: &Pose, k: &CameraIntrinsics) -> HomogeneousProjection {
    let ccf = to_camera_frame(v, q);
    let (cx, cy) = k.principal_point();
    HomogeneousProjection {
        px: k.f * ccf.x + cx * ccf.z,
        py: k.f * ccf.y + cy * ccf.z,
        pz: ccf.z,
    }
}

/// Quantizes a projection to its integer pixel (floor of the normalized
/// coordinates). Fails when the point lies behind the camera.
pub fn to_pixel(h: &HomogeneousProjection) -> Result<(i64, i64)> {
    if !(h.pz > 0.0) {
        return Err(Error::InvisiblePoint { depth: h.pz });
    }
    let (u, v) = h.normalized();
    Ok((u.floor() as i64, v.floor() as i64))
}

/// True when every vertex of every polygon projects with positive depth to
/// a pixel inside the image, bounds inclusive (`1 <= px <= W`).
pub fn visibility_check(t: &TargetModel, q: &Pose, k: &CameraIntrinsics) -> bool {
    for poly in &t.polygons {
        for &v in poly.vertices() {
            let h = analog_project(v, q, k);
            let Ok((px, py)) = to_pixel(&h) else {
                return false;
            };
            if px < 1 || px > k.width as i64 || py < 1 || py > k.height as i64 {
                return false;
            }
        }
    }
    true
}
