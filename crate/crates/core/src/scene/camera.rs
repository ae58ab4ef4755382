use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pinhole camera with an OpenCV-style frame: x right, y down, z forward.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub id: usize,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation: `p_cam = rotation * p_world + translation`.
    pub translation: Vector3<f64>,
}

/// On-disk form of a camera.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraRecord {
    id: usize,
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

impl Camera {
    /// Camera at `eye` looking at `target`. `up` is a world-space hint.
    pub fn look_at(
        id: usize,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        width: usize,
        height: usize,
        focal: f64,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Camera {
            id,
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            translation: -(rotation * eye),
        }
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Camera {
            id: self.id,
            message,
        };
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(fail(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(fail("zero-area image".into()));
        }
        let intrinsics = [self.cx, self.cy];
        let mut all = self
            .rotation
            .iter()
            .chain(self.translation.iter())
            .chain(intrinsics.iter());
        if all.any(|v| !v.is_finite()) {
            return Err(fail("non-finite pose or intrinsics".into()));
        }
        let ortho = (self.rotation * self.rotation.transpose() - Matrix3::identity())
            .abs()
            .max();
        if ortho > 1e-6 {
            return Err(fail(format!(
                "rotation is not orthonormal (error {ortho:.3e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > 1e-6 {
            return Err(fail(format!("rotation determinant {det} is not +1")));
        }
        Ok(())
    }

    fn to_record(&self) -> CameraRecord {
        let r = &self.rotation;
        CameraRecord {
            id: self.id,
            width: self.width,
            height: self.height,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            r: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            t: [self.translation.x, self.translation.y, self.translation.z],
        }
    }

    fn from_record(rec: CameraRecord) -> Result<Self> {
        let camera = Camera {
            id: rec.id,
            width: rec.width,
            height: rec.height,
            fx: rec.fx,
            fy: rec.fy,
            cx: rec.cx,
            cy: rec.cy,
            rotation: Matrix3::from_row_slice(&rec.r),
            translation: Vector3::from(rec.t),
        };
        camera.validate()?;
        Ok(camera)
    }
}

pub fn cameras_to_json(cameras: &[Camera]) -> Result<String> {
    let records: Vec<_> = cameras.iter().map(Camera::to_record).collect();
    Ok(serde_json::to_string_pretty(&records)?)
}

pub fn cameras_from_json(text: &str) -> Result<Vec<Camera>> {
    let records: Vec<CameraRecord> = serde_json::from_str(text)?;
    records.into_iter().map(Camera::from_record).collect()
}

pub fn save_cameras(cameras: &[Camera], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, cameras_to_json(cameras)?).map_err(|e| Error::io(path, e))
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    cameras_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ring_camera() -> Camera {
        Camera::look_at(
            3,
            Vector3::new(3.0, -1.0, 2.0),
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
            32,
            24,
            30.0,
        )
    }

    #[test]
    fn look_at_puts_target_on_optical_axis() {
        let cam = ring_camera();
        cam.validate().unwrap();
        let p = cam.world_to_camera(&Vector3::zeros());
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.z, 14f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(cam.center(), Vector3::new(3.0, -1.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let cams = vec![ring_camera()];
        let back = cameras_from_json(&cameras_to_json(&cams).unwrap()).unwrap();
        assert_eq!(back, cams);
    }

    #[test]
    fn rejects_improper_rotation() {
        let mut cam = ring_camera();
        cam.rotation = -cam.rotation;
        let err = cameras_from_json(&cameras_to_json(&[cam]).unwrap()).unwrap_err();
        assert!(err.to_string().contains("determinant"), "{err}");
    }

    #[test]
    fn rejects_non_positive_focal() {
        let mut cam = ring_camera();
        cam.fy = 0.0;
        assert!(cam.validate().is_err());
    }
}
