//! Scene representation: Gaussian points, cameras and images.

mod camera;
pub mod dataset;
mod image;
pub mod ply;
mod point;
pub mod synthetic;

pub use camera::{load_cameras, save_cameras, Camera};
pub use dataset::{load_dataset, save_dataset, Dataset};
pub use image::ImageBuffer;
pub use ply::{load_scene, save_scene, save_scene_with, PlyEncoding};
pub use point::{sigmoid, Activated, GaussianPoint};
pub use synthetic::{generate_synthetic_scene, SceneKind, SyntheticScene, SyntheticSpec};

use nalgebra::{Matrix3, Vector3};

/// An ordered set of Gaussians plus the render background and the scene scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub points: Vec<GaussianPoint>,
    pub background: Vector3<f64>,
    /// Radius of the bounding sphere of the initial points, in world units.
    pub extent: f64,
}

impl Scene {
    /// Builds a scene and derives `extent` from the points.
    pub fn new(points: Vec<GaussianPoint>, background: Vector3<f64>) -> Self {
        let extent = bounding_radius(&points);
        Scene {
            points,
            background,
            extent,
        }
    }

    pub fn empty(background: Vector3<f64>) -> Self {
        Scene {
            points: Vec::new(),
            background,
            extent: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }

    /// Activated opacity of every point.
    pub fn opacities(&self) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| sigmoid(p.opacity_logit))
            .collect()
    }

    /// Mean activated covariance over all points.
    pub fn mean_covariance(&self) -> Result<Matrix3<f64>, crate::Error> {
        if self.points.is_empty() {
            return Err(crate::Error::EmptyScene);
        }
        let mut sum = Matrix3::zeros();
        for p in &self.points {
            sum += p.activate()?.covariance;
        }
        Ok(sum / self.points.len() as f64)
    }

    pub fn validate(&self) -> crate::Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            p.check_finite()
                .map_err(|msg| crate::Error::ParameterCorruption(format!("point {i}: {msg}")))?;
        }
        if !self.points.is_empty() && !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(crate::Error::ParameterCorruption(format!(
                "scene extent {} must be positive",
                self.extent
            )));
        }
        Ok(())
    }
}

/// Max distance from the centroid. Falls back to the largest 3-sigma radius
/// when every point coincides so the extent stays positive.
pub(crate) fn bounding_radius(points: &[GaussianPoint]) -> f64 {
    if points.is_empty() {
        return 1.0;
    }
    let n = points.len() as f64;
    let centroid = points.iter().map(|p| p.position).sum::<Vector3<f64>>() / n;
    let radius = points
        .iter()
        .map(|p| (p.position - centroid).norm())
        .fold(0.0, f64::max);
    if radius > 1e-12 {
        return radius;
    }
    points
        .iter()
        .map(|p| 3.0 * p.log_scale.max().exp())
        .fold(0.0, f64::max)
        .max(1e-12)
}
