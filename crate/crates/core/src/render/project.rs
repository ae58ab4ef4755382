//! EWA projection of 3D Gaussians to screen-space ellipses.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::scene::{Camera, GaussianPoint};
use crate::Result;

/// Points at or in front of this camera-frame depth are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Added to the projected covariance diagonal, in px².
pub const COV2D_DILATION: f64 = 0.3;
/// Per-pixel contributions `ρ = α·G` below this are dropped.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Per-pixel contributions are clipped to this.
pub const MAX_ALPHA: f64 = 0.999;

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBounds {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl PixelBounds {
    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn area(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0) * (self.y1 - self.y0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub source_index: usize,
    pub opacity: f64,
    pub color: Vector3<f64>,
    /// Pixels that can receive `ρ ≥ MIN_ALPHA`.
    pub bounds: PixelBounds,
    /// Exponents below this cannot reach `MIN_ALPHA`, with a margin so the
    /// exact test still decides every borderline case.
    pub(crate) power_floor: f64,
}

/// Geometry of the first-order projection around the camera-frame mean.
#[derive(Debug, Clone, Copy)]
pub struct ScreenGeometry {
    pub cam_point: Vector3<f64>,
    pub mean2d: Vector2<f64>,
    /// Jacobian of the pinhole map at `cam_point`.
    pub jacobian: Matrix2x3<f64>,
    /// Covariance in the camera frame, `W Σ Wᵀ`.
    pub cov_cam: Matrix3<f64>,
    /// `J W Σ Wᵀ Jᵀ + dilation·I`.
    pub cov2d: Matrix2<f64>,
}

pub fn pinhole(camera: &Camera, p: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(
        camera.fx * p.x / p.z + camera.cx,
        camera.fy * p.y / p.z + camera.cy,
    )
}

pub fn pinhole_jacobian(camera: &Camera, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * p.x * iz * iz,
        0.0,
        camera.fy * iz,
        -camera.fy * p.y * iz * iz,
    )
}

pub fn screen_geometry(
    camera: &Camera,
    mean: &Vector3<f64>,
    covariance: &Matrix3<f64>,
) -> ScreenGeometry {
    let cam_point = camera.world_to_camera(mean);
    let jacobian = pinhole_jacobian(camera, &cam_point);
    let w = camera.rotation;
    let cov_cam = w * covariance * w.transpose();
    let cov2d = jacobian * cov_cam * jacobian.transpose() + Matrix2::identity() * COV2D_DILATION;
    ScreenGeometry {
        cam_point,
        mean2d: pinhole(camera, &cam_point),
        jacobian,
        cov_cam,
        cov2d,
    }
}

/// Pixel rectangle containing every pixel center where `opacity·G ≥ MIN_ALPHA`,
/// padded by one pixel.
fn support_bounds(
    camera: &Camera,
    mean2d: &Vector2<f64>,
    cov2d: &Matrix2<f64>,
    opacity: f64,
) -> PixelBounds {
    let empty = PixelBounds {
        x0: 0,
        x1: 0,
        y0: 0,
        y1: 0,
    };
    let level = 255.0 * opacity;
    if level < 1.0 {
        return empty;
    }
    // dᵀ Σ⁻¹ d ≤ r² is an ellipse with axis-aligned half extents r·sqrt(Σ_xx), r·sqrt(Σ_yy)
    let r2 = 2.0 * level.ln();
    let hx = (r2 * cov2d[(0, 0)]).sqrt();
    let hy = (r2 * cov2d[(1, 1)]).sqrt();
    let range = |center: f64, half: f64, size: usize| -> (usize, usize) {
        // pixel i has its center at i + 0.5
        let lo = (center - half - 0.5).ceil() - 1.0;
        let hi = (center + half - 0.5).floor() + 2.0;
        let lo = lo.max(0.0).min(size as f64) as usize;
        let hi = hi.max(0.0).min(size as f64) as usize;
        (lo, hi)
    };
    let (x0, x1) = range(mean2d.x, hx, camera.width);
    let (y0, y1) = range(mean2d.y, hy, camera.height);
    if x0 >= x1 || y0 >= y1 {
        return empty;
    }
    PixelBounds { x0, x1, y0, y1 }
}

/// Projects one point. Returns `None` when the point is behind the near plane
/// or cannot reach `MIN_ALPHA` at any pixel of the image.
pub fn project_gaussian(
    point: &GaussianPoint,
    source_index: usize,
    camera: &Camera,
) -> Result<Option<ProjectedGaussian>> {
    let act = point.activate()?;
    let cam_point = camera.world_to_camera(&point.position);
    if cam_point.z <= NEAR_PLANE {
        return Ok(None);
    }
    let geom = screen_geometry(camera, &point.position, &act.covariance);
    let bounds = support_bounds(camera, &geom.mean2d, &geom.cov2d, act.opacity);
    if bounds.is_empty() {
        return Ok(None);
    }
    let conic = match geom.cov2d.try_inverse() {
        Some(c) => c,
        None => return Ok(None),
    };
    Ok(Some(ProjectedGaussian {
        mean2d: geom.mean2d,
        cov2d: geom.cov2d,
        conic,
        depth: cam_point.z,
        source_index,
        opacity: act.opacity,
        color: point.color,
        bounds,
        power_floor: -(255.0 * act.opacity).ln() - 1e-9,
    }))
}

impl ProjectedGaussian {
    /// Quadratic form exponent `-½ dᵀ Σ⁻¹ d` at the pixel center `(px+½, py+½)`.
    #[inline]
    pub fn power_at(&self, px: usize, py: usize) -> (f64, Vector2<f64>) {
        let d = Vector2::new(
            px as f64 + 0.5 - self.mean2d.x,
            py as f64 + 0.5 - self.mean2d.y,
        );
        let q = &self.conic;
        let power =
            -0.5 * (q[(0, 0)] * d.x * d.x + 2.0 * q[(0, 1)] * d.x * d.y + q[(1, 1)] * d.y * d.y);
        (power, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn axis_camera(width: usize) -> Camera {
        Camera {
            id: 0,
            width,
            height: width,
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    #[test]
    fn on_axis_point_projects_to_principal_point() {
        let geom = screen_geometry(
            &axis_camera(4),
            &Vector3::new(0.0, 0.0, 2.0),
            &Matrix3::identity(),
        );
        assert_eq!(geom.mean2d, Vector2::zeros());
        assert_abs_diff_eq!(
            geom.cov2d,
            Matrix2::identity() * (0.25 + COV2D_DILATION),
            epsilon = 1e-15
        );
    }

    fn fd_jacobian(camera: &Camera, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let h = 1e-6;
        let mut j = Matrix2x3::zeros();
        for k in 0..3 {
            let mut a = *p;
            let mut b = *p;
            a[k] += h;
            b[k] -= h;
            let col = (pinhole(camera, &a) - pinhole(camera, &b)) / (2.0 * h);
            j.set_column(k, &col);
        }
        j
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let cam = Camera {
            fx: 40.0,
            fy: 35.0,
            cx: 16.0,
            cy: 12.0,
            ..axis_camera(32)
        };
        for p in [
            Vector3::new(0.0, 0.0, 2.0),
            Vector3::new(0.3, -0.7, 1.4),
            Vector3::new(-1.1, 0.2, 3.9),
        ] {
            let analytic = pinhole_jacobian(&cam, &p);
            assert_abs_diff_eq!(analytic, fd_jacobian(&cam, &p), epsilon = 1e-6);
        }
        // the on-axis example: J = diag(0.5, 0.5), so J Jᵀ = 0.25 I
        let j = fd_jacobian(&axis_camera(4), &Vector3::new(0.0, 0.0, 2.0));
        assert_abs_diff_eq!(
            j * j.transpose(),
            Matrix2::identity() * 0.25,
            epsilon = 1e-6
        );
    }

    #[test]
    fn behind_camera_is_culled() {
        let p = GaussianPoint::new(
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::repeat(1.0),
            GaussianPoint::IDENTITY_ROTATION,
            0.9,
            Vector3::zeros(),
        );
        assert!(project_gaussian(&p, 0, &axis_camera(4)).unwrap().is_none());
    }

    #[test]
    fn far_off_screen_is_culled() {
        let p = GaussianPoint::new(
            Vector3::new(50.0, 0.0, 1.0),
            Vector3::repeat(0.01),
            GaussianPoint::IDENTITY_ROTATION,
            0.9,
            Vector3::zeros(),
        );
        assert!(project_gaussian(&p, 0, &axis_camera(4)).unwrap().is_none());
    }

    #[test]
    fn transparent_point_is_culled() {
        let p = GaussianPoint::new(
            Vector3::new(0.0, 0.0, 2.0),
            Vector3::repeat(1.0),
            GaussianPoint::IDENTITY_ROTATION,
            0.5 / 255.0,
            Vector3::zeros(),
        );
        assert!(project_gaussian(&p, 0, &axis_camera(4)).unwrap().is_none());
    }

    #[test]
    fn bounds_contain_support() {
        let cam = Camera {
            fx: 20.0,
            fy: 20.0,
            cx: 16.0,
            cy: 16.0,
            ..axis_camera(32)
        };
        let p = GaussianPoint::new(
            Vector3::new(0.1, -0.05, 2.0),
            Vector3::new(0.2, 0.05, 0.1),
            [0.9, 0.2, 0.3, -0.1],
            0.8,
            Vector3::zeros(),
        );
        let g = project_gaussian(&p, 0, &cam).unwrap().unwrap();
        for py in 0..32 {
            for px in 0..32 {
                let (power, _) = g.power_at(px, py);
                if g.opacity * power.exp() >= MIN_ALPHA {
                    let b = g.bounds;
                    assert!(px >= b.x0 && px < b.x1 && py >= b.y0 && py < b.y1);
                }
            }
        }
    }
}
