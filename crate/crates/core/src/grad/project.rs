use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use super::PointGrad;
use crate::render::project::{screen_geometry, ProjectedGaussian};
use crate::render::PixelSplatGrad;
use crate::scene::{Camera, GaussianPoint};
use crate::Result;

/// Pulls screen-space splat gradients back to the parameters of the 3D point
/// through the EWA projection and the covariance parameterization.
pub fn splat_to_point_grad(
    point: &GaussianPoint,
    camera: &Camera,
    splat: &ProjectedGaussian,
    g: &PixelSplatGrad,
) -> Result<PointGrad> {
    let act = point.activate()?;
    let geom = screen_geometry(camera, &point.position, &act.covariance);
    let q = splat.conic;
    let g_conic = Matrix2::new(g.conic[0], g.conic[1], g.conic[1], g.conic[2]);

    // Q = Σ'⁻¹  ⇒  ∂L/∂Σ' = -Q (∂L/∂Q) Q
    let g_cov2d = -(q * g_conic * q);
    // Σ' = J Σc Jᵀ + δI
    let j = geom.jacobian;
    let sc = geom.cov_cam;
    let g_j: Matrix2x3<f64> = g_cov2d * j * sc.transpose() + g_cov2d.transpose() * j * sc;
    let g_cov_cam: Matrix3<f64> = j.transpose() * g_cov2d * j;
    // Σc = W Σ Wᵀ
    let w = camera.rotation;
    let g_cov: Matrix3<f64> = w.transpose() * g_cov_cam * w;

    // Σ = M Mᵀ with M = R diag(s)
    let r = act.rotation;
    let s = act.scale;
    let m = r * Matrix3::from_diagonal(&s);
    let g_m = (g_cov + g_cov.transpose()) * m;
    let mut g_r = Matrix3::zeros();
    let mut g_scale = Vector3::zeros();
    for col in 0..3 {
        for row in 0..3 {
            g_r[(row, col)] = g_m[(row, col)] * s[col];
            g_scale[col] += g_m[(row, col)] * r[(row, col)];
        }
    }
    let g_log_scale = g_scale.component_mul(&s);
    // R(q ⊗ exp(δ)) = R Exp(δ); derivative at δ = 0 from A = Rᵀ ∂L/∂R
    let a = r.transpose() * g_r;
    let g_rot = Vector3::new(
        a[(2, 1)] - a[(1, 2)],
        a[(0, 2)] - a[(2, 0)],
        a[(1, 0)] - a[(0, 1)],
    );

    // camera-frame point t: mean2d = (fx x/z + cx, fy y/z + cy) and J(t)
    let t = geom.cam_point;
    let (fx, fy) = (camera.fx, camera.fy);
    let (x, y, z) = (t.x, t.y, t.z);
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let gu = g.mean2d.x;
    let gv = g.mean2d.y;
    let g_t = Vector3::new(
        gu * fx * iz + g_j[(0, 2)] * (-fx * iz2),
        gv * fy * iz + g_j[(1, 2)] * (-fy * iz2),
        -gu * fx * x * iz2 - gv * fy * y * iz2
            + g_j[(0, 0)] * (-fx * iz2)
            + g_j[(0, 2)] * (2.0 * fx * x * iz3)
            + g_j[(1, 1)] * (-fy * iz2)
            + g_j[(1, 2)] * (2.0 * fy * y * iz3),
    );
    let alpha = act.opacity;
    Ok(PointGrad {
        position: w.transpose() * g_t,
        log_scale: g_log_scale,
        rotation: g_rot,
        opacity_logit: g.opacity * alpha * (1.0 - alpha),
        color: g.color,
    })
}
