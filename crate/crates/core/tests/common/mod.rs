//! Brute-force reference implementations shared by the integration tests.
//!
//! Nothing here calls into the crate's render or metric code: each oracle is
//! written out directly from the model definitions.

#![allow(dead_code)]

use microsplat::{Camera, GaussianPoint, ImageBuffer, Scene};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;

pub fn oracle_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn quat_rotation(q: &[f64; 4]) -> [[f64; 3]; 3] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// One Gaussian as seen from a camera, expanded by hand.
struct Splat {
    depth: f64,
    index: usize,
    u: f64,
    v: f64,
    // inverse of the 2x2 screen covariance [[a, b], [b, c]]
    ia: f64,
    ib: f64,
    ic: f64,
    opacity: f64,
    color: [f64; 3],
}

fn splat(p: &GaussianPoint, index: usize, cam: &Camera) -> Option<Splat> {
    let r = cam.rotation;
    let t = cam.translation;
    let mut c = [0.0; 3];
    for i in 0..3 {
        c[i] = t[i] + (0..3).map(|j| r[(i, j)] * p.position[j]).sum::<f64>();
    }
    if c[2] <= 0.01 {
        return None;
    }
    let rq = quat_rotation(&p.rotation);
    let s: Vec<f64> = (0..3).map(|k| p.log_scale[k].exp()).collect();
    // world covariance Σ_ij = Σ_k R_ik s_k² R_jk
    let mut sigma = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            sigma[i][j] = (0..3).map(|k| rq[i][k] * s[k] * s[k] * rq[j][k]).sum();
        }
    }
    // T = J W, J the pinhole Jacobian at c
    let (x, y, z) = (c[0], c[1], c[2]);
    let jac = [
        [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
        [0.0, cam.fy / z, -cam.fy * y / (z * z)],
    ];
    let mut tm = [[0.0; 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            tm[i][j] = (0..3).map(|k| jac[i][k] * r[(k, j)]).sum();
        }
    }
    let mut cov = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    acc += tm[i][k] * sigma[k][l] * tm[j][l];
                }
            }
            cov[i][j] = acc;
        }
    }
    let a = cov[0][0] + 0.3;
    let b = 0.5 * (cov[0][1] + cov[1][0]);
    let cc = cov[1][1] + 0.3;
    let det = a * cc - b * b;
    if det <= 0.0 {
        return None;
    }
    Some(Splat {
        depth: z,
        index,
        u: cam.fx * x / z + cam.cx,
        v: cam.fy * y / z + cam.cy,
        ia: cc / det,
        ib: -b / det,
        ic: a / det,
        opacity: oracle_sigmoid(p.opacity_logit),
        color: [p.color.x, p.color.y, p.color.z],
    })
}

/// Per-pixel front-to-back compositing over every point, with no tiling or culling
/// beyond the near plane and the contribution floor.
pub fn oracle_render(scene: &Scene, cam: &Camera) -> Vec<f64> {
    let mut splats: Vec<Splat> = scene
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| splat(p, i, cam))
        .collect();
    splats.sort_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .unwrap()
            .then(a.index.cmp(&b.index))
    });
    let mut out = Vec::with_capacity(cam.width * cam.height * 3);
    for py in 0..cam.height {
        for px in 0..cam.width {
            let (qx, qy) = (px as f64 + 0.5, py as f64 + 0.5);
            let mut color = [0.0; 3];
            let mut trans = 1.0;
            for s in &splats {
                let (dx, dy) = (qx - s.u, qy - s.v);
                let e = -0.5 * (s.ia * dx * dx + 2.0 * s.ib * dx * dy + s.ic * dy * dy);
                let alpha = s.opacity * e.exp();
                if alpha < 1.0 / 255.0 {
                    continue;
                }
                let alpha = alpha.min(0.999);
                for k in 0..3 {
                    color[k] += s.color[k] * alpha * trans;
                }
                trans *= 1.0 - alpha;
            }
            for k in 0..3 {
                out.push(color[k] + scene.background[k] * trans);
            }
        }
    }
    out
}

fn random_quat<R: Rng>(rng: &mut R) -> [f64; 4] {
    loop {
        let q = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n2: f64 = q.iter().map(|c| c * c).sum();
        if n2 > 0.05 && n2 <= 1.0 {
            return q;
        }
    }
}

/// A camera at a random pose looking roughly at the origin from distance ~4.
pub fn random_camera<R: Rng>(rng: &mut R, size: usize) -> Camera {
    let q = random_quat(rng);
    let r = quat_rotation(&q);
    let rotation = Matrix3::from_fn(|i, j| r[i][j]);
    let f = size as f64 * rng.gen_range(0.8..1.6);
    Camera {
        id: 0,
        width: size,
        height: size,
        fx: f,
        fy: f * rng.gen_range(0.9..1.1),
        cx: size as f64 / 2.0 + rng.gen_range(-1.0..1.0),
        cy: size as f64 / 2.0 + rng.gen_range(-1.0..1.0),
        rotation,
        translation: Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), 4.0),
    }
}

/// Up to `max_points` random Gaussians around the origin. Some land behind the
/// camera, some are nearly transparent and some are opaque enough to clip.
pub fn random_scene<R: Rng>(rng: &mut R, max_points: usize) -> Scene {
    let n = rng.gen_range(1..=max_points);
    let points = (0..n)
        .map(|_| {
            let position = Vector3::new(
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5) * 3.0,
            );
            let log_scale = Vector3::from_fn(|_, _| rng.gen_range(-4.0..-0.5));
            let opacity_logit = match rng.gen_range(0..4) {
                0 => rng.gen_range(-9.0..-4.0),
                1 => rng.gen_range(6.0..12.0),
                _ => rng.gen_range(-3.0..3.0),
            };
            let color = Vector3::from_fn(|_, _| rng.gen_range(0.0..1.0));
            let mut p =
                GaussianPoint::new(position, Vector3::repeat(1.0), random_quat(rng), 0.5, color);
            p.log_scale = log_scale;
            p.opacity_logit = opacity_logit;
            p
        })
        .collect();
    let bg = Vector3::from_fn(|_, _| rng.gen_range(0.0..1.0));
    Scene::new(points, bg)
}

pub fn random_image<R: Rng>(rng: &mut R, w: usize, h: usize) -> ImageBuffer {
    let data = (0..w * h * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
    ImageBuffer::from_data(w, h, data).unwrap()
}

/// `b = a + noise`, clamped to [0, 1], so the pair is correlated.
pub fn perturbed<R: Rng>(rng: &mut R, a: &ImageBuffer, sigma: f64) -> ImageBuffer {
    let data = a
        .data
        .iter()
        .map(|v| (v + rng.gen_range(-sigma..sigma)).clamp(0.0, 1.0))
        .collect();
    ImageBuffer::from_data(a.width, a.height, data).unwrap()
}

/// `10·log10(1/MSE)` by direct summation, capped at 100.
pub fn oracle_psnr(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.data.len() {
        let d = a.data[i] - b.data[i];
        sum += d * d;
    }
    let mse = sum / a.data.len() as f64;
    if mse < 1e-10 {
        return 100.0;
    }
    (-10.0 * mse.log10()).min(100.0)
}

/// Mean SSIM on channel-mean luminance, evaluated with the full 2-D 11×11
/// Gaussian window at every pixel and zeros outside the image.
pub fn oracle_ssim(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let (w, h) = (a.width as isize, a.height as isize);
    let lum = |img: &ImageBuffer, x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            return 0.0;
        }
        let i = 3 * (y * w + x) as usize;
        (img.data[i] + img.data[i + 1] + img.data[i + 2]) / 3.0
    };
    let mut weights = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, wt) in row.iter_mut().enumerate() {
            let (dx, dy) = (i as f64 - 5.0, j as f64 - 5.0);
            *wt = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            total += *wt;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, row) in weights.iter().enumerate() {
                for (j, wt) in row.iter().enumerate() {
                    let g = wt / total;
                    let (sx, sy) = (x + i as isize - 5, y + j as isize - 5);
                    let (va, vb) = (lum(a, sx, sy), lum(b, sx, sy));
                    mx += g * va;
                    my += g * vb;
                    xx += g * va * va;
                    yy += g * vb * vb;
                    xy += g * va * vb;
                }
            }
            let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    acc / (w * h) as f64
}
