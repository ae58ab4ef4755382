//! Per-pixel rasterizer over depth-sorted projected Gaussians.
//!
//! Each pixel keeps the list of splats whose support rectangle covers it, in
//! front-to-back order. Pixels are independent, so rows are shaded in
//! parallel; every reduction afterwards runs in a fixed order.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use super::project::{project_gaussian, ProjectedGaussian, MAX_ALPHA, MIN_ALPHA};
use crate::scene::{Camera, ImageBuffer, Scene};
use crate::{Error, Result};

/// Everything the backward pass needs from a forward render.
#[derive(Debug, Clone)]
pub struct RasterFrame {
    pub width: usize,
    pub height: usize,
    pub background: Vector3<f64>,
    /// Visible splats sorted by (depth, source index).
    pub splats: Vec<ProjectedGaussian>,
    /// CSR row pointers: pixel `p` owns `entries[offsets[p]..offsets[p+1]]`.
    offsets: Vec<usize>,
    entries: Vec<u32>,
}

/// Gradient of a loss with respect to one projected splat's screen-space
/// quantities, accumulated over all pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PixelSplatGrad {
    pub mean2d: Vector2<f64>,
    /// Full-matrix gradient of the conic: `[∂Q00, ∂Q01 (= ∂Q10), ∂Q11]`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: Vector3<f64>,
}

/// One evaluated splat at one pixel.
#[derive(Clone, Copy)]
struct Hit {
    splat: usize,
    rho: f64,
    gauss: f64,
    clipped: bool,
    d: Vector2<f64>,
}

#[inline]
fn evaluate(sp: &ProjectedGaussian, splat: usize, px: usize, py: usize) -> Option<Hit> {
    let (power, d) = sp.power_at(px, py);
    if power < sp.power_floor {
        return None;
    }
    let gauss = power.exp();
    let alpha = sp.opacity * gauss;
    if alpha < MIN_ALPHA {
        return None;
    }
    Some(Hit {
        splat,
        rho: alpha.min(MAX_ALPHA),
        gauss,
        clipped: alpha > MAX_ALPHA,
        d,
    })
}

impl RasterFrame {
    pub fn pixel_entries(&self, pixel: usize) -> &[u32] {
        &self.entries[self.offsets[pixel]..self.offsets[pixel + 1]]
    }

    fn hits(&self, px: usize, py: usize, out: &mut Vec<Hit>) {
        out.clear();
        for &e in self.pixel_entries(py * self.width + px) {
            let e = e as usize;
            if let Some(h) = evaluate(&self.splats[e], e, px, py) {
                out.push(h);
            }
        }
    }

    fn shade(&self, px: usize, py: usize, scratch: &mut Vec<Hit>) -> Vector3<f64> {
        self.hits(px, py, scratch);
        let mut color = Vector3::zeros();
        let mut t = 1.0;
        for h in scratch.iter() {
            color += self.splats[h.splat].color * (h.rho * t);
            t *= 1.0 - h.rho;
        }
        color + self.background * t
    }

    /// Hash of every discrete decision taken by the forward pass: depth order,
    /// which (pixel, splat) pairs pass the contribution floor and which are
    /// clipped. Two renders with equal signatures are on the same smooth branch.
    pub fn signature(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        for s in &self.splats {
            s.source_index.hash(&mut hasher);
        }
        let mut hits = Vec::new();
        for py in 0..self.height {
            for px in 0..self.width {
                self.hits(px, py, &mut hits);
                hits.len().hash(&mut hasher);
                for h in &hits {
                    (h.splat, h.clipped).hash(&mut hasher);
                }
            }
        }
        hasher.finish()
    }

    /// Number of (pixel, splat) pairs considered.
    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    /// Backpropagates `∂L/∂image` (row-major RGB) to every sorted splat.
    pub fn backward(&self, grad_image: &[f64]) -> Vec<PixelSplatGrad> {
        assert_eq!(grad_image.len(), self.width * self.height * 3);
        let rows: Vec<Vec<(u32, PixelSplatGrad)>> = (0..self.height)
            .into_par_iter()
            .map(|py| {
                let mut out = Vec::new();
                let mut hits = Vec::new();
                let mut trans = Vec::new();
                for px in 0..self.width {
                    let p = py * self.width + px;
                    let g = Vector3::new(
                        grad_image[3 * p],
                        grad_image[3 * p + 1],
                        grad_image[3 * p + 2],
                    );
                    if g == Vector3::zeros() {
                        continue;
                    }
                    self.pixel_backward(px, py, &g, &mut hits, &mut trans, &mut out);
                }
                out
            })
            .collect();

        let mut grads = vec![PixelSplatGrad::default(); self.splats.len()];
        for row in rows {
            for (splat, g) in row {
                let acc = &mut grads[splat as usize];
                acc.mean2d += g.mean2d;
                for k in 0..3 {
                    acc.conic[k] += g.conic[k];
                }
                acc.opacity += g.opacity;
                acc.color += g.color;
            }
        }
        grads
    }

    fn pixel_backward(
        &self,
        px: usize,
        py: usize,
        grad_color: &Vector3<f64>,
        hits: &mut Vec<Hit>,
        trans: &mut Vec<f64>,
        out: &mut Vec<(u32, PixelSplatGrad)>,
    ) {
        self.hits(px, py, hits);
        trans.clear();
        let mut t = 1.0;
        for h in hits.iter() {
            trans.push(t);
            t *= 1.0 - h.rho;
        }
        // suffix = Σ_{m>k} c_m ρ_m T_m + bg·T_final
        let mut suffix = self.background * t;
        for (h, &t_k) in hits.iter().zip(trans.iter()).rev() {
            let sp = &self.splats[h.splat];
            let d_rho = grad_color.dot(&(sp.color * t_k - suffix / (1.0 - h.rho)));
            let mut g = PixelSplatGrad {
                color: grad_color * (h.rho * t_k),
                ..Default::default()
            };
            suffix += sp.color * (h.rho * t_k);
            if !h.clipped {
                g.opacity = d_rho * h.gauss;
                let d_power = d_rho * sp.opacity * h.gauss;
                let q = &sp.conic;
                let qd = Vector2::new(
                    q[(0, 0)] * h.d.x + q[(0, 1)] * h.d.y,
                    q[(1, 0)] * h.d.x + q[(1, 1)] * h.d.y,
                );
                // power = -½ dᵀQd, d = p - mean  ⇒  ∂power/∂mean = Q d
                g.mean2d = qd * d_power;
                g.conic = [
                    -0.5 * d_power * h.d.x * h.d.x,
                    -0.5 * d_power * h.d.x * h.d.y,
                    -0.5 * d_power * h.d.y * h.d.y,
                ];
            }
            out.push((h.splat as u32, g));
        }
    }
}

/// Projects, depth-sorts and bins every point of `scene` for `camera`.
pub fn prepare_frame(scene: &Scene, camera: &Camera) -> Result<RasterFrame> {
    if camera.width == 0 || camera.height == 0 {
        return Err(Error::Image("cannot render a zero-area image".into()));
    }
    let mut splats = Vec::new();
    for (i, p) in scene.points.iter().enumerate() {
        if let Some(s) = project_gaussian(p, i, camera)? {
            splats.push(s);
        }
    }
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.source_index.cmp(&b.source_index))
    });

    let npix = camera.width * camera.height;
    let mut counts = vec![0usize; npix + 1];
    for s in &splats {
        let b = s.bounds;
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                counts[y * camera.width + x + 1] += 1;
            }
        }
    }
    for i in 0..npix {
        counts[i + 1] += counts[i];
    }
    let offsets = counts;
    let mut cursor = offsets.clone();
    let mut entries = vec![0u32; offsets[npix]];
    for (si, s) in splats.iter().enumerate() {
        let b = s.bounds;
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                let p = y * camera.width + x;
                entries[cursor[p]] = si as u32;
                cursor[p] += 1;
            }
        }
    }
    Ok(RasterFrame {
        width: camera.width,
        height: camera.height,
        background: scene.background,
        splats,
        offsets,
        entries,
    })
}

/// Renders and keeps the frame for a later backward pass.
pub fn rasterize(scene: &Scene, camera: &Camera) -> Result<(ImageBuffer, RasterFrame)> {
    let frame = prepare_frame(scene, camera)?;
    let mut image = ImageBuffer::new(frame.width, frame.height);
    let width = frame.width;
    image
        .data
        .par_chunks_mut(3 * width)
        .enumerate()
        .for_each(|(py, row)| {
            let mut scratch = Vec::new();
            for px in 0..width {
                let c = frame.shade(px, py, &mut scratch);
                row[3 * px..3 * px + 3].copy_from_slice(c.as_slice());
            }
        });
    Ok((image, frame))
}

pub fn render_image(scene: &Scene, camera: &Camera) -> Result<ImageBuffer> {
    rasterize(scene, camera).map(|(img, _)| img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianPoint;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix3;

    fn camera(size: usize) -> Camera {
        Camera {
            id: 0,
            width: size,
            height: size,
            fx: size as f64,
            fy: size as f64,
            cx: size as f64 / 2.0,
            cy: size as f64 / 2.0,
            rotation: Matrix3::identity(),
            translation: Vector3::new(0.0, 0.0, 3.0),
        }
    }

    #[test]
    fn empty_scene_is_uniform_background() {
        let bg = Vector3::new(0.1, 0.2, 0.3);
        let img = render_image(&Scene::empty(bg), &camera(8)).unwrap();
        assert_eq!(img, ImageBuffer::filled(8, 8, bg));
    }

    #[test]
    fn zero_area_is_an_error() {
        let mut cam = camera(8);
        cam.height = 0;
        assert!(render_image(&Scene::empty(Vector3::zeros()), &cam).is_err());
    }

    #[test]
    fn opaque_centered_gaussian_shows_its_color() {
        let cam = camera(16);
        // world (x, y) maps to pixel center (8.5, 8.5) at depth 3
        let pos = Vector3::new(0.5 * 3.0 / 16.0, 0.5 * 3.0 / 16.0, 0.0);
        let color = Vector3::new(0.9, 0.1, 0.4);
        let p = GaussianPoint::new(
            pos,
            Vector3::repeat(0.2),
            GaussianPoint::IDENTITY_ROTATION,
            1.0 - 1e-12,
            color,
        );
        let scene = Scene::new(vec![p], Vector3::zeros());
        let img = render_image(&scene, &cam).unwrap();
        assert_abs_diff_eq!(img.pixel(8, 8), color, epsilon = 1.0 / 255.0);
    }

    #[test]
    fn rendering_is_bit_deterministic() {
        let cam = camera(16);
        let pts = (0..20)
            .map(|i| {
                let f = i as f64 / 20.0;
                GaussianPoint::new(
                    Vector3::new(f - 0.5, 0.3 - f * 0.6, f),
                    Vector3::new(0.1, 0.05 + 0.1 * f, 0.08),
                    [1.0, f, 0.2, -f],
                    0.3 + 0.6 * f,
                    Vector3::new(f, 1.0 - f, 0.5),
                )
            })
            .collect();
        let scene = Scene::new(pts, Vector3::new(0.0, 0.0, 0.1));
        let a = render_image(&scene, &cam).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| render_image(&scene, &cam).unwrap());
        assert_eq!(a, b);
    }
}
