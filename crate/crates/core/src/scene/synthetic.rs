//! Deterministic synthetic scenes standing in for real captures.
//!
//! A dense "teacher" scene is rendered from a ring of cameras to produce the
//! ground truth, and a random 10% subsample of the teacher serves as the
//! training initialization.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Camera, GaussianPoint, ImageBuffer, Scene};
use crate::render::render_image;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    TexturedSphere,
    BoxRoom,
    RandomBlobs,
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "textured-sphere" => Ok(SceneKind::TexturedSphere),
            "box-room" => Ok(SceneKind::BoxRoom),
            "random-blobs" => Ok(SceneKind::RandomBlobs),
            other => Err(Error::Config(format!(
                "unknown scene kind '{other}' (expected textured-sphere, box-room or random-blobs)"
            ))),
        }
    }
}

impl std::fmt::Display for SceneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SceneKind::TexturedSphere => "textured-sphere",
            SceneKind::BoxRoom => "box-room",
            SceneKind::RandomBlobs => "random-blobs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SceneKind,
    pub seed: u64,
    /// Number of teacher Gaussians.
    pub count: usize,
    pub views: usize,
    pub width: usize,
    pub height: usize,
}

impl SyntheticSpec {
    pub fn new(kind: SceneKind, seed: u64, count: usize) -> Self {
        SyntheticSpec {
            kind,
            seed,
            count,
            views: 8,
            width: 64,
            height: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub teacher: Scene,
    /// Sparse subsample of the teacher used to start training.
    pub init: Scene,
    pub cameras: Vec<Camera>,
    pub ground_truth: Vec<ImageBuffer>,
}

/// Rotation taking the local z axis to `normal`, as a wxyz quaternion.
fn align_z(normal: &Vector3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::rotation_between(&Vector3::z(), normal)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI));
    [q.w, q.i, q.j, q.k]
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let axis = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let angle = rng.gen_range(0.0..PI);
    let q = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
    [q.w, q.i, q.j, q.k]
}

fn palette(rng: &mut ChaCha8Rng) -> [Vector3<f64>; 2] {
    let a = Vector3::new(
        rng.gen_range(0.5..0.95),
        rng.gen_range(0.1..0.5),
        rng.gen_range(0.05..0.4),
    );
    let b = Vector3::new(
        rng.gen_range(0.05..0.3),
        rng.gen_range(0.3..0.7),
        rng.gen_range(0.5..0.95),
    );
    [a, b]
}

fn textured_sphere(count: usize, rng: &mut ChaCha8Rng) -> Vec<GaussianPoint> {
    let [ca, cb] = palette(rng);
    let spacing = (4.0 * PI / count as f64).sqrt();
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            // Fibonacci lattice
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - y * y).sqrt();
            let theta = golden * i as f64;
            let normal = Vector3::new(r * theta.cos(), y, r * theta.sin());
            let lat = y.asin();
            let lon = theta.rem_euclid(2.0 * PI);
            let checker =
                ((lat * 4.0 / PI).floor() as i64 + (lon * 4.0 / PI).floor() as i64).rem_euclid(2);
            let base = if checker == 0 { ca } else { cb };
            let shade = 0.85 + 0.15 * y;
            let tangent = spacing * rng.gen_range(0.45..0.6);
            GaussianPoint::new(
                normal,
                Vector3::new(tangent, tangent, 0.15 * tangent),
                align_z(&normal),
                rng.gen_range(0.8..0.95),
                (base * shade).map(|c| c.clamp(0.0, 1.0)),
            )
        })
        .collect()
}

const ROOM_HALF: f64 = 2.0;

fn box_room(count: usize, rng: &mut ChaCha8Rng) -> Vec<GaussianPoint> {
    let faces: [(Vector3<f64>, Vector3<f64>); 6] = [
        (Vector3::x(), Vector3::new(0.85, 0.35, 0.3)),
        (-Vector3::x(), Vector3::new(0.3, 0.7, 0.35)),
        (Vector3::y(), Vector3::new(0.75, 0.7, 0.6)),
        (-Vector3::y(), Vector3::new(0.55, 0.55, 0.6)),
        (Vector3::z(), Vector3::new(0.3, 0.4, 0.85)),
        (-Vector3::z(), Vector3::new(0.85, 0.75, 0.25)),
    ];
    let per_face_area = (2.0 * ROOM_HALF).powi(2);
    let spacing = (6.0 * per_face_area / count as f64).sqrt();
    (0..count)
        .map(|i| {
            let (outward, base) = faces[i % 6];
            // inward-facing wall at distance ROOM_HALF
            let (u, v) = {
                let helper = if outward.x.abs() > 0.5 {
                    Vector3::y()
                } else {
                    Vector3::x()
                };
                let u = outward.cross(&helper).normalize();
                (u, outward.cross(&u))
            };
            let a = rng.gen_range(-ROOM_HALF..ROOM_HALF);
            let b = rng.gen_range(-ROOM_HALF..ROOM_HALF);
            let position = outward * ROOM_HALF + u * a + v * b;
            let stripes = 0.75 + 0.25 * (3.0 * a).sin() * (2.0 * b).cos();
            let tangent = spacing * rng.gen_range(0.5..0.7);
            GaussianPoint::new(
                position,
                Vector3::new(tangent, tangent, 0.1 * tangent),
                align_z(&outward),
                rng.gen_range(0.8..0.95),
                (base * stripes).map(|c| c.clamp(0.0, 1.0)),
            )
        })
        .collect()
}

fn random_blobs(count: usize, rng: &mut ChaCha8Rng) -> Vec<GaussianPoint> {
    (0..count)
        .map(|_| {
            let position = loop {
                let p = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if p.norm_squared() <= 1.0 {
                    break p;
                }
            };
            let scale = Vector3::new(
                rng.gen_range(0.05..0.2),
                rng.gen_range(0.05..0.2),
                rng.gen_range(0.05..0.2),
            );
            let color = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            GaussianPoint::new(
                position,
                scale,
                random_rotation(rng),
                rng.gen_range(0.5..0.95),
                color,
            )
        })
        .collect()
}

fn ring_cameras(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Camera> {
    let focal = 0.5 * spec.width as f64 / (25f64.to_radians()).tan();
    let phase = rng.gen_range(0.0..2.0 * PI);
    let (radius, inside) = match spec.kind {
        SceneKind::BoxRoom => (1.0, true),
        _ => (3.5, false),
    };
    (0..spec.views)
        .map(|i| {
            let angle = phase + 2.0 * PI * i as f64 / spec.views as f64;
            let height = if i % 2 == 0 { 0.5 } else { -0.3 } * if inside { 0.5 } else { 1.0 };
            let eye = Vector3::new(radius * angle.cos(), height, radius * angle.sin());
            let mut cam = Camera::look_at(
                i,
                eye,
                Vector3::zeros(),
                Vector3::y(),
                spec.width,
                spec.height,
                focal,
            );
            // look_at is orthonormal up to rounding; snap it exactly onto SO(3)
            cam.rotation = Rotation3::from_matrix(&cam.rotation).into_inner();
            debug_assert!((cam.rotation.determinant() - 1.0).abs() < 1e-9);
            cam
        })
        .collect()
}

pub fn generate_synthetic_scene(spec: &SyntheticSpec) -> Result<SyntheticScene> {
    if spec.count == 0 {
        return Err(Error::Config("synthetic scene needs count >= 1".into()));
    }
    if !(4..=12).contains(&spec.views) {
        return Err(Error::Config(format!(
            "views must be in 4..=12, got {}",
            spec.views
        )));
    }
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::Config("image size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let points = match spec.kind {
        SceneKind::TexturedSphere => textured_sphere(spec.count, &mut rng),
        SceneKind::BoxRoom => box_room(spec.count, &mut rng),
        SceneKind::RandomBlobs => random_blobs(spec.count, &mut rng),
    };
    let background = Vector3::zeros();
    let teacher = Scene::new(points, background);
    let cameras = ring_cameras(spec, &mut rng);
    let ground_truth = cameras
        .iter()
        .map(|c| render_image(&teacher, c))
        .collect::<Result<Vec<_>>>()?;

    let keep = spec.count.div_ceil(10);
    let mut indices: Vec<usize> = (0..spec.count).collect();
    indices.shuffle(&mut rng);
    let mut chosen = indices[..keep].to_vec();
    chosen.sort_unstable();
    let init = Scene::new(
        chosen.iter().map(|&i| teacher.points[i].clone()).collect(),
        background,
    );

    Ok(SyntheticScene {
        teacher,
        init,
        cameras,
        ground_truth,
    })
}
