use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, GsdoInputs, LossKind, LossWeights, ParamGradients};
use crate::gsdo::{
    build_knn_graph, embed_initial, encode, gsdo_losses, sample_neighborhoods, EncoderParams,
    KnnGraph, NeighborhoodSample,
};
use crate::render::{rasterize, render_image, render_loss};
use crate::scene::{Camera, GaussianPoint, ImageBuffer, Scene};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamClass {
    Position,
    LogScale,
    Rotation,
    Opacity,
    Color,
    Encoder,
}

impl ParamClass {
    pub const ALL: [ParamClass; 6] = [
        ParamClass::Position,
        ParamClass::LogScale,
        ParamClass::Rotation,
        ParamClass::Opacity,
        ParamClass::Color,
        ParamClass::Encoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamClass::Position => "position",
            ParamClass::LogScale => "log_scale",
            ParamClass::Rotation => "rotation",
            ParamClass::Opacity => "opacity",
            ParamClass::Color => "color",
            ParamClass::Encoder => "encoder",
        }
    }
}

impl fmt::Display for ParamClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A small self-contained problem: scene, views, targets and a frozen
/// encoder graph and neighbourhood sample.
#[derive(Debug, Clone)]
pub struct GradProblem {
    pub scene: Scene,
    pub cameras: Vec<Camera>,
    pub targets: Vec<ImageBuffer>,
    pub encoder: EncoderParams,
    pub graph: KnnGraph,
    pub sample: NeighborhoodSample,
    pub weights: LossWeights,
}

fn random_point(rng: &mut ChaCha8Rng) -> GaussianPoint {
    let position = Vector3::new(
        rng.gen_range(-0.8..0.8),
        rng.gen_range(-0.8..0.8),
        rng.gen_range(-0.8..0.8),
    );
    let scale = Vector3::new(
        rng.gen_range(0.08..0.3),
        rng.gen_range(0.08..0.3),
        rng.gen_range(0.08..0.3),
    );
    let rotation = [
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ];
    let color = Vector3::new(
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
    );
    GaussianPoint::new(position, scale, rotation, rng.gen_range(0.2..0.9), color)
}

impl GradProblem {
    /// Random scene of `points` Gaussians seen by two `size × size` views.
    /// Targets are renders of an independently drawn scene so residuals are
    /// generic.
    pub fn random(seed: u64, points: usize, size: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bg = Vector3::new(
            rng.gen_range(0.0..0.3),
            rng.gen_range(0.0..0.3),
            rng.gen_range(0.0..0.3),
        );
        let scene = Scene::new((0..points).map(|_| random_point(&mut rng)).collect(), bg);
        let other = Scene::new((0..points).map(|_| random_point(&mut rng)).collect(), bg);
        let focal = 0.5 * size as f64 / 25f64.to_radians().tan();
        let cameras = vec![
            Camera::look_at(
                0,
                Vector3::new(0.0, -0.5, -3.0),
                Vector3::zeros(),
                Vector3::new(0.0, -1.0, 0.0),
                size,
                size,
                focal,
            ),
            Camera::look_at(
                1,
                Vector3::new(2.6, 0.4, -1.5),
                Vector3::zeros(),
                Vector3::new(0.0, -1.0, 0.0),
                size,
                size,
                focal,
            ),
        ];
        let targets = cameras
            .iter()
            .map(|c| render_image(&other, c))
            .collect::<Result<Vec<_>>>()?;
        let encoder = EncoderParams::new(8, 8, 4, seed ^ 0x5eed);
        let weights = LossWeights {
            lambda1: 0.2,
            lambda2: 0.5,
            lambda3: 0.5,
            lambda_c: 0.3,
            lambda_s: 0.2,
        };
        Self::from_parts(scene, cameras, targets, encoder, weights, seed)
    }

    /// Builds the frozen graph and a neighbourhood sample for `scene`.
    pub fn from_parts(
        scene: Scene,
        cameras: Vec<Camera>,
        targets: Vec<ImageBuffer>,
        encoder: EncoderParams,
        weights: LossWeights,
        seed: u64,
    ) -> Result<Self> {
        let positions = scene.positions();
        let graph = build_knn_graph(&embed_initial(&positions, &encoder), encoder.k)?;
        let hood = 4.min(positions.len());
        let sample = sample_neighborhoods(&positions, 4, hood, seed)?;
        Ok(GradProblem {
            scene,
            cameras,
            targets,
            encoder,
            graph,
            sample,
            weights,
        })
    }

    fn inputs<'a>(&'a self, encoder: &'a EncoderParams) -> GsdoInputs<'a> {
        GsdoInputs {
            params: encoder,
            graph: &self.graph,
            sample: &self.sample,
        }
    }

    /// Loss value plus a hash of every discrete forward decision.
    fn evaluate(
        &self,
        kind: LossKind,
        scene: &Scene,
        encoder: &EncoderParams,
    ) -> Result<(f64, u64)> {
        let w = &self.weights;
        let mut hasher = DefaultHasher::new();
        let mut loss = 0.0;
        if kind.uses_views() {
            for (cam, target) in self.cameras.iter().zip(&self.targets) {
                let (image, frame) = rasterize(scene, cam)?;
                loss += render_loss(&image, target, w.lambda1)?;
                frame.signature().hash(&mut hasher);
                for (a, b) in image.data.iter().zip(&target.data) {
                    (a - b).partial_cmp(&0.0).hash(&mut hasher);
                }
            }
        }
        if kind == LossKind::OpacityReg {
            loss += scene
                .points
                .iter()
                .map(|p| {
                    let a = p.opacity();
                    w.lambda2 * a * a + w.lambda3 * a
                })
                .sum::<f64>();
        }
        if kind.uses_encoder() {
            let (wc, ws) = match kind {
                LossKind::Cet => (1.0, 0.0),
                LossKind::Smt => (0.0, 1.0),
                _ => (w.lambda_c, w.lambda_s),
            };
            let positions = scene.positions();
            let g = gsdo_losses(&positions, encoder, &self.graph, &self.sample, 0.0, 0.0)?;
            loss += wc * g.cet + ws * g.smt;
            let cache = encode(&positions, encoder, &self.graph)?;
            for m in [&cache.f, &cache.local_pre, &cache.fc1_pre] {
                for v in &m.data {
                    (*v > 0.0).hash(&mut hasher);
                }
            }
            cache.m_source.hash(&mut hasher);
        }
        Ok((loss, hasher.finish()))
    }
}

/// Finite-difference settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Step reductions tried (each by 10×) when a perturbation changes a
    /// discrete forward decision, before the scalar is skipped.
    pub retries: usize,
    /// Adds +1 to the first analytic gradient of this class (negative control).
    pub inject: Option<ParamClass>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            step: 1e-4,
            rel_tol: 1e-3,
            abs_tol: 1e-6,
            retries: 2,
            inject: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: ParamClass,
    pub scalars: usize,
    /// Scalars whose perturbation changed a discrete decision at every step size.
    pub skipped: usize,
    /// Largest relative error among scalars whose gradient magnitude is at
    /// least `100·abs_tol` (smaller ones are dominated by rounding).
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub max_abs_analytic: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: LossKind,
    pub classes: Vec<ClassReport>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn class(&self, class: ParamClass) -> &ClassReport {
        self.classes
            .iter()
            .find(|c| c.class == class)
            .expect("every class is reported")
    }
}

/// Location of one scalar parameter.
#[derive(Clone, Copy)]
enum Slot {
    Point {
        index: usize,
        class: ParamClass,
        comp: usize,
    },
    Encoder {
        tensor: usize,
        elem: usize,
    },
}

fn slots(scene: &Scene, encoder: &EncoderParams, class: ParamClass) -> Vec<Slot> {
    if class == ParamClass::Encoder {
        return encoder
            .tensors()
            .iter()
            .enumerate()
            .flat_map(|(t, (_, v))| (0..v.len()).map(move |e| Slot::Encoder { tensor: t, elem: e }))
            .collect();
    }
    let comps = if class == ParamClass::Opacity { 1 } else { 3 };
    (0..scene.len())
        .flat_map(|index| (0..comps).map(move |comp| Slot::Point { index, class, comp }))
        .collect()
}

fn perturb(scene: &mut Scene, encoder: &mut EncoderParams, slot: Slot, delta: f64) {
    match slot {
        Slot::Point { index, class, comp } => {
            let p = &mut scene.points[index];
            match class {
                ParamClass::Position => p.position[comp] += delta,
                ParamClass::LogScale => p.log_scale[comp] += delta,
                ParamClass::Rotation => {
                    let mut d = Vector3::zeros();
                    d[comp] = delta;
                    p.apply_rotation_delta(&d);
                }
                ParamClass::Opacity => p.opacity_logit += delta,
                ParamClass::Color => p.color[comp] += delta,
                ParamClass::Encoder => unreachable!(),
            }
        }
        Slot::Encoder { tensor, elem } => encoder.tensors_mut()[tensor].1[elem] += delta,
    }
}

fn analytic(grads: &ParamGradients, slot: Slot) -> f64 {
    match slot {
        Slot::Point { index, class, comp } => {
            let g = &grads.points[index];
            match class {
                ParamClass::Position => g.position[comp],
                ParamClass::LogScale => g.log_scale[comp],
                ParamClass::Rotation => g.rotation[comp],
                ParamClass::Opacity => g.opacity_logit,
                ParamClass::Color => g.color[comp],
                ParamClass::Encoder => unreachable!(),
            }
        }
        Slot::Encoder { tensor, elem } => grads
            .encoder
            .as_ref()
            .map_or(0.0, |e| e.tensors()[tensor].1[elem]),
    }
}

/// Compares analytic gradients of `kind` against central differences for
/// every scalar parameter of the problem.
pub fn check_gradients(
    problem: &GradProblem,
    kind: LossKind,
    config: &CheckConfig,
) -> Result<GradCheckReport> {
    let inputs = problem.inputs(&problem.encoder);
    let (_, grads) = backward(
        kind,
        &problem.scene,
        Some(inputs),
        &problem.cameras,
        &problem.targets,
        &problem.weights,
    )?;
    let (_, base_sig) = problem.evaluate(kind, &problem.scene, &problem.encoder)?;

    let mut classes = Vec::new();
    for class in ParamClass::ALL {
        let mut report = ClassReport {
            class,
            scalars: 0,
            skipped: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            max_abs_analytic: 0.0,
            passed: true,
        };
        for (n, slot) in slots(&problem.scene, &problem.encoder, class)
            .into_iter()
            .enumerate()
        {
            let mut a = analytic(&grads, slot);
            if n == 0 && config.inject == Some(class) {
                a += 1.0;
            }
            report.scalars += 1;
            report.max_abs_analytic = report.max_abs_analytic.max(a.abs());
            let mut fd = None;
            let mut h = config.step;
            for _ in 0..=config.retries {
                let mut sp = problem.scene.clone();
                let mut ep = problem.encoder.clone();
                perturb(&mut sp, &mut ep, slot, h);
                let (lp, sigp) = problem.evaluate(kind, &sp, &ep)?;
                let mut sm = problem.scene.clone();
                let mut em = problem.encoder.clone();
                perturb(&mut sm, &mut em, slot, -h);
                let (lm, sigm) = problem.evaluate(kind, &sm, &em)?;
                if sigp == base_sig && sigm == base_sig {
                    fd = Some((lp - lm) / (2.0 * h));
                    break;
                }
                h *= 0.1;
            }
            let Some(fd) = fd else {
                report.skipped += 1;
                continue;
            };
            let err = (a - fd).abs();
            let magnitude = a.abs().max(fd.abs());
            let rel = if magnitude > 0.0 {
                err / magnitude
            } else {
                0.0
            };
            report.max_abs_error = report.max_abs_error.max(err);
            if magnitude >= 100.0 * config.abs_tol {
                report.max_rel_error = report.max_rel_error.max(rel);
            }
            if err >= config.abs_tol && rel >= config.rel_tol {
                report.passed = false;
            }
        }
        classes.push(report);
    }
    let passed = classes.iter().all(|c| c.passed);
    Ok(GradCheckReport {
        loss: kind,
        classes,
        passed,
    })
}

/// Central-difference gradient of a scalar function of a flat vector.
pub fn finite_difference_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + h;
            let fp = f(&buf);
            buf[i] = x[i] - h;
            let fm = f(&buf);
            buf[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_position_loss() {
        let x = [0.3, -1.2, 2.0, 0.5, 0.0, -0.7, 1.1, 1.9, -2.5];
        let g = finite_difference_gradient(|p| p.iter().map(|v| v * v).sum(), &x, 1e-4);
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - 2.0 * xi).abs() < 1e-9);
        }
    }

    #[test]
    fn render_gradients_on_two_points() {
        let mut p = GradProblem::random(0, 2, 8).unwrap();
        p.encoder = EncoderParams::new(4, 4, 1, 0);
        let p = GradProblem::from_parts(p.scene, p.cameras, p.targets, p.encoder, p.weights, 0)
            .unwrap();
        let r = check_gradients(&p, LossKind::Render, &CheckConfig::default()).unwrap();
        assert!(r.passed, "{r:#?}");
    }

    #[test]
    fn report_lists_all_classes() {
        let p = GradProblem::random(0, 6, 12).unwrap();
        let r = check_gradients(&p, LossKind::Render, &CheckConfig::default()).unwrap();
        let listed: Vec<_> = r.classes.iter().map(|c| c.class).collect();
        assert_eq!(listed, ParamClass::ALL.to_vec());
        assert!(r.passed, "{r:#?}");
    }

    #[test]
    fn injected_error_is_caught() {
        let p = GradProblem::random(1, 5, 12).unwrap();
        let cfg = CheckConfig {
            inject: Some(ParamClass::Color),
            ..Default::default()
        };
        let r = check_gradients(&p, LossKind::Render, &cfg).unwrap();
        assert!(!r.passed);
        assert!(!r.class(ParamClass::Color).passed);
        assert!(r.class(ParamClass::Position).passed);
    }

    #[test]
    fn opacity_reg_is_independent_of_geometry_and_color() {
        let p = GradProblem::random(2, 5, 12).unwrap();
        let r = check_gradients(&p, LossKind::OpacityReg, &CheckConfig::default()).unwrap();
        assert!(r.passed);
        for c in [
            ParamClass::Position,
            ParamClass::Color,
            ParamClass::LogScale,
            ParamClass::Rotation,
        ] {
            assert_eq!(r.class(c).max_abs_analytic, 0.0);
        }
        assert!(r.class(ParamClass::Opacity).max_abs_analytic > 0.0);
    }

    #[test]
    fn gsdo_losses_check() {
        let p = GradProblem::random(3, 10, 12).unwrap();
        for kind in [LossKind::Cet, LossKind::Smt, LossKind::Final] {
            let r = check_gradients(&p, kind, &CheckConfig::default()).unwrap();
            assert!(r.passed, "{kind}: {r:#?}");
        }
    }
}
