use nalgebra::Vector3;

use crate::grad::PointGrad;
use crate::gsdo::EncoderParams;
use crate::scene::Scene;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-15;

/// Number of scalars per Gaussian: position, log-scale, rotation tangent,
/// opacity logit, color.
const POINT_DIM: usize = 13;

/// Per-class learning rates for Gaussian parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLearningRates {
    pub position: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl PointLearningRates {
    fn expand(&self) -> [f64; POINT_DIM] {
        let mut lr = [0.0; POINT_DIM];
        lr[0..3].fill(self.position);
        lr[3..6].fill(self.scale);
        lr[6..9].fill(self.rotation);
        lr[9] = self.opacity;
        lr[10..13].fill(self.color);
        lr
    }
}

fn flatten(g: &PointGrad) -> [f64; POINT_DIM] {
    let mut f = [0.0; POINT_DIM];
    f[0..3].copy_from_slice(g.position.as_slice());
    f[3..6].copy_from_slice(g.log_scale.as_slice());
    f[6..9].copy_from_slice(g.rotation.as_slice());
    f[9] = g.opacity_logit;
    f[10..13].copy_from_slice(g.color.as_slice());
    f
}

#[derive(Debug, Clone, PartialEq)]
struct PointMoments {
    m: [f64; POINT_DIM],
    v: [f64; POINT_DIM],
    step: u64,
}

impl PointMoments {
    fn fresh() -> Self {
        PointMoments {
            m: [0.0; POINT_DIM],
            v: [0.0; POINT_DIM],
            step: 0,
        }
    }
}

fn adam_delta(m: &mut f64, v: &mut f64, g: f64, step: u64, lr: f64) -> f64 {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    let mh = *m / (1.0 - BETA1.powi(step as i32));
    let vh = *v / (1.0 - BETA2.powi(step as i32));
    -lr * mh / (vh.sqrt() + EPS)
}

/// Adam over all Gaussians with per-point step counters, so points created
/// mid-training start from fresh moments.
#[derive(Debug, Clone, PartialEq)]
pub struct PointAdam {
    state: Vec<PointMoments>,
}

impl PointAdam {
    pub fn new(n: usize) -> Self {
        PointAdam {
            state: vec![PointMoments::fresh(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.is_empty()
    }

    /// Applies one update. Points with a non-finite gradient are left
    /// untouched; their indices are returned.
    pub fn step(
        &mut self,
        scene: &mut Scene,
        grads: &[PointGrad],
        lr: &PointLearningRates,
    ) -> Vec<usize> {
        assert_eq!(
            scene.len(),
            self.state.len(),
            "optimizer state out of sync with scene"
        );
        assert_eq!(
            scene.len(),
            grads.len(),
            "gradient count does not match scene"
        );
        let lr = lr.expand();
        let mut skipped = Vec::new();
        for (i, (p, g)) in scene.points.iter_mut().zip(grads).enumerate() {
            if !g.is_finite() {
                skipped.push(i);
                continue;
            }
            let st = &mut self.state[i];
            st.step += 1;
            let g = flatten(g);
            let mut d = [0.0; POINT_DIM];
            for k in 0..POINT_DIM {
                d[k] = adam_delta(&mut st.m[k], &mut st.v[k], g[k], st.step, lr[k]);
            }
            p.position += Vector3::new(d[0], d[1], d[2]);
            p.log_scale += Vector3::new(d[3], d[4], d[5]);
            let rot = Vector3::new(d[6], d[7], d[8]);
            if rot != Vector3::zeros() {
                p.apply_rotation_delta(&rot);
            }
            p.opacity_logit += d[9];
            p.color += Vector3::new(d[10], d[11], d[12]);
            p.color = p.color.map(|c| c.clamp(0.0, 1.0));
        }
        if !skipped.is_empty() {
            log::warn!(
                "skipped optimizer step for {} point(s) with non-finite gradients",
                skipped.len()
            );
        }
        skipped
    }

    /// Keeps the state of points where `keep` is true.
    pub fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.state
            .retain(|_| *it.next().expect("mask length matches state"));
    }

    /// Rebuilds the state after densification: the first `survivors` outputs
    /// inherit their origin's moments, the rest start fresh.
    pub fn remap(&mut self, origin: &[usize], survivors: usize) {
        self.state = origin
            .iter()
            .enumerate()
            .map(|(k, &o)| {
                if k < survivors {
                    self.state[o].clone()
                } else {
                    PointMoments::fresh()
                }
            })
            .collect();
    }
}

/// Adam over every encoder weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl EncoderAdam {
    pub fn new(params: &EncoderParams) -> Self {
        let n = params.param_count();
        EncoderAdam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// Returns false (and leaves the weights alone) on a non-finite gradient.
    pub fn step(&mut self, params: &mut EncoderParams, grads: &EncoderParams, lr: f64) -> bool {
        if !grads.is_finite() {
            log::warn!("skipped encoder step with non-finite gradient");
            return false;
        }
        self.step += 1;
        let mut k = 0;
        for ((_, w), (_, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi += adam_delta(&mut self.m[k], &mut self.v[k], *gi, self.step, lr);
                k += 1;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianPoint;

    fn lrs() -> PointLearningRates {
        PointLearningRates {
            position: 0.01,
            scale: 0.02,
            rotation: 0.03,
            opacity: 0.04,
            color: 0.05,
        }
    }

    fn scene() -> Scene {
        let p = GaussianPoint::new(
            Vector3::new(0.1, 0.2, 0.3),
            Vector3::repeat(0.5),
            [1.0, 0.0, 0.0, 0.0],
            0.4,
            Vector3::repeat(0.5),
        );
        Scene::new(vec![p.clone(), p], Vector3::zeros())
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut s = scene();
        let before = s.clone();
        let mut opt = PointAdam::new(2);
        for _ in 0..5 {
            opt.step(&mut s, &[PointGrad::default(); 2], &lrs());
        }
        assert_eq!(s, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scene();
        let before = s.clone();
        let mut opt = PointAdam::new(2);
        let g = PointGrad {
            position: Vector3::new(3.0, -0.2, 0.0),
            opacity_logit: 7.0,
            ..Default::default()
        };
        opt.step(&mut s, &[g, PointGrad::default()], &lrs());
        let d = s.points[0].position - before.points[0].position;
        assert!((d.x + 0.01).abs() < 1e-12);
        assert!((d.y - 0.01).abs() < 1e-12);
        assert_eq!(d.z, 0.0);
        assert!((s.points[0].opacity_logit - before.points[0].opacity_logit + 0.04).abs() < 1e-12);
        assert_eq!(s.points[1], before.points[1]);
    }

    #[test]
    fn rotation_stays_unit_and_color_clamped() {
        let mut s = scene();
        let mut opt = PointAdam::new(2);
        let g = PointGrad {
            rotation: Vector3::new(1.0, -2.0, 0.5),
            color: Vector3::repeat(-1.0),
            ..Default::default()
        };
        for _ in 0..50 {
            opt.step(
                &mut s,
                &[g, g],
                &PointLearningRates {
                    color: 1.0,
                    ..lrs()
                },
            );
        }
        let q = s.points[0].rotation;
        let n: f64 = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        assert_eq!(s.points[0].color, Vector3::repeat(1.0));
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut s = scene();
        let before = s.clone();
        let mut opt = PointAdam::new(2);
        let bad = PointGrad {
            position: Vector3::new(f64::NAN, 0.0, 0.0),
            ..Default::default()
        };
        let good = PointGrad {
            color: Vector3::repeat(1.0),
            ..Default::default()
        };
        let skipped = opt.step(&mut s, &[bad, good], &lrs());
        assert_eq!(skipped, vec![0]);
        assert_eq!(s.points[0], before.points[0]);
        assert_ne!(s.points[1], before.points[1]);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut s = scene();
            let mut opt = PointAdam::new(2);
            for k in 0..20 {
                let g = PointGrad {
                    position: Vector3::new((k as f64).sin(), 0.3, -0.1),
                    log_scale: Vector3::repeat(0.01 * k as f64),
                    ..Default::default()
                };
                opt.step(&mut s, &[g, g], &lrs());
            }
            s
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn remap_gives_fresh_state_to_new_points() {
        let mut s = scene();
        let mut opt = PointAdam::new(2);
        let g = PointGrad {
            position: Vector3::repeat(1.0),
            ..Default::default()
        };
        opt.step(&mut s, &[g, g], &lrs());
        opt.remap(&[1, 0], 1);
        assert_eq!(opt.state[0].step, 1);
        assert_eq!(opt.state[1].step, 0);
        opt.retain(&[false, true]);
        assert_eq!(opt.len(), 1);
        assert_eq!(opt.state[0].step, 0);
    }

    #[test]
    fn encoder_first_step() {
        let mut p = EncoderParams::new(3, 3, 2, 0);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.fc1.weight[0] = 5.0;
        let mut opt = EncoderAdam::new(&p);
        assert!(opt.step(&mut p, &g, 0.1));
        assert!((p.fc1.weight[0] - before.fc1.weight[0] + 0.1).abs() < 1e-12);
        assert_eq!(p.fc2, before.fc2);
    }
}
