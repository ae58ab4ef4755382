use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use super::AdpConfig;
use crate::scene::Scene;

/// Running screen-space gradient statistics since the last densification.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensifyStats {
    pub grad_norm_sum: Vec<f64>,
    pub visible_count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        DensifyStats {
            grad_norm_sum: vec![0.0; n],
            visible_count: vec![0; n],
        }
    }

    /// Adds one view's `(point, ∂L/∂mean2d)` pairs. Pixel gradients are
    /// rescaled to normalized device coordinates.
    pub fn add_view(
        &mut self,
        screen_grads: &[(usize, Vector2<f64>)],
        width: usize,
        height: usize,
    ) {
        let sx = 0.5 * width as f64;
        let sy = 0.5 * height as f64;
        for &(i, g) in screen_grads {
            self.grad_norm_sum[i] += Vector2::new(g.x * sx, g.y * sy).norm();
            self.visible_count[i] += 1;
        }
    }

    /// Mean gradient norm per point over the views it was visible in.
    pub fn mean_norms(&self) -> Vec<f64> {
        self.grad_norm_sum
            .iter()
            .zip(&self.visible_count)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensifyOutcome {
    pub scene: Scene,
    pub cloned: usize,
    pub split: usize,
    /// For every output point, the index of the input point it came from.
    pub origin: Vec<usize>,
}

const SPLIT_SHRINK: f64 = 1.6;

/// Clones small high-gradient points and splits large ones into two children
/// drawn from the parent's Gaussian. Survivors keep their order; new points
/// are appended.
pub fn densify_clone_split<R: Rng>(
    scene: &Scene,
    stats: &DensifyStats,
    config: &AdpConfig,
    rng: &mut R,
) -> DensifyOutcome {
    let norms = stats.mean_norms();
    let limit = config.percent_dense * scene.extent;
    let mut clones = Vec::new();
    let mut splits = Vec::new();
    for (i, p) in scene.points.iter().enumerate() {
        if !(norms.get(i).copied().unwrap_or(0.0) > config.grad_threshold) {
            continue;
        }
        if p.log_scale.max().exp() < limit {
            clones.push(i);
        } else {
            splits.push(i);
        }
    }
    // respect the point budget: each clone adds one point, each split one more
    let room = config.max_points.saturating_sub(scene.len());
    let mut budget = room;
    clones.retain(|_| {
        let ok = budget > 0;
        budget = budget.saturating_sub(1);
        ok
    });
    splits.retain(|_| {
        let ok = budget > 0;
        budget = budget.saturating_sub(1);
        ok
    });

    let mut is_split = vec![false; scene.len()];
    for &i in &splits {
        is_split[i] = true;
    }
    let mut points = Vec::with_capacity(scene.len() + clones.len() + splits.len());
    let mut origin = Vec::with_capacity(points.capacity());
    for (i, p) in scene.points.iter().enumerate() {
        if !is_split[i] {
            points.push(p.clone());
            origin.push(i);
        }
    }
    for &i in &clones {
        points.push(scene.points[i].clone());
        origin.push(i);
    }
    for &i in &splits {
        let parent = &scene.points[i];
        let r = parent.rotation_matrix();
        let s = parent.log_scale.map(f64::exp);
        for _ in 0..2 {
            let z = Vector3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            let mut child = parent.clone();
            child.position += r * z.component_mul(&s);
            child.log_scale -= Vector3::repeat(SPLIT_SHRINK.ln());
            points.push(child);
            origin.push(i);
        }
    }
    let mut out = scene.clone();
    out.points = points;
    DensifyOutcome {
        scene: out,
        cloned: clones.len(),
        split: splits.len(),
        origin,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianPoint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene(scales: &[f64]) -> Scene {
        let pts: Vec<_> = scales
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                GaussianPoint::new(
                    Vector3::new(i as f64, 0.0, 0.0),
                    Vector3::repeat(s),
                    [1.0, 0.0, 0.0, 0.0],
                    0.5,
                    Vector3::zeros(),
                )
            })
            .collect();
        let mut sc = Scene::new(pts, Vector3::zeros());
        sc.extent = 10.0;
        sc
    }

    fn stats(norms: &[f64]) -> DensifyStats {
        DensifyStats {
            grad_norm_sum: norms.to_vec(),
            visible_count: vec![1; norms.len()],
        }
    }

    #[test]
    fn quiet_gradients_change_nothing() {
        let s = scene(&[0.01, 1.0]);
        let out = densify_clone_split(
            &s,
            &stats(&[0.0, 1e-5]),
            &AdpConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(out.scene, s);
    }

    #[test]
    fn small_point_is_cloned() {
        let s = scene(&[0.01, 1.0]);
        let out = densify_clone_split(
            &s,
            &stats(&[1.0, 0.0]),
            &AdpConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(out.scene.len(), 3);
        assert_eq!(out.cloned, 1);
        assert_eq!(out.scene.points[2], s.points[0]);
        assert_eq!(out.origin, vec![0, 1, 0]);
    }

    #[test]
    fn large_point_is_split() {
        let s = scene(&[0.01, 1.0]);
        let out = densify_clone_split(
            &s,
            &stats(&[0.0, 1.0]),
            &AdpConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(out.scene.len(), 3);
        assert_eq!(out.split, 1);
        assert_eq!(out.scene.points[0], s.points[0]);
        for child in &out.scene.points[1..] {
            let expected = s.points[1].log_scale - Vector3::repeat(1.6f64.ln());
            assert!((child.log_scale - expected).norm() < 1e-15);
        }
        assert_ne!(out.scene.points[1].position, out.scene.points[2].position);
    }

    #[test]
    fn split_offsets_are_seeded() {
        let s = scene(&[1.0, 1.0]);
        let st = stats(&[1.0, 1.0]);
        let cfg = AdpConfig::default();
        let a = densify_clone_split(&s, &st, &cfg, &mut ChaCha8Rng::seed_from_u64(4));
        let b = densify_clone_split(&s, &st, &cfg, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    #[test]
    fn budget_caps_growth() {
        let s = scene(&[0.01, 0.01, 0.01]);
        let cfg = AdpConfig {
            max_points: 4,
            ..Default::default()
        };
        let out = densify_clone_split(
            &s,
            &stats(&[1.0; 3]),
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(out.scene.len(), 4);
    }

    #[test]
    fn ndc_scaling() {
        let mut st = DensifyStats::new(1);
        st.add_view(&[(0, Vector2::new(2.0 / 64.0, 0.0))], 64, 64);
        st.add_view(&[(0, Vector2::new(0.0, 0.0))], 64, 64);
        assert!((st.mean_norms()[0] - 0.5).abs() < 1e-15);
    }
}
