use crate::scene::Scene;

/// `Σ_i λ2·α_i² + λ3·α_i` over base opacities.
pub fn opacity_reg_loss(scene: &Scene, lambda2: f64, lambda3: f64) -> f64 {
    scene
        .opacities()
        .iter()
        .map(|a| lambda2 * a * a + lambda3 * a)
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub scene: Scene,
    /// Indices into the input scene, ascending.
    pub removed: Vec<usize>,
    /// Set when every point was below the threshold and pruning was refused.
    pub refused: bool,
}

/// Keeps the points with opacity at or above `threshold`, in order. Refuses
/// (returning the input unchanged) when nothing would survive.
pub fn prune_low_opacity(scene: &Scene, threshold: f64) -> PruneOutcome {
    let opacities = scene.opacities();
    let removed: Vec<usize> = (0..scene.len())
        .filter(|&i| opacities[i] < threshold)
        .collect();
    if !scene.is_empty() && removed.len() == scene.len() {
        log::warn!(
            "all {} points are below opacity {threshold}; refusing to prune to an empty scene",
            scene.len()
        );
        return PruneOutcome {
            scene: scene.clone(),
            removed: Vec::new(),
            refused: true,
        };
    }
    let mut out = scene.clone();
    if !removed.is_empty() {
        out.points = scene
            .points
            .iter()
            .zip(&opacities)
            .filter(|(_, &a)| a >= threshold)
            .map(|(p, _)| p.clone())
            .collect();
    }
    PruneOutcome {
        scene: out,
        removed,
        refused: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianPoint;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn scene(opacities: &[f64]) -> Scene {
        let pts = opacities
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                GaussianPoint::new(
                    Vector3::new(i as f64, 0.0, 0.0),
                    Vector3::repeat(0.1),
                    [1.0, 0.0, 0.0, 0.0],
                    a,
                    Vector3::zeros(),
                )
            })
            .collect();
        Scene::new(pts, Vector3::zeros())
    }

    #[test]
    fn reg_examples() {
        let mut s = scene(&[0.5]);
        s.points[0].opacity_logit = -40.0;
        assert!(opacity_reg_loss(&s, 1.0, 1.0) < 1e-15);
        assert!((opacity_reg_loss(&scene(&[0.5]), 1.0, 1.0) - 0.75).abs() < 1e-12);
        let s = scene(&[0.2, 0.7, 0.4]);
        assert!((opacity_reg_loss(&s, 0.0, 0.3) - 0.3 * 1.3).abs() < 1e-12);
    }

    #[test]
    fn keeps_only_opaque_points() {
        let out = prune_low_opacity(&scene(&[0.01, 0.5]), 0.05);
        assert_eq!(out.scene.len(), 1);
        assert_eq!(out.removed, vec![0]);
        assert_eq!(out.scene.points[0].position.x, 1.0);
        assert!(!out.refused);
    }

    #[test]
    fn nothing_to_prune() {
        let s = scene(&[0.3, 0.5]);
        let out = prune_low_opacity(&s, 0.05);
        assert_eq!(out.scene, s);
        assert!(out.removed.is_empty());
    }

    #[test]
    fn refuses_to_empty_the_scene() {
        let s = scene(&[0.01, 0.02]);
        let out = prune_low_opacity(&s, 0.05);
        assert!(out.refused);
        assert_eq!(out.scene, s);
        assert!(out.removed.is_empty());
    }

    proptest! {
        #[test]
        fn prune_invariants(ops in proptest::collection::vec(0.001f64..0.999, 1..40), thr in 0.01f64..0.99) {
            let s = scene(&ops);
            let out = prune_low_opacity(&s, thr);
            prop_assert!(out.scene.len() <= s.len());
            if out.refused {
                prop_assert!(s.opacities().iter().all(|&a| a < thr));
            } else {
                prop_assert!(out.removed.windows(2).all(|w| w[0] < w[1]));
                for &i in &out.removed {
                    prop_assert!(s.opacities()[i] < thr);
                }
                prop_assert!(out.scene.opacities().iter().all(|&a| a >= thr));
                prop_assert_eq!(out.scene.len() + out.removed.len(), s.len());
            }
            let reg = opacity_reg_loss(&s, 0.3, 0.2);
            prop_assert!(reg > 0.0);
        }
    }
}
