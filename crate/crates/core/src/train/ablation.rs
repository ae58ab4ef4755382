use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::pipeline::{refine_only, TrainData, TrainState};
use super::report::{write_csv, Phase};
use crate::adp::prune_low_opacity;
use crate::scene::{Camera, ImageBuffer, Scene};
use crate::{Error, Result};

pub const LADDER: [&str; 6] = [
    "baseline",
    "+elbo densification",
    "+opacity pruning",
    "+increase iterations",
    "+l_smt",
    "full",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub psnr: f64,
    pub ssim: f64,
    pub n_gs: usize,
    pub peak_n_gs: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    /// The six-step ladder, in order.
    pub ladder: Vec<AblationRow>,
    /// The baseline trained for the full three-phase budget, never pruned.
    pub baseline_long: AblationRow,
    /// The baseline after a plain fixed-threshold opacity prune.
    pub plain_pruned: AblationRow,
    /// `plain_pruned` after encoder refinement.
    pub plain_pruned_refined: AblationRow,
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.ladder.iter().find(|r| r.variant == variant)
    }

    pub fn all_rows(&self) -> Vec<&AblationRow> {
        self.ladder
            .iter()
            .chain([
                &self.baseline_long,
                &self.plain_pruned,
                &self.plain_pruned_refined,
            ])
            .collect()
    }

    /// Writes `ablation.json` and `ablation.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("ablation.json");
        std::fs::write(&json, serde_json::to_string_pretty(self)?)
            .map_err(|e| Error::io(&json, e))?;
        let rows: Vec<AblationRow> = self.all_rows().into_iter().cloned().collect();
        write_csv(&rows, &dir.join("ablation.csv"))
    }
}

fn row(variant: &str, state: &TrainState) -> AblationRow {
    AblationRow {
        variant: variant.to_string(),
        psnr: state.report.final_metrics.psnr,
        ssim: state.report.final_metrics.ssim,
        n_gs: state.scene.len(),
        peak_n_gs: state.report.peak_points,
        iterations: state.iteration,
    }
}

/// Runs the component ladder and the plain-prune-then-refine comparison.
/// Variants sharing a prefix of phases are branched from one run rather than
/// retrained, which is equivalent because every phase seeds its own streams.
pub fn run_ablation(
    scene: Scene,
    cameras: &[Camera],
    targets: &[ImageBuffer],
    config: &TrainConfig,
) -> Result<AblationTable> {
    let data = TrainData::new(cameras, targets)?;

    let plain = TrainConfig {
        use_elbo_stop: false,
        use_opacity_reg: false,
        use_pruning: false,
        use_gsdo: false,
        ..config.clone()
    };
    let with_elbo = TrainConfig {
        use_elbo_stop: true,
        ..plain.clone()
    };
    let with_pruning = TrainConfig {
        use_opacity_reg: true,
        use_pruning: true,
        ..with_elbo.clone()
    };
    let smt_only = TrainConfig {
        use_gsdo: true,
        encoder: crate::gsdo::GsdoConfig {
            lambda_c: 0.0,
            ..config.encoder.clone()
        },
        ..with_pruning.clone()
    };
    let full = TrainConfig {
        use_gsdo: true,
        ..with_pruning.clone()
    };

    let initial = TrainState::new(scene, data, config)?;

    let mut elbo = initial.clone();
    elbo.run_phase(Phase::Densify, data, &with_elbo)?;

    // without a stop event the two densify runs take identical steps
    let mut baseline = if elbo.report.densify_stopped_at.is_none() {
        elbo.clone()
    } else {
        let mut b = initial;
        b.run_phase(Phase::Densify, data, &plain)?;
        b
    };
    baseline.run_phase(Phase::Prune, data, &plain)?;

    let mut baseline_long = baseline.clone();
    baseline_long.run_phase(Phase::Refine, data, &plain)?;

    let mut elbo_plain = elbo.clone();
    elbo_plain.run_phase(Phase::Prune, data, &with_elbo)?;

    let mut pruned = elbo;
    pruned.run_phase(Phase::Prune, data, &with_pruning)?;

    let mut more_iters = pruned.clone();
    more_iters.run_phase(Phase::Refine, data, &with_pruning)?;
    let mut smt = pruned.clone();
    smt.run_phase(Phase::Refine, data, &smt_only)?;
    let mut full_run = pruned.clone();
    full_run.run_phase(Phase::Refine, data, &full)?;

    let ladder = [
        &baseline,
        &elbo_plain,
        &pruned,
        &more_iters,
        &smt,
        &full_run,
    ]
    .into_iter()
    .zip(LADDER)
    .map(|(s, name)| row(name, s))
    .collect();

    let cut = prune_low_opacity(&baseline.scene, config.post_prune_threshold);
    if cut.refused {
        return Err(Error::Config(format!(
            "post_prune_threshold {} would remove every point",
            config.post_prune_threshold
        )));
    }
    let refine_cfg = TrainConfig {
        use_gsdo: true,
        ..config.clone()
    };
    let refined = refine_only(cut.scene, cameras, targets, &refine_cfg)?;
    let plain_pruned = AblationRow {
        variant: "plain prune".into(),
        psnr: refined.report.initial_metrics.psnr,
        ssim: refined.report.initial_metrics.ssim,
        n_gs: refined.report.initial_points,
        peak_n_gs: baseline.report.peak_points,
        iterations: baseline.iteration,
    };
    let plain_pruned_refined = AblationRow {
        variant: "plain prune + gsdo".into(),
        psnr: refined.report.final_metrics.psnr,
        ssim: refined.report.final_metrics.ssim,
        n_gs: refined.scene.len(),
        peak_n_gs: baseline.report.peak_points,
        iterations: baseline.iteration + refined.report.iterations.len(),
    };

    Ok(AblationTable {
        ladder,
        baseline_long: row("baseline long", &baseline_long),
        plain_pruned,
        plain_pruned_refined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic_scene, SceneKind, SyntheticSpec};

    #[test]
    fn elbo_densify_without_stop_matches_plain_densify() {
        let mut spec = SyntheticSpec::new(SceneKind::TexturedSphere, 2, 150);
        spec.width = 24;
        spec.height = 24;
        spec.views = 4;
        let s = generate_synthetic_scene(&spec).unwrap();
        let data = TrainData::new(&s.cameras, &s.ground_truth).unwrap();
        let mut cfg = TrainConfig {
            phase1_iters: 60,
            ..TrainConfig::default()
        };
        cfg.adp.densify_interval = 10;
        cfg.adp.grad_threshold = 1e-4;
        let plain = TrainConfig {
            use_elbo_stop: false,
            ..cfg.clone()
        };
        let mut a = TrainState::new(s.init.clone(), data, &cfg).unwrap();
        a.run_phase(Phase::Densify, data, &cfg).unwrap();
        let mut b = TrainState::new(s.init.clone(), data, &plain).unwrap();
        b.run_phase(Phase::Densify, data, &plain).unwrap();
        assert!(a.report.densify_stopped_at.is_none());
        assert!(a.scene.len() > s.init.len());
        assert_eq!(a.scene, b.scene);
        assert_eq!(a.report, b.report);
    }
}
