use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adp::{write_trace, TraceEvent, TraceRow};
use crate::render::{psnr, render_image, ssim};
use crate::scene::{Camera, ImageBuffer, Scene};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Densify,
    Prune,
    Refine,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Densify, Phase::Prune, Phase::Refine];

    pub fn number(self) -> u64 {
        match self {
            Phase::Densify => 1,
            Phase::Prune => 2,
            Phase::Refine => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
    pub views: Vec<ViewMetrics>,
}

/// Renders every view and scores it against its target. The summary values
/// are means over views.
pub fn evaluate(scene: &Scene, cameras: &[Camera], targets: &[ImageBuffer]) -> Result<Metrics> {
    if cameras.len() != targets.len() || cameras.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} cameras and {} targets",
            cameras.len(),
            targets.len()
        )));
    }
    let mut views = Vec::with_capacity(cameras.len());
    for (i, (c, t)) in cameras.iter().zip(targets).enumerate() {
        let img = render_image(scene, c)?;
        views.push(ViewMetrics {
            view: i,
            psnr: psnr(&img, t)?,
            ssim: ssim(&img, t)?,
        });
    }
    let n = views.len() as f64;
    Ok(Metrics {
        psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
        ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
        views,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub view: usize,
    /// Everything that was minimized this iteration.
    pub loss: f64,
    pub render_loss: f64,
    pub n_gs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub kind: TraceEvent,
    pub n_before: usize,
    pub n_after: usize,
    pub cloned: usize,
    pub split: usize,
    pub removed: usize,
    /// Highest opacity among the removed points, measured just before removal.
    pub max_removed_opacity: Option<f64>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: Phase,
    /// First global iteration of the phase (1-based).
    pub start: usize,
    /// Last global iteration of the phase; `start - 1` for an empty phase.
    pub end: usize,
    pub n_start: usize,
    pub n_end: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Everything recorded during a run except wall-clock time, which lives in
/// [`Timing`] so that reports of identical runs compare equal byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub initial_points: usize,
    pub initial_metrics: Metrics,
    pub phases: Vec<PhaseSummary>,
    pub iterations: Vec<IterationRecord>,
    pub controller: Vec<TraceRow>,
    pub events: Vec<EventRecord>,
    pub peak_points: usize,
    pub final_points: usize,
    pub densify_stopped_at: Option<usize>,
    pub final_metrics: Metrics,
    /// The smoothed phase-1 loss rose over some window, or a loss went
    /// non-finite. Only the latter stops training.
    pub diverged: bool,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn phase(&self, phase: Phase) -> Option<&PhaseSummary> {
        self.phases.iter().find(|p| p.phase == phase)
    }

    /// Point count after every iteration, preceded by the initial count.
    pub fn n_gs_trajectory(&self) -> Vec<usize> {
        std::iter::once(self.initial_points)
            .chain(self.iterations.iter().map(|r| r.n_gs))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `report.json`, `trace.csv` (controller) and `iterations.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let report = dir.join("report.json");
        fs::write(&report, self.to_json()?).map_err(|e| Error::io(&report, e))?;
        write_trace(&self.controller, &dir.join("trace.csv"))?;
        write_csv(&self.iterations, &dir.join("iterations.csv"))
    }
}

pub(crate) fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(e, path))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(e: csv::Error, path: &Path) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{other:?}")),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub phase_seconds: Vec<f64>,
    pub total_seconds: f64,
}

impl Timing {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic_scene, SceneKind, SyntheticSpec};

    #[test]
    fn evaluate_against_own_render_is_perfect() {
        let mut spec = SyntheticSpec::new(SceneKind::TexturedSphere, 1, 50);
        spec.width = 16;
        spec.height = 16;
        spec.views = 4;
        let s = generate_synthetic_scene(&spec).unwrap();
        let m = evaluate(&s.teacher, &s.cameras, &s.ground_truth).unwrap();
        assert_eq!(m.psnr, 100.0);
        assert!((m.ssim - 1.0).abs() < 1e-12);
        assert_eq!(m.views.len(), 4);
        assert!(evaluate(&s.teacher, &[], &[]).is_err());
        assert!(evaluate(&s.teacher, &s.cameras, &s.ground_truth[..2]).is_err());
    }
}
