use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{EncoderAdam, PointAdam};
use super::config::TrainConfig;
use super::report::{
    evaluate, EventRecord, IterationRecord, Phase, PhaseSummary, RunReport, Timing,
};
use crate::adp::{
    densify_clone_split, kl_complexity, prune_low_opacity, DensifyStats, ElboState, TraceEvent,
    TraceRow,
};
use crate::grad::{opacity_reg_backward, render_view_backward, ViewBackward};
use crate::gsdo::checkpoint::save_encoder;
use crate::gsdo::{
    build_knn_graph, embed_initial, gsdo_losses, sample_neighborhoods, EncoderParams, KnnGraph,
    NeighborhoodSample,
};
use crate::scene::ply::save_scene;
use crate::scene::{Camera, ImageBuffer, Scene};
use crate::{Error, Result};

/// Iterations per window of the phase-1 loss monotonicity check.
const DIVERGENCE_WINDOW: usize = 100;
/// Relative rise of the smoothed phase-1 loss over one window that counts as divergence.
const DIVERGENCE_RISE: f64 = 0.05;

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_ENCODER: u64 = 0x100;
const STREAM_GRAPH: u64 = 0x200;

/// Training views and their ground truth.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub cameras: &'a [Camera],
    pub targets: &'a [ImageBuffer],
}

impl<'a> TrainData<'a> {
    pub fn new(cameras: &'a [Camera], targets: &'a [ImageBuffer]) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::Config("training needs at least one camera".into()));
        }
        if cameras.len() != targets.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} cameras but {} ground-truth images",
                cameras.len(),
                targets.len()
            )));
        }
        for (c, t) in cameras.iter().zip(targets) {
            c.validate()?;
            if c.width != t.width || c.height != t.height {
                return Err(Error::DimensionMismatch(format!(
                    "camera {} is {}x{} but its image is {}x{}",
                    c.id, c.width, c.height, t.width, t.height
                )));
            }
        }
        Ok(TrainData { cameras, targets })
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub scene: Scene,
    pub encoder: Option<EncoderParams>,
    pub report: RunReport,
    pub timing: Timing,
}

/// Mutable state of a run between phases. Cloning it branches the run: a
/// clone continued with the same config behaves exactly like the original.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub scene: Scene,
    pub encoder: Option<EncoderParams>,
    pub elbo: ElboState,
    /// Global iterations completed so far.
    pub iteration: usize,
    pub report: RunReport,
    pub timing: Timing,
    adam: PointAdam,
    encoder_adam: Option<EncoderAdam>,
    n_initial: usize,
    extent: f64,
    checkpoint_dir: Option<PathBuf>,
    /// Set by a non-finite loss; later phases are skipped.
    halted: bool,
}

/// Cycles through the views in a fresh random order each epoch.
struct ViewOrder {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl ViewOrder {
    fn new(views: usize, seed: u64) -> Self {
        ViewOrder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..views).collect(),
            pos: views,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

impl TrainState {
    pub fn new(scene: Scene, data: TrainData<'_>, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        scene.validate()?;
        if scene.is_empty() {
            return Err(Error::EmptyScene);
        }
        let initial_metrics = evaluate(&scene, data.cameras, data.targets)?;
        let n = scene.len();
        Ok(TrainState {
            encoder: None,
            elbo: ElboState::new(),
            iteration: 0,
            report: RunReport {
                seed: config.seed,
                initial_points: n,
                final_metrics: initial_metrics.clone(),
                initial_metrics,
                phases: Vec::new(),
                iterations: Vec::new(),
                controller: Vec::new(),
                events: Vec::new(),
                peak_points: n,
                final_points: n,
                densify_stopped_at: None,
                diverged: false,
                warnings: Vec::new(),
            },
            timing: Timing::default(),
            adam: PointAdam::new(n),
            encoder_adam: None,
            n_initial: n,
            extent: scene.extent,
            checkpoint_dir: None,
            halted: false,
            scene,
        })
    }

    /// Saves scene (and encoder) snapshots into `dir` every
    /// `checkpoint_interval` iterations.
    pub fn with_checkpoints(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.report.warnings.push(msg);
    }

    /// Runs one phase with its budget from `config`.
    pub fn run_phase(
        &mut self,
        phase: Phase,
        data: TrainData<'_>,
        config: &TrainConfig,
    ) -> Result<()> {
        config.validate()?;
        let started = Instant::now();
        let start = self.iteration + 1;
        let n_start = self.scene.len();
        let budget = match phase {
            Phase::Densify => config.phase1_iters,
            Phase::Prune => config.phase2_iters,
            Phase::Refine => config.phase3_iters,
        };
        if self.halted {
            if budget > 0 {
                self.warn(format!("skipping {phase:?} phase after a non-finite loss"));
            }
        } else {
            match phase {
                Phase::Densify => self.densify_phase(budget, data, config)?,
                Phase::Prune => self.prune_phase(budget, data, config)?,
                Phase::Refine => self.refine_phase(budget, data, config)?,
            }
        }
        let metrics = evaluate(&self.scene, data.cameras, data.targets)?;
        self.report.phases.push(PhaseSummary {
            phase,
            start,
            end: self.iteration,
            n_start,
            n_end: self.scene.len(),
            psnr: metrics.psnr,
            ssim: metrics.ssim,
        });
        self.report.final_metrics = metrics;
        self.report.final_points = self.scene.len();
        self.timing
            .phase_seconds
            .push(started.elapsed().as_secs_f64());
        self.timing.total_seconds = self.timing.phase_seconds.iter().sum();
        Ok(())
    }

    pub fn finish(self) -> TrainOutput {
        TrainOutput {
            scene: self.scene,
            encoder: self.encoder,
            report: self.report,
            timing: self.timing,
        }
    }

    fn view_backward(
        &mut self,
        view: usize,
        data: TrainData<'_>,
        config: &TrainConfig,
    ) -> Result<Option<ViewBackward>> {
        let vb = render_view_backward(
            &self.scene,
            &data.cameras[view],
            &data.targets[view],
            config.lambda1,
            false,
        )?;
        if !vb.loss.is_finite() {
            self.report.diverged = true;
            self.halted = true;
            self.warn(format!(
                "non-finite render loss at iteration {}",
                self.iteration + 1
            ));
            return Ok(None);
        }
        Ok(Some(vb))
    }

    fn record(&mut self, phase: Phase, view: usize, loss: f64, render_loss: f64) {
        let n = self.scene.len();
        self.report.peak_points = self.report.peak_points.max(n);
        self.report.iterations.push(IterationRecord {
            iteration: self.iteration,
            phase,
            view,
            loss,
            render_loss,
            n_gs: n,
        });
    }

    fn maybe_checkpoint(&self, config: &TrainConfig) -> Result<()> {
        let Some(dir) = &self.checkpoint_dir else {
            return Ok(());
        };
        if config.checkpoint_interval == 0 || !self.iteration.is_multiple_of(config.checkpoint_interval) {
            return Ok(());
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = format!("ckpt_{:06}", self.iteration);
        save_scene(&self.scene, dir.join(format!("{stem}.ply")))?;
        if let Some(enc) = &self.encoder {
            save_encoder(enc, &dir.join(format!("{stem}_encoder")))?;
        }
        Ok(())
    }

    fn densify_phase(
        &mut self,
        budget: usize,
        data: TrainData<'_>,
        config: &TrainConfig,
    ) -> Result<()> {
        let adp = &config.adp;
        let lr = config.learning_rates(self.extent);
        let mut views = ViewOrder::new(data.cameras.len(), mix_seed(config.seed, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 11));
        let mut stats = DensifyStats::new(self.scene.len());
        let mut smoothed = Vec::with_capacity(budget);
        let mut ema = None;

        for k in 1..=budget {
            let view = views.next();
            let Some(vb) = self.view_backward(view, data, config)? else {
                break;
            };
            self.iteration += 1;
            let active = config.densify && !(config.use_elbo_stop && self.elbo.stopped);
            if active {
                let cam = &data.cameras[view];
                stats.add_view(&vb.screen_grads, cam.width, cam.height);
            }
            let kl = kl_complexity(&self.scene, self.extent, self.n_initial, adp.lambda_xi)?;
            let was_stopped = self.elbo.stopped;
            let delta = self.elbo.step(vb.loss, kl, adp);
            let mut event = None;
            if config.use_elbo_stop && self.elbo.stopped && !was_stopped {
                event = Some(TraceEvent::Stop);
                self.report.densify_stopped_at = Some(self.iteration);
                self.report.events.push(EventRecord {
                    iteration: self.iteration,
                    phase: Phase::Densify,
                    kind: TraceEvent::Stop,
                    n_before: self.scene.len(),
                    n_after: self.scene.len(),
                    cloned: 0,
                    split: 0,
                    removed: 0,
                    max_removed_opacity: None,
                    threshold: None,
                });
            }

            self.adam.step(&mut self.scene, &vb.grads, &lr);

            let still_active = config.densify && !(config.use_elbo_stop && self.elbo.stopped);
            if still_active && k % adp.densify_interval == 0 && k < budget {
                let n_before = self.scene.len();
                let out = densify_clone_split(&self.scene, &stats, adp, &mut rng);
                if out.cloned + out.split > 0 {
                    let survivors = n_before - out.split;
                    self.adam.remap(&out.origin, survivors);
                    self.scene = out.scene;
                    event = Some(TraceEvent::Densify);
                    self.report.events.push(EventRecord {
                        iteration: self.iteration,
                        phase: Phase::Densify,
                        kind: TraceEvent::Densify,
                        n_before,
                        n_after: self.scene.len(),
                        cloned: out.cloned,
                        split: out.split,
                        removed: out.split,
                        max_removed_opacity: None,
                        threshold: None,
                    });
                }
                stats = DensifyStats::new(self.scene.len());
            }

            self.report.controller.push(TraceRow {
                iteration: self.iteration,
                l_r: vb.loss,
                l_kl: Some(kl),
                l_e: Some(-vb.loss - kl),
                ema: Some(self.elbo.ema),
                delta_t: delta,
                n_gs: self.scene.len(),
                event,
            });
            self.record(Phase::Densify, view, vb.loss, vb.loss);

            let e = match ema {
                None => vb.loss,
                Some(prev) => adp.ema_decay * prev + (1.0 - adp.ema_decay) * vb.loss,
            };
            ema = Some(e);
            smoothed.push(e);
            if smoothed.len() > DIVERGENCE_WINDOW {
                let past = smoothed[smoothed.len() - 1 - DIVERGENCE_WINDOW];
                if e > past * (1.0 + DIVERGENCE_RISE) && !self.report.diverged {
                    self.report.diverged = true;
                    self.warn(format!(
                        "smoothed phase-1 loss rose from {past:.6} to {e:.6} over {DIVERGENCE_WINDOW} iterations ending at {}",
                        self.iteration
                    ));
                }
            }
            self.maybe_checkpoint(config)?;
        }
        Ok(())
    }

    fn prune_phase(
        &mut self,
        budget: usize,
        data: TrainData<'_>,
        config: &TrainConfig,
    ) -> Result<()> {
        let adp = &config.adp;
        let lr = config.learning_rates(self.extent);
        let mut views = ViewOrder::new(data.cameras.len(), mix_seed(config.seed, 2));

        for k in 1..=budget {
            let view = views.next();
            let Some(mut vb) = self.view_backward(view, data, config)? else {
                break;
            };
            self.iteration += 1;
            let mut loss = vb.loss;
            if config.use_opacity_reg {
                let (l, g) = opacity_reg_backward(&self.scene, adp.lambda2, adp.lambda3);
                loss += l;
                for (acc, g) in vb.grads.iter_mut().zip(g) {
                    *acc += g;
                }
            }
            self.adam.step(&mut self.scene, &vb.grads, &lr);

            let mut event = None;
            if config.use_pruning && k % adp.prune_interval == 0 {
                let n_before = self.scene.len();
                let opacities = self.scene.opacities();
                let out = prune_low_opacity(&self.scene, adp.prune_threshold);
                if out.refused {
                    self.warn(format!(
                        "prune at iteration {} refused: every point is below opacity {}",
                        self.iteration, adp.prune_threshold
                    ));
                } else if !out.removed.is_empty() {
                    let mut keep = vec![true; n_before];
                    let mut max_removed = f64::NEG_INFINITY;
                    for &i in &out.removed {
                        keep[i] = false;
                        max_removed = max_removed.max(opacities[i]);
                    }
                    self.adam.retain(&keep);
                    self.scene = out.scene;
                    event = Some(TraceEvent::Prune);
                    self.report.events.push(EventRecord {
                        iteration: self.iteration,
                        phase: Phase::Prune,
                        kind: TraceEvent::Prune,
                        n_before,
                        n_after: self.scene.len(),
                        cloned: 0,
                        split: 0,
                        removed: out.removed.len(),
                        max_removed_opacity: Some(max_removed),
                        threshold: Some(adp.prune_threshold),
                    });
                }
            }
            self.report.controller.push(TraceRow {
                iteration: self.iteration,
                l_r: vb.loss,
                l_kl: None,
                l_e: None,
                ema: None,
                delta_t: None,
                n_gs: self.scene.len(),
                event,
            });
            self.record(Phase::Prune, view, loss, vb.loss);
            self.maybe_checkpoint(config)?;
        }
        Ok(())
    }

    fn refresh_graph(
        &mut self,
        config: &TrainConfig,
        round: u64,
    ) -> Result<Option<(KnnGraph, NeighborhoodSample)>> {
        let Some(enc) = &self.encoder else {
            return Ok(None);
        };
        let positions = self.scene.positions();
        let features = embed_initial(&positions, enc);
        let graph = build_knn_graph(&features, config.encoder.knn_k)?;
        let k = config.encoder.neighborhood_size.min(positions.len());
        let seed = mix_seed(config.seed, STREAM_GRAPH + round);
        let sample = sample_neighborhoods(&positions, config.encoder.neighborhoods, k, seed)?;
        Ok(Some((graph, sample)))
    }

    fn refine_phase(
        &mut self,
        budget: usize,
        data: TrainData<'_>,
        config: &TrainConfig,
    ) -> Result<()> {
        let lr = config.learning_rates(self.extent);
        let mut views = ViewOrder::new(data.cameras.len(), mix_seed(config.seed, 3));
        let g = &config.encoder;
        let mut use_gsdo = config.use_gsdo && budget > 0;
        if use_gsdo && self.scene.len() < 2 {
            self.warn(format!(
                "skipping encoder losses: {} point(s) cannot form a graph",
                self.scene.len()
            ));
            use_gsdo = false;
        }
        if use_gsdo && self.encoder.is_none() {
            let enc = EncoderParams::new(
                g.feature_dim,
                g.hidden_dim,
                g.knn_k,
                mix_seed(config.seed, STREAM_ENCODER),
            );
            self.encoder_adam = Some(EncoderAdam::new(&enc));
            self.encoder = Some(enc);
        }
        let mut graph = None;

        for k in 1..=budget {
            if use_gsdo && (k - 1) % g.graph_refresh == 0 {
                graph = self.refresh_graph(config, ((k - 1) / g.graph_refresh) as u64)?;
            }
            let view = views.next();
            let Some(mut vb) = self.view_backward(view, data, config)? else {
                break;
            };
            self.iteration += 1;
            let mut loss = vb.loss;
            if let (Some((kg, sample)), Some(enc)) = (&graph, self.encoder.as_mut()) {
                let positions = self.scene.positions();
                let out = gsdo_losses(&positions, enc, kg, sample, g.lambda_c, g.lambda_s)?;
                loss += g.lambda_c * out.cet + g.lambda_s * out.smt;
                for (acc, gp) in vb.grads.iter_mut().zip(&out.grad_positions) {
                    acc.position += gp;
                }
                if let Some(opt) = self.encoder_adam.as_mut() {
                    opt.step(enc, &out.grad_params, config.lr_encoder);
                }
            }
            self.adam.step(&mut self.scene, &vb.grads, &lr);
            self.record(Phase::Refine, view, loss, vb.loss);
            self.maybe_checkpoint(config)?;
        }
        Ok(())
    }
}

/// Runs the three phases in order.
pub fn train(
    scene: Scene,
    cameras: &[Camera],
    targets: &[ImageBuffer],
    config: &TrainConfig,
) -> Result<TrainOutput> {
    train_with_checkpoints(scene, cameras, targets, config, None)
}

pub fn train_with_checkpoints(
    scene: Scene,
    cameras: &[Camera],
    targets: &[ImageBuffer],
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutput> {
    let data = TrainData::new(cameras, targets)?;
    let mut state = TrainState::new(scene, data, config)?;
    if let Some(dir) = checkpoint_dir {
        state = state.with_checkpoints(dir);
    }
    for phase in Phase::ALL {
        state.run_phase(phase, data, config)?;
    }
    Ok(state.finish())
}

/// Phase 3 alone, starting from an arbitrary scene.
pub fn refine_only(
    scene: Scene,
    cameras: &[Camera],
    targets: &[ImageBuffer],
    config: &TrainConfig,
) -> Result<TrainOutput> {
    let data = TrainData::new(cameras, targets)?;
    let mut state = TrainState::new(scene, data, config)?;
    state.run_phase(Phase::Refine, data, config)?;
    Ok(state.finish())
}
