//! Adaptive densification and pruning.
//!
//! An ELBO-style objective (data term minus a covariance/density complexity
//! term) is smoothed with an EMA; densification stops once its relative change
//! over a window stays below a threshold. Afterwards an opacity regularizer
//! drives weak splats towards zero and low-opacity points are removed on a
//! fixed schedule.

mod densify;
mod elbo;
mod prune;
mod trace;

pub use densify::{densify_clone_split, DensifyOutcome, DensifyStats};
pub use elbo::{complexity_from_parts, elbo_step, kl_complexity, ElboState};
pub use prune::{opacity_reg_loss, prune_low_opacity, PruneOutcome};
pub use trace::{write_trace, TraceEvent, TraceRow};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdpConfig {
    /// Weight of the density term in the complexity penalty.
    pub lambda_xi: f64,
    /// EMA smoothing factor.
    pub ema_decay: f64,
    /// Window `w` over which the relative change is measured.
    pub window: usize,
    /// Stop threshold `τ`.
    pub tau: f64,
    /// Consecutive sub-threshold checks required to stop.
    pub patience: usize,
    pub lambda2: f64,
    pub lambda3: f64,
    pub prune_threshold: f64,
    pub prune_interval: usize,
    /// Screen-space gradient norm above which a point is densified.
    pub grad_threshold: f64,
    /// Clone/split boundary as a fraction of the scene extent.
    pub percent_dense: f64,
    /// Iterations between densification passes.
    pub densify_interval: usize,
    /// Densification never grows the scene past this many points.
    pub max_points: usize,
}

impl Default for AdpConfig {
    fn default() -> Self {
        AdpConfig {
            lambda_xi: 0.1,
            ema_decay: 0.99,
            window: 500,
            tau: 0.005,
            patience: 3,
            lambda2: 1e-4,
            lambda3: 1e-4,
            prune_threshold: 0.05,
            prune_interval: 100,
            grad_threshold: 2e-4,
            percent_dense: 0.01,
            densify_interval: 100,
            max_points: 20_000,
        }
    }
}

impl AdpConfig {
    /// Iterations between two evaluations of the stop rule.
    pub fn check_interval(&self) -> usize {
        (self.window / 5).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad(format!("ema_decay {} must lie in (0, 1)", self.ema_decay));
        }
        if self.window == 0 || self.patience == 0 {
            return bad("window and patience must be positive".into());
        }
        if !(self.prune_threshold > 0.0 && self.prune_threshold < 1.0) {
            return bad(format!(
                "prune_threshold {} must lie in (0, 1)",
                self.prune_threshold
            ));
        }
        if self.prune_interval == 0 || self.densify_interval == 0 {
            return bad("prune_interval and densify_interval must be at least 1".into());
        }
        for (name, v) in [
            ("lambda_xi", self.lambda_xi),
            ("tau", self.tau),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("percent_dense", self.percent_dense),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be non-negative"));
            }
        }
        if self.grad_threshold.is_nan() || self.grad_threshold < 0.0 {
            return bad(format!(
                "grad_threshold {} must be non-negative",
                self.grad_threshold
            ));
        }
        Ok(())
    }
}
