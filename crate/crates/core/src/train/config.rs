use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::adam::PointLearningRates;
use crate::adp::AdpConfig;
use crate::gsdo::GsdoConfig;
use crate::{Error, Result};

/// Every hyperparameter of a training run. Serialized as one flat JSON
/// object; the densification/pruning and encoder settings are inlined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Weight of the D-SSIM term in the render loss.
    pub lambda1: f64,
    /// Position learning rate, multiplied by the scene extent.
    pub lr_position: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub lr_encoder: f64,
    pub phase1_iters: usize,
    pub phase2_iters: usize,
    pub phase3_iters: usize,
    /// Clone/split during phase 1.
    pub densify: bool,
    /// Let the ELBO rule end densification early.
    pub use_elbo_stop: bool,
    /// Add the opacity regularizer in phase 2.
    pub use_opacity_reg: bool,
    /// Prune low-opacity points in phase 2.
    pub use_pruning: bool,
    /// Train the encoder and its losses in phase 3; otherwise phase 3 is
    /// plain render-loss training.
    pub use_gsdo: bool,
    /// Fixed threshold for the plain post-training prune used by the ablation.
    pub post_prune_threshold: f64,
    /// Save scene and encoder every this many iterations (0 disables).
    pub checkpoint_interval: usize,
    #[serde(flatten)]
    pub adp: AdpConfig,
    #[serde(flatten)]
    pub encoder: GsdoConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            lambda1: 0.2,
            lr_position: 1.6e-4,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            lr_encoder: 1e-3,
            phase1_iters: 2000,
            phase2_iters: 2000,
            phase3_iters: 2000,
            densify: true,
            use_elbo_stop: true,
            use_opacity_reg: true,
            use_pruning: true,
            use_gsdo: true,
            post_prune_threshold: 0.3,
            checkpoint_interval: 0,
            adp: AdpConfig::default(),
            encoder: GsdoConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn learning_rates(&self, extent: f64) -> PointLearningRates {
        PointLearningRates {
            position: self.lr_position * extent,
            scale: self.lr_scale,
            rotation: self.lr_rotation,
            opacity: self.lr_opacity,
            color: self.lr_color,
        }
    }

    pub fn total_iters(&self) -> usize {
        self.phase1_iters + self.phase2_iters + self.phase3_iters
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda1) {
            return Err(Error::Config(format!(
                "lambda1 = {} outside [0, 1]",
                self.lambda1
            )));
        }
        for (name, v) in [
            ("lr_position", self.lr_position),
            ("lr_scale", self.lr_scale),
            ("lr_rotation", self.lr_rotation),
            ("lr_opacity", self.lr_opacity),
            ("lr_color", self.lr_color),
            ("lr_encoder", self.lr_encoder),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.post_prune_threshold > 0.0 && self.post_prune_threshold < 1.0) {
            return Err(Error::Config(
                "post_prune_threshold must lie in (0, 1)".into(),
            ));
        }
        self.adp.validate()?;
        self.encoder.validate()
    }

    /// Names of every key the flat JSON form accepts.
    pub fn keys() -> BTreeSet<String> {
        match serde_json::to_value(TrainConfig::default()) {
            Ok(serde_json::Value::Object(map)) => map.keys().cloned().collect(),
            _ => BTreeSet::new(),
        }
    }

    /// Parses a flat JSON object, rejecting unknown keys. Missing keys take
    /// their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        Self::from_value(value)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let serde_json::Value::Object(map) = &value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let known = Self::keys();
        if let Some(bad) = map.keys().find(|k| !known.contains(*k)) {
            return Err(Error::Config(format!("unknown config key '{bad}'")));
        }
        let cfg: TrainConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
