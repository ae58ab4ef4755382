//! The three-phase trainer: densification under ELBO control, opacity-aware
//! pruning, then joint refinement of the Gaussians and the graph encoder.

mod ablation;
mod adam;
mod config;
mod pipeline;
mod report;

pub use ablation::{run_ablation, AblationRow, AblationTable, LADDER};
pub use adam::{EncoderAdam, PointAdam, PointLearningRates};
pub use config::TrainConfig;
pub use pipeline::{
    refine_only, train, train_with_checkpoints, TrainData, TrainOutput, TrainState,
};
pub use report::{
    evaluate, EventRecord, IterationRecord, Metrics, Phase, PhaseSummary, RunReport, Timing,
    ViewMetrics,
};
