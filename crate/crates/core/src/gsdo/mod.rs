//! Graph-based spatial distribution optimization.
//!
//! Point centers are embedded by a small encoder that mixes each point's
//! feature with residuals to its k nearest neighbours (in feature space), a
//! neighbourhood max-pool and a scene-wide average. Two losses tie the latent
//! features back to Euclidean space: a centroid alignment term through a
//! linear projection to R³, and a smoothness term over sampled local
//! neighbourhoods. Gradients flow to both the encoder and the point positions.

pub mod checkpoint;
mod encoder;
mod knn;
mod losses;
mod sample;

pub use encoder::{
    embed_initial, encode, encoder_backward, EncoderCache, EncoderParams, Linear, RowMatrix,
};
pub use knn::{build_knn_graph, KnnGraph};
pub use losses::{gsdo_losses, loss_cet, loss_final, loss_smt, project_latent, GsdoLosses};
pub use sample::{sample_neighborhoods, NeighborhoodSample};

use serde::{Deserialize, Serialize};

/// Hyperparameters of the encoder and its losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GsdoConfig {
    /// Feature width D.
    pub feature_dim: usize,
    /// Width of the hidden fully connected layer.
    pub hidden_dim: usize,
    /// Neighbours per node in the feature-space graph.
    pub knn_k: usize,
    /// Number of sampled neighbourhoods M.
    pub neighborhoods: usize,
    /// Points per neighbourhood K.
    pub neighborhood_size: usize,
    pub lambda_c: f64,
    pub lambda_s: f64,
    /// Iterations between graph and neighbourhood refreshes.
    pub graph_refresh: usize,
}

impl Default for GsdoConfig {
    fn default() -> Self {
        GsdoConfig {
            feature_dim: 32,
            hidden_dim: 32,
            knn_k: 8,
            neighborhoods: 64,
            neighborhood_size: 8,
            lambda_c: 0.01,
            lambda_s: 0.001,
            graph_refresh: 10,
        }
    }
}

impl GsdoConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::Config(m.to_string()));
        if self.feature_dim == 0 || self.hidden_dim == 0 {
            return bad("feature_dim and hidden_dim must be positive");
        }
        if self.knn_k == 0 {
            return bad("knn_k must be positive");
        }
        if self.neighborhood_size < 2 {
            return bad("neighborhood_size must be at least 2");
        }
        if self.graph_refresh == 0 {
            return bad("graph_refresh must be positive");
        }
        if !(self.lambda_c >= 0.0 && self.lambda_s >= 0.0) {
            return bad("lambda_c and lambda_s must be non-negative");
        }
        Ok(())
    }
}
