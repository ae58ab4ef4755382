//! CPU differentiable 3D Gaussian splatting with compact-scene training.
//!
//! The crate is organised around the training pipeline:
//!
//! - [`scene`]: Gaussian points, scenes, cameras, images and their file formats.
//! - [`render`]: projection, front-to-back compositing, image losses and metrics.
//! - [`grad`]: analytic gradients of every loss plus a finite-difference checker.
//! - [`adp`]: ELBO-controlled densification, the opacity regularizer and pruning.
//! - [`gsdo`]: the graph-based point encoder and its alignment/smoothness losses.
//! - [`train`]: Adam, the three-phase trainer and the ablation runner.
//! - [`cli`]: the `microsplat` command line.

pub mod adp;
pub mod cli;
mod error;
pub mod grad;
pub mod gsdo;
pub mod render;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use scene::{Camera, GaussianPoint, ImageBuffer, Scene};
