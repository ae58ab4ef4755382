//! Forward splatting: projection, front-to-back compositing, losses and metrics.

pub mod composite;
pub mod loss;
pub mod metrics;
pub mod project;
mod raster;

pub use composite::composite_pixel;
pub use loss::{l1_loss, render_loss, render_loss_with_grad};
pub use metrics::{psnr, ssim};
pub use project::{project_gaussian, ProjectedGaussian};
pub use raster::{rasterize, render_image, PixelSplatGrad, RasterFrame};
