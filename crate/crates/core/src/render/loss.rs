use crate::scene::ImageBuffer;
use crate::{Error, Result};

use super::metrics::ssim_with_grad;

/// Mean absolute error over all pixels and channels.
pub fn l1_loss(rendered: &ImageBuffer, target: &ImageBuffer) -> Result<f64> {
    rendered.same_size(target)?;
    let sum: f64 = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / rendered.data.len().max(1) as f64)
}

fn check_lambda(lambda1: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda1) {
        return Err(Error::Config(format!("lambda1 = {lambda1} outside [0, 1]")));
    }
    Ok(())
}

/// `(1-λ1)·L1 + λ1·(1 - SSIM)`.
pub fn render_loss(rendered: &ImageBuffer, target: &ImageBuffer, lambda1: f64) -> Result<f64> {
    render_loss_with_grad(rendered, target, lambda1).map(|(l, _)| l)
}

/// Loss and `∂L/∂rendered` (row-major RGB). The L1 subgradient at a zero
/// residual is 0.
pub fn render_loss_with_grad(
    rendered: &ImageBuffer,
    target: &ImageBuffer,
    lambda1: f64,
) -> Result<(f64, Vec<f64>)> {
    check_lambda(lambda1)?;
    rendered.same_size(target)?;
    let n = rendered.data.len().max(1) as f64;
    let mut l1 = 0.0;
    let mut grad: Vec<f64> = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| {
            let r = a - b;
            l1 += r.abs();
            let sign = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            (1.0 - lambda1) * sign / n
        })
        .collect();
    l1 /= n;
    if lambda1 == 0.0 {
        return Ok((l1, grad));
    }
    let (ssim, ssim_grad) = ssim_with_grad(rendered, target)?;
    for (g, s) in grad.iter_mut().zip(&ssim_grad) {
        *g -= lambda1 * s;
    }
    Ok(((1.0 - lambda1) * l1 + lambda1 * (1.0 - ssim), grad))
}
