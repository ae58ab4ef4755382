//! PSNR and windowed SSIM.
//!
//! SSIM is computed on luminance (channel mean) with an 11×11 Gaussian window
//! (σ = 1.5), zero padding at the borders, and `C1 = 0.01²`, `C2 = 0.03²`.

use crate::scene::ImageBuffer;
use crate::Result;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Reported PSNR when the images are (numerically) identical.
pub const PSNR_CAP: f64 = 100.0;

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.same_size(b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data.len().max(1) as f64)
}

/// `10·log10(1/MSE)`, capped at [`PSNR_CAP`] when `MSE < 1e-10`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let m = mse(a, b)?;
    if m < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - c;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|t| t / sum)
}

/// Separable zero-padded Gaussian filter ("same" output size).
fn blur(src: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sx = x as isize + k as isize - r;
                if sx >= 0 && (sx as usize) < w {
                    acc += t * src[y * w + sx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sy = y as isize + k as isize - r;
                if sy >= 0 && (sy as usize) < h {
                    acc += t * tmp[sy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

struct Moments {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    e_xx: Vec<f64>,
    e_yy: Vec<f64>,
    e_xy: Vec<f64>,
}

fn moments(x: &[f64], y: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Moments {
    let sq = |v: &[f64]| v.iter().map(|a| a * a).collect::<Vec<_>>();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    Moments {
        mu_x: blur(x, w, h, taps),
        mu_y: blur(y, w, h, taps),
        e_xx: blur(&sq(x), w, h, taps),
        e_yy: blur(&sq(y), w, h, taps),
        e_xy: blur(&xy, w, h, taps),
    }
}

/// Per-pixel SSIM of two single-channel images.
pub fn ssim_map_gray(x: &[f64], y: &[f64], w: usize, h: usize) -> Vec<f64> {
    let m = moments(x, y, w, h, &gaussian_taps());
    (0..w * h)
        .map(|p| {
            let (mx, my) = (m.mu_x[p], m.mu_y[p]);
            let vx = m.e_xx[p] - mx * mx;
            let vy = m.e_yy[p] - my * my;
            let cxy = m.e_xy[p] - mx * my;
            ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .collect()
}

/// Mean SSIM over the luminance map.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.same_size(b)?;
    let map = ssim_map_gray(&a.luminance(), &b.luminance(), a.width, a.height);
    Ok(map.iter().sum::<f64>() / map.len().max(1) as f64)
}

/// Mean SSIM and its gradient with respect to every channel of `a`.
pub fn ssim_with_grad(a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, Vec<f64>)> {
    a.same_size(b)?;
    let (w, h) = (a.width, a.height);
    let x = a.luminance();
    let y = b.luminance();
    let taps = gaussian_taps();
    let m = moments(&x, &y, w, h, &taps);
    let n = (w * h) as f64;

    // s = A1·A2 / (B1·B2) in terms of the raw moments μx, E[x²], E[xy]
    let mut d_mu = vec![0.0; w * h];
    let mut d_exx = vec![0.0; w * h];
    let mut d_exy = vec![0.0; w * h];
    let mut total = 0.0;
    for p in 0..w * h {
        let (mx, my) = (m.mu_x[p], m.mu_y[p]);
        let vx = m.e_xx[p] - mx * mx;
        let vy = m.e_yy[p] - my * my;
        let cxy = m.e_xy[p] - mx * my;
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * cxy + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = vx + vy + SSIM_C2;
        let den = b1 * b2;
        let s = a1 * a2 / den;
        total += s;
        d_mu[p] = ((2.0 * my * a2 - 2.0 * my * a1) / den - s * (2.0 * mx / b1 - 2.0 * mx / b2)) / n;
        d_exx[p] = -s / b2 / n;
        d_exy[p] = 2.0 * a1 / den / n;
    }
    let g_mu = blur(&d_mu, w, h, &taps);
    let g_exx = blur(&d_exx, w, h, &taps);
    let g_exy = blur(&d_exy, w, h, &taps);
    let mut grad = vec![0.0; w * h * 3];
    for p in 0..w * h {
        let g_lum = g_mu[p] + 2.0 * x[p] * g_exx[p] + y[p] * g_exy[p];
        grad[3 * p..3 * p + 3].fill(g_lum / 3.0);
    }
    Ok((total / n, grad))
}
