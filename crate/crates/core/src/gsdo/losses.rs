use nalgebra::Vector3;

use super::{encode, encoder_backward, EncoderParams, KnnGraph, NeighborhoodSample, RowMatrix};
use crate::{Error, Result};

/// `x̂_i = g(z_i)` for every latent row.
pub fn project_latent(z: &RowMatrix, params: &EncoderParams) -> Vec<Vector3<f64>> {
    (0..z.rows)
        .map(|i| {
            let mut x = Vector3::zeros();
            params.proj.forward(z.row(i), x.as_mut_slice());
            x
        })
        .collect()
}

/// Squared norm of the mean offset between positions and their projections.
pub fn loss_cet(positions: &[Vector3<f64>], projected: &[Vector3<f64>]) -> Result<f64> {
    if positions.is_empty() {
        return Err(Error::EmptyScene);
    }
    if positions.len() != projected.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} positions vs {} projections",
            positions.len(),
            projected.len()
        )));
    }
    Ok(centroid_gap(positions, projected).norm_squared())
}

fn centroid_gap(positions: &[Vector3<f64>], projected: &[Vector3<f64>]) -> Vector3<f64> {
    let sum: Vector3<f64> = positions.iter().zip(projected).map(|(x, p)| x - p).sum();
    sum / positions.len() as f64
}

fn latent_distance(z: &RowMatrix, a: usize, b: usize) -> f64 {
    z.row(a)
        .iter()
        .zip(z.row(b))
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Mean over consecutive neighbourhood pairs of latent distance times
/// Euclidean distance.
pub fn loss_smt(
    sample: &NeighborhoodSample,
    positions: &[Vector3<f64>],
    z: &RowMatrix,
) -> Result<f64> {
    let k = sample.size();
    if k < 2 {
        return Err(Error::Config(
            "neighbourhoods need at least 2 points".into(),
        ));
    }
    let norm = (sample.neighborhoods.len() * (k - 1)) as f64;
    let mut total = 0.0;
    for hood in &sample.neighborhoods {
        for pair in hood.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if a >= positions.len() || b >= positions.len() || a >= z.rows || b >= z.rows {
                return Err(Error::Graph("neighbourhood index out of range".into()));
            }
            total += latent_distance(z, a, b) * (positions[a] - positions[b]).norm();
        }
    }
    Ok(total / norm)
}

pub fn loss_final(render: f64, cet: f64, smt: f64, lambda_c: f64, lambda_s: f64) -> f64 {
    lambda_c * cet + lambda_s * smt + render
}

/// Both GSDO losses together with gradients of `weight_c·L_cet + weight_s·L_smt`.
#[derive(Debug, Clone)]
pub struct GsdoLosses {
    pub cet: f64,
    pub smt: f64,
    pub grad_positions: Vec<Vector3<f64>>,
    pub grad_params: EncoderParams,
}

pub fn gsdo_losses(
    positions: &[Vector3<f64>],
    params: &EncoderParams,
    graph: &KnnGraph,
    sample: &NeighborhoodSample,
    weight_c: f64,
    weight_s: f64,
) -> Result<GsdoLosses> {
    let cache = encode(positions, params, graph)?;
    let z = &cache.z;
    let n = positions.len();
    let projected = project_latent(z, params);
    let cet = loss_cet(positions, &projected)?;
    let smt = loss_smt(sample, positions, z)?;

    let mut g_x = vec![Vector3::zeros(); n];
    let mut g_z = RowMatrix::zeros(n, z.cols);
    let mut g_proj = params.zeros_like();

    if weight_c != 0.0 {
        let e = centroid_gap(positions, &projected);
        let g = e * (2.0 * weight_c / n as f64);
        for i in 0..n {
            g_x[i] += g;
            let g_hat = -g;
            params
                .proj
                .backward(z.row(i), g_hat.as_slice(), &mut g_proj.proj, g_z.row_mut(i));
        }
    }
    if weight_s != 0.0 {
        let k = sample.size();
        let c = weight_s / (sample.neighborhoods.len() * (k - 1)) as f64;
        for hood in &sample.neighborhoods {
            for pair in hood.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                let dz = latent_distance(z, a, b);
                let dx_vec = positions[a] - positions[b];
                let dx = dx_vec.norm();
                // the norm is not differentiable at zero; use the zero subgradient
                if dz > 0.0 {
                    let s = c * dx / dz;
                    for ch in 0..z.cols {
                        let d = s * (z.row(a)[ch] - z.row(b)[ch]);
                        g_z.row_mut(a)[ch] += d;
                        g_z.row_mut(b)[ch] -= d;
                    }
                }
                if dx > 0.0 {
                    let d = dx_vec * (c * dz / dx);
                    g_x[a] += d;
                    g_x[b] -= d;
                }
            }
        }
    }
    let (mut grad_params, g_enc) = encoder_backward(positions, params, graph, &cache, &g_z);
    for (acc, g) in grad_params.proj.weight.iter_mut().zip(&g_proj.proj.weight) {
        *acc += g;
    }
    for (acc, g) in grad_params.proj.bias.iter_mut().zip(&g_proj.proj.bias) {
        *acc += g;
    }
    for (acc, g) in g_x.iter_mut().zip(g_enc) {
        *acc += g;
    }
    Ok(GsdoLosses {
        cet,
        smt,
        grad_positions: g_x,
        grad_params,
    })
}
