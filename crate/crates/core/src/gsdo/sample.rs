use nalgebra::Vector3;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::knn::nearest;
use crate::{Error, Result};

/// Sampled local neighbourhoods for the smoothness loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodSample {
    /// Each neighbourhood starts with its seed point, followed by the seed's
    /// nearest neighbours by ascending distance.
    pub neighborhoods: Vec<Vec<usize>>,
}

impl NeighborhoodSample {
    pub fn size(&self) -> usize {
        self.neighborhoods.first().map_or(0, Vec::len)
    }
}

/// Draws `m` distinct seed points and attaches their `k - 1` nearest
/// Euclidean neighbours. `m` is clamped to the point count.
pub fn sample_neighborhoods(
    positions: &[Vector3<f64>],
    m: usize,
    k: usize,
    seed: u64,
) -> Result<NeighborhoodSample> {
    let n = positions.len();
    if k < 2 {
        return Err(Error::Config(format!(
            "neighbourhood size must be at least 2, got {k}"
        )));
    }
    if n < k {
        return Err(Error::Graph(format!(
            "need at least {k} points for neighbourhoods of size {k}, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = index::sample(&mut rng, n, m.min(n)).into_vec();
    let neighborhoods = seeds
        .into_iter()
        .map(|s| {
            let mut hood = Vec::with_capacity(k);
            hood.push(s);
            hood.extend(nearest(n, k - 1, s, |j| {
                (positions[j] - positions[s]).norm_squared()
            }));
            hood
        })
        .collect();
    Ok(NeighborhoodSample { neighborhoods })
}
