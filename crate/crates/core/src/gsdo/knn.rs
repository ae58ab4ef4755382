use rayon::prelude::*;

use super::RowMatrix;
use crate::{Error, Result};

/// Directed k-nearest-neighbour graph in feature space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnGraph {
    /// Per node, neighbour indices by ascending distance.
    pub neighbors: Vec<Vec<usize>>,
    /// Iteration at which the graph was built.
    pub built_at: usize,
}

impl KnnGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` rows nearest to `query` (excluding `skip`), ordered by
/// ascending distance with ties going to the lower index.
pub(crate) fn nearest<F>(n: usize, k: usize, skip: usize, dist: F) -> Vec<usize>
where
    F: Fn(usize) -> f64,
{
    let mut cand: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != skip)
        .map(|j| (dist(j), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let k = k.min(cand.len());
    if k < cand.len() {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    cand.into_iter().map(|(_, j)| j).collect()
}

/// Exact Euclidean kNN over feature rows. `k` is clamped to `N - 1`.
pub fn build_knn_graph(features: &RowMatrix, k: usize) -> Result<KnnGraph> {
    let n = features.rows;
    if n < 2 {
        return Err(Error::Graph(format!(
            "need at least 2 points for a kNN graph, got {n}"
        )));
    }
    if k == 0 {
        return Err(Error::Graph("k must be positive".into()));
    }
    let neighbors = (0..n)
        .into_par_iter()
        .map(|i| {
            let fi = features.row(i);
            nearest(n, k, i, |j| squared_distance(fi, features.row(j)))
        })
        .collect();
    Ok(KnnGraph {
        neighbors,
        built_at: 0,
    })
}
