use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::KnnGraph;
use crate::{Error, Result};

/// Dense row-major `rows × cols` matrix, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RowMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RowMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Affine layer `y = W x + b` with `W` stored row-major (`out × in`).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in `±1/sqrt(fan_in)` for weights and biases.
    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Linear {
            inputs,
            outputs,
            weight: draw(inputs * outputs),
            bias: draw(outputs),
        }
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, out) in y.iter_mut().enumerate() {
            let w = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            *out = self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients into `grad` and input gradients into `gx`.
    pub fn backward(&self, x: &[f64], gy: &[f64], grad: &mut Linear, gx: &mut [f64]) {
        for (o, &g) in gy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = o * self.inputs;
            grad.bias[o] += g;
            for i in 0..self.inputs {
                grad.weight[row + i] += g * x[i];
                gx[i] += g * self.weight[row + i];
            }
        }
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// All learnable weights of the point encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// Position embedding, R³ → R^D.
    pub embed: Linear,
    /// Residual-enhanced local transform, R^D → R^D.
    pub local: Linear,
    /// First fully connected layer over `[h ‖ m̄]`, R^2D → R^H.
    pub fc1: Linear,
    /// Second fully connected layer, R^H → R^D.
    pub fc2: Linear,
    /// Lightweight projection of latents back to R³.
    pub proj: Linear,
    /// Neighbour count of the feature graph.
    pub k: usize,
}

impl EncoderParams {
    pub fn new(feature_dim: usize, hidden_dim: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = feature_dim;
        EncoderParams {
            embed: Linear::init(3, d, &mut rng),
            local: Linear::init(d, d, &mut rng),
            fc1: Linear::init(2 * d, hidden_dim, &mut rng),
            fc2: Linear::init(hidden_dim, d, &mut rng),
            proj: Linear::init(d, 3, &mut rng),
            k,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |l: &Linear| Linear::zeros(l.inputs, l.outputs);
        EncoderParams {
            embed: z(&self.embed),
            local: z(&self.local),
            fc1: z(&self.fc1),
            fc2: z(&self.fc2),
            proj: z(&self.proj),
            k: self.k,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.embed.outputs
    }

    pub fn hidden_dim(&self) -> usize {
        self.fc1.outputs
    }

    pub fn layers(&self) -> [(&'static str, &Linear); 5] {
        [
            ("embed", &self.embed),
            ("local", &self.local),
            ("fc1", &self.fc1),
            ("fc2", &self.fc2),
            ("proj", &self.proj),
        ]
    }

    pub fn layers_mut(&mut self) -> [(&'static str, &mut Linear); 5] {
        [
            ("embed", &mut self.embed),
            ("local", &mut self.local),
            ("fc1", &mut self.fc1),
            ("fc2", &mut self.fc2),
            ("proj", &mut self.proj),
        ]
    }

    /// Every weight and bias tensor, named `<layer>.weight` / `<layer>.bias`.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        self.layers()
            .into_iter()
            .flat_map(|(name, l)| {
                [
                    (format!("{name}.weight"), &l.weight[..]),
                    (format!("{name}.bias"), &l.bias[..]),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.layers_mut()
            .into_iter()
            .flat_map(|(name, l)| {
                [
                    (format!("{name}.weight"), &mut l.weight[..]),
                    (format!("{name}.bias"), &mut l.bias[..]),
                ]
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.param_count()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    fn check_shapes(&self) -> Result<()> {
        let d = self.feature_dim();
        let h = self.hidden_dim();
        let ok = self.embed.inputs == 3
            && self.local.inputs == d
            && self.local.outputs == d
            && self.fc1.inputs == 2 * d
            && self.fc2.inputs == h
            && self.fc2.outputs == d
            && self.proj.inputs == d
            && self.proj.outputs == 3;
        if !ok {
            return Err(Error::DimensionMismatch(
                "encoder layer shapes are inconsistent".into(),
            ));
        }
        Ok(())
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// `f_i = ReLU(W1 x_i + b1)` for every position.
pub fn embed_initial(positions: &[Vector3<f64>], params: &EncoderParams) -> RowMatrix {
    let d = params.feature_dim();
    let mut f = RowMatrix::zeros(positions.len(), d);
    for (i, x) in positions.iter().enumerate() {
        let row = f.row_mut(i);
        params.embed.forward(x.as_slice(), row);
        relu_in_place(row);
    }
    f
}

/// Forward activations of the encoder, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    /// Initial embeddings.
    pub f: RowMatrix,
    /// Summed neighbour residuals `Σ_j (f_i - f_j)`.
    pub r: RowMatrix,
    /// Pre-activation of the local transform.
    pub local_pre: RowMatrix,
    /// Residual-enhanced local features.
    pub h: RowMatrix,
    /// Neighbourhood max-pool of `f`.
    pub m: RowMatrix,
    /// Point index that won each max-pool entry.
    pub m_source: Vec<usize>,
    /// Scene-level mean of `m`.
    pub m_bar: Vec<f64>,
    pub fc1_pre: RowMatrix,
    pub fc1_out: RowMatrix,
    /// Latent features.
    pub z: RowMatrix,
}

/// Runs the encoder over `positions` using a prebuilt feature graph.
pub fn encode(
    positions: &[Vector3<f64>],
    params: &EncoderParams,
    graph: &KnnGraph,
) -> Result<EncoderCache> {
    params.check_shapes()?;
    let n = positions.len();
    if graph.neighbors.len() != n {
        return Err(Error::Graph(format!(
            "graph has {} nodes but the scene has {n} points",
            graph.neighbors.len()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyScene);
    }
    let d = params.feature_dim();
    let hd = params.hidden_dim();
    let f = embed_initial(positions, params);

    let mut r = RowMatrix::zeros(n, d);
    let mut local_pre = RowMatrix::zeros(n, d);
    let mut h = RowMatrix::zeros(n, d);
    let mut m = RowMatrix::zeros(n, d);
    let mut m_source = vec![0usize; n * d];
    let mut scratch = vec![0.0; d];
    for i in 0..n {
        let nbrs = &graph.neighbors[i];
        let fi = f.row(i);
        {
            let ri = r.row_mut(i);
            for &j in nbrs {
                for (acc, (a, b)) in ri.iter_mut().zip(fi.iter().zip(f.row(j))) {
                    *acc += a - b;
                }
            }
        }
        for c in 0..d {
            scratch[c] = fi[c] + r.row(i)[c];
        }
        params.local.forward(&scratch, local_pre.row_mut(i));
        let hi = h.row_mut(i);
        hi.copy_from_slice(local_pre.row(i));
        relu_in_place(hi);

        for c in 0..d {
            let mut best = f64::NEG_INFINITY;
            let mut src = usize::MAX;
            for &j in nbrs {
                let v = f.row(j)[c];
                if v > best || (v == best && j < src) {
                    best = v;
                    src = j;
                }
            }
            if src == usize::MAX {
                // isolated node (single-point scene): pool over itself
                best = fi[c];
                src = i;
            }
            m.row_mut(i)[c] = best;
            m_source[i * d + c] = src;
        }
    }
    let mut m_bar = vec![0.0; d];
    for i in 0..n {
        for (acc, v) in m_bar.iter_mut().zip(m.row(i)) {
            *acc += v;
        }
    }
    m_bar.iter_mut().for_each(|v| *v /= n as f64);

    let mut fc1_pre = RowMatrix::zeros(n, hd);
    let mut fc1_out = RowMatrix::zeros(n, hd);
    let mut z = RowMatrix::zeros(n, d);
    let mut cat = vec![0.0; 2 * d];
    for i in 0..n {
        cat[..d].copy_from_slice(h.row(i));
        cat[d..].copy_from_slice(&m_bar);
        params.fc1.forward(&cat, fc1_pre.row_mut(i));
        let q = fc1_out.row_mut(i);
        q.copy_from_slice(fc1_pre.row(i));
        relu_in_place(q);
        params.fc2.forward(fc1_out.row(i), z.row_mut(i));
    }
    Ok(EncoderCache {
        f,
        r,
        local_pre,
        h,
        m,
        m_source,
        m_bar,
        fc1_pre,
        fc1_out,
        z,
    })
}

/// Backpropagates `∂L/∂z` through the encoder. Returns parameter gradients
/// and `∂L/∂position` per point. The graph is treated as a constant.
pub fn encoder_backward(
    positions: &[Vector3<f64>],
    params: &EncoderParams,
    graph: &KnnGraph,
    cache: &EncoderCache,
    grad_z: &RowMatrix,
) -> (EncoderParams, Vec<Vector3<f64>>) {
    let n = positions.len();
    let d = params.feature_dim();
    let hd = params.hidden_dim();
    let mut grads = params.zeros_like();
    let mut g_f = RowMatrix::zeros(n, d);
    let mut g_m_bar = vec![0.0; d];

    let mut g_q = vec![0.0; hd];
    let mut g_cat = vec![0.0; 2 * d];
    let mut cat = vec![0.0; 2 * d];
    let mut g_s = vec![0.0; d];
    let mut s = vec![0.0; d];
    for i in 0..n {
        g_q.fill(0.0);
        params.fc2.backward(
            cache.fc1_out.row(i),
            grad_z.row(i),
            &mut grads.fc2,
            &mut g_q,
        );
        for (g, pre) in g_q.iter_mut().zip(cache.fc1_pre.row(i)) {
            if *pre <= 0.0 {
                *g = 0.0;
            }
        }
        cat[..d].copy_from_slice(cache.h.row(i));
        cat[d..].copy_from_slice(&cache.m_bar);
        g_cat.fill(0.0);
        params.fc1.backward(&cat, &g_q, &mut grads.fc1, &mut g_cat);
        for (acc, g) in g_m_bar.iter_mut().zip(&g_cat[d..]) {
            *acc += g;
        }
        // through ReLU of the local transform
        let mut g_pre = g_cat[..d].to_vec();
        for (g, pre) in g_pre.iter_mut().zip(cache.local_pre.row(i)) {
            if *pre <= 0.0 {
                *g = 0.0;
            }
        }
        for c in 0..d {
            s[c] = cache.f.row(i)[c] + cache.r.row(i)[c];
        }
        g_s.fill(0.0);
        params
            .local
            .backward(&s, &g_pre, &mut grads.local, &mut g_s);
        // s_i = f_i + Σ_j (f_i - f_j)
        let nbrs = &graph.neighbors[i];
        let self_weight = 1.0 + nbrs.len() as f64;
        for c in 0..d {
            g_f.row_mut(i)[c] += self_weight * g_s[c];
        }
        for &j in nbrs {
            for c in 0..d {
                g_f.row_mut(j)[c] -= g_s[c];
            }
        }
    }
    // m̄ = mean_i m_i, and each m_i[c] copies f from its argmax neighbour
    for i in 0..n {
        for c in 0..d {
            let src = cache.m_source[i * d + c];
            g_f.row_mut(src)[c] += g_m_bar[c] / n as f64;
        }
    }
    let mut g_pos = vec![Vector3::zeros(); n];
    let mut g_pre = vec![0.0; d];
    for i in 0..n {
        for c in 0..d {
            g_pre[c] = if cache.f.row(i)[c] > 0.0 {
                g_f.row(i)[c]
            } else {
                0.0
            };
        }
        params.embed.backward(
            positions[i].as_slice(),
            &g_pre,
            &mut grads.embed,
            g_pos[i].as_mut_slice(),
        );
    }
    (grads, g_pos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsdo::build_knn_graph;

    fn rand_positions(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn zero_embedding_gives_zero_features() {
        let mut p = EncoderParams::new(4, 4, 2, 0);
        p.embed = Linear::zeros(3, 4);
        let f = embed_initial(&rand_positions(5, 1), &p);
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_clips_negative_coordinates() {
        let mut p = EncoderParams::new(3, 3, 1, 0);
        p.embed.weight = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        p.embed.bias = vec![0.0; 3];
        let f = embed_initial(&[Vector3::new(1.0, -1.0, 0.0)], &p);
        assert_eq!(f.row(0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn large_bias_makes_embedding_affine() {
        let mut p = EncoderParams::new(5, 4, 2, 3);
        p.embed.bias = vec![100.0; 5];
        let x = Vector3::new(0.3, -0.8, 0.5);
        let f = embed_initial(&[x], &p);
        let mut expected = vec![0.0; 5];
        p.embed.forward(x.as_slice(), &mut expected);
        assert_eq!(f.row(0), &expected[..]);
    }

    #[test]
    fn identical_positions_give_identical_latents() {
        let p = EncoderParams::new(6, 5, 3, 4);
        let pos = vec![Vector3::new(0.2, 0.1, -0.4); 6];
        let f = embed_initial(&pos, &p);
        let g = build_knn_graph(&f, 3).unwrap();
        let c = encode(&pos, &p, &g).unwrap();
        assert!(c.r.data.iter().all(|&v| v == 0.0));
        assert_eq!(c.m.row(0), c.f.row(0));
        for (a, b) in c.m_bar.iter().zip(c.f.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
        for i in 1..6 {
            assert_eq!(c.z.row(i), c.z.row(0));
        }
    }

    #[test]
    fn two_point_residuals_are_antisymmetric() {
        let p = EncoderParams::new(6, 5, 1, 5);
        let pos = rand_positions(2, 9);
        let g = build_knn_graph(&embed_initial(&pos, &p), 1).unwrap();
        let c = encode(&pos, &p, &g).unwrap();
        for k in 0..6 {
            assert_eq!(c.r.row(0)[k], -c.r.row(1)[k]);
            assert_eq!(c.r.row(0)[k], c.f.row(0)[k] - c.f.row(1)[k]);
        }
    }

    #[test]
    fn residual_sum_equals_k_f_minus_neighbour_sum() {
        for seed in 0..10 {
            let p = EncoderParams::new(8, 8, 4, seed);
            let pos = rand_positions(12, 100 + seed);
            let g = build_knn_graph(&embed_initial(&pos, &p), 4).unwrap();
            let c = encode(&pos, &p, &g).unwrap();
            for i in 0..12 {
                let k = g.neighbors[i].len() as f64;
                for ch in 0..8 {
                    let nsum: f64 = g.neighbors[i].iter().map(|&j| c.f.row(j)[ch]).sum();
                    let alt = k * c.f.row(i)[ch] - nsum;
                    assert!((alt - c.r.row(i)[ch]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn stale_graph_is_rejected() {
        let p = EncoderParams::new(4, 4, 2, 0);
        let pos = rand_positions(5, 1);
        let g = build_knn_graph(&embed_initial(&pos, &p), 2).unwrap();
        assert!(matches!(encode(&pos[..4], &p, &g), Err(Error::Graph(_))));
    }

    #[test]
    fn permutation_equivariance() {
        let p = EncoderParams::new(6, 6, 3, 11);
        let pos = rand_positions(9, 12);
        let g = build_knn_graph(&embed_initial(&pos, &p), 3).unwrap();
        let c = encode(&pos, &p, &g).unwrap();

        let perm: Vec<usize> = vec![4, 0, 8, 2, 7, 1, 3, 6, 5];
        let mut inv = [0; 9];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let pos2: Vec<_> = perm.iter().map(|&o| pos[o]).collect();
        let g2 = KnnGraph {
            neighbors: perm
                .iter()
                .map(|&o| g.neighbors[o].iter().map(|&j| inv[j]).collect())
                .collect(),
            built_at: 0,
        };
        let c2 = encode(&pos2, &p, &g2).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for ch in 0..6 {
                assert!((c2.z.row(new)[ch] - c.z.row(old)[ch]).abs() < 1e-12);
                assert!((c2.h.row(new)[ch] - c.h.row(old)[ch]).abs() < 1e-12);
                assert_eq!(c2.m.row(new)[ch], c.m.row(old)[ch]);
            }
        }
        for ch in 0..6 {
            assert!((c2.m_bar[ch] - c.m_bar[ch]).abs() < 1e-12);
        }
    }
}
