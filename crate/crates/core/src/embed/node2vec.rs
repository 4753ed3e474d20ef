//! Seeded node2vec: second-order biased walks and skip-gram with negative
//! sampling, trained single-threaded in a fixed update order.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbedError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Node2VecParams {
    pub walks_per_node: usize,
    pub walk_length: usize,
    /// Return parameter `p`.
    pub return_param: f64,
    /// In-out parameter `q`.
    pub inout_param: f64,
    pub dims: usize,
    pub window: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negative_samples: usize,
    pub rng_seed: u64,
}

impl Default for Node2VecParams {
    fn default() -> Self {
        Node2VecParams {
            walks_per_node: 10,
            walk_length: 40,
            return_param: 1.0,
            inout_param: 1.0,
            dims: 64,
            window: 5,
            epochs: 5,
            learning_rate: 0.025,
            negative_samples: 5,
            rng_seed: 42,
        }
    }
}

impl Node2VecParams {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.walks_per_node == 0
            || self.walk_length == 0
            || self.dims == 0
            || self.window == 0
            || self.epochs == 0
            || self.negative_samples == 0
        {
            return Err(EmbedError::InvalidParams("counts must be at least 1"));
        }
        if !(self.return_param > 0.0 && self.inout_param > 0.0) {
            return Err(EmbedError::InvalidParams("p and q must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(EmbedError::InvalidParams("learning rate must be positive"));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x > 20.0 {
        1.0
    } else if x < -20.0 {
        0.0
    } else {
        1.0 / (1.0 + libm::exp(-x))
    }
}

fn pick_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return i;
        }
        r -= w;
    }
    weights.len() - 1
}

fn walk(adjacency: &[Vec<usize>], start: usize, params: &Node2VecParams, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut path = alloc::vec![start];
    let mut weights = Vec::new();
    while path.len() < params.walk_length {
        let cur = *path.last().unwrap();
        let nbrs = &adjacency[cur];
        if nbrs.is_empty() {
            break;
        }
        let next = if path.len() == 1 {
            nbrs[rng.random_range(0..nbrs.len())]
        } else {
            let prev = path[path.len() - 2];
            weights.clear();
            weights.extend(nbrs.iter().map(|&x| {
                if x == prev {
                    1.0 / params.return_param
                } else if adjacency[prev].binary_search(&x).is_ok() {
                    1.0
                } else {
                    1.0 / params.inout_param
                }
            }));
            nbrs[pick_weighted(rng, &weights)]
        };
        path.push(next);
    }
    path
}

/// Trains input vectors for every node of an undirected graph given as
/// sorted adjacency lists.
pub(super) fn train(adjacency: &[Vec<usize>], params: &Node2VecParams) -> Vec<Vec<f64>> {
    let n = adjacency.len();
    let d = params.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);

    let mut walks = Vec::with_capacity(n * params.walks_per_node);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..params.walks_per_node {
        order.shuffle(&mut rng);
        for &start in &order {
            walks.push(walk(adjacency, start, params, &mut rng));
        }
    }

    // Unigram^0.75 noise distribution.
    let mut counts = alloc::vec![0.0f64; n];
    for w in &walks {
        for &v in w {
            counts[v] += 1.0;
        }
    }
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for c in &counts {
        acc += libm::pow(*c, 0.75);
        cumulative.push(acc);
    }
    let noise_total = acc;

    let mut input: Vec<f64> = (0..n * d).map(|_| (rng.random::<f64>() - 0.5) / d as f64).collect();
    let mut output = alloc::vec![0.0f64; n * d];
    let tokens: usize = walks.iter().map(Vec::len).sum();
    let total_steps = (tokens * params.epochs).max(1) as f64;
    let mut step = 0usize;
    let mut grad = alloc::vec![0.0f64; d];

    for _ in 0..params.epochs {
        for w in &walks {
            for (i, &center) in w.iter().enumerate() {
                let lr = params.learning_rate * (1.0 - step as f64 / total_steps).max(1e-4);
                step += 1;
                let lo = i.saturating_sub(params.window);
                let hi = (i + params.window).min(w.len() - 1);
                for (j, &context) in w.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    for k in 0..=params.negative_samples {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let r = rng.random::<f64>() * noise_total;
                            let t = cumulative.partition_point(|c| *c <= r).min(n - 1);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let ci = &input[center * d..center * d + d];
                        let to = &mut output[target * d..target * d + d];
                        let dot: f64 = ci.iter().zip(to.iter()).map(|(a, b)| a * b).sum();
                        let g = (label - sigmoid(dot)) * lr;
                        for x in 0..d {
                            grad[x] += g * to[x];
                            to[x] += g * ci[x];
                        }
                    }
                    for (x, g) in grad.iter().enumerate() {
                        input[center * d + x] += g;
                    }
                }
            }
        }
    }

    input.chunks(d).map(<[f64]>::to_vec).collect()
}
