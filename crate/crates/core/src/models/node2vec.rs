use ndarray::{Array2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{MultiplexGraph, WeightedAdjacency};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct N2vConfig {
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    /// Noisy-edge factor: `x` counts as a neighbor of the previous node `t`
    /// when `w(x, t) ≥ β · mean edge weight of x`.
    pub beta: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub dim: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial skip-gram learning rate, decayed linearly.
    pub lr: f64,
    pub seed: u64,
}

impl Default for N2vConfig {
    fn default() -> Self {
        N2vConfig {
            p: 1.0,
            q: 1.0,
            beta: 1.0,
            walk_length: 80,
            walks_per_node: 10,
            window: 5,
            dim: 128,
            negatives: 5,
            epochs: 1,
            lr: 0.025,
            seed: 0,
        }
    }
}

impl N2vConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.q > 0.0) {
            return Err(Error::Config(format!("node2vec p and q must be positive, got p={} q={}", self.p, self.q)));
        }
        if self.walk_length < 2 {
            return Err(Error::Config(format!("walk length {} < 2", self.walk_length)));
        }
        if self.dim == 0 || !(self.beta >= 0.0) {
            return Err(Error::Config("node2vec dim must be positive and beta non-negative".into()));
        }
        Ok(())
    }
}

/// Precomputed per-node mean edge weight for the in-out rule.
#[derive(Debug, Clone)]
pub struct WalkGraph<'a> {
    pub adj: &'a WeightedAdjacency,
    mean_weight: Vec<f64>,
}

impl<'a> WalkGraph<'a> {
    pub fn new(adj: &'a WeightedAdjacency) -> Self {
        let mean_weight = (0..adj.n())
            .map(|i| if adj.degree(i) == 0 { 0.0 } else { adj.weighted_degree(i) / adj.degree(i) as f64 })
            .collect();
        WalkGraph { adj, mean_weight }
    }

    pub fn mean_weight(&self, x: usize) -> f64 {
        self.mean_weight[x]
    }

    /// Unnormalized probabilities of stepping from `cur` to each neighbor,
    /// having arrived from `prev`.
    pub fn transition_weights(&self, prev: Option<usize>, cur: usize, p: f64, q: f64, beta: f64) -> Vec<(usize, f64)> {
        self.adj
            .neighbors(cur)
            .iter()
            .map(|&(x, w)| {
                let alpha = match prev {
                    None => 1.0,
                    Some(t) if x == t => 1.0 / p,
                    Some(t) => {
                        let wxt = self.adj.get(x, t);
                        if wxt > 0.0 && wxt >= beta * self.mean_weight[x] {
                            1.0
                        } else {
                            1.0 / q
                        }
                    }
                };
                (x, w * alpha)
            })
            .collect()
    }
}

fn pick(weights: &[(usize, f64)], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().map(|&(_, w)| w).sum();
    let mut r = rng.random::<f64>() * total;
    for &(x, w) in weights {
        if r < w {
            return x;
        }
        r -= w;
    }
    weights.last().expect("nonempty").0
}

/// One biased walk of at most `cfg.walk_length` nodes; stops early at a
/// node without neighbors.
pub fn walk_from(g: &WalkGraph, start: usize, cfg: &N2vConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut walk = vec![start];
    let mut prev = None;
    while walk.len() < cfg.walk_length {
        let cur = *walk.last().unwrap();
        let w = g.transition_weights(prev, cur, cfg.p, cfg.q, cfg.beta);
        if w.is_empty() {
            break;
        }
        walk.push(pick(&w, rng));
        prev = Some(cur);
    }
    walk
}

/// `walks_per_node` rounds over every node; walk `(round, v)` draws from
/// its own ChaCha stream so the output does not depend on thread count.
/// Walks shorter than 2 nodes are dropped.
pub fn node2vec_walks(adj: &WeightedAdjacency, cfg: &N2vConfig) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    let g = WalkGraph::new(adj);
    let n = adj.n();
    let walks: Vec<Vec<usize>> = (0..cfg.walks_per_node * n)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k as u64);
            walk_from(&g, k % n, cfg, &mut rng)
        })
        .filter(|w| w.len() >= 2)
        .collect();
    Ok(walks)
}

fn sigmoid(x: f64) -> f64 {
    if x > 30.0 {
        1.0
    } else if x < -30.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Skip-gram with negative sampling over node walks; noise distribution is
/// node frequency to the power 0.75. Sequential SGD, so a fixed seed gives
/// identical embeddings.
pub fn skipgram_embed(walks: &[Vec<usize>], n_nodes: usize, cfg: &N2vConfig) -> Result<Array2<f64>> {
    if walks.is_empty() {
        return Err(Error::Graph("skip-gram needs at least one walk".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = 0.5 / cfg.dim as f64;
    let mut emb = Array2::from_shape_fn((n_nodes, cfg.dim), |_| rng.random_range(-a..=a));
    let mut ctx = Array2::<f64>::zeros((n_nodes, cfg.dim));

    let mut counts = vec![0.0f64; n_nodes];
    for w in walks {
        for &v in w {
            if v >= n_nodes {
                return Err(Error::shape("skipgram", format!("node {v} of {n_nodes}")));
            }
            counts[v] += 1.0;
        }
    }
    let noise = WeightedIndex::new(counts.iter().map(|c| c.powf(0.75))).map_err(|e| Error::Graph(e.to_string()))?;

    let total_steps = (cfg.epochs * walks.iter().map(Vec::len).sum::<usize>()).max(1) as f64;
    let mut step = 0usize;
    let mut grad = vec![0.0; cfg.dim];
    for _ in 0..cfg.epochs {
        for walk in walks {
            for (i, &center) in walk.iter().enumerate() {
                let lr = (cfg.lr * (1.0 - step as f64 / total_steps)).max(cfg.lr * 1e-4);
                step += 1;
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window + 1).min(walk.len());
                for (j, &target) in walk.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    for k in 0..=cfg.negatives {
                        let (out, label) = if k == 0 {
                            (target, 1.0)
                        } else {
                            let o = noise.sample(&mut rng);
                            if o == target {
                                continue;
                            }
                            (o, 0.0)
                        };
                        let v = emb.row(center);
                        let mut u = ctx.row_mut(out);
                        let g = (label - sigmoid(v.dot(&u))) * lr;
                        for d in 0..cfg.dim {
                            grad[d] += g * u[d];
                            u[d] += g * v[d];
                        }
                    }
                    let mut v = emb.row_mut(center);
                    for d in 0..cfg.dim {
                        v[d] += grad[d];
                    }
                }
            }
        }
    }
    Ok(emb)
}

/// Walks and skip-gram per multiplex layer, embeddings concatenated in layer
/// order (`[n × dim·layers]`).
pub fn multiplex_embeddings(g: &MultiplexGraph, cfg: &N2vConfig) -> Result<Array2<f64>> {
    let mut parts = Vec::new();
    for (k, (name, adj)) in g.layers().iter().enumerate() {
        let layer_cfg = N2vConfig {
            seed: cfg.seed.wrapping_add(k as u64 * 1_000_003),
            ..cfg.clone()
        };
        let walks = node2vec_walks(adj, &layer_cfg)?;
        let emb = if walks.is_empty() {
            log::warn!("layer {name} has no edges; its embedding block is zero");
            Array2::zeros((g.n(), cfg.dim))
        } else {
            skipgram_embed(&walks, g.n(), &layer_cfg)?
        };
        parts.push(emb);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(1), &views).map_err(|e| Error::shape("n2v", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> N2vConfig {
        N2vConfig {
            walk_length: 10,
            walks_per_node: 5,
            dim: 16,
            ..N2vConfig::default()
        }
    }

    #[test]
    fn two_node_path_alternates() {
        let adj = WeightedAdjacency::from_triplets(2, [(0, 1, 1.0), (1, 0, 1.0)]);
        for w in node2vec_walks(&adj, &cfg()).unwrap() {
            assert_eq!(w.len(), 10);
            for pair in w.windows(2) {
                assert_ne!(pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn dangling_nodes_yield_no_walks() {
        let adj = WeightedAdjacency::from_triplets(3, [(0, 1, 1.0), (1, 0, 1.0)]);
        let walks = node2vec_walks(&adj, &cfg()).unwrap();
        assert!(walks.iter().all(|w| !w.contains(&2)));
        assert_eq!(walks.len(), 10);
    }

    #[test]
    fn large_p_q_on_triangle_avoids_return() {
        let t = [(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0), (0, 2, 1.0), (2, 0, 1.0)];
        let adj = WeightedAdjacency::from_triplets(3, t);
        let g = WalkGraph::new(&adj);
        let w = g.transition_weights(Some(0), 1, 1e12, 1e12, 1.0);
        assert_eq!(w, vec![(0, 1e-12), (2, 1.0)]);
    }

    #[test]
    fn weighted_in_out_rule() {
        // 0-1 heavy, 1-2 light, 0-2 light; x=2 seen from t=0 via cur=1
        let t = [(0, 1, 4.0), (1, 0, 4.0), (1, 2, 1.0), (2, 1, 1.0), (0, 2, 1.0), (2, 0, 1.0), (2, 3, 5.0), (3, 2, 5.0)];
        let adj = WeightedAdjacency::from_triplets(4, t);
        let g = WalkGraph::new(&adj);
        // mean weight of 2 is 7/3 > w(2,0) = 1, so 2 is not a true neighbor of 0
        let w = g.transition_weights(Some(0), 1, 2.0, 4.0, 1.0);
        assert_eq!(w, vec![(0, 2.0), (2, 0.25)]);
        let w = g.transition_weights(Some(0), 1, 2.0, 4.0, 0.4);
        assert_eq!(w, vec![(0, 2.0), (2, 1.0)]);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let adj = WeightedAdjacency::empty(2);
        let bad = N2vConfig { p: 0.0, ..cfg() };
        assert!(node2vec_walks(&adj, &bad).is_err());
        let bad = N2vConfig { walk_length: 1, ..cfg() };
        assert!(node2vec_walks(&adj, &bad).is_err());
    }

    #[test]
    fn zero_epochs_keep_initialization_and_runs_repeat() {
        let adj = WeightedAdjacency::from_triplets(3, [(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]);
        let walks = node2vec_walks(&adj, &cfg()).unwrap();
        let zero = N2vConfig { epochs: 0, ..cfg() };
        let e0 = skipgram_embed(&walks, 3, &zero).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(zero.seed);
        let a = 0.5 / 16.0;
        let init = Array2::from_shape_fn((3, 16), |_| rng.random_range(-a..=a));
        assert_eq!(e0, init);
        assert_eq!(skipgram_embed(&walks, 3, &cfg()).unwrap(), skipgram_embed(&walks, 3, &cfg()).unwrap());
    }

    fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
        a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
    }

    #[test]
    fn disconnected_cliques_separate() {
        let mut t = Vec::new();
        for base in [0, 6] {
            for i in 0..6 {
                for j in 0..6 {
                    if i != j {
                        t.push((base + i, base + j, 1.0));
                    }
                }
            }
        }
        let adj = WeightedAdjacency::from_triplets(12, t);
        let c = N2vConfig {
            walk_length: 20,
            walks_per_node: 20,
            dim: 16,
            epochs: 3,
            ..N2vConfig::default()
        };
        let e = skipgram_embed(&node2vec_walks(&adj, &c).unwrap(), 12, &c).unwrap();
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for i in 0..12 {
            for j in i + 1..12 {
                let s = cosine(e.row(i), e.row(j));
                if (i < 6) == (j < 6) {
                    intra.push(s);
                } else {
                    inter.push(s);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&intra) - mean(&inter) > 0.2, "{} vs {}", mean(&intra), mean(&inter));
    }
}
