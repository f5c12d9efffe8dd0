use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{fit, TrainConfig, TrainReport};
use crate::autograd::{CsrMatrix, Init, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::WeightedAdjacency;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SageConfig {
    pub hidden: Vec<usize>,
    /// Neighbors sampled per node, one entry per layer.
    pub samples: Vec<usize>,
    /// Seed of the sampling used at prediction time.
    pub predict_seed: u64,
}

impl Default for SageConfig {
    fn default() -> Self {
        SageConfig {
            hidden: vec![128],
            samples: vec![25, 10],
            predict_seed: 0,
        }
    }
}

/// Weighted neighbor-mean operator over at most `k` neighbors per node,
/// drawn uniformly without replacement. Nodes without neighbors get an
/// empty row, i.e. a zero mean.
pub fn sample_mean_operator(adj: &WeightedAdjacency, k: usize, rng: &mut ChaCha8Rng) -> CsrMatrix {
    let rows = (0..adj.n())
        .map(|i| {
            let nb = adj.neighbors(i);
            let picked: Vec<(usize, f64)> = if nb.len() <= k {
                nb.to_vec()
            } else {
                let mut idx = rand::seq::index::sample(rng, nb.len(), k).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|p| nb[p]).collect()
            };
            let total: f64 = picked.iter().map(|&(_, w)| w).sum();
            if total > 0.0 {
                picked.into_iter().map(|(j, w)| (j, w / total)).collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    CsrMatrix::from_rows(adj.n(), rows)
}

/// One operator per layer; layer `l` uses `ChaCha8Rng(seed)` on stream `l`.
pub fn sample_operators(adj: &WeightedAdjacency, samples: &[usize], seed: u64) -> Vec<Arc<CsrMatrix>> {
    samples
        .iter()
        .enumerate()
        .map(|(l, &k)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(l as u64);
            Arc::new(sample_mean_operator(adj, k, &mut rng))
        })
        .collect()
}

/// Mean-aggregator GraphSAGE: `h' = σ([h ‖ mean_{j∈N(i)} h_j] W)`.
#[derive(Debug, Clone)]
pub struct Sage {
    pub dims: Vec<usize>,
    pub weights: Vec<ParamId>,
}

impl Sage {
    pub fn init(cfg: &SageConfig, in_dim: usize, n_labels: usize, store: &mut ParamStore, seed: u64) -> Result<Self> {
        let mut dims = vec![in_dim];
        dims.extend(&cfg.hidden);
        dims.push(n_labels);
        if dims.contains(&0) {
            return Err(Error::Config(format!("SAGE widths {dims:?} contain 0")));
        }
        if cfg.samples.len() != dims.len() - 1 {
            return Err(Error::Config(format!(
                "{} sample sizes for {} SAGE layers",
                cfg.samples.len(),
                dims.len() - 1
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..dims.len() - 1)
            .map(|l| store.add(&format!("sage.{l}"), 2 * dims[l], dims[l + 1], Init::Glorot, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Sage { dims, weights })
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, ops: &[Arc<CsrMatrix>], h0: Var) -> Result<Var> {
        if ops.len() != self.weights.len() {
            return Err(Error::shape("sage", format!("{} operators for {} layers", ops.len(), self.weights.len())));
        }
        let mut h = h0;
        for (l, (&w, op)) in self.weights.iter().zip(ops).enumerate() {
            let agg = t.spmm(op.clone(), h)?;
            let cat = t.concat_cols(&[h, agg])?;
            let w = t.param(s, w);
            let z = t.matmul(cat, w)?;
            h = if l + 1 < self.weights.len() { t.relu(z)? } else { t.softmax_rows(z)? };
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct FittedSage {
    pub cfg: SageConfig,
    pub model: Sage,
    pub store: ParamStore,
    pub report: TrainReport,
}

impl FittedSage {
    /// Probabilities for every node of `adj`, which may contain nodes not
    /// seen in training.
    pub fn predict(&self, adj: &WeightedAdjacency, h0: &Array2<f64>) -> Result<Array2<f64>> {
        let ops = sample_operators(adj, &self.cfg.samples, self.cfg.predict_seed);
        let mut t = Tape::new();
        let x = t.constant(h0.clone())?;
        let p = self.model.forward(&mut t, &self.store, &ops, x)?;
        Ok(t.value(p).clone())
    }
}

/// Neighborhoods are resampled every epoch.
pub fn fit_sage(
    cfg: &SageConfig,
    train: &TrainConfig,
    adj: &WeightedAdjacency,
    h0: &Array2<f64>,
    rows: &[usize],
    targets: &[usize],
    n_labels: usize,
) -> Result<FittedSage> {
    if h0.nrows() != adj.n() {
        return Err(Error::shape("sage", format!("{} feature rows for {} nodes", h0.nrows(), adj.n())));
    }
    let mut store = ParamStore::new();
    let model = Sage::init(cfg, h0.ncols(), n_labels, &mut store, train.seed)?;
    let mut cache: Option<(usize, Vec<Arc<CsrMatrix>>)> = None;
    let report = fit(&mut store, train, rows, targets, |t, s, batch, epoch| {
        if cache.as_ref().map(|c| c.0) != Some(epoch) {
            let seed = train.seed.wrapping_mul(0x9e37_79b9).wrapping_add(epoch as u64 + 1);
            cache = Some((epoch, sample_operators(adj, &cfg.samples, seed)));
        }
        let ops = &cache.as_ref().unwrap().1;
        let x = t.constant(h0.clone())?;
        let p = model.forward(t, s, ops, x)?;
        t.gather_rows(p, Arc::new(batch.to_vec()))
    })?;
    Ok(FittedSage {
        cfg: cfg.clone(),
        model,
        store,
        report,
    })
}
