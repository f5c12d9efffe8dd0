use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{fit, TrainConfig, TrainReport};
use crate::autograd::{CsrMatrix, Init, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::MultiplexGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RgcnConfig {
    /// Hidden widths; the layer count is `hidden.len() + 1`.
    pub hidden: Vec<usize>,
}

impl Default for RgcnConfig {
    fn default() -> Self {
        RgcnConfig { hidden: vec![128, 128, 128] }
    }
}

/// One row-normalized propagation matrix per relation: entry `(i, j)` is
/// `w_ij / Σ_k w_ik`, so `c_{i,r}` is the weighted degree.
#[derive(Debug, Clone)]
pub struct RelationalOperators {
    pub names: Vec<String>,
    pub ops: Vec<Arc<CsrMatrix>>,
    pub n: usize,
}

impl RelationalOperators {
    pub fn from_multiplex(g: &MultiplexGraph) -> Self {
        RelationalOperators {
            names: g.layers().iter().map(|(n, _)| n.clone()).collect(),
            ops: g.layers().iter().map(|(_, a)| Arc::new(a.row_normalized())).collect(),
            n: g.n(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RgcnLayer {
    pub w_self: ParamId,
    pub w_rel: Vec<ParamId>,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct Rgcn {
    pub relations: Vec<String>,
    pub dims: Vec<usize>,
    pub layers: Vec<RgcnLayer>,
}

impl Rgcn {
    pub fn init(cfg: &RgcnConfig, relations: &[String], in_dim: usize, n_labels: usize, store: &mut ParamStore, seed: u64) -> Result<Self> {
        if relations.is_empty() {
            return Err(Error::Config("RGCN needs at least one relation".into()));
        }
        let mut dims = vec![in_dim];
        dims.extend(&cfg.hidden);
        dims.push(n_labels);
        if dims.contains(&0) {
            return Err(Error::Config(format!("RGCN widths {dims:?} contain 0")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for l in 0..dims.len() - 1 {
            let (i, o) = (dims[l], dims[l + 1]);
            let w_self = store.add(&format!("rgcn.{l}.self"), i, o, Init::Glorot, &mut rng)?;
            let w_rel = relations
                .iter()
                .map(|r| store.add(&format!("rgcn.{l}.{r}"), i, o, Init::Glorot, &mut rng))
                .collect::<Result<_>>()?;
            let bias = store.add(&format!("rgcn.{l}.bias"), 1, o, Init::Zeros, &mut rng)?;
            layers.push(RgcnLayer { w_self, w_rel, bias });
        }
        Ok(Rgcn {
            relations: relations.to_vec(),
            dims,
            layers,
        })
    }

    /// `h' = Σ_r S_r h W_r + h W_0 + b`, ReLU between layers, softmax at
    /// the output. Returns `[n × L]` probabilities.
    pub fn forward(&self, t: &mut Tape, s: &ParamStore, ops: &RelationalOperators, h0: Var) -> Result<Var> {
        if ops.names != self.relations {
            return Err(Error::Graph(format!("relations {:?} do not match model relations {:?}", ops.names, self.relations)));
        }
        if t.shape(h0) != (ops.n, self.dims[0]) {
            return Err(Error::shape("rgcn", format!("input {:?}, expected ({}, {})", t.shape(h0), ops.n, self.dims[0])));
        }
        let mut h = h0;
        for (l, layer) in self.layers.iter().enumerate() {
            let w0 = t.param(s, layer.w_self);
            let mut acc = t.matmul(h, w0)?;
            for (op, &wr) in ops.ops.iter().zip(&layer.w_rel) {
                let m = t.spmm(op.clone(), h)?;
                let wr = t.param(s, wr);
                let m = t.matmul(m, wr)?;
                acc = t.add(acc, m)?;
            }
            let b = t.param(s, layer.bias);
            acc = t.add_row(acc, b)?;
            h = if l + 1 < self.layers.len() { t.relu(acc)? } else { t.softmax_rows(acc)? };
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct FittedRgcn {
    pub model: Rgcn,
    pub store: ParamStore,
    pub report: TrainReport,
}

impl FittedRgcn {
    pub fn predict(&self, ops: &RelationalOperators, h0: &Array2<f64>) -> Result<Array2<f64>> {
        let mut t = Tape::new();
        let x = t.constant(h0.clone())?;
        let p = self.model.forward(&mut t, &self.store, ops, x)?;
        Ok(t.value(p).clone())
    }
}

/// Transductive training: the whole graph is propagated, the loss uses the
/// rows of `rows` only.
pub fn fit_rgcn(
    cfg: &RgcnConfig,
    train: &TrainConfig,
    ops: &RelationalOperators,
    h0: &Array2<f64>,
    rows: &[usize],
    targets: &[usize],
    n_labels: usize,
) -> Result<FittedRgcn> {
    let mut store = ParamStore::new();
    let model = Rgcn::init(cfg, &ops.names, h0.ncols(), n_labels, &mut store, train.seed)?;
    let report = fit(&mut store, train, rows, targets, |t, s, batch, _| {
        let x = t.constant(h0.clone())?;
        let p = model.forward(t, s, ops, x)?;
        t.gather_rows(p, Arc::new(batch.to_vec()))
    })?;
    Ok(FittedRgcn { model, store, report })
}
