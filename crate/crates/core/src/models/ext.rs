use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::logreg::{concat_features, fit_logreg, FittedLogReg};
use super::node2vec::N2vConfig;
use super::rgcn::{fit_rgcn, RelationalOperators, RgcnConfig};
use super::sage::{fit_sage, SageConfig};
use super::train::TrainConfig;
use super::transformer::{fit_transformer, TransTxt, TransformerConfig};
use super::ModelKind;
use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::eval::stratified_folds;
use crate::graph::MultiplexGraph;
use crate::textfeat::{chi2_liw, liw_predict, EmbeddingTable, LiwTable};

/// Hyperparameters of every model; one section per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub models: Vec<ModelKind>,
    pub transformer: TransformerConfig,
    pub text_train: TrainConfig,
    pub rgcn: RgcnConfig,
    pub sage: SageConfig,
    pub graph_train: TrainConfig,
    pub n2v: N2vConfig,
    pub logreg_train: TrainConfig,
    /// Inner folds producing out-of-fold inputs for the meta-classifiers.
    pub stack_folds: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            models: ModelKind::ALL.to_vec(),
            transformer: TransformerConfig::default(),
            text_train: TrainConfig {
                epochs: 30,
                batch_size: 32,
                lr: 1e-3,
                patience: 3,
                ..TrainConfig::default()
            },
            rgcn: RgcnConfig::default(),
            sage: SageConfig::default(),
            graph_train: TrainConfig {
                epochs: 200,
                lr: 0.01,
                weight_decay: 5e-4,
                patience: 20,
                ..TrainConfig::default()
            },
            n2v: N2vConfig::default(),
            logreg_train: TrainConfig {
                epochs: 300,
                lr: 0.05,
                patience: 30,
                ..TrainConfig::default()
            },
            stack_folds: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextOptions {
    /// Minimum user document frequency for the vocabulary.
    pub min_freq: usize,
    pub liw_top_k: usize,
    pub liw_min_freq: usize,
}

impl Default for TextOptions {
    fn default() -> Self {
        TextOptions {
            min_freq: crate::textfeat::DEFAULT_MIN_FREQ,
            liw_top_k: crate::textfeat::DEFAULT_TOP_K,
            liw_min_freq: crate::textfeat::DEFAULT_MIN_FREQ,
        }
    }
}

/// Everything known about the nodes independent of labels.
#[derive(Debug, Clone, Copy)]
pub struct NodeData<'a> {
    /// Vocabulary ids per node, truncated to the transformer length.
    pub seqs: &'a [Vec<usize>],
    /// Raw tokens per node.
    pub tokens: &'a [Vec<String>],
    pub embeddings: &'a EmbeddingTable,
    pub multiplex: &'a MultiplexGraph,
    /// Node2vec+ embeddings, needed only by N2V-EXT.
    pub n2v: Option<&'a Array2<f64>>,
}

impl NodeData<'_> {
    pub fn n(&self) -> usize {
        self.seqs.len()
    }
}

fn mix(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(tag.wrapping_mul(0xbf58_476d_1ce4_e5b9)) ^ tag
}

/// Probabilities for `rows` from models fitted without them: stratified
/// `k`-fold, `fit_predict(train_rows, train_targets, held_out_rows)`.
/// Output row `i` belongs to `rows[i]`.
pub fn out_of_fold<F>(rows: &[usize], targets: &[usize], n_labels: usize, k: usize, seed: u64, mut fit_predict: F) -> Result<Array2<f64>>
where
    F: FnMut(&[usize], &[usize], &[usize]) -> Result<Array2<f64>>,
{
    if k < 2 || rows.len() < k {
        return Err(Error::Config(format!("{k} stacking folds over {} rows", rows.len())));
    }
    let fold = stratified_folds(targets, k, seed);
    let mut out = Array2::zeros((rows.len(), n_labels));
    for f in 0..k {
        let (mut tr_r, mut tr_t, mut ho_pos) = (Vec::new(), Vec::new(), Vec::new());
        for (i, (&r, &y)) in rows.iter().zip(targets).enumerate() {
            if fold[i] == f {
                ho_pos.push(i);
            } else {
                tr_r.push(r);
                tr_t.push(y);
            }
        }
        if ho_pos.is_empty() {
            continue;
        }
        let ho_rows: Vec<usize> = ho_pos.iter().map(|&i| rows[i]).collect();
        let p = fit_predict(&tr_r, &tr_t, &ho_rows)?;
        if p.dim() != (ho_rows.len(), n_labels) {
            return Err(Error::shape("out_of_fold", format!("{:?} for {} rows", p.dim(), ho_rows.len())));
        }
        for (k, &i) in ho_pos.iter().enumerate() {
            out.row_mut(i).assign(&p.row(k));
        }
    }
    Ok(out)
}

/// Text view of one training fold.
#[derive(Debug, Clone)]
pub struct TextStage {
    /// Transformer trained on the whole fold, applied to every node.
    pub trans: TransTxt,
    pub trans_probs: Array2<f64>,
    pub liw: LiwTable,
    pub liw_probs: Array2<f64>,
    pub meta: FittedLogReg,
    /// Meta-classifier output `[n × L]`; training rows come from
    /// out-of-fold inputs.
    pub h0: Array2<f64>,
}

impl TextStage {
    fn checkpoints_with(&self, name: &str, store: ParamStore) -> Vec<(String, ParamStore)> {
        vec![
            ("transformer".into(), self.trans.store.clone()),
            ("text_meta".into(), self.meta.store.clone()),
            (name.into(), store),
        ]
    }
}

fn liw_probs(data: &NodeData, table: &LiwTable, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), table.n_labels()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&ndarray::Array1::from(liw_predict(&data.tokens[r], table)));
    }
    out
}

fn fit_liw(data: &NodeData, rows: &[usize], targets: &[usize], n_labels: usize, opts: &TextOptions) -> Result<LiwTable> {
    let docs: Vec<Vec<String>> = rows.iter().map(|&r| data.tokens[r].clone()).collect();
    chi2_liw(&docs, targets, n_labels, opts.liw_top_k, opts.liw_min_freq)
}

fn overlay(full: &Array2<f64>, rows: &[usize], oof: &Array2<f64>) -> Array2<f64> {
    let mut x = full.clone();
    for (i, &r) in rows.iter().enumerate() {
        x.row_mut(r).assign(&oof.row(i));
    }
    x
}

/// Trains the transformer and the LIW predictor on `rows`, stacks them with
/// a logistic regression fitted on out-of-fold predictions and returns the
/// combined per-node text distribution.
pub fn text_stage(
    data: &NodeData,
    cfg: &ModelConfig,
    opts: &TextOptions,
    rows: &[usize],
    targets: &[usize],
    n_labels: usize,
    seed: u64,
) -> Result<TextStage> {
    let all: Vec<usize> = (0..data.n()).collect();
    let trans_train = cfg.text_train.with_seed(mix(seed, 1));

    let oof_trans = out_of_fold(rows, targets, n_labels, cfg.stack_folds, mix(seed, 2), |tr, tt, ho| {
        let m = fit_transformer(&cfg.transformer, &trans_train, data.embeddings, data.seqs, tr, tt, n_labels)?;
        let seqs: Vec<Vec<usize>> = ho.iter().map(|&r| data.seqs[r].clone()).collect();
        m.predict(&seqs)
    })?;
    let oof_liw = out_of_fold(rows, targets, n_labels, cfg.stack_folds, mix(seed, 2), |tr, tt, ho| {
        let table = fit_liw(data, tr, tt, n_labels, opts)?;
        Ok(liw_probs(data, &table, ho))
    })?;

    let trans = fit_transformer(&cfg.transformer, &trans_train, data.embeddings, data.seqs, rows, targets, n_labels)?;
    let trans_probs = trans.predict(data.seqs)?;
    let liw = fit_liw(data, rows, targets, n_labels, opts)?;
    let liw_full = liw_probs(data, &liw, &all);

    let x = concat_features(&[&overlay(&trans_probs, rows, &oof_trans), &overlay(&liw_full, rows, &oof_liw)])?;
    let meta = fit_logreg(&x, rows, targets, n_labels, &cfg.logreg_train.with_seed(mix(seed, 3)))?;
    let h0 = meta.predict(&x)?;
    Ok(TextStage {
        trans,
        trans_probs,
        liw,
        liw_probs: liw_full,
        meta,
        h0,
    })
}

/// Probabilities of one model for every node plus its fitted parameters.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// `[n × L]`.
    pub probs: Array2<f64>,
    /// `(part name, parameters)`; stacked models have several parts.
    pub checkpoints: Vec<(String, ParamStore)>,
}

/// Trains `kind` on `rows` and predicts every node.
pub fn predict_graph_model(
    kind: ModelKind,
    data: &NodeData,
    stage: &TextStage,
    cfg: &ModelConfig,
    rows: &[usize],
    targets: &[usize],
    n_labels: usize,
    seed: u64,
) -> Result<ModelOutput> {
    if stage.h0.dim() != (data.n(), n_labels) {
        return Err(Error::Labels(format!(
            "text features {:?} do not match {} nodes × {n_labels} labels",
            stage.h0.dim(),
            data.n()
        )));
    }
    let graph_train = cfg.graph_train.with_seed(mix(seed, 10 + kind as u64));
    match kind {
        ModelKind::TransTxt => Ok(ModelOutput {
            probs: stage.trans_probs.clone(),
            checkpoints: vec![("transformer".into(), stage.trans.store.clone())],
        }),
        ModelKind::RgcnExt => {
            let ops = RelationalOperators::from_multiplex(data.multiplex);
            let m = fit_rgcn(&cfg.rgcn, &graph_train, &ops, &stage.h0, rows, targets, n_labels)?;
            Ok(ModelOutput {
                probs: m.predict(&ops, &stage.h0)?,
                checkpoints: stage.checkpoints_with("rgcn", m.store),
            })
        }
        ModelKind::GraphsageExt => {
            let adj = data.multiplex.flattened();
            let m = fit_sage(&cfg.sage, &graph_train, &adj, &stage.h0, rows, targets, n_labels)?;
            Ok(ModelOutput {
                probs: m.predict(&adj, &stage.h0)?,
                checkpoints: stage.checkpoints_with("sage", m.store),
            })
        }
        ModelKind::N2vExt => {
            let emb = data
                .n2v
                .ok_or_else(|| Error::Config("N2V-EXT needs node embeddings".into()))?;
            let lr = cfg.logreg_train.with_seed(mix(seed, 20));
            let oof = out_of_fold(rows, targets, n_labels, cfg.stack_folds, mix(seed, 21), |tr, tt, ho| {
                let m = fit_logreg(emb, tr, tt, n_labels, &lr)?;
                Ok(m.predict(emb)?.select(ndarray::Axis(0), ho))
            })?;
            let graph_lr = fit_logreg(emb, rows, targets, n_labels, &lr)?;
            let full = graph_lr.predict(emb)?;
            let x = concat_features(&[&overlay(&full, rows, &oof), &stage.h0])?;
            let meta = fit_logreg(&x, rows, targets, n_labels, &cfg.logreg_train.with_seed(mix(seed, 22)))?;
            let mut checkpoints = stage.checkpoints_with("n2v_logreg", graph_lr.store);
            checkpoints.push(("n2v_meta".into(), meta.store.clone()));
            Ok(ModelOutput {
                probs: meta.predict(&x)?,
                checkpoints,
            })
        }
    }
}
