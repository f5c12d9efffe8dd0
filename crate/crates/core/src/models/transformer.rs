use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{fit, TrainConfig, TrainReport};
use crate::autograd::{Init, ParamId, ParamStore, Segments, Tape, Var};
use crate::error::{Error, Result};
use crate::textfeat::EmbeddingTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    /// Embedding width, used when no pretrained vectors are supplied.
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            d_model: 300,
            heads: 6,
            d_ff: 256,
            max_len: 256,
        }
    }
}

/// Sinusoidal position table `[max_len × d]`.
pub fn positional_encoding(max_len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((max_len, d), |(pos, j)| {
        let angle = pos as f64 / 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Single-query multi-head attention encoder: a learned context vector
/// attends over the token sequence, giving one pooled vector per user that
/// goes through a feed-forward layer and a softmax classifier.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub cfg: TransformerConfig,
    pub d: usize,
    pub n_labels: usize,
    pub vocab_len: usize,
    pub emb: ParamId,
    pub ctx: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ff_w: ParamId,
    pub ff_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pe: Arc<Array2<f64>>,
    /// `[d × h]` indicator of which head owns each model dimension.
    heads: Arc<Array2<f64>>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct TransformerTrace {
    /// `[tokens × h]`, softmax-normalized within each user's rows.
    pub attention: Var,
    /// `[users × d]` after the output projection.
    pub pooled: Var,
    pub probs: Var,
}

impl Transformer {
    pub fn init(cfg: &TransformerConfig, emb: &EmbeddingTable, n_labels: usize, store: &mut ParamStore, seed: u64) -> Result<Self> {
        let d = emb.dim();
        if cfg.heads == 0 || d % cfg.heads != 0 {
            return Err(Error::Config(format!("model width {d} is not divisible by {} heads", cfg.heads)));
        }
        if n_labels == 0 || cfg.max_len == 0 || cfg.d_ff == 0 {
            return Err(Error::Config("transformer needs labels, max_len and d_ff > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb_id = store.add_given("trans.emb", emb.matrix.clone())?;
        let ctx = store.add("trans.ctx", 1, d, Init::Zeros, &mut rng)?;
        let wq = store.add("trans.wq", d, d, Init::Glorot, &mut rng)?;
        let wk = store.add("trans.wk", d, d, Init::Glorot, &mut rng)?;
        let wv = store.add("trans.wv", d, d, Init::Glorot, &mut rng)?;
        let wo = store.add("trans.wo", d, d, Init::Glorot, &mut rng)?;
        let ff_w = store.add("trans.ff_w", d, cfg.d_ff, Init::Glorot, &mut rng)?;
        let ff_b = store.add("trans.ff_b", 1, cfg.d_ff, Init::Zeros, &mut rng)?;
        let out_w = store.add("trans.out_w", cfg.d_ff, n_labels, Init::Glorot, &mut rng)?;
        let out_b = store.add("trans.out_b", 1, n_labels, Init::Zeros, &mut rng)?;
        let dk = d / cfg.heads;
        Ok(Transformer {
            cfg: cfg.clone(),
            d,
            n_labels,
            vocab_len: emb.matrix.nrows(),
            emb: emb_id,
            ctx,
            wq,
            wk,
            wv,
            wo,
            ff_w,
            ff_b,
            out_w,
            out_b,
            pe: Arc::new(positional_encoding(cfg.max_len, d)),
            heads: Arc::new(Array2::from_shape_fn((d, cfg.heads), |(j, h)| (j / dk == h) as u8 as f64)),
        })
    }

    pub fn d_k(&self) -> usize {
        self.d / self.cfg.heads
    }

    /// Forward pass over nonempty token-id sequences of length ≤ `max_len`.
    pub fn forward_traced(&self, t: &mut Tape, s: &ParamStore, seqs: &[&[usize]]) -> Result<TransformerTrace> {
        if seqs.is_empty() {
            return Err(Error::shape("transformer", "empty batch"));
        }
        let mut idx = Vec::new();
        let mut pos_rows = Vec::new();
        for seq in seqs {
            if seq.is_empty() || seq.len() > self.cfg.max_len {
                return Err(Error::shape("transformer", format!("sequence length {} outside 1..={}", seq.len(), self.cfg.max_len)));
            }
            if let Some(&bad) = seq.iter().find(|&&i| i >= self.vocab_len) {
                return Err(Error::shape("transformer", format!("token id {bad} of {}", self.vocab_len)));
            }
            idx.extend_from_slice(seq);
            pos_rows.extend(0..seq.len());
        }
        let seg = Arc::new(Segments::from_lengths(seqs.iter().map(|s| s.len())));

        let e = t.param(s, self.emb);
        let x = t.gather_rows(e, Arc::new(idx))?;
        let pe = t.constant(self.pe.select(ndarray::Axis(0), &pos_rows))?;
        let h = t.add(x, pe)?;

        let (wq, wk, wv, wo) = (t.param(s, self.wq), t.param(s, self.wk), t.param(s, self.wv), t.param(s, self.wo));
        let ctx = t.param(s, self.ctx);
        let q = t.matmul(ctx, wq)?;
        let k = t.matmul(h, wk)?;
        let v = t.matmul(h, wv)?;

        let heads = t.constant((*self.heads).clone())?;
        let heads_t = t.constant(self.heads.t().to_owned())?;
        let kq = t.mul_row(k, q)?;
        let scores = t.matmul(kq, heads)?;
        let scores = t.scale(scores, 1.0 / (self.d_k() as f64).sqrt())?;
        let attention = t.segment_softmax(scores, seg.clone())?;
        let spread = t.matmul(attention, heads_t)?;
        let weighted = t.mul(spread, v)?;
        let concat = t.segment_sum(weighted, seg)?;
        let pooled = t.matmul(concat, wo)?;

        let (ff_w, ff_b) = (t.param(s, self.ff_w), t.param(s, self.ff_b));
        let f = t.matmul(pooled, ff_w)?;
        let f = t.add_row(f, ff_b)?;
        let f = t.relu(f)?;
        let (out_w, out_b) = (t.param(s, self.out_w), t.param(s, self.out_b));
        let z = t.matmul(f, out_w)?;
        let z = t.add_row(z, out_b)?;
        let probs = t.softmax_rows(z)?;
        Ok(TransformerTrace { attention, pooled, probs })
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, seqs: &[&[usize]]) -> Result<Var> {
        Ok(self.forward_traced(t, s, seqs)?.probs)
    }

    /// Probabilities for every sequence; empty sequences get `prior`.
    pub fn predict(&self, s: &ParamStore, seqs: &[Vec<usize>], prior: &[f64]) -> Result<Array2<f64>> {
        if prior.len() != self.n_labels {
            return Err(Error::Labels(format!("prior over {} labels, model has {}", prior.len(), self.n_labels)));
        }
        let mut out = Array2::zeros((seqs.len(), self.n_labels));
        let nonempty: Vec<usize> = (0..seqs.len()).filter(|&i| !seqs[i].is_empty()).collect();
        let empty = seqs.len() - nonempty.len();
        if empty > 0 {
            log::warn!("{empty} users without tokens get the label prior");
        }
        for i in 0..seqs.len() {
            if seqs[i].is_empty() {
                out.row_mut(i).assign(&ndarray::ArrayView1::from(prior));
            }
        }
        for chunk in nonempty.chunks(64) {
            let batch: Vec<&[usize]> = chunk.iter().map(|&i| truncate(&seqs[i], self.cfg.max_len)).collect();
            let mut t = Tape::new();
            let p = self.forward(&mut t, s, &batch)?;
            let p = t.value(p);
            for (r, &i) in chunk.iter().enumerate() {
                out.row_mut(i).assign(&p.row(r));
            }
        }
        Ok(out)
    }
}

fn truncate(seq: &[usize], max_len: usize) -> &[usize] {
    &seq[..seq.len().min(max_len)]
}

/// A trained transformer with its parameters and label prior.
#[derive(Debug, Clone)]
pub struct TransTxt {
    pub model: Transformer,
    pub store: ParamStore,
    pub prior: Vec<f64>,
    pub report: TrainReport,
}

impl TransTxt {
    pub fn predict(&self, seqs: &[Vec<usize>]) -> Result<Array2<f64>> {
        self.model.predict(&self.store, seqs, &self.prior)
    }
}

pub fn label_prior(targets: &[usize], n_labels: usize) -> Vec<f64> {
    let mut p = vec![0.0; n_labels];
    for &y in targets {
        p[y] += 1.0;
    }
    let n = targets.len().max(1) as f64;
    if targets.is_empty() {
        return vec![1.0 / n_labels as f64; n_labels];
    }
    p.iter_mut().for_each(|v| *v /= n);
    p
}

/// Trains on `seqs[rows[i]]` with label `targets[i]`; users without tokens
/// only contribute to the prior.
pub fn fit_transformer(
    cfg: &TransformerConfig,
    train: &TrainConfig,
    emb: &EmbeddingTable,
    seqs: &[Vec<usize>],
    rows: &[usize],
    targets: &[usize],
    n_labels: usize,
) -> Result<TransTxt> {
    let mut store = ParamStore::new();
    let model = Transformer::init(cfg, emb, n_labels, &mut store, train.seed)?;
    let prior = label_prior(targets, n_labels);
    let (ex, tg): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .zip(targets)
        .filter(|(&r, _)| !seqs[r].is_empty())
        .map(|(&r, &y)| (r, y))
        .unzip();
    let report = if ex.is_empty() {
        TrainReport::default()
    } else {
        fit(&mut store, train, &ex, &tg, |t, s, batch, _| {
            let b: Vec<&[usize]> = batch.iter().map(|&i| truncate(&seqs[i], cfg.max_len)).collect();
            model.forward(t, s, &b)
        })?
    };
    Ok(TransTxt { model, store, prior, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn toy(seed: u64) -> (Transformer, ParamStore) {
        let cfg = TransformerConfig {
            d_model: 12,
            heads: 6,
            d_ff: 5,
            max_len: 8,
        };
        let emb = EmbeddingTable::random(20, 12, seed);
        let mut store = ParamStore::new();
        let m = Transformer::init(&cfg, &emb, 3, &mut store, seed).unwrap();
        (m, store)
    }

    fn row_softmax(z: &Array1<f64>) -> Array1<f64> {
        let max = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let e = z.mapv(|v| (v - max).exp());
        let s = e.sum();
        e / s
    }

    /// Head by head, token by token.
    fn oracle(m: &Transformer, s: &ParamStore, seq: &[usize]) -> Array1<f64> {
        let d = m.d;
        let dk = m.d_k();
        let pe = positional_encoding(m.cfg.max_len, d);
        let emb = s.value(m.emb);
        let h: Vec<Array1<f64>> = seq.iter().enumerate().map(|(p, &tok)| &emb.row(tok) + &pe.row(p)).collect();
        let q = s.value(m.ctx).row(0).dot(s.value(m.wq));
        let mut concat = Array1::zeros(d);
        for head in 0..m.cfg.heads {
            let cols = head * dk..(head + 1) * dk;
            let wk = s.value(m.wk).slice(ndarray::s![.., cols.clone()]).to_owned();
            let wv = s.value(m.wv).slice(ndarray::s![.., cols.clone()]).to_owned();
            let qi = q.slice(ndarray::s![cols.clone()]).to_owned();
            let scores = Array1::from_iter(h.iter().map(|x| x.dot(&wk).dot(&qi) / (dk as f64).sqrt()));
            let a = row_softmax(&scores);
            let mut out = Array1::zeros(dk);
            for (x, &w) in h.iter().zip(&a) {
                out = out + x.dot(&wv) * w;
            }
            concat.slice_mut(ndarray::s![cols]).assign(&out);
        }
        let o = concat.dot(s.value(m.wo));
        let f = (o.dot(s.value(m.ff_w)) + s.value(m.ff_b).row(0)).mapv(|v| v.max(0.0));
        let z = f.dot(s.value(m.out_w)) + s.value(m.out_b).row(0);
        row_softmax(&z)
    }

    #[test]
    fn matches_step_by_step_oracle() {
        let (m, s) = toy(3);
        let seqs: Vec<Vec<usize>> = vec![vec![4, 7, 7, 19, 2], vec![11], vec![3, 0, 5, 8, 13, 1, 2, 6]];
        let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
        let mut t = Tape::new();
        let p = m.forward(&mut t, &s, &refs).unwrap();
        for (i, seq) in seqs.iter().enumerate() {
            let want = oracle(&m, &s, seq);
            for k in 0..3 {
                assert!((t.value(p)[[i, k]] - want[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one_per_head() {
        let (m, s) = toy(5);
        let seqs: Vec<&[usize]> = vec![&[1, 2, 3], &[9, 9]];
        let mut t = Tape::new();
        let tr = m.forward_traced(&mut t, &s, &seqs).unwrap();
        let a = t.value(tr.attention);
        for h in 0..6 {
            assert!((a.column(h).slice(ndarray::s![0..3]).sum() - 1.0).abs() < 1e-12);
            assert!((a.column(h).slice(ndarray::s![3..5]).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_pools_its_value_projection() {
        let (m, s) = toy(7);
        let mut t = Tape::new();
        let tr = m.forward_traced(&mut t, &s, &[&[6]]).unwrap();
        let h = &s.value(m.emb).row(6) + &positional_encoding(8, 12).row(0);
        let want = h.dot(s.value(m.wv)).dot(s.value(m.wo));
        for (a, b) in t.value(tr.pooled).row(0).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_sequence_gets_prior() {
        let (m, s) = toy(1);
        let p = m.predict(&s, &[vec![], vec![1, 2]], &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(p.row(0).to_vec(), vec![0.2, 0.3, 0.5]);
        assert!((p.row(1).sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn indivisible_width_is_rejected() {
        let cfg = TransformerConfig {
            heads: 5,
            ..TransformerConfig::default()
        };
        let emb = EmbeddingTable::random(4, 12, 0);
        assert!(Transformer::init(&cfg, &emb, 2, &mut ParamStore::new(), 0).is_err());
    }
}
