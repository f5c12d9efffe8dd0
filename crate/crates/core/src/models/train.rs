use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Adam, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Minibatch Adam on cross-entropy with validation early stopping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Share of the training examples held out for early stopping.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 0,
            lr: 1e-3,
            weight_decay: 0.0,
            patience: 10,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Epoch whose parameters were kept (0-based).
    pub best_epoch: usize,
}

/// Splits `0..len` into (train, validation) positions with a seeded shuffle.
pub fn holdout_split(len: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..len).collect();
    let n_val = if len >= 2 { ((len as f64 * fraction).round() as usize).min(len - 1) } else { 0 };
    if n_val == 0 {
        return (order, Vec::new());
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7a11));
    let val = order.split_off(len - n_val);
    let mut train = order;
    train.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (train, val)
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite(op) => Error::Diverged(format!("non-finite value in {op} during epoch {epoch}")),
        other => other,
    }
}

/// Trains the parameters in `store`. `forward(tape, store, examples, epoch)`
/// must return one probability row per example (in the order given);
/// `examples` and `targets` are parallel. The best validation epoch's
/// parameters are restored at the end.
pub fn fit<F>(store: &mut ParamStore, cfg: &TrainConfig, examples: &[usize], targets: &[usize], mut forward: F) -> Result<TrainReport>
where
    F: FnMut(&mut Tape, &ParamStore, &[usize], usize) -> Result<Var>,
{
    if examples.len() != targets.len() {
        return Err(Error::shape("fit", format!("{} examples, {} targets", examples.len(), targets.len())));
    }
    if examples.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    let (tr_pos, val_pos) = holdout_split(examples.len(), cfg.val_fraction, cfg.seed);
    let val_ex: Vec<usize> = val_pos.iter().map(|&p| examples[p]).collect();
    let val_tg = Arc::new(val_pos.iter().map(|&p| targets[p]).collect::<Vec<_>>());

    let mut adam = Adam::new(cfg.lr).with_weight_decay(cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();
    let mut best = (f64::INFINITY, store.snapshot());
    let mut since_best = 0;
    let mut order = tr_pos;
    let batch = if cfg.batch_size == 0 { order.len() } else { cfg.batch_size };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let ex: Vec<usize> = chunk.iter().map(|&p| examples[p]).collect();
            let tg = Arc::new(chunk.iter().map(|&p| targets[p]).collect::<Vec<_>>());
            store.zero_grad();
            let mut tape = Tape::new();
            let loss = forward(&mut tape, store, &ex, epoch)
                .and_then(|probs| tape.cross_entropy(probs, tg))
                .map_err(|e| diverged(e, epoch))?;
            let l = tape.scalar(loss);
            if !l.is_finite() {
                return Err(Error::Diverged(format!("loss {l} at epoch {epoch}")));
            }
            tape.backward(loss, store).map_err(|e| diverged(e, epoch))?;
            adam.step(store);
            total += l * chunk.len() as f64;
        }
        report.train_loss.push(total / order.len() as f64);

        if val_ex.is_empty() {
            report.best_epoch = epoch;
            continue;
        }
        let mut tape = Tape::new();
        let vl = forward(&mut tape, store, &val_ex, epoch)
            .and_then(|probs| tape.cross_entropy(probs, val_tg.clone()))
            .map_err(|e| diverged(e, epoch))?;
        let vl = tape.scalar(vl);
        if !vl.is_finite() {
            return Err(Error::Diverged(format!("validation loss {vl} at epoch {epoch}")));
        }
        report.val_loss.push(vl);
        if vl < best.0 {
            best = (vl, store.snapshot());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                break;
            }
        }
    }
    if !val_ex.is_empty() && best.0.is_finite() {
        store.restore(&best.1);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Init;
    use ndarray::Array2;

    fn separable() -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::zeros((40, 2));
        let mut y = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            let s = if c == 0 { 1.0 } else { -1.0 };
            x[[i, 0]] = s * (1.0 + (i as f64) * 0.05);
            x[[i, 1]] = (i as f64 * 0.37).sin();
            y.push(c);
        }
        (x, y)
    }

    fn lr_fit(cfg: &TrainConfig) -> (ParamStore, TrainReport, f64) {
        let (x, y) = separable();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = store.add("w", 2, 2, Init::Uniform(0.1), &mut rng).unwrap();
        let b = store.add("b", 1, 2, Init::Zeros, &mut rng).unwrap();
        let ex: Vec<usize> = (0..40).collect();
        let fwd = |t: &mut Tape, s: &ParamStore, rows: &[usize], _| {
            let xv = t.constant(x.select(ndarray::Axis(0), rows))?;
            let (wv, bv) = (t.param(s, w), t.param(s, b));
            let z = t.matmul(xv, wv)?;
            let z = t.add_row(z, bv)?;
            t.softmax_rows(z)
        };
        let report = fit(&mut store, cfg, &ex, &y, fwd).unwrap();
        let z = x.dot(store.value(w)) + store.value(b);
        let acc = (0..40)
            .filter(|&i| (z[[i, 1]] > z[[i, 0]]) as usize == y[i])
            .count() as f64
            / 40.0;
        (store, report, acc)
    }

    #[test]
    fn separable_set_reaches_full_accuracy() {
        let cfg = TrainConfig {
            epochs: 200,
            lr: 0.05,
            patience: 0,
            val_fraction: 0.0,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (_, report, acc) = lr_fit(&cfg);
        assert_eq!(acc, 1.0);
        assert!(report.train_loss.last().unwrap() < &report.train_loss[0]);
    }

    #[test]
    fn zero_lr_keeps_initial_parameters() {
        let cfg = TrainConfig {
            epochs: 5,
            lr: 0.0,
            ..TrainConfig::default()
        };
        let (store, _, _) = lr_fit(&cfg);
        let mut fresh = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        fresh.add("w", 2, 2, Init::Uniform(0.1), &mut rng).unwrap();
        assert_eq!(store.iter().next().unwrap().value, fresh.iter().next().unwrap().value);
    }

    #[test]
    fn loss_curve_is_reproducible() {
        let cfg = TrainConfig {
            epochs: 20,
            lr: 0.01,
            batch_size: 5,
            ..TrainConfig::default()
        };
        assert_eq!(lr_fit(&cfg).1, lr_fit(&cfg).1);
    }

    #[test]
    fn holdout_is_disjoint_and_covering() {
        let (tr, va) = holdout_split(23, 0.2, 4);
        assert_eq!(va.len(), 5);
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert_eq!(holdout_split(1, 0.5, 0).1.len(), 0);
    }

    #[test]
    fn nan_loss_is_reported_as_divergence() {
        let mut store = ParamStore::new();
        let w = store.add_given("w", Array2::from_elem((1, 2), f64::NAN)).unwrap();
        let cfg = TrainConfig::default();
        let err = fit(&mut store, &cfg, &[0], &[0], |t, s, _, _| {
            let v = t.param(s, w);
            t.softmax_rows(v)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Diverged(_)), "{err:?}");
    }
}
