use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::{fit, TrainConfig, TrainReport};
use crate::autograd::{Init, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Multinomial logistic regression `softmax(x W + b)`, zero-initialized so an
/// untrained model predicts the uniform distribution.
#[derive(Debug, Clone)]
pub struct LogReg {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub n_labels: usize,
}

impl LogReg {
    pub fn init(store: &mut ParamStore, prefix: &str, in_dim: usize, n_labels: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = store.add(&format!("{prefix}.w"), in_dim, n_labels, Init::Zeros, &mut rng)?;
        let b = store.add(&format!("{prefix}.b"), 1, n_labels, Init::Zeros, &mut rng)?;
        Ok(LogReg { w, b, in_dim, n_labels })
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (t.param(s, self.w), t.param(s, self.b));
        let z = t.matmul(x, w)?;
        let z = t.add_row(z, b)?;
        t.softmax_rows(z)
    }

    pub fn predict(&self, s: &ParamStore, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim {
            return Err(Error::shape("logreg", format!("{} input columns, expected {}", x.ncols(), self.in_dim)));
        }
        let mut t = Tape::new();
        let xv = t.constant(x.clone())?;
        let p = self.forward(&mut t, s, xv)?;
        Ok(t.value(p).clone())
    }
}

/// A logistic regression together with its parameters.
#[derive(Debug, Clone)]
pub struct FittedLogReg {
    pub model: LogReg,
    pub store: ParamStore,
    pub report: TrainReport,
}

impl FittedLogReg {
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.model.predict(&self.store, x)
    }
}

/// Fits on the rows `rows` of `x` with labels `targets`.
pub fn fit_logreg(x: &Array2<f64>, rows: &[usize], targets: &[usize], n_labels: usize, cfg: &TrainConfig) -> Result<FittedLogReg> {
    let mut store = ParamStore::new();
    let model = LogReg::init(&mut store, "logreg", x.ncols(), n_labels)?;
    let x = Arc::new(x.clone());
    let report = fit(&mut store, cfg, rows, targets, |t, s, ex, _| {
        let xv = t.constant(x.select(Axis(0), ex))?;
        model.forward(t, s, xv)
    })?;
    Ok(FittedLogReg { model, store, report })
}

/// Horizontal concatenation of equally tall probability blocks, the input
/// of a meta-classifier.
pub fn concat_features(blocks: &[&Array2<f64>]) -> Result<Array2<f64>> {
    let Some(first) = blocks.first() else {
        return Err(Error::shape("concat_features", "no inputs"));
    };
    if blocks.iter().any(|b| b.nrows() != first.nrows()) {
        return Err(Error::shape("concat_features", "row counts differ"));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    Ok(ndarray::concatenate(Axis(1), &views).expect("row counts checked"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untrained_model_is_uniform() {
        let mut s = ParamStore::new();
        let m = LogReg::init(&mut s, "m", 4, 3).unwrap();
        let p = m.predict(&s, &Array2::from_elem((2, 4), 0.7)).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn meta_keeps_the_shared_argmax() {
        // two agreeing one-hot-ish inputs over 3 labels
        let n = 30;
        let mut a = Array2::from_elem((n, 3), 0.05);
        let mut y = Vec::new();
        for i in 0..n {
            a[[i, i % 3]] = 0.9;
            y.push(i % 3);
        }
        let x = concat_features(&[&a, &a]).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            lr: 0.05,
            patience: 0,
            val_fraction: 0.0,
            ..TrainConfig::default()
        };
        let rows: Vec<usize> = (0..n).collect();
        let m = fit_logreg(&x, &rows, &y, 3, &cfg).unwrap();
        let p = m.predict(&x).unwrap();
        for i in 0..n {
            let arg = (0..3).max_by(|&u, &v| p[[i, u]].total_cmp(&p[[i, v]])).unwrap();
            assert_eq!(arg, i % 3);
            assert!((p.row(i).sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mismatched_width_is_an_error() {
        let mut s = ParamStore::new();
        let m = LogReg::init(&mut s, "m", 4, 3).unwrap();
        assert!(m.predict(&s, &Array2::zeros((1, 5))).is_err());
    }
}
