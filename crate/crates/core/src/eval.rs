//! Error metrics, stratified folds and the cross-validation harness.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, GeoPoint, ACC_THRESHOLD_KM};
use crate::labels::LabelSpace;
use crate::models::{predict_graph_model, text_stage, ModelConfig, ModelKind, NodeData, Predictions, TextOptions};

pub const DEFAULT_FOLDS: usize = 5;

/// Acc@100 with mean and median error over one set of users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc_at_100: f64,
    pub mean_km: f64,
    pub median_km: f64,
    pub n: usize,
}

/// Fraction of errors at or below `threshold_km`.
pub fn acc_at(errors_km: &[f64], threshold_km: f64) -> f64 {
    if errors_km.is_empty() {
        return 0.0;
    }
    errors_km.iter().filter(|&&e| e <= threshold_km).count() as f64 / errors_km.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

pub fn metrics_from_errors(errors_km: &[f64]) -> Result<Metrics> {
    if errors_km.is_empty() {
        return Err(Error::Eval("no users to evaluate".into()));
    }
    Ok(Metrics {
        acc_at_100: acc_at(errors_km, ACC_THRESHOLD_KM),
        mean_km: errors_km.iter().sum::<f64>() / errors_km.len() as f64,
        median_km: median(errors_km),
        n: errors_km.len(),
    })
}

/// Errors of predicted labels against truth points. Users without a truth
/// point are skipped and counted in the second return value.
pub fn prediction_errors(predicted: &[(String, usize)], labels: &LabelSpace, truth: &BTreeMap<String, GeoPoint>) -> Result<(Vec<f64>, usize)> {
    let mut errors = Vec::with_capacity(predicted.len());
    let mut missing = 0;
    for (user, label) in predicted {
        if *label >= labels.len() {
            return Err(Error::Eval(format!("label {label} outside a space of {}", labels.len())));
        }
        match truth.get(user) {
            Some(p) => errors.push(haversine_km(labels.rep(*label), *p)),
            None => missing += 1,
        }
    }
    Ok((errors, missing))
}

pub fn evaluate(predicted: &[(String, usize)], labels: &LabelSpace, truth: &BTreeMap<String, GeoPoint>) -> Result<Metrics> {
    let (errors, missing) = prediction_errors(predicted, labels, truth)?;
    if missing > 0 {
        log::warn!("{missing} predicted users have no ground truth and were excluded");
    }
    metrics_from_errors(&errors)
}

/// Fold id per item: each class is shuffled and dealt round-robin, the
/// dealing position carrying over between classes so fold sizes differ by
/// at most one.
pub fn stratified_folds(targets: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in targets.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; targets.len()];
    let mut next = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            fold[i] = next % k;
            next += 1;
        }
    }
    fold
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; 0 for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelKind,
    pub label_mode: String,
    pub folds_k: usize,
    pub stratified: bool,
    pub seed: u64,
    /// Pooled over all held-out users.
    pub acc_at_100: f64,
    pub mean_km: f64,
    pub median_km: f64,
    pub n: usize,
    pub per_fold: Vec<Metrics>,
    pub fold_acc_at_100: MeanStd,
    pub fold_mean_km: MeanStd,
    pub fold_median_km: MeanStd,
    /// Labeled users left out because their class had fewer than `k` users.
    pub dropped_users: usize,
}

/// Inputs of a cross-validation run over the nodes of one graph.
#[derive(Debug, Clone, Copy)]
pub struct CvInput<'a> {
    pub data: NodeData<'a>,
    pub user_ids: &'a [String],
    pub labels: &'a LabelSpace,
    pub truth: &'a BTreeMap<String, GeoPoint>,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub reports: Vec<EvalReport>,
    /// Held-out predictions of every model, users in node order.
    pub predictions: Vec<(ModelKind, Predictions)>,
    /// Per-model held-out errors in node order.
    pub errors: Vec<(ModelKind, Vec<f64>)>,
}

struct FoldOutput {
    test: Vec<usize>,
    probs: Vec<Array2<f64>>,
}

/// Stratified `k`-fold evaluation of `models`. The graph and label space
/// are shared; each fold trains only on its own labeled users.
pub fn cross_validate(input: &CvInput, cfg: &ModelConfig, text: &TextOptions, models: &[ModelKind], k: usize, seed: u64) -> Result<CvResult> {
    if k < 2 {
        return Err(Error::Config(format!("cross-validation needs k ≥ 2, got {k}")));
    }
    if models.is_empty() {
        return Err(Error::Config("no models selected".into()));
    }
    let n = input.data.n();
    if input.user_ids.len() != n {
        return Err(Error::shape("cross_validate", format!("{} user ids for {n} nodes", input.user_ids.len())));
    }
    let n_labels = input.labels.len();

    let mut labeled: Vec<(usize, usize)> = (0..n)
        .filter_map(|i| {
            let u = &input.user_ids[i];
            let l = input.labels.label_of(u)?;
            input.truth.contains_key(u).then_some((i, l))
        })
        .collect();
    let mut class_size = vec![0usize; n_labels];
    for &(_, l) in &labeled {
        class_size[l] += 1;
    }
    let before = labeled.len();
    labeled.retain(|&(_, l)| class_size[l] >= k);
    let dropped = before - labeled.len();
    if dropped > 0 {
        log::warn!("{dropped} labeled users dropped: their classes have fewer than {k} users");
    }
    let targets: Vec<usize> = labeled.iter().map(|&(_, l)| l).collect();
    let fold = stratified_folds(&targets, k, seed);

    let outputs: Vec<FoldOutput> = (0..k)
        .into_par_iter()
        .map(|f| -> Result<FoldOutput> {
            let (mut rows, mut ys, mut test) = (Vec::new(), Vec::new(), Vec::new());
            for (i, &(node, y)) in labeled.iter().enumerate() {
                if fold[i] == f {
                    test.push(node);
                } else {
                    rows.push(node);
                    ys.push(y);
                }
            }
            if test.is_empty() || rows.is_empty() {
                return Err(Error::Eval(format!("fold {f} is empty")));
            }
            let fold_seed = seed.wrapping_add(f as u64 * 7_919);
            log::info!("fold {f}: {} train, {} test", rows.len(), test.len());
            let stage = text_stage(&input.data, cfg, text, &rows, &ys, n_labels, fold_seed)?;
            let probs = models
                .iter()
                .map(|&m| {
                    let p = predict_graph_model(m, &input.data, &stage, cfg, &rows, &ys, n_labels, fold_seed)?.probs;
                    Ok(p.select(ndarray::Axis(0), &test))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FoldOutput { test, probs })
        })
        .collect::<Result<_>>()?;

    let mut result = CvResult {
        reports: Vec::new(),
        predictions: Vec::new(),
        errors: Vec::new(),
    };
    for (mi, &model) in models.iter().enumerate() {
        let mut per_fold = Vec::new();
        let mut pooled: BTreeMap<usize, (Vec<f64>, f64)> = BTreeMap::new();
        for out in &outputs {
            let mut errs = Vec::new();
            for (r, &node) in out.test.iter().enumerate() {
                let row = out.probs[mi].row(r).to_vec();
                let label = crate::models::argmax(&row);
                let user = &input.user_ids[node];
                let e = haversine_km(input.labels.rep(label), input.truth[user]);
                errs.push(e);
                pooled.insert(node, (row, e));
            }
            per_fold.push(metrics_from_errors(&errs)?);
        }
        let errors: Vec<f64> = pooled.values().map(|(_, e)| *e).collect();
        let overall = metrics_from_errors(&errors)?;
        let mut probs = Array2::zeros((pooled.len(), n_labels));
        let mut ids = Vec::new();
        for (r, (&node, (row, _))) in pooled.iter().enumerate() {
            probs.row_mut(r).assign(&ndarray::Array1::from(row.clone()));
            ids.push(input.user_ids[node].clone());
        }
        let col = |f: fn(&Metrics) -> f64| MeanStd::of(&per_fold.iter().map(f).collect::<Vec<_>>());
        result.reports.push(EvalReport {
            model,
            label_mode: input.labels.mode.as_str().to_string(),
            folds_k: k,
            stratified: true,
            seed,
            acc_at_100: overall.acc_at_100,
            mean_km: overall.mean_km,
            median_km: overall.median_km,
            n: overall.n,
            fold_acc_at_100: col(|m| m.acc_at_100),
            fold_mean_km: col(|m| m.mean_km),
            fold_median_km: col(|m| m.median_km),
            per_fold,
            dropped_users: dropped,
        });
        result.predictions.push((model, Predictions { user_ids: ids, probs }));
        result.errors.push((model, errors));
    }
    Ok(result)
}

/// Plain-text table with Acc@100, mean and median columns.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    if let Some(r) = reports.first() {
        s.push_str(&format!(
            "{}-fold stratified cross-validation, {} labels, seed {}\n",
            r.folds_k, r.label_mode, r.seed
        ));
    }
    s.push_str(&format!("{:<15} {:>9} {:>10} {:>10} {:>6}\n", "Model", "Acc@100", "Mean", "Median", "n"));
    for r in reports {
        s.push_str(&format!(
            "{:<15} {:>9.3} {:>10.1} {:>10.1} {:>6}\n",
            r.model.display(),
            r.acc_at_100,
            r.mean_km,
            r.median_km,
            r.n
        ));
    }
    s
}

/// CSV `model,error_km,cum_fraction` with one row per distinct error.
pub fn write_error_cdf<W: Write>(errors: &[(ModelKind, Vec<f64>)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "model,error_km,cum_fraction")?;
    for (model, errs) in errors {
        let mut v = errs.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        for (i, e) in v.iter().enumerate() {
            if i + 1 < v.len() && v[i + 1] == *e {
                continue;
            }
            writeln!(w, "{},{e},{}", model.key(), (i + 1) as f64 / n)?;
        }
    }
    Ok(())
}
