mod common;

use std::collections::BTreeMap;

use common::rng;
use geoloc_core::autograd::{ParamStore, Tape};
use geoloc_core::graph::{assemble_multiplex, MultiplexGraph, WeightedAdjacency};
use geoloc_core::models::{
    fit_sage, sample_operators, ModelKind, RelationalOperators, Rgcn, RgcnConfig, Sage, SageConfig, TrainConfig, Transformer,
    TransformerConfig,
};
use geoloc_core::pipeline::{evaluate_dataset, prepare_dataset, PipelineConfig};
use geoloc_core::synth::{generate, SynthConfig};
use geoloc_core::textfeat::EmbeddingTable;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_graph(r: &mut ChaCha8Rng, n: usize, isolated: &[usize]) -> MultiplexGraph {
    let layers = ["mention", "follower"]
        .iter()
        .map(|name| {
            let mut t = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if !isolated.contains(&i) && !isolated.contains(&j) && r.random_bool(0.5) {
                        let w = r.random_range(1..4) as f64;
                        t.extend([(i, j, w), (j, i, w)]);
                    }
                }
            }
            (name.to_string(), WeightedAdjacency::from_triplets(n, t))
        })
        .collect();
    assemble_multiplex(layers).unwrap()
}

fn permuted(g: &MultiplexGraph, perm: &[usize]) -> MultiplexGraph {
    let layers = g
        .layers()
        .iter()
        .map(|(name, a)| {
            let t: Vec<_> = a.iter().map(|(i, j, w)| (perm[i], perm[j], w)).collect();
            (name.clone(), WeightedAdjacency::from_triplets(a.n(), t))
        })
        .collect();
    assemble_multiplex(layers).unwrap()
}

fn permute_rows(x: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    let mut out = x.clone();
    for (i, &p) in perm.iter().enumerate() {
        out.row_mut(p).assign(&x.row(i));
    }
    out
}

fn randomize(store: &mut ParamStore, r: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.get_mut(id).value.mapv_inplace(|_| r.random_range(-1.0..1.0));
    }
}

fn rgcn_forward(model: &Rgcn, store: &ParamStore, g: &MultiplexGraph, h0: &Array2<f64>) -> Array2<f64> {
    let ops = RelationalOperators::from_multiplex(g);
    let mut t = Tape::new();
    let x = t.constant(h0.clone()).unwrap();
    let p = model.forward(&mut t, store, &ops, x).unwrap();
    t.value(p).clone()
}

fn sage_forward(model: &Sage, store: &ParamStore, g: &MultiplexGraph, h0: &Array2<f64>) -> Array2<f64> {
    let ops = sample_operators(&g.flattened(), &[g.n(), g.n()], 0);
    let mut t = Tape::new();
    let x = t.constant(h0.clone()).unwrap();
    let p = model.forward(&mut t, store, &ops, x).unwrap();
    t.value(p).clone()
}

fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
    assert_eq!(a.dim(), b.dim());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

const NAMES: [&str; 2] = ["mention", "follower"];

fn names() -> Vec<String> {
    NAMES.iter().map(|s| s.to_string()).collect()
}

#[test]
fn zero_weights_give_uniform_output() {
    let mut r = rng(1);
    let g = random_graph(&mut r, 7, &[]);
    let h0 = Array2::from_shape_fn((7, 3), |_| r.random_range(-1.0..1.0));
    let mut store = ParamStore::new();
    let rgcn = Rgcn::init(&RgcnConfig { hidden: vec![5] }, &names(), 3, 4, &mut store, 0).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.get_mut(id).value.fill(0.0);
    }
    let p = rgcn_forward(&rgcn, &store, &g, &h0);
    assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let mut store = ParamStore::new();
    let sage = Sage::init(&SageConfig { hidden: vec![5], samples: vec![7, 7], predict_seed: 0 }, 3, 4, &mut store, 0).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.get_mut(id).value.fill(0.0);
    }
    let p = sage_forward(&sage, &store, &g, &h0);
    assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn isolated_node_sees_only_itself() {
    let mut r = rng(2);
    let g = random_graph(&mut r, 8, &[3]);
    let h0 = Array2::from_shape_fn((8, 3), |_| r.random_range(-1.0..1.0));
    let mut other = Array2::from_shape_fn((8, 3), |_| r.random_range(-1.0..1.0));
    other.row_mut(3).assign(&h0.row(3));

    let mut store = ParamStore::new();
    let rgcn = Rgcn::init(&RgcnConfig { hidden: vec![4, 4] }, &names(), 3, 3, &mut store, 0).unwrap();
    randomize(&mut store, &mut r);
    let (a, b) = (rgcn_forward(&rgcn, &store, &g, &h0), rgcn_forward(&rgcn, &store, &g, &other));
    assert_eq!(a.row(3), b.row(3));
    assert_ne!(a.row(0), b.row(0));

    let mut store = ParamStore::new();
    let sage = Sage::init(&SageConfig { hidden: vec![4], samples: vec![8, 8], predict_seed: 0 }, 3, 3, &mut store, 0).unwrap();
    randomize(&mut store, &mut r);
    let (a, b) = (sage_forward(&sage, &store, &g, &h0), sage_forward(&sage, &store, &g, &other));
    assert_eq!(a.row(3), b.row(3));
}

#[test]
fn relabeling_nodes_permutes_outputs() {
    let mut r = rng(3);
    for _ in 0..5 {
        let n = 9;
        let g = random_graph(&mut r, n, &[]);
        let h0 = Array2::from_shape_fn((n, 3), |_| r.random_range(-1.0..1.0));
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let (gp, hp) = (permuted(&g, &perm), permute_rows(&h0, &perm));

        let mut store = ParamStore::new();
        let rgcn = Rgcn::init(&RgcnConfig { hidden: vec![4] }, &names(), 3, 3, &mut store, 0).unwrap();
        randomize(&mut store, &mut r);
        let a = rgcn_forward(&rgcn, &store, &g, &h0);
        let b = rgcn_forward(&rgcn, &store, &gp, &hp);
        assert_close(&permute_rows(&a, &perm), &b, 1e-12);

        let mut store = ParamStore::new();
        let sage = Sage::init(&SageConfig { hidden: vec![4], samples: vec![n, n], predict_seed: 0 }, 3, 3, &mut store, 0).unwrap();
        randomize(&mut store, &mut r);
        let a = sage_forward(&sage, &store, &g, &h0);
        let b = sage_forward(&sage, &store, &gp, &hp);
        assert_close(&permute_rows(&a, &perm), &b, 1e-12);
    }
}

#[test]
fn sage_predicts_nodes_unseen_in_training() {
    // two communities, features weakly tied to the community
    let mut r = rng(4);
    let n = 80;
    let community = |i: usize| i % 2;
    let mut t = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if community(i) == community(j) { 0.2 } else { 0.01 };
            if r.random_bool(p) {
                t.extend([(i, j, 1.0), (j, i, 1.0)]);
            }
        }
    }
    let full = WeightedAdjacency::from_triplets(n, t);
    let h0 = Array2::from_shape_fn((n, 2), |(i, k)| if k == community(i) { 0.6 } else { 0.4 } + r.random_range(-0.3..0.3));
    let seen: Vec<usize> = (0..60).collect();
    let sub = full.induced(&seen);
    let sub_h0 = h0.select(Axis(0), &seen);
    let targets: Vec<usize> = seen.iter().map(|&i| community(i)).collect();
    let cfg = SageConfig { hidden: vec![8], samples: vec![10, 10], predict_seed: 0 };
    let train = TrainConfig { epochs: 150, lr: 0.05, patience: 150, val_fraction: 0.0, ..TrainConfig::default() };
    let model = fit_sage(&cfg, &train, &sub, &sub_h0, &seen, &targets, 2).unwrap();
    let p = model.predict(&full, &h0).unwrap();
    assert_eq!(p.dim(), (n, 2));
    let correct = (60..n).filter(|&i| (p[[i, 1]] > p[[i, 0]]) as usize == community(i)).count();
    assert!(correct >= 17, "{correct}/20 unseen nodes correct");
}

#[test]
fn transformer_rows_do_not_depend_on_batch() {
    let mut r = rng(5);
    let cfg = TransformerConfig { d_model: 6, heads: 3, d_ff: 5, max_len: 8 };
    let emb = EmbeddingTable { matrix: Array2::from_shape_fn((10, 6), |_| r.random_range(-1.0..1.0)), found: 0 };
    let mut store = ParamStore::new();
    let model = Transformer::init(&cfg, &emb, 3, &mut store, 0).unwrap();
    let seqs = vec![vec![2, 3, 4], vec![5], vec![9, 9, 8, 7, 6, 5, 4, 3, 2, 1]];
    let prior = [0.2, 0.3, 0.5];
    let together = model.predict(&store, &seqs, &prior).unwrap();
    for (i, s) in seqs.iter().enumerate() {
        let alone = model.predict(&store, std::slice::from_ref(s), &prior).unwrap();
        for k in 0..3 {
            assert!((alone[[0, k]] - together[[i, k]]).abs() < 1e-14);
        }
    }
    // tokens past max_len are ignored
    let cut = model.predict(&store, &[seqs[2][..8].to_vec()], &prior).unwrap();
    assert_eq!(cut.row(0), together.row(2));
}

#[test]
fn no_signal_synthetic_set_stays_near_majority() {
    let mut cfg = PipelineConfig::from_json(
        r#"{
          "graph": {"celebrity_threshold": 50},
          "labels": {"min_users": 10},
          "model": {
            "models": ["trans_txt", "rgcn_ext"],
            "transformer": {"d_model": 12, "heads": 3, "d_ff": 16, "max_len": 32},
            "text_train": {"epochs": 5, "lr": 0.005},
            "rgcn": {"hidden": [16]},
            "graph_train": {"epochs": 60}
          },
          "eval": {"k": 3}
        }"#,
    )
    .unwrap();
    cfg.synth = SynthConfig {
        n_users: 300,
        n_cities: 3,
        p_in: 0.01,
        p_out: 0.01,
        follow_p_in: 0.01,
        follow_p_out: 0.01,
        hubs_per_city: 0,
        liw_strength: 1.0 / 3.0,
        distractors_per_city: 0,
        ..SynthConfig::default()
    };
    let data = generate(&cfg.synth).unwrap();
    let ds = prepare_dataset(&cfg, &data.users, &data.gazetteer).unwrap();
    let result = evaluate_dataset(&ds, &cfg).unwrap();
    let acc: BTreeMap<ModelKind, f64> = result.reports.iter().map(|r| (r.model, r.acc_at_100)).collect();
    for (kind, a) in acc {
        assert!(a < 1.0 / 3.0 + 0.15, "{} reaches {a:.3} without signal", kind.display());
    }
}
