//! Mention and follower networks extended through users outside the dataset.
//!
//! For internal users `U` (n of them) and external users `E \ U`, the raw
//! inputs are a directed count matrix among internal users and a binary
//! incidence into external users. The extended network adds, for each pair
//! of internal users, the number of external users both of them link to:
//!
//! ```text
//! Y = (M + Mᵀ) + (X_M X_Mᵀ − diag(X_M X_Mᵀ))
//! Z = clip(F + Fᵀ, 1) + (X_F X_Fᵀ − diag(X_F X_Fᵀ))
//! ```
//!
//! The co-link term is computed per external column by enumerating pairs of
//! its in-linkers, never by materializing `X Xᵀ`.

mod adjacency;
mod io;

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::UserRecord;

pub use adjacency::{BipartiteIncidence, WeightedAdjacency};
pub use io::{read_multiplex, read_node_index, write_multiplex, write_node_index};

/// Default cap on distinct in-linking users before a node counts as popular.
pub const DEFAULT_CELEBRITY_THRESHOLD: usize = 5;

pub const MENTION_LAYER: &str = "mention";
pub const FOLLOWER_LAYER: &str = "follower";

/// Dense ids for internal users `[0, n)` and, separately, for external users
/// `[0, m − n)`. An id in the dataset is never external.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeIndex {
    internal: Vec<String>,
    internal_pos: HashMap<String, usize>,
    external: Vec<String>,
    external_pos: HashMap<String, usize>,
}

impl NodeIndex {
    /// Internal ids in the order given; duplicates are an error.
    pub fn new<S: AsRef<str>>(internal_ids: &[S]) -> Result<Self> {
        let mut idx = NodeIndex::default();
        for id in internal_ids {
            let id = id.as_ref();
            if idx.internal_pos.insert(id.to_string(), idx.internal.len()).is_some() {
                return Err(Error::Graph(format!("duplicate internal user `{id}`")));
            }
            idx.internal.push(id.to_string());
        }
        Ok(idx)
    }

    pub fn from_users(users: &[UserRecord]) -> Result<Self> {
        let ids: Vec<&str> = users.iter().map(|u| u.user_id.as_str()).collect();
        Self::new(&ids)
    }

    /// `n = |U|`.
    pub fn n(&self) -> usize {
        self.internal.len()
    }

    /// `m = |E|`, internal plus external users seen so far.
    pub fn m(&self) -> usize {
        self.internal.len() + self.external.len()
    }

    pub fn n_external(&self) -> usize {
        self.external.len()
    }

    pub fn internal(&self, user_id: &str) -> Option<usize> {
        self.internal_pos.get(user_id).copied()
    }

    pub fn external(&self, user_id: &str) -> Option<usize> {
        self.external_pos.get(user_id).copied()
    }

    pub fn internal_id(&self, idx: usize) -> &str {
        &self.internal[idx]
    }

    pub fn internal_ids(&self) -> &[String] {
        &self.internal
    }

    pub fn external_id(&self, idx: usize) -> &str {
        &self.external[idx]
    }

    fn intern_external(&mut self, user_id: &str) -> usize {
        if let Some(&e) = self.external_pos.get(user_id) {
            return e;
        }
        let e = self.external.len();
        self.external.push(user_id.to_string());
        self.external_pos.insert(user_id.to_string(), e);
        e
    }
}

enum Target {
    Internal(usize),
    External(usize),
}

fn classify(index: &mut NodeIndex, user_id: &str) -> Target {
    match index.internal(user_id) {
        Some(j) => Target::Internal(j),
        None => Target::External(index.intern_external(user_id)),
    }
}

/// Mention counts among internal users (`M`, zero diagonal) and binary
/// mention incidence into external users (`X_M`). Externals are interned
/// into `index` as they appear.
pub fn build_mention_matrices(
    users: &[UserRecord],
    index: &mut NodeIndex,
) -> Result<(WeightedAdjacency, BipartiteIncidence)> {
    let n = index.n();
    let mut internal = Vec::new();
    let mut external = Vec::new();
    for u in users {
        let i = index
            .internal(&u.user_id)
            .ok_or_else(|| Error::Graph(format!("user `{}` missing from node index", u.user_id)))?;
        for target in u.mentions() {
            match classify(index, target) {
                Target::Internal(j) if j != i => internal.push((i, j, 1.0)),
                Target::Internal(_) => {}
                Target::External(e) => external.push((i, e)),
            }
        }
    }
    Ok((
        WeightedAdjacency::from_triplets(n, internal),
        BipartiteIncidence::from_pairs(n, index.n_external(), external),
    ))
}

/// Binary follower matrix among internal users (`F`) and follower incidence
/// into external users (`X_F`).
pub fn build_follower_matrices(
    users: &[UserRecord],
    index: &mut NodeIndex,
) -> Result<(WeightedAdjacency, BipartiteIncidence)> {
    let n = index.n();
    let mut internal = Vec::new();
    let mut external = Vec::new();
    for u in users {
        let i = index
            .internal(&u.user_id)
            .ok_or_else(|| Error::Graph(format!("user `{}` missing from node index", u.user_id)))?;
        for target in u.followees.iter().flatten() {
            match classify(index, target) {
                Target::Internal(j) if j != i => internal.push((i, j)),
                Target::Internal(_) => {}
                Target::External(e) => external.push((i, e)),
            }
        }
    }
    internal.sort_unstable();
    internal.dedup();
    Ok((
        WeightedAdjacency::from_triplets(n, internal.into_iter().map(|(i, j)| (i, j, 1.0))),
        BipartiteIncidence::from_pairs(n, index.n_external(), external),
    ))
}

/// Zeroes every incoming entry of any node (internal column of `adj` or
/// external column of `inc`) with more than `threshold` distinct in-linkers.
pub fn filter_popular(
    adj: &WeightedAdjacency,
    inc: &BipartiteIncidence,
    threshold: usize,
) -> (WeightedAdjacency, BipartiteIncidence) {
    let mut in_links = vec![0usize; adj.n()];
    for (_, j, w) in adj.iter() {
        if w != 0.0 {
            in_links[j] += 1;
        }
    }
    let mut ext_links = vec![0usize; inc.n_cols()];
    for i in 0..inc.n_rows() {
        for &e in inc.row(i) {
            ext_links[e] += 1;
        }
    }
    (
        adj.filter(|_, j, _| in_links[j] <= threshold),
        inc.filter_columns(|e| ext_links[e] <= threshold),
    )
}

/// Off-diagonal entries of `X Xᵀ` as `(i, j, count)` with `i < j`, ascending.
pub fn co_link_counts(inc: &BipartiteIncidence) -> Vec<(usize, usize, u32)> {
    let columns = inc.columns();
    let mut pairs: Vec<(u32, u32)> = columns
        .par_iter()
        .map(|rows| {
            let mut out = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
            for (a, &i) in rows.iter().enumerate() {
                for &j in &rows[a + 1..] {
                    out.push((i as u32, j as u32));
                }
            }
            out
        })
        .flatten()
        .collect();
    pairs.par_sort_unstable();
    let mut out: Vec<(usize, usize, u32)> = Vec::new();
    for (i, j) in pairs {
        match out.last_mut() {
            Some(last) if last.0 == i as usize && last.1 == j as usize => last.2 += 1,
            _ => out.push((i as usize, j as usize, 1)),
        }
    }
    out
}

fn co_link_triplets(inc: &BipartiteIncidence) -> impl Iterator<Item = (usize, usize, f64)> {
    co_link_counts(inc)
        .into_iter()
        .flat_map(|(i, j, c)| [(i, j, c as f64), (j, i, c as f64)])
}

/// `Y = (M + Mᵀ) + (X_M X_Mᵀ − diag(X_M X_Mᵀ))`.
pub fn extend_mention_network(m: &WeightedAdjacency, xm: &BipartiteIncidence) -> WeightedAdjacency {
    assert_eq!(m.n(), xm.n_rows(), "mention matrix and incidence disagree on n");
    let sym = m
        .iter()
        .filter(|&(i, j, _)| i != j)
        .flat_map(|(i, j, w)| [(i, j, w), (j, i, w)]);
    WeightedAdjacency::from_triplets(m.n(), sym.chain(co_link_triplets(xm)))
}

/// Undirected follower network: each followed pair contributes 1 (once, in
/// either or both directions) plus the co-follow count.
pub fn extend_follower_network(f: &WeightedAdjacency, xf: &BipartiteIncidence) -> WeightedAdjacency {
    assert_eq!(f.n(), xf.n_rows(), "follower matrix and incidence disagree on n");
    let mut linked: Vec<(usize, usize)> = f
        .iter()
        .filter(|&(i, j, w)| i != j && w != 0.0)
        .map(|(i, j, _)| (i.min(j), i.max(j)))
        .collect();
    linked.sort_unstable();
    linked.dedup();
    let sym = linked
        .into_iter()
        .flat_map(|(i, j)| [(i, j, 1.0), (j, i, 1.0)]);
    WeightedAdjacency::from_triplets(f.n(), sym.chain(co_link_triplets(xf)))
}

/// Layers sharing one node set, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplexGraph {
    n: usize,
    layers: Vec<(String, WeightedAdjacency)>,
}

impl MultiplexGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn layers(&self) -> &[(String, WeightedAdjacency)] {
        &self.layers
    }

    pub fn relation_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, name: &str) -> Option<&WeightedAdjacency> {
        self.layers.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    /// Sum of all layers.
    pub fn flattened(&self) -> WeightedAdjacency {
        self.layers
            .iter()
            .fold(WeightedAdjacency::empty(self.n), |acc, (_, a)| acc.add(a))
    }

    pub fn induced(&self, keep: &[usize]) -> MultiplexGraph {
        MultiplexGraph {
            n: keep.len(),
            layers: self
                .layers
                .iter()
                .map(|(name, a)| (name.clone(), a.induced(keep)))
                .collect(),
        }
    }
}

/// Combines named layers; every layer must have the same node count.
pub fn assemble_multiplex(layers: Vec<(String, WeightedAdjacency)>) -> Result<MultiplexGraph> {
    let Some(n) = layers.first().map(|(_, a)| a.n()) else {
        return Err(Error::Graph("multiplex needs at least one layer".into()));
    };
    for (name, a) in &layers {
        if a.n() != n {
            return Err(Error::Graph(format!(
                "layer `{name}` has {} nodes, expected {n}",
                a.n()
            )));
        }
    }
    let mut names: Vec<&str> = layers.iter().map(|(n, _)| n.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Graph("duplicate layer name".into()));
    }
    Ok(MultiplexGraph { n, layers })
}

/// Everything produced by [`build_graphs`].
#[derive(Debug, Clone)]
pub struct BuiltGraphs {
    pub index: NodeIndex,
    pub multiplex: MultiplexGraph,
}

/// Builds Y (and Z when `use_followers` and any followee lists exist) over
/// `users`, filtering popular nodes first.
pub fn build_graphs(users: &[UserRecord], celebrity_threshold: usize, use_followers: bool) -> Result<BuiltGraphs> {
    if celebrity_threshold == 0 {
        return Err(Error::Config("celebrity threshold must be at least 1".into()));
    }
    let mut index = NodeIndex::from_users(users)?;
    let (m, xm) = build_mention_matrices(users, &mut index)?;
    let (m, xm) = filter_popular(&m, &xm, celebrity_threshold);
    let mut layers = vec![(MENTION_LAYER.to_string(), extend_mention_network(&m, &xm))];
    if use_followers && users.iter().any(|u| u.followees.is_some()) {
        let (f, xf) = build_follower_matrices(users, &mut index)?;
        let (f, xf) = filter_popular(&f, &xf, celebrity_threshold);
        layers.push((FOLLOWER_LAYER.to_string(), extend_follower_network(&f, &xf)));
    }
    Ok(BuiltGraphs {
        index,
        multiplex: assemble_multiplex(layers)?,
    })
}
