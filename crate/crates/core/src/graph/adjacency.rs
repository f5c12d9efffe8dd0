use std::collections::HashMap;

use crate::autograd::CsrMatrix;

/// Sparse weighted graph stored as sorted neighbor lists. Directed for the
/// raw mention/follower matrices, symmetric for the extended networks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightedAdjacency {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl WeightedAdjacency {
    pub fn empty(n: usize) -> Self {
        WeightedAdjacency {
            n,
            rows: vec![Vec::new(); n],
        }
    }

    /// Sums duplicate `(i, j)` entries; zero-weight results are dropped.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut rows: Vec<HashMap<usize, f64>> = vec![HashMap::new(); n];
        for (i, j, w) in triplets {
            assert!(i < n && j < n, "edge ({i}, {j}) out of range for {n} nodes");
            *rows[i].entry(j).or_default() += w;
        }
        let rows = rows
            .into_iter()
            .map(|r| {
                let mut v: Vec<(usize, f64)> = r.into_iter().filter(|&(_, w)| w != 0.0).collect();
                v.sort_unstable_by_key(|&(j, _)| j);
                v
            })
            .collect();
        WeightedAdjacency { n, rows }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(k, _)| k)
            .map(|pos| self.rows[i][pos].1)
            .unwrap_or(0.0)
    }

    /// Stored (directed) entries; a symmetric edge counts twice.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.rows[i].len()
    }

    pub fn weighted_degree(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|&(_, w)| w).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(j, w)| (i, j, w)))
    }

    pub fn transpose(&self) -> Self {
        WeightedAdjacency::from_triplets(self.n, self.iter().map(|(i, j, w)| (j, i, w)))
    }

    pub fn is_symmetric(&self) -> bool {
        self.iter().all(|(i, j, w)| self.get(j, i) == w)
    }

    pub fn has_zero_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.get(i, i) == 0.0)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.iter().all(|(_, _, w)| w >= 0.0)
    }

    /// Elementwise sum.
    pub fn add(&self, other: &WeightedAdjacency) -> Self {
        assert_eq!(self.n, other.n);
        WeightedAdjacency::from_triplets(self.n, self.iter().chain(other.iter()))
    }

    /// Keeps only the entries accepted by `keep`.
    pub fn filter(&self, mut keep: impl FnMut(usize, usize, f64) -> bool) -> Self {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().copied().filter(|&(j, w)| keep(i, j, w)).collect())
            .collect();
        WeightedAdjacency { n: self.n, rows }
    }

    /// Subgraph induced by `keep`, renumbered in the order given.
    pub fn induced(&self, keep: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            pos[old] = new;
        }
        WeightedAdjacency::from_triplets(
            keep.len(),
            keep.iter().flat_map(|&i| {
                let pos = &pos;
                self.rows[i]
                    .iter()
                    .filter(move |&&(j, _)| pos[j] != usize::MAX)
                    .map(move |&(j, w)| (pos[i], pos[j], w))
            }),
        )
    }

    /// Row-normalized propagation matrix: row `i` holds `w_ij / Σ_k w_ik`.
    /// Isolated rows stay empty.
    pub fn row_normalized(&self) -> CsrMatrix {
        CsrMatrix::from_rows(
            self.n,
            self.rows
                .iter()
                .map(|r| {
                    let total: f64 = r.iter().map(|&(_, w)| w).sum();
                    r.iter().map(|&(j, w)| (j, w / total)).collect()
                })
                .collect(),
        )
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, j, w) in self.iter() {
            d[i][j] = w;
        }
        d
    }
}

/// Binary incidence from internal users (rows) to external users (columns).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BipartiteIncidence {
    cols: usize,
    rows: Vec<Vec<usize>>,
}

impl BipartiteIncidence {
    /// Duplicate pairs collapse to a single 1.
    pub fn from_pairs(n_rows: usize, n_cols: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut rows = vec![Vec::new(); n_rows];
        for (i, e) in pairs {
            assert!(i < n_rows && e < n_cols, "incidence ({i}, {e}) out of range");
            rows[i].push(e);
        }
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
        }
        BipartiteIncidence { cols: n_cols, rows }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn contains(&self, i: usize, e: usize) -> bool {
        self.rows[i].binary_search(&e).is_ok()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Rows having a 1 in each column, ascending.
    pub fn columns(&self) -> Vec<Vec<usize>> {
        let mut cols = vec![Vec::new(); self.cols];
        for (i, r) in self.rows.iter().enumerate() {
            for &e in r {
                cols[e].push(i);
            }
        }
        cols
    }

    pub fn filter_columns(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let keep: Vec<bool> = (0..self.cols).map(&mut keep).collect();
        BipartiteIncidence {
            cols: self.cols,
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().copied().filter(|&e| keep[e]).collect())
                .collect(),
        }
    }
}
