use std::io::{BufRead, Write};

use super::{assemble_multiplex, MultiplexGraph, NodeIndex, WeightedAdjacency};
use crate::error::{Error, Result};

const LAYER_DECL: &str = "# layer ";

/// Tab-separated `layer  src_idx  dst_idx  weight`, one line per stored
/// entry (symmetric layers list both directions). Each layer is declared
/// in a leading `# layer <name>` line so empty layers survive.
pub fn write_multiplex<W: Write>(g: &MultiplexGraph, mut w: W) -> std::io::Result<()> {
    for (name, _) in g.layers() {
        writeln!(w, "{LAYER_DECL}{name}")?;
    }
    for (name, a) in g.layers() {
        for (i, j, weight) in a.iter() {
            writeln!(w, "{name}\t{i}\t{j}\t{weight}")?;
        }
    }
    Ok(())
}

/// Inverse of [`write_multiplex`] for a graph over `n` nodes.
pub fn read_multiplex<R: BufRead>(r: R, n: usize) -> Result<MultiplexGraph> {
    let mut names: Vec<String> = Vec::new();
    let mut triplets: Vec<Vec<(usize, usize, f64)>> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<edge list>", e))?;
        if let Some(name) = line.strip_prefix(LAYER_DECL) {
            names.push(name.trim().to_string());
            triplets.push(Vec::new());
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Parse(format!("edge list line {}: `{line}`", lineno + 1));
        let mut cols = line.split('\t');
        let (Some(layer), Some(i), Some(j), Some(w), None) =
            (cols.next(), cols.next(), cols.next(), cols.next(), cols.next())
        else {
            return Err(bad());
        };
        let k = match names.iter().position(|n| n == layer) {
            Some(k) => k,
            None => {
                names.push(layer.to_string());
                triplets.push(Vec::new());
                names.len() - 1
            }
        };
        let i: usize = i.parse().map_err(|_| bad())?;
        let j: usize = j.parse().map_err(|_| bad())?;
        let w: f64 = w.parse().map_err(|_| bad())?;
        if i >= n || j >= n || !w.is_finite() {
            return Err(bad());
        }
        triplets[k].push((i, j, w));
    }
    assemble_multiplex(
        names
            .into_iter()
            .zip(triplets)
            .map(|(name, t)| (name, WeightedAdjacency::from_triplets(n, t)))
            .collect(),
    )
}

/// Sidecar `idx  user_id` for internal nodes.
pub fn write_node_index<W: Write>(index: &NodeIndex, mut w: W) -> std::io::Result<()> {
    for (i, id) in index.internal_ids().iter().enumerate() {
        writeln!(w, "{i}\t{id}")?;
    }
    Ok(())
}

pub fn read_node_index<R: BufRead>(r: R) -> Result<NodeIndex> {
    let mut ids = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::io("<node index>", e))?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let (idx, id) = line
            .split_once('\t')
            .ok_or_else(|| Error::Parse(format!("node index line `{line}`")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| Error::Parse(format!("node index line `{line}`")))?;
        if idx != ids.len() {
            return Err(Error::Parse(format!("node index out of order at {idx}")));
        }
        ids.push(id.to_string());
    }
    NodeIndex::new(&ids)
}
