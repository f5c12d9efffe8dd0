use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

use crate::geo::haversine_km;

use super::gazetteer::{Gazetteer, GazetteerEntry};
use super::records::UserRecord;
use super::GroundTruth;

/// Case-folded tokens of a profile location field, split on commas,
/// whitespace and punctuation.
pub fn profile_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .map(|t| t.trim_matches('\'').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Gazetteer entries whose name or alternate name equals a token or a
/// contiguous token bigram. Sorted by geoname id, no duplicates.
pub fn match_profile_location(s: &str, g: &Gazetteer) -> Vec<GazetteerEntry> {
    let tokens = profile_tokens(s);
    let bigrams = tokens.windows(2).map(|w| format!("{} {}", w[0], w[1]));
    let mut hits: Vec<&GazetteerEntry> = tokens
        .iter()
        .cloned()
        .chain(bigrams)
        .flat_map(|t| g.lookup_name(&t).collect::<Vec<_>>())
        .collect();
    hits.sort_by_key(|e| e.geoname_id);
    hits.dedup_by_key(|e| e.geoname_id);
    hits.into_iter().cloned().collect()
}

/// Distribution of profile-city to ground-truth-city distances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceCdf {
    /// Users with exactly one profile match and a ground truth.
    pub eligible: usize,
    /// Users with a nonempty profile location field.
    pub with_profile: usize,
    /// Users whose profile matched at least one city.
    pub matched: usize,
    /// Ascending.
    pub distances_km: Vec<f64>,
    /// `(q, distance)` at q = 0.1, 0.25, 0.5, 0.75, 0.9.
    pub quantiles: Vec<(f64, f64)>,
    pub frac_below_10km: f64,
    pub frac_below_161km: f64,
}

impl DistanceCdf {
    pub fn is_empty(&self) -> bool {
        self.eligible == 0
    }

    /// `(distance, fraction ≤ distance)` at every distinct distance.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let n = self.distances_km.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &d) in self.distances_km.iter().enumerate() {
            let frac = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == d => last.1 = frac,
                _ => out.push((d, frac)),
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "distance_km,cum_fraction")?;
        for (d, f) in self.steps() {
            writeln!(w, "{d},{f}")?;
        }
        Ok(())
    }
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Compares each unambiguous profile city to the user's ground truth.
pub fn profile_distance_report(
    users: &[UserRecord],
    truths: &[GroundTruth],
    g: &Gazetteer,
) -> DistanceCdf {
    let truth_by_user: HashMap<&str, &GroundTruth> =
        truths.iter().map(|t| (t.user_id.as_str(), t)).collect();
    let mut with_profile = 0;
    let mut matched = 0;
    let mut distances = Vec::new();
    for u in users {
        let Some(loc) = u.profile_location.as_deref().filter(|s| !s.trim().is_empty()) else {
            continue;
        };
        with_profile += 1;
        let hits = match_profile_location(loc, g);
        if !hits.is_empty() {
            matched += 1;
        }
        if let ([city], Some(gt)) = (hits.as_slice(), truth_by_user.get(u.user_id.as_str())) {
            distances.push(haversine_km(city.point, gt.point));
        }
    }
    distances.sort_by(f64::total_cmp);
    let n = distances.len();
    if n == 0 {
        log::warn!("profile report: no users with an unambiguous profile city and ground truth");
    }
    let frac = |limit: f64| {
        if n == 0 {
            0.0
        } else {
            distances.iter().filter(|&&d| d < limit).count() as f64 / n as f64
        }
    };
    let quantiles = if n == 0 {
        Vec::new()
    } else {
        [0.1, 0.25, 0.5, 0.75, 0.9]
            .iter()
            .map(|&q| (q, nearest_rank(&distances, q)))
            .collect()
    };
    DistanceCdf {
        eligible: n,
        with_profile,
        matched,
        frac_below_10km: frac(10.0),
        frac_below_161km: frac(161.0),
        distances_km: distances,
        quantiles,
    }
}
