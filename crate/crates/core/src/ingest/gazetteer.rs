use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geo::{haversine_km, GeoPoint, EARTH_RADIUS_KM};

use super::records::{Parsed, TweetRecord};

/// Default snapping radius from tweet coordinates to a gazetteer city.
pub const DEFAULT_MATCH_RADIUS_KM: f64 = 25.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GazetteerEntry {
    pub geoname_id: u64,
    pub name: String,
    pub alt_names: Vec<String>,
    pub point: GeoPoint,
    pub country_code: String,
    pub population: u64,
}

/// City table indexed by case-folded name and by a 1-degree grid.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    by_id: HashMap<u64, usize>,
    by_name: HashMap<String, Vec<usize>>,
    grid: HashMap<(i32, i32), Vec<usize>>,
}

fn grid_cell(p: &GeoPoint) -> (i32, i32) {
    let lon_cell = p.lon.floor() as i32;
    // 180.0 folds onto the -180 cell
    let lon_cell = if lon_cell == 180 { -180 } else { lon_cell };
    (p.lat.floor() as i32, lon_cell)
}

pub(crate) fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

impl Gazetteer {
    pub fn new(entries: Vec<GazetteerEntry>) -> Result<Self> {
        let mut g = Gazetteer::default();
        for e in entries {
            if g.by_id.contains_key(&e.geoname_id) {
                return Err(Error::Parse(format!("duplicate geoname id {}", e.geoname_id)));
            }
            let idx = g.entries.len();
            g.by_id.insert(e.geoname_id, idx);
            let mut names: Vec<String> = std::iter::once(&e.name)
                .chain(e.alt_names.iter())
                .map(|n| fold(n))
                .filter(|n| !n.is_empty())
                .collect();
            names.sort();
            names.dedup();
            for n in names {
                g.by_name.entry(n).or_default().push(idx);
            }
            g.grid.entry(grid_cell(&e.point)).or_default().push(idx);
            g.entries.push(e);
        }
        Ok(g)
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, geoname_id: u64) -> Option<&GazetteerEntry> {
        self.by_id.get(&geoname_id).map(|&i| &self.entries[i])
    }

    /// Entries whose name or alternate name equals `name` after case folding.
    pub fn lookup_name(&self, name: &str) -> impl Iterator<Item = &GazetteerEntry> {
        self.by_name
            .get(&fold(name))
            .into_iter()
            .flatten()
            .map(|&i| &self.entries[i])
    }

    /// Closest entry within `radius_km`; ties go to the lower geoname id.
    pub fn nearest_within(&self, p: GeoPoint, radius_km: f64) -> Option<&GazetteerEntry> {
        let deg_per_km = 180.0 / (std::f64::consts::PI * EARTH_RADIUS_KM);
        let dlat = radius_km * deg_per_km;
        let lat_lo = (p.lat - dlat).max(-90.0);
        let lat_hi = (p.lat + dlat).min(90.0);
        let widest = lat_lo.abs().max(lat_hi.abs()).min(90.0);
        let cos = widest.to_radians().cos();
        let lon_cells: Vec<i32> = if cos < 1e-9 || dlat / cos >= 180.0 {
            (-180..180).collect()
        } else {
            let dlon = dlat / cos;
            let lo = (p.lon - dlon).floor() as i32;
            let hi = (p.lon + dlon).floor() as i32;
            let mut cells: Vec<i32> = (lo..=hi).map(|c| (c + 180).rem_euclid(360) - 180).collect();
            cells.sort_unstable();
            cells.dedup();
            cells
        };
        let mut best: Option<(f64, u64, usize)> = None;
        for lat_cell in (lat_lo.floor() as i32)..=(lat_hi.floor() as i32) {
            for &lon_cell in &lon_cells {
                let Some(bucket) = self.grid.get(&(lat_cell, lon_cell)) else {
                    continue;
                };
                for &i in bucket {
                    let e = &self.entries[i];
                    let d = haversine_km(p, e.point);
                    if d > radius_km {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bd, bid, _)) => d < bd || (d == bd && e.geoname_id < bid),
                    };
                    if better {
                        best = Some((d, e.geoname_id, i));
                    }
                }
            }
        }
        best.map(|(_, _, i)| &self.entries[i])
    }

    /// Writes entries as GeoNames-ordered TSV (19 columns).
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.entries {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\tP\tPPL\t{}\t\t\t\t\t\t{}\t\t\t\t",
                e.geoname_id,
                e.name,
                e.name,
                e.alt_names.join(","),
                e.point.lat,
                e.point.lon,
                e.country_code,
                e.population
            )?;
        }
        Ok(())
    }
}

fn parse_gazetteer_line(line: &str) -> Result<GazetteerEntry> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() < 15 {
        return Err(Error::Parse(format!("{} columns, expected at least 15", cols.len())));
    }
    let num = |i: usize, what: &str| -> Result<f64> {
        cols[i]
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("bad {what} `{}`", cols[i])))
    };
    let geoname_id = cols[0]
        .trim()
        .parse::<u64>()
        .map_err(|_| Error::Parse(format!("bad geonameid `{}`", cols[0])))?;
    let point = GeoPoint::new(num(4, "latitude")?, num(5, "longitude")?)?;
    let population = if cols[14].trim().is_empty() {
        0
    } else {
        cols[14]
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::Parse(format!("bad population `{}`", cols[14])))?
    };
    let mut alt_names: Vec<String> = cols[3]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    let ascii = cols[2].trim();
    if !ascii.is_empty() && ascii != cols[1] {
        alt_names.insert(0, ascii.to_string());
    }
    Ok(GazetteerEntry {
        geoname_id,
        name: cols[1].to_string(),
        alt_names,
        point,
        country_code: cols[8].to_string(),
        population,
    })
}

/// Reads a GeoNames-format TSV. Malformed rows are skipped and counted;
/// duplicate ids are fatal.
pub fn load_gazetteer(path: impl AsRef<Path>) -> Result<(Gazetteer, usize)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    let mut malformed = 0;
    for line in text.lines() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_gazetteer_line(line) {
            Ok(e) => entries.push(e),
            Err(_) => malformed += 1,
        }
    }
    if malformed > 0 {
        log::warn!("{}: skipped {malformed} malformed rows", path.display());
    }
    let parsed = Parsed {
        items: entries,
        malformed,
    };
    Ok((Gazetteer::new(parsed.items)?, parsed.malformed))
}

/// City assigned to one geotagged tweet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedGeotag {
    pub geoname_id: u64,
    /// Tweet coordinates when present, otherwise the city point.
    pub point: GeoPoint,
}

/// Maps a tweet to a gazetteer city. Exact coordinates snap to the nearest
/// city within `radius_km`; otherwise a place box resolves to a city of the
/// same name lying inside it, preferring larger population, then lower id.
pub fn resolve_geotag(t: &TweetRecord, g: &Gazetteer, radius_km: f64) -> Option<ResolvedGeotag> {
    if let Some(p) = t.coords {
        return g.nearest_within(p, radius_km).map(|e| ResolvedGeotag {
            geoname_id: e.geoname_id,
            point: p,
        });
    }
    let bbox = t.bbox.as_ref()?;
    let bounds = bbox.bounds();
    let full = bbox.place_name.as_str();
    let head = full.split(',').next().unwrap_or(full);
    [full, head]
        .iter()
        .flat_map(|name| g.lookup_name(name))
        .filter(|e| bounds.contains(&e.point))
        .min_by(|a, b| {
            b.population
                .cmp(&a.population)
                .then(a.geoname_id.cmp(&b.geoname_id))
        })
        .map(|e| ResolvedGeotag {
            geoname_id: e.geoname_id,
            point: e.point,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::records::PlaceBox;
    use proptest::prelude::*;

    pub(crate) fn entry(id: u64, name: &str, lat: f64, lon: f64, pop: u64) -> GazetteerEntry {
        GazetteerEntry {
            geoname_id: id,
            name: name.into(),
            alt_names: vec![],
            point: GeoPoint { lat, lon },
            country_code: "XX".into(),
            population: pop,
        }
    }

    fn tweet_at(lat: f64, lon: f64) -> TweetRecord {
        TweetRecord {
            tweet_id: "t".into(),
            user_id: "u".into(),
            text: String::new(),
            coords: Some(GeoPoint { lat, lon }),
            bbox: None,
            mentions: vec![],
            timestamp: 0,
        }
    }

    fn tweet_in_box(name: &str, lat0: f64, lon0: f64, lat1: f64, lon1: f64) -> TweetRecord {
        let corners = [
            GeoPoint { lat: lat0, lon: lon0 },
            GeoPoint { lat: lat0, lon: lon1 },
            GeoPoint { lat: lat1, lon: lon1 },
            GeoPoint { lat: lat1, lon: lon0 },
        ];
        TweetRecord {
            coords: None,
            bbox: Some(PlaceBox {
                corners,
                place_name: name.into(),
            }),
            ..tweet_at(0.0, 0.0)
        }
    }

    #[test]
    fn coords_on_city_point_resolve_to_it() {
        let g = Gazetteer::new(vec![
            entry(1, "A", -34.6, -58.4, 10),
            entry(2, "B", -31.4, -64.2, 10),
        ])
        .unwrap();
        let r = resolve_geotag(&tweet_at(-31.4, -64.2), &g, 25.0).unwrap();
        assert_eq!(r.geoname_id, 2);
    }

    #[test]
    fn coords_far_from_everything_resolve_to_none() {
        let g = Gazetteer::new(vec![entry(1, "A", 0.0, 0.0, 1)]).unwrap();
        // ~500 km east along the equator
        assert!(resolve_geotag(&tweet_at(0.0, 4.5), &g, 50.0).is_none());
    }

    #[test]
    fn bbox_ambiguity_prefers_population() {
        let g = Gazetteer::new(vec![
            entry(10, "Springfield", 39.80, -89.64, 100_000),
            entry(11, "Springfield", 39.90, -89.50, 250_000),
            entry(12, "Springfield", 37.2, -93.3, 1_000_000),
        ])
        .unwrap();
        let t = tweet_in_box("Springfield, IL", 39.5, -90.0, 40.0, -89.0);
        assert_eq!(resolve_geotag(&t, &g, 25.0).unwrap().geoname_id, 11);
    }

    #[test]
    fn bbox_population_tie_prefers_lower_id() {
        let g = Gazetteer::new(vec![
            entry(21, "Twin", 1.0, 1.0, 5),
            entry(20, "Twin", 1.1, 1.1, 5),
        ])
        .unwrap();
        let t = tweet_in_box("Twin", 0.0, 0.0, 2.0, 2.0);
        assert_eq!(resolve_geotag(&t, &g, 25.0).unwrap().geoname_id, 20);
    }

    #[test]
    fn bbox_city_outside_box_is_rejected() {
        let g = Gazetteer::new(vec![entry(1, "Far", 10.0, 10.0, 5)]).unwrap();
        let t = tweet_in_box("Far", 0.0, 0.0, 1.0, 1.0);
        assert!(resolve_geotag(&t, &g, 25.0).is_none());
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(Gazetteer::new(vec![entry(1, "A", 0.0, 0.0, 1), entry(1, "B", 1.0, 1.0, 1)]).is_err());
    }

    #[test]
    fn geonames_row_parses() {
        let row = "3435910\tBuenos Aires\tBuenos Aires\tBA,Baires\t-34.61315\t-58.37723\tP\tPPLC\tAR\t\t07\t\t\t\t13076300\t\t25\tAmerica/Argentina/Buenos_Aires\t2022-01-01";
        let e = parse_gazetteer_line(row).unwrap();
        assert_eq!(e.geoname_id, 3435910);
        assert_eq!(e.alt_names, ["BA", "Baires"]);
        assert_eq!(e.country_code, "AR");
        assert_eq!(e.population, 13076300);
    }

    #[test]
    fn tsv_writer_round_trips() {
        let g = Gazetteer::new(vec![
            GazetteerEntry {
                alt_names: vec!["Alt One".into()],
                ..entry(5, "Córdoba", -31.4201, -64.1888, 1_300_000)
            },
            entry(6, "Rosario", -32.95, -60.65, 1_200_000),
        ])
        .unwrap();
        let mut buf = Vec::new();
        g.write_tsv(&mut buf).unwrap();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        std::io::Write::write_all(&mut f, &buf).unwrap();
        let (back, malformed) = load_gazetteer(f.path()).unwrap();
        assert_eq!(malformed, 0);
        assert_eq!(back.entries(), g.entries());
    }

    proptest! {
        // Grid lookup agrees with an exhaustive scan, poles and antimeridian included.
        #[test]
        fn nearest_matches_exhaustive_scan(
            cities in prop::collection::vec((-89.9f64..89.9, -180.0f64..180.0), 1..300),
            queries in prop::collection::vec((-90.0f64..90.0, -180.0f64..180.0), 1..20),
            radius in 1.0f64..800.0,
        ) {
            let entries: Vec<_> = cities
                .iter()
                .enumerate()
                .map(|(i, &(lat, lon))| entry(i as u64 + 1, "c", lat, lon, 1))
                .collect();
            let g = Gazetteer::new(entries.clone()).unwrap();
            for (lat, lon) in queries {
                let q = GeoPoint { lat, lon };
                let brute = entries
                    .iter()
                    .map(|e| (haversine_km(q, e.point), e.geoname_id))
                    .filter(|&(d, _)| d <= radius)
                    .min_by(|a, b| a.partial_cmp(b).unwrap())
                    .map(|(_, id)| id);
                prop_assert_eq!(g.nearest_within(q, radius).map(|e| e.geoname_id), brute);
            }
        }
    }
}
