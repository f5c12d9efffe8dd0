//! Synthetic users with planted location homophily and location-indicative
//! vocabulary, written in the ingest file formats.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, BoundingBox, GeoPoint};
use crate::ingest::{write_profiles, write_records, Gazetteer, GazetteerEntry, GroundTruth, PlaceBox, TweetRecord, UserRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_cities: usize,
    /// Region city centers are drawn from.
    pub region: BoundingBox,
    pub min_center_distance_km: f64,
    /// Maximum distance of a tweet from its city center.
    pub jitter_km: f64,
    /// Mention probability for a same-city / cross-city user pair.
    pub p_in: f64,
    pub p_out: f64,
    /// Follow probability for a same-city / cross-city user pair.
    pub follow_p_in: f64,
    pub follow_p_out: f64,
    /// External (not in the dataset) accounts per city.
    pub hubs_per_city: usize,
    /// Probability that a user mentions, and independently follows, each
    /// hub of their own city.
    pub hub_attach: f64,
    pub tweets_per_user: usize,
    /// Location tokens per tweet, each from some city's vocabulary.
    pub tokens_per_tweet: usize,
    /// Probability that a location token comes from the user's own city
    /// vocabulary; otherwise it comes from a uniformly chosen other city.
    /// `1 / n_cities` carries no signal.
    pub liw_strength: f64,
    /// Filler tokens per tweet from the shared vocabulary.
    pub shared_per_tweet: usize,
    pub city_vocab: usize,
    pub shared_vocab: usize,
    /// Share of tweets carrying a place box instead of coordinates.
    pub bbox_fraction: f64,
    /// Share of users whose profile names their city.
    pub profile_fraction: f64,
    /// Small towns per city, 60–200 km away from it.
    pub distractors_per_city: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 1000,
            n_cities: 5,
            region: BoundingBox {
                min_lat: -50.0,
                max_lat: -22.0,
                min_lon: -72.0,
                max_lon: -54.0,
            },
            min_center_distance_km: 500.0,
            jitter_km: 10.0,
            p_in: 0.05,
            p_out: 0.001,
            follow_p_in: 0.05,
            follow_p_out: 0.001,
            hubs_per_city: 3,
            hub_attach: 0.15,
            tweets_per_user: 10,
            tokens_per_tweet: 8,
            liw_strength: 0.3,
            shared_per_tweet: 4,
            city_vocab: 40,
            shared_vocab: 400,
            bbox_fraction: 0.1,
            profile_fraction: 0.5,
            distractors_per_city: 3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.p_in,
            self.p_out,
            self.follow_p_in,
            self.follow_p_out,
            self.hub_attach,
            self.liw_strength,
            self.bbox_fraction,
            self.profile_fraction,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("synth probabilities must lie in [0, 1]".into()));
        }
        if self.n_cities == 0 || self.n_users == 0 || self.city_vocab == 0 || self.shared_vocab == 0 {
            return Err(Error::Config("synth needs users, cities and vocabularies".into()));
        }
        if self.jitter_km < 0.0 || self.jitter_km >= 25.0 {
            return Err(Error::Config(format!("jitter {} km must be in [0, 25)", self.jitter_km)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub users: Vec<UserRecord>,
    pub gazetteer: Gazetteer,
    pub truths: Vec<GroundTruth>,
    /// Geoname ids of the planted cities, index = city number.
    pub city_ids: Vec<u64>,
    /// Planted city of each user, parallel to `users`.
    pub user_city: Vec<usize>,
}

impl SynthData {
    /// Writes `records.jsonl`, `profiles.jsonl` and `gazetteer.tsv`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.write_files(&dir.join("records.jsonl"), &dir.join("profiles.jsonl"), &dir.join("gazetteer.tsv"))
    }

    pub fn write_files(&self, records: &Path, profiles: &Path, gazetteer: &Path) -> Result<()> {
        let create = |p: &Path| {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::File::create(p).map(std::io::BufWriter::new).map_err(|e| Error::io(p, e))
        };
        let mut w = create(records)?;
        write_records(&mut w, &self.users)?;
        w.flush().map_err(|e| Error::io(records, e))?;
        let mut w = create(profiles)?;
        write_profiles(&mut w, &self.users)?;
        w.flush().map_err(|e| Error::io(profiles, e))?;
        let mut w = create(gazetteer)?;
        self.gazetteer.write_tsv(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(gazetteer, e))?;
        Ok(())
    }
}

const CITY_NAMES: [&str; 12] = [
    "Aldermoor", "Brisca", "Calvane", "Dornhollow", "Estrava", "Fenwick", "Galloran", "Harrowgate", "Isenmark", "Jorvale",
    "Kestrel Bay", "Lunmouth",
];
const SYLLABLES: [&str; 16] = ["ka", "lo", "mi", "ra", "te", "su", "vi", "no", "pe", "da", "zu", "ha", "be", "co", "fi", "gu"];

fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=4);
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

fn distinct_words(rng: &mut ChaCha8Rng, n: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = word(rng);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Point `d ≤ max_km` away from `c` at a uniform bearing.
fn jitter(c: GeoPoint, min_km: f64, max_km: f64, rng: &mut ChaCha8Rng) -> GeoPoint {
    let d = if max_km > min_km { rng.random_range(min_km..max_km) } else { min_km };
    let bearing = rng.random_range(0.0..std::f64::consts::TAU);
    let km_per_deg = 111.195;
    let lat = c.lat + d * bearing.cos() / km_per_deg;
    let lon = c.lon + d * bearing.sin() / (km_per_deg * c.lat.to_radians().cos());
    GeoPoint { lat, lon }
}

fn place_centers(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<GeoPoint>> {
    let r = &cfg.region;
    let mut centers: Vec<GeoPoint> = Vec::new();
    for _ in 0..100_000 {
        if centers.len() == cfg.n_cities {
            return Ok(centers);
        }
        let p = GeoPoint {
            lat: rng.random_range(r.min_lat..=r.max_lat),
            lon: rng.random_range(r.min_lon..=r.max_lon),
        };
        if centers.iter().all(|c| haversine_km(*c, p) >= cfg.min_center_distance_km) {
            centers.push(p);
        }
    }
    if centers.len() == cfg.n_cities {
        return Ok(centers);
    }
    Err(Error::Config(format!(
        "could not place {} cities {} km apart in the region",
        cfg.n_cities, cfg.min_center_distance_km
    )))
}

/// Builds the dataset; identical configs give identical output.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = place_centers(cfg, &mut rng)?;

    let mut entries = Vec::new();
    let mut city_ids = Vec::new();
    let mut city_names = Vec::new();
    for (c, &p) in centers.iter().enumerate() {
        let name = CITY_NAMES.get(c).map(|s| s.to_string()).unwrap_or_else(|| format!("City {c}"));
        let id = 1_000 + c as u64;
        entries.push(GazetteerEntry {
            geoname_id: id,
            name: name.clone(),
            alt_names: vec![name.to_uppercase()],
            point: p,
            country_code: "XX".into(),
            population: 500_000 + 10_000 * c as u64,
        });
        city_ids.push(id);
        city_names.push(name);
    }
    for c in 0..cfg.n_cities {
        for k in 0..cfg.distractors_per_city {
            entries.push(GazetteerEntry {
                geoname_id: 100_000 + (c * cfg.distractors_per_city + k) as u64,
                name: format!("{} Town {k}", city_names[c]),
                alt_names: Vec::new(),
                point: jitter(centers[c], 60.0, 200.0, &mut rng),
                country_code: "XX".into(),
                population: 2_000 + k as u64,
            });
        }
    }
    let gazetteer = Gazetteer::new(entries)?;

    let mut taken = BTreeSet::new();
    let shared = distinct_words(&mut rng, cfg.shared_vocab, &mut taken);
    let city_vocab: Vec<Vec<String>> = (0..cfg.n_cities)
        .map(|_| distinct_words(&mut rng, cfg.city_vocab, &mut taken))
        .collect();

    let n = cfg.n_users;
    let width = n.to_string().len();
    let ids: Vec<String> = (0..n).map(|i| format!("u{i:0width$}")).collect();
    let user_city: Vec<usize> = (0..n).map(|i| i % cfg.n_cities).collect();
    let hubs: Vec<Vec<String>> = (0..cfg.n_cities)
        .map(|c| (0..cfg.hubs_per_city).map(|k| format!("hub_{c}_{k}")).collect())
        .collect();

    let mut mentions: Vec<Vec<String>> = vec![Vec::new(); n];
    let mut followees: Vec<Vec<String>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            let same = user_city[i] == user_city[j];
            if rng.random_bool(if same { cfg.p_in } else { cfg.p_out }) {
                let times = rng.random_range(1..=3);
                match rng.random_range(0..3) {
                    0 => mentions[i].extend(std::iter::repeat_n(ids[j].clone(), times)),
                    1 => mentions[j].extend(std::iter::repeat_n(ids[i].clone(), times)),
                    _ => {
                        mentions[i].extend(std::iter::repeat_n(ids[j].clone(), times));
                        mentions[j].push(ids[i].clone());
                    }
                }
            }
            if rng.random_bool(if same { cfg.follow_p_in } else { cfg.follow_p_out }) {
                match rng.random_range(0..3) {
                    0 => followees[i].push(ids[j].clone()),
                    1 => followees[j].push(ids[i].clone()),
                    _ => {
                        followees[i].push(ids[j].clone());
                        followees[j].push(ids[i].clone());
                    }
                }
            }
        }
        for h in &hubs[user_city[i]] {
            if rng.random_bool(cfg.hub_attach) {
                mentions[i].push(h.clone());
            }
            if rng.random_bool(cfg.hub_attach) {
                followees[i].push(h.clone());
            }
        }
    }

    let mut users = Vec::with_capacity(n);
    let mut truths = Vec::with_capacity(n);
    for i in 0..n {
        let c = user_city[i];
        let tweets_n = cfg.tweets_per_user.max(1);
        let mut per_tweet: Vec<Vec<String>> = vec![Vec::new(); tweets_n];
        for (k, m) in mentions[i].iter().enumerate() {
            per_tweet[k % tweets_n].push(m.clone());
        }
        let mut tweets = Vec::with_capacity(tweets_n);
        for (k, tweet_mentions) in per_tweet.into_iter().enumerate() {
            let mut words: Vec<String> = Vec::with_capacity(cfg.tokens_per_tweet + cfg.shared_per_tweet);
            for _ in 0..cfg.tokens_per_tweet {
                let n_cities = cfg.n_cities;
                let from = if n_cities == 1 || rng.random_bool(cfg.liw_strength) {
                    c
                } else {
                    // uniform over the other cities
                    let o = rng.random_range(0..n_cities - 1);
                    if o >= c { o + 1 } else { o }
                };
                words.push(city_vocab[from].choose(&mut rng).unwrap().clone());
            }
            for _ in 0..cfg.shared_per_tweet {
                words.push(shared.choose(&mut rng).unwrap().clone());
            }
            words.shuffle(&mut rng);
            words.extend(tweet_mentions.iter().map(|m| format!("@{m}")));
            let (coords, bbox) = if rng.random_bool(cfg.bbox_fraction) {
                let p = centers[c];
                let corners = [(-0.1, -0.1), (-0.1, 0.1), (0.1, 0.1), (0.1, -0.1)]
                    .map(|(a, b)| GeoPoint { lat: p.lat + a, lon: p.lon + b });
                (None, Some(PlaceBox { corners, place_name: city_names[c].clone() }))
            } else {
                (Some(jitter(centers[c], 0.0, cfg.jitter_km, &mut rng)), None)
            };
            tweets.push(TweetRecord {
                tweet_id: format!("{}-{k}", ids[i]),
                user_id: ids[i].clone(),
                text: words.join(" "),
                coords,
                bbox,
                mentions: tweet_mentions,
                timestamp: 1_600_000_000 + (i * tweets_n + k) as i64 * 60,
            });
        }
        let profile_location = rng.random_bool(cfg.profile_fraction).then(|| city_names[c].clone());
        users.push(UserRecord {
            user_id: ids[i].clone(),
            tweets,
            profile_location,
            followees: Some(std::mem::take(&mut followees[i])),
        });
        truths.push(GroundTruth {
            user_id: ids[i].clone(),
            city: city_ids[c],
            point: centers[c],
        });
    }
    Ok(SynthData {
        users,
        gazetteer,
        truths,
        city_ids,
        user_city,
    })
}
