//! Reference implementations used as test oracles. Each one is written
//! from the defining formula on dense data, sharing no code with the crate.
#![allow(dead_code)]

use geoloc_core::ingest::{TweetRecord, UserRecord};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<i64>>;

/// Raw mention counts and follow relations of one random fixture. Internal
/// users are `u00..`, external ones `x00..`.
#[derive(Debug, Clone)]
pub struct GraphFixture {
    pub n: usize,
    pub n_ext: usize,
    /// `mentions[i][j]`: how often user i mentions node j (j ≥ n is external).
    pub mentions: Dense,
    /// `follows[i][j]` ∈ {0, 1}.
    pub follows: Dense,
    pub threshold: usize,
}

pub fn node_name(n: usize, j: usize) -> String {
    if j < n {
        format!("u{j:02}")
    } else {
        format!("x{:02}", j - n)
    }
}

impl GraphFixture {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.random_range(1..=50);
        let n_ext = rng.random_range(0..=50);
        let total = n + n_ext;
        let density: f64 = rng.random_range(0.0..0.3);
        let mut mentions = vec![vec![0; total]; n];
        let mut follows = vec![vec![0; total]; n];
        for i in 0..n {
            for j in 0..total {
                if rng.random_bool(density) {
                    mentions[i][j] = rng.random_range(1..=5);
                }
                if rng.random_bool(density) {
                    follows[i][j] = 1;
                }
            }
        }
        let threshold = if rng.random_bool(0.5) { usize::MAX } else { rng.random_range(1..=10) };
        GraphFixture {
            n,
            n_ext,
            mentions,
            follows,
            threshold,
        }
    }

    pub fn users(&self) -> Vec<UserRecord> {
        let total = self.n + self.n_ext;
        (0..self.n)
            .map(|i| {
                let mut tagged = Vec::new();
                for j in 0..total {
                    for _ in 0..self.mentions[i][j] {
                        tagged.push(node_name(self.n, j));
                    }
                }
                let followees: Vec<String> = (0..total).filter(|&j| self.follows[i][j] == 1).map(|j| node_name(self.n, j)).collect();
                UserRecord {
                    user_id: node_name(self.n, i),
                    tweets: vec![TweetRecord {
                        tweet_id: format!("t{i}"),
                        user_id: node_name(self.n, i),
                        text: String::new(),
                        coords: None,
                        bbox: None,
                        mentions: tagged,
                        timestamp: 0,
                    }],
                    profile_location: None,
                    followees: Some(followees),
                }
            })
            .collect()
    }

    /// Incoming entries of nodes with more than `threshold` distinct
    /// in-linkers are zeroed; self links never count.
    fn filtered(&self, raw: &Dense) -> Dense {
        let total = self.n + self.n_ext;
        let mut a = raw.clone();
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 0;
        }
        for j in 0..total {
            let linkers = (0..self.n).filter(|&i| a[i][j] != 0).count();
            if linkers > self.threshold {
                for row in a.iter_mut() {
                    row[j] = 0;
                }
            }
        }
        a
    }

    /// `(M + Mᵀ) + (X Xᵀ − diag)` with X binarized.
    pub fn dense_y(&self) -> Dense {
        let a = self.filtered(&self.mentions);
        combine(self.n, self.n_ext, &a, false)
    }

    /// Same with F + Fᵀ clipped at one per pair.
    pub fn dense_z(&self) -> Dense {
        let a = self.filtered(&self.follows);
        combine(self.n, self.n_ext, &a, true)
    }
}

fn combine(n: usize, n_ext: usize, a: &Dense, clip: bool) -> Dense {
    let mut out = vec![vec![0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let s = a[i][j] + a[j][i];
            out[i][j] = if clip { s.min(1) } else { s };
            let mut co = 0;
            for e in n..n + n_ext {
                co += (a[i][e] != 0) as i64 * (a[j][e] != 0) as i64;
            }
            out[i][j] += co;
        }
    }
    out
}

/// χ² of a 2 × L presence table, exact.
pub fn chi2_exact(present: &[i64], class_sizes: &[i64]) -> Ratio<i64> {
    let n: i64 = class_sizes.iter().sum();
    let r1: i64 = present.iter().sum();
    let rows = [(r1, present.to_vec()), (n - r1, class_sizes.iter().zip(present).map(|(c, p)| c - p).collect::<Vec<_>>())];
    let mut total = Ratio::from_integer(0);
    for (row_sum, observed) in rows.iter() {
        for (l, &o) in observed.iter().enumerate() {
            let e = Ratio::new(row_sum * class_sizes[l], n);
            if e == Ratio::from_integer(0) {
                continue;
            }
            let d = Ratio::from_integer(o) - e;
            total += d * d / e;
        }
    }
    total
}

pub fn ratio_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Great-circle distance by the spherical Vincenty formula, R = 6371.0088 km.
pub fn vincenty_sphere_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dl = (lon2 - lon1).to_radians();
    let y = ((p2.cos() * dl.sin()).powi(2) + (p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos()).powi(2)).sqrt();
    let x = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
    6371.0088 * y.atan2(x)
}

/// Twenty (name, lat, lon) pairs of cities.
pub const CITY_PAIRS: [((&str, f64, f64), (&str, f64, f64)); 20] = [
    (("Buenos Aires", -34.6037, -58.3816), ("Córdoba", -31.4201, -64.1888)),
    (("Rosario", -32.9442, -60.6505), ("Mendoza", -32.8895, -68.8458)),
    (("La Plata", -34.9215, -57.9545), ("Mar del Plata", -38.0055, -57.5426)),
    (("Salta", -24.7821, -65.4232), ("Ushuaia", -54.8019, -68.3030)),
    (("Neuquén", -38.9516, -68.0591), ("Bahía Blanca", -38.7196, -62.2724)),
    (("Tucumán", -26.8083, -65.2176), ("Posadas", -27.3671, -55.8961)),
    (("New York", 40.7128, -74.0060), ("Los Angeles", 34.0522, -118.2437)),
    (("Chicago", 41.8781, -87.6298), ("Houston", 29.7604, -95.3698)),
    (("Seattle", 47.6062, -122.3321), ("Miami", 25.7617, -80.1918)),
    (("Boston", 42.3601, -71.0589), ("Philadelphia", 39.9526, -75.1652)),
    (("Denver", 39.7392, -104.9903), ("Phoenix", 33.4484, -112.0740)),
    (("Atlanta", 33.7490, -84.3880), ("Nashville", 36.1627, -86.7816)),
    (("San Francisco", 37.7749, -122.4194), ("San Jose", 37.3382, -121.8863)),
    (("Anchorage", 61.2181, -149.9003), ("Honolulu", 21.3069, -157.8583)),
    (("London", 51.5074, -0.1278), ("Paris", 48.8566, 2.3522)),
    (("Tokyo", 35.6762, 139.6503), ("Sydney", -33.8688, 151.2093)),
    (("Cape Town", -33.9249, 18.4241), ("Cairo", 30.0444, 31.2357)),
    (("Reykjavík", 64.1466, -21.9426), ("Santiago", -33.4489, -70.6693)),
    (("Auckland", -36.8485, 174.7633), ("Fiji", -17.7134, 178.0650)),
    (("Quito", -0.1807, -78.4678), ("Singapore", 1.3521, 103.8198)),
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
