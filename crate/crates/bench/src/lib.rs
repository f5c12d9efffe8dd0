//! Fixtures shared by the benchmarks.

use geoloc_core::synth::{generate, SynthConfig, SynthData};
use geoloc_core::GeoPoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Synthetic dataset with the default generator settings and `n_users` users.
pub fn dataset(n_users: usize) -> SynthData {
    let cfg = SynthConfig {
        n_users,
        ..SynthConfig::default()
    };
    generate(&cfg).expect("default synth config is valid")
}

/// Uniform points over the contiguous United States.
pub fn random_points(n: usize, seed: u64) -> Vec<GeoPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| GeoPoint::new(rng.random_range(25.0..49.0), rng.random_range(-124.0..-67.0)).unwrap())
        .collect()
}

/// Random token id sequences; id 0 is padding and never drawn.
pub fn random_sequences(n: usize, len: usize, vocab: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..len).map(|_| rng.random_range(1..vocab)).collect()).collect()
}
