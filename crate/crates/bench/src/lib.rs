//! Seeded fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use set2box::corpus::EntityId;
use set2box::quant::Codebook;
use set2box::Hyperbox;

pub fn random_box(rng: &mut ChaCha8Rng, d: usize) -> Hyperbox {
    let c = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = (0..d).map(|_| rng.gen_range(0.05..0.8)).collect();
    Hyperbox::new(c, f).unwrap()
}

pub fn boxes(n: usize, d: usize, seed: u64) -> Vec<Hyperbox> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_box(&mut rng, d)).collect()
}

/// `D` subspaces of `K` random keys over `d` dimensions.
pub fn codebook(d: usize, num_subspaces: usize, num_keys: usize, seed: u64) -> Codebook {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = d * num_keys;
    let centers: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..0.5)).collect();
    Codebook::new(d, num_subspaces, num_keys, 1.0, &centers, &raw).unwrap()
}

/// Sorted random subset of `0..universe`.
pub fn random_set(rng: &mut ChaCha8Rng, universe: usize, size: usize) -> Vec<EntityId> {
    let mut v: Vec<EntityId> = rand::seq::index::sample(rng, universe, size)
        .into_iter()
        .map(|e| e as EntityId)
        .collect();
    v.sort_unstable();
    v
}
