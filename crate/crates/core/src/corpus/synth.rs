//! Synthetic corpora for tests, benchmarks and smoke runs.

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SetCorpus;
use crate::error::{invalid, Result};

/// Sets drawn uniformly from the universe with sizes in `min_size..=max_size`.
pub fn uniform(
    num_sets: usize,
    num_entities: usize,
    min_size: usize,
    max_size: usize,
    seed: u64,
) -> Result<SetCorpus> {
    check_sizes(num_entities, min_size, max_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets = (0..num_sets)
        .map(|_| {
            let n = rng.gen_range(min_size..=max_size);
            sample(&mut rng, num_entities, n)
                .into_iter()
                .map(|e| e as u32)
                .collect()
        })
        .collect();
    SetCorpus::with_num_entities(sets, num_entities)
}

/// `clusters` disjoint entity blocks of `block` entities; every set draws its
/// members from a single block, so sets from different clusters never meet.
pub fn planted_clusters(
    clusters: usize,
    sets_per_cluster: usize,
    block: usize,
    min_size: usize,
    max_size: usize,
    seed: u64,
) -> Result<SetCorpus> {
    check_sizes(block, min_size, max_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets = Vec::with_capacity(clusters * sets_per_cluster);
    for c in 0..clusters {
        for _ in 0..sets_per_cluster {
            let n = rng.gen_range(min_size..=max_size);
            sets.push(
                sample(&mut rng, block, n)
                    .into_iter()
                    .map(|e| (c * block + e) as u32)
                    .collect(),
            );
        }
    }
    SetCorpus::with_num_entities(sets, clusters * block)
}

/// Heavy-tailed corpus resembling user/item data: entity popularity follows a
/// Zipf law with exponent `skew`, set sizes are log-uniform between
/// `min_size` and `max_size`.
pub fn zipf(
    num_sets: usize,
    num_entities: usize,
    min_size: usize,
    max_size: usize,
    skew: f64,
    seed: u64,
) -> Result<SetCorpus> {
    check_sizes(num_entities, min_size, max_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cdf: Vec<f64> = (1..=num_entities)
        .map(|r| (r as f64).powf(-skew))
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let total = *cdf.last().unwrap();
    cdf.iter_mut().for_each(|c| *c /= total);
    let (lo, hi) = ((min_size as f64).ln(), (max_size as f64).ln());
    let mut sets = Vec::with_capacity(num_sets);
    let mut seen = vec![false; num_entities];
    for _ in 0..num_sets {
        let n = rng.gen_range(lo..=hi).exp().round() as usize;
        let n = n.clamp(min_size, max_size);
        let mut set = Vec::with_capacity(n);
        while set.len() < n {
            let u: f64 = rng.gen();
            let e = cdf.partition_point(|&c| c < u).min(num_entities - 1);
            if !seen[e] {
                seen[e] = true;
                set.push(e as u32);
            }
        }
        for &e in &set {
            seen[e as usize] = false;
        }
        sets.push(set);
    }
    SetCorpus::with_num_entities(sets, num_entities)
}

fn check_sizes(universe: usize, min_size: usize, max_size: usize) -> Result<()> {
    if min_size == 0 || min_size > max_size || max_size > universe {
        return Err(invalid(format!(
            "set sizes {min_size}..={max_size} invalid for a universe of {universe}"
        )));
    }
    Ok(())
}
