//! Set2Bin: each set is the OR of one-hot hashed member indicators.

use serde::{Deserialize, Serialize};

use crate::corpus::{EntityId, Measure, SetCorpus, SetId};
use crate::error::{invalid, Result};
use crate::eval::SetEncoder;

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded hash of an entity into `[0, d)`.
pub fn bucket(e: EntityId, d: usize, seed: u64) -> usize {
    (mix64(seed ^ mix64(e as u64)) % d as u64) as usize
}

/// Binary vector of length `d`, packed little-endian into 64-bit words.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinSketch {
    d: usize,
    words: Vec<u64>,
}

impl BinSketch {
    pub fn zeros(d: usize) -> Self {
        BinSketch {
            d,
            words: vec![0; d.div_ceil(64)],
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut s = BinSketch::zeros(bits.len());
        for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            s.set(i);
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.d);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn and_count(&self, other: &BinSketch) -> u32 {
        self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones()).sum()
    }

    pub fn or_count(&self, other: &BinSketch) -> u32 {
        self.words.iter().zip(&other.words).map(|(a, b)| (a | b).count_ones()).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn from_words(d: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != d.div_ceil(64) {
            return Err(invalid(format!("{} words cannot hold {d} bits", words.len())));
        }
        if d % 64 != 0 && words.last().is_some_and(|w| w >> (d % 64) != 0) {
            return Err(invalid("bits set beyond the sketch width"));
        }
        Ok(BinSketch { d, words })
    }
}

/// Hashing parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Set2Bin {
    pub d: usize,
    pub seed: u64,
}

impl Set2Bin {
    pub fn new(d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(invalid("d must be at least 1"));
        }
        Ok(Set2Bin { d, seed })
    }

    pub fn sketch(&self, members: &[EntityId]) -> BinSketch {
        sketch_with(self.d, members, |e| bucket(e, self.d, self.seed))
    }
}

/// OR of the one-hot vectors `h(e)` over the members.
pub fn sketch_with(d: usize, members: &[EntityId], h: impl Fn(EntityId) -> usize) -> BinSketch {
    let mut s = BinSketch::zeros(d);
    for &e in members {
        s.set(h(e));
    }
    s
}

pub fn bin_sketch(corpus: &SetCorpus, id: SetId, d: usize, seed: u64) -> Result<BinSketch> {
    Ok(Set2Bin::new(d, seed)?.sketch(corpus.set(id)))
}

/// An estimate plus whether it was forced to 0 by empty sketches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinEstimate {
    pub value: f64,
    pub degenerate: bool,
}

/// Sizes from popcounts, intersection from AND, union from OR.
pub fn bin_estimate(a: &BinSketch, b: &BinSketch, measure: Measure) -> Result<BinEstimate> {
    if a.d != b.d {
        return Err(crate::error::Error::DimensionMismatch {
            expected: a.d,
            got: b.d,
        });
    }
    let (na, nb) = (a.count_ones() as f64, b.count_ones() as f64);
    if na.min(nb) == 0.0 {
        return Ok(BinEstimate {
            value: 0.0,
            degenerate: true,
        });
    }
    let value = measure.from_sizes_with_union(na, nb, a.and_count(b) as f64, a.or_count(b) as f64);
    Ok(BinEstimate {
        value,
        degenerate: false,
    })
}

impl SetEncoder for Set2Bin {
    type Code = BinSketch;

    fn encode(&self, members: &[EntityId]) -> Result<BinSketch> {
        Ok(self.sketch(members))
    }

    fn estimate(&self, a: &BinSketch, b: &BinSketch, measure: Measure) -> f64 {
        bin_estimate(a, b, measure).map_or(f64::NAN, |e| e.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sketch_and_estimates() {
        let a = BinSketch::from_bits(&[true, true, false, false]);
        let b = BinSketch::from_bits(&[false, true, true, false]);
        let e = bin_estimate(&a, &b, Measure::Jaccard).unwrap();
        assert!((e.value - 1.0 / 3.0).abs() < 1e-15);
        for m in Measure::ALL {
            assert_eq!(bin_estimate(&a, &a, m).unwrap().value, 1.0);
        }
        let c = BinSketch::from_bits(&[false, false, true, true]);
        assert_eq!(bin_estimate(&a, &c, Measure::Dice).unwrap().value, 0.0);
        let z = BinSketch::zeros(4);
        assert!(bin_estimate(&a, &z, Measure::Overlap).unwrap().degenerate);
        assert!(bin_estimate(&a, &BinSketch::zeros(5), Measure::Overlap).is_err());
    }

    #[test]
    fn modular_hash_example() {
        let s = sketch_with(4, &[0, 1, 5], |e| e as usize % 4);
        assert_eq!(s, BinSketch::from_bits(&[true, true, false, false]));
    }

    #[test]
    fn pigeonhole_and_determinism() {
        let enc = Set2Bin::new(4, 9).unwrap();
        let members: Vec<EntityId> = (0..9).collect();
        let s = enc.sketch(&members);
        assert!((s.count_ones() as usize) < members.len());
        assert_eq!(s, enc.sketch(&members));
        let wide = Set2Bin::new(200, 1).unwrap().sketch(&members);
        assert_eq!(wide.dim(), 200);
        assert_eq!(BinSketch::from_words(200, wide.words().to_vec()).unwrap(), wide);
    }
}
