//! Set-of-sets corpora: loading, train/val/test splits, exact set statistics
//! and triple sampling.
//!
//! The exact statistics computed here (intersection sizes, the seven
//! cardinalities of a triple, similarity measures) are the ground truth every
//! learned representation is evaluated against.

mod measure;
mod sampling;
pub mod synth;

pub use measure::Measure;
pub use sampling::{sample_triples, SampledTriple, TripleKind};

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Entity identifier inside a corpus.
pub type EntityId = u32;

/// Index of a set inside a corpus.
pub type SetId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(invalid(format!("unknown split label {other:?}"))),
        }
    }
}

/// A collection of non-empty sets over the entity universe `0..num_entities`.
///
/// Sets are stored in canonical form (strictly increasing ids). Freshly built
/// corpora label every set as [`Split::Train`] until [`SetCorpus::split`] or
/// [`SetCorpus::with_split_labels`] assigns a partition.
#[derive(Clone, Debug, PartialEq)]
pub struct SetCorpus {
    num_entities: usize,
    sets: Vec<Vec<EntityId>>,
    split: Vec<Split>,
    inverted: Vec<Vec<u32>>,
}

impl SetCorpus {
    /// Builds a corpus with `num_entities = 1 + max id`.
    pub fn from_sets(sets: Vec<Vec<EntityId>>) -> Result<Self> {
        let max = sets.iter().flatten().copied().max();
        let n = max.map_or(0, |m| m as usize + 1);
        Self::with_num_entities(sets, n)
    }

    /// Builds a corpus over an explicit entity universe.
    pub fn with_num_entities(mut sets: Vec<Vec<EntityId>>, num_entities: usize) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::NotEnoughSets("corpus has no sets".into()));
        }
        for (id, set) in sets.iter_mut().enumerate() {
            set.sort_unstable();
            set.dedup();
            if set.is_empty() {
                return Err(invalid(format!("set {id} is empty")));
            }
            if let Some(&e) = set.last() {
                if e as usize >= num_entities {
                    return Err(invalid(format!(
                        "set {id} contains entity {e} outside universe of {num_entities}"
                    )));
                }
            }
        }
        let mut inverted = vec![Vec::new(); num_entities];
        for (id, set) in sets.iter().enumerate() {
            for &e in set {
                inverted[e as usize].push(id as u32);
            }
        }
        let split = vec![Split::Train; sets.len()];
        Ok(SetCorpus {
            num_entities,
            sets,
            split,
            inverted,
        })
    }

    /// Parses the text corpus format: one set per line, whitespace separated
    /// decimal entity ids, `#` comment lines.
    pub fn parse(text: &str) -> Result<Self> {
        Self::read(text.as_bytes())
    }

    pub fn read<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut sets = Vec::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.starts_with('#') {
                continue;
            }
            if trimmed.is_empty() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "empty line (sets must be non-empty)".into(),
                });
            }
            let set = trimmed
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<EntityId>().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("non-integer token {tok:?}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            sets.push(set);
        }
        if sets.is_empty() {
            return Err(Error::Parse {
                line: 0,
                msg: "empty corpus file".into(),
            });
        }
        Self::from_sets(sets)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(file)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for set in &self.sets {
            let line: Vec<String> = set.iter().map(|e| e.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn set(&self, id: SetId) -> &[EntityId] {
        &self.sets[id]
    }

    pub fn sets(&self) -> &[Vec<EntityId>] {
        &self.sets
    }

    pub fn split_of(&self, id: SetId) -> Split {
        self.split[id]
    }

    pub fn split_labels(&self) -> &[Split] {
        &self.split
    }

    /// Set ids carrying `split`, in increasing order.
    pub fn ids_in(&self, split: Split) -> Vec<SetId> {
        (0..self.sets.len())
            .filter(|&id| self.split[id] == split)
            .collect()
    }

    /// Sets containing entity `e`, in increasing order.
    pub fn sets_containing(&self, e: EntityId) -> &[u32] {
        &self.inverted[e as usize]
    }

    /// Returns a copy with `train_frac` of the sets labelled train and the
    /// remainder divided in half between validation and test.
    ///
    /// The assignment is a deterministic function of `seed`. When the
    /// remainder is odd the extra set goes to test.
    pub fn split(&self, train_frac: f64, seed: u64) -> Result<Self> {
        if !(train_frac > 0.0 && train_frac < 1.0) {
            return Err(invalid(format!(
                "train fraction must lie in (0, 1), got {train_frac}"
            )));
        }
        let n = self.sets.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (train_frac * n as f64).round() as usize;
        let n_val = (n - n_train) / 2;
        let mut labels = vec![Split::Test; n];
        for (rank, &id) in order.iter().enumerate() {
            labels[id] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        let mut out = self.clone();
        out.split = labels;
        Ok(out)
    }

    pub fn with_split_labels(&self, labels: Vec<Split>) -> Result<Self> {
        if labels.len() != self.sets.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sets.len(),
                got: labels.len(),
            });
        }
        let mut out = self.clone();
        out.split = labels;
        Ok(out)
    }

    /// Reads a split file: one of `train`/`val`/`test` per line, aligned with
    /// set order.
    pub fn read_split_labels<R: std::io::Read>(reader: R) -> Result<Vec<Split>> {
        let mut labels = Vec::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            labels.push(t.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                msg: format!("bad split label {t:?}"),
            })?);
        }
        Ok(labels)
    }

    pub fn write_split_labels<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.split {
            writeln!(w, "{s}")?;
        }
        Ok(())
    }

    /// `|s_a ∩ s_b|` by merging the sorted member lists.
    pub fn intersection_size(&self, a: SetId, b: SetId) -> usize {
        intersection_size(&self.sets[a], &self.sets[b])
    }

    /// Exact cardinality profile of a triple.
    pub fn cardinality_profile(&self, t: Triple) -> CardinalityProfile {
        let (si, sj, sk) = (self.set(t.i), self.set(t.j), self.set(t.k));
        let ij = intersect_sorted(si, sj);
        let c7 = intersection_size(&ij, sk);
        CardinalityProfile {
            counts: [
                si.len() as u64,
                sj.len() as u64,
                sk.len() as u64,
                ij.len() as u64,
                intersection_size(sj, sk) as u64,
                intersection_size(sk, si) as u64,
                c7 as u64,
            ],
        }
    }

    /// Exact similarity between two sets of the corpus.
    pub fn exact_similarity(&self, a: SetId, b: SetId, measure: Measure) -> f64 {
        exact_similarity(&self.sets[a], &self.sets[b], measure)
    }
}

/// Exact similarity between two canonical (sorted, deduplicated) sets.
pub fn exact_similarity(a: &[EntityId], b: &[EntityId], measure: Measure) -> f64 {
    let inter = intersection_size(a, b) as f64;
    measure.from_sizes(a.len() as f64, b.len() as f64, inter)
}

/// Size of the intersection of two strictly increasing lists.
pub fn intersection_size<T: Ord>(a: &[T], b: &[T]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn intersect_sorted<T: Ord + Copy>(a: &[T], b: &[T]) -> Vec<T> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Three distinct set ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub i: SetId,
    pub j: SetId,
    pub k: SetId,
}

impl Triple {
    pub fn new(i: SetId, j: SetId, k: SetId) -> Self {
        Triple { i, j, k }
    }

    pub fn ids(&self) -> [SetId; 3] {
        [self.i, self.j, self.k]
    }

    pub fn is_distinct(&self) -> bool {
        self.i != self.j && self.j != self.k && self.i != self.k
    }
}

/// The seven cardinalities of a triple `(s_i, s_j, s_k)`:
/// `|s_i|, |s_j|, |s_k|, |s_i∩s_j|, |s_j∩s_k|, |s_k∩s_i|, |s_i∩s_j∩s_k|`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CardinalityProfile {
    pub counts: [u64; 7],
}

impl CardinalityProfile {
    /// Sum of the seven counts.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `p_l = c_l / Z`.
    pub fn ratios(&self) -> [f64; 7] {
        let z = self.total() as f64;
        let mut p = [0.0; 7];
        for (out, &c) in p.iter_mut().zip(&self.counts) {
            *out = c as f64 / z;
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_simple_file() {
        let c = SetCorpus::parse("0 1 2\n1 2\n").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.num_entities(), 3);
        assert_eq!(c.set(0), &[0, 1, 2]);
        assert_eq!(c.set(1), &[1, 2]);
        assert_eq!(c.sets_containing(1), &[0, 1]);
    }

    #[test]
    fn canonicalizes_duplicates() {
        let c = SetCorpus::parse("2 1 1\n").unwrap();
        assert_eq!(c.set(0), &[1, 2]);
    }

    #[test]
    fn skips_comments_and_tabs() {
        let c = SetCorpus::parse("# header\n3\t4\n# x\n5\n").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.set(0), &[3, 4]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            SetCorpus::parse("a b\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            SetCorpus::parse("1 2\n\n3\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(SetCorpus::parse("").is_err());
        assert!(SetCorpus::parse("# only a comment\n").is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let sets: Vec<Vec<u32>> = (0..100).map(|i| vec![i]).collect();
        let c = SetCorpus::from_sets(sets).unwrap();
        let s = c.split(0.2, 7).unwrap();
        assert_eq!(s.ids_in(Split::Train).len(), 20);
        assert_eq!(s.ids_in(Split::Val).len(), 40);
        assert_eq!(s.ids_in(Split::Test).len(), 40);

        let small = SetCorpus::from_sets((0..10).map(|i| vec![i]).collect()).unwrap();
        assert_eq!(
            small.split(0.2, 3).unwrap().split_labels(),
            small.split(0.2, 3).unwrap().split_labels()
        );
        assert!(c.split(1.0, 0).is_err());
        assert!(c.split(0.0, 0).is_err());
    }

    #[test]
    fn split_file_round_trip() {
        let c = SetCorpus::from_sets((0..9).map(|i| vec![i]).collect())
            .unwrap()
            .split(0.3, 1)
            .unwrap();
        let mut buf = Vec::new();
        c.write_split_labels(&mut buf).unwrap();
        let labels = SetCorpus::read_split_labels(&buf[..]).unwrap();
        assert_eq!(labels, c.split_labels());
    }

    #[test]
    fn profile_of_cycle() {
        let c = SetCorpus::from_sets(vec![vec![1, 2], vec![2, 3], vec![3, 1]]).unwrap();
        let p = c.cardinality_profile(Triple::new(0, 1, 2));
        assert_eq!(p.counts, [2, 2, 2, 1, 1, 1, 0]);
        assert_eq!(p.total(), 9);
        let r = p.ratios();
        assert_eq!(r[0], 2.0 / 9.0);
        assert_eq!(r[3], 1.0 / 9.0);
        assert_eq!(r[6], 0.0);
    }

    #[test]
    fn profile_of_identical_and_disjoint() {
        let c = SetCorpus::from_sets(vec![vec![1, 2], vec![1, 2], vec![1, 2]]).unwrap();
        let p = c.cardinality_profile(Triple::new(0, 1, 2));
        assert_eq!(p.counts, [2; 7]);
        assert!(p.ratios().iter().all(|&r| (r - 1.0 / 7.0).abs() < 1e-15));

        let c = SetCorpus::from_sets(vec![vec![0], vec![1], vec![2]]).unwrap();
        let p = c.cardinality_profile(Triple::new(0, 1, 2));
        assert_eq!(p.counts, [1, 1, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn exact_measures() {
        let c = SetCorpus::from_sets(vec![vec![1, 2, 3], vec![2, 3, 4], vec![9]]).unwrap();
        assert_eq!(c.exact_similarity(0, 1, Measure::Jaccard), 0.5);
        assert!((c.exact_similarity(0, 1, Measure::Dice) - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.exact_similarity(0, 1, Measure::Overlap) - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.exact_similarity(0, 1, Measure::Cosine) - 2.0 / 3.0).abs() < 1e-15);
        for m in Measure::ALL {
            assert_eq!(c.exact_similarity(0, 0, m), 1.0);
            assert_eq!(c.exact_similarity(0, 2, m), 0.0);
        }
    }
}
