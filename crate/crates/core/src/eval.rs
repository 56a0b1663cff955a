//! MSE over sampled pairs, top-k quality and per-pair latency.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{exact_similarity, EntityId, Measure, SetCorpus, SetId, Split};
use crate::error::{invalid, Error, Result};

/// Estimates similarities between sets of a corpus by id.
pub trait PairEstimator {
    fn estimate_pair(&self, a: SetId, b: SetId, measure: Measure) -> f64;

    fn supports(&self, _measure: Measure) -> bool {
        true
    }
}

/// Encodes member lists into a compact code and estimates similarities
/// from two codes alone.
pub trait SetEncoder {
    type Code;

    fn encode(&self, members: &[EntityId]) -> Result<Self::Code>;

    fn estimate(&self, a: &Self::Code, b: &Self::Code, measure: Measure) -> f64;

    fn supports(&self, _measure: Measure) -> bool {
        true
    }
}

/// Exact similarities computed from the corpus.
pub struct ExactOracle<'a> {
    pub corpus: &'a SetCorpus,
}

impl PairEstimator for ExactOracle<'_> {
    fn estimate_pair(&self, a: SetId, b: SetId, measure: Measure) -> f64 {
        self.corpus.exact_similarity(a, b, measure)
    }
}

/// Sorted member lists as codes; estimation is exact intersection.
pub struct ExactEncoder;

impl SetEncoder for ExactEncoder {
    type Code = Vec<EntityId>;

    fn encode(&self, members: &[EntityId]) -> Result<Vec<EntityId>> {
        let mut m = members.to_vec();
        m.sort_unstable();
        m.dedup();
        Ok(m)
    }

    fn estimate(&self, a: &Vec<EntityId>, b: &Vec<EntityId>, measure: Measure) -> f64 {
        exact_similarity(a, b, measure)
    }
}

/// Codes of every set of a corpus, usable as a [`PairEstimator`].
pub struct EncodedSets<E: SetEncoder> {
    pub encoder: E,
    pub codes: Vec<E::Code>,
}

impl<E: SetEncoder> EncodedSets<E> {
    pub fn new(encoder: E, corpus: &SetCorpus) -> Result<Self> {
        let codes = corpus
            .sets()
            .iter()
            .map(|s| encoder.encode(s))
            .collect::<Result<_>>()?;
        Ok(EncodedSets { encoder, codes })
    }
}

impl<E: SetEncoder> PairEstimator for EncodedSets<E> {
    fn estimate_pair(&self, a: SetId, b: SetId, measure: Measure) -> f64 {
        clamp_unit(self.encoder.estimate(&self.codes[a], &self.codes[b], measure))
    }

    fn supports(&self, measure: Measure) -> bool {
        self.encoder.supports(measure)
    }
}

/// Clamps an estimate into `[0, 1]`; NaN maps to 0.
pub fn clamp_unit(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

/// `n` uniform pairs of distinct sets from `split`, with replacement across
/// pairs.
pub fn sample_pairs(corpus: &SetCorpus, split: Split, n: usize, seed: u64) -> Result<Vec<(SetId, SetId)>> {
    let ids = corpus.ids_in(split);
    if ids.len() < 2 {
        return Err(Error::NotEnoughSets(format!(
            "pair sampling needs 2 sets in the {split} split, found {}",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let a = rng.gen_range(0..ids.len());
            let mut b = rng.gen_range(0..ids.len() - 1);
            if b >= a {
                b += 1;
            }
            (ids[a], ids[b])
        })
        .collect())
}

/// Mean squared error per measure over `pairs`, estimates clamped.
pub fn mse_on_pairs(
    corpus: &SetCorpus,
    pairs: &[(SetId, SetId)],
    est: &dyn PairEstimator,
    measures: &[Measure],
) -> Vec<f64> {
    let mut sums = vec![0.0; measures.len()];
    for &(a, b) in pairs {
        let inter = corpus.intersection_size(a, b) as f64;
        let (na, nb) = (corpus.set(a).len() as f64, corpus.set(b).len() as f64);
        for (s, &m) in sums.iter_mut().zip(measures) {
            let truth = m.from_sizes(na, nb, inter);
            let e = clamp_unit(est.estimate_pair(a, b, m));
            *s += (truth - e).powi(2);
        }
    }
    sums.into_iter().map(|s| s / pairs.len().max(1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureRow {
    pub measure: Measure,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub k: usize,
    pub quality: f64,
    /// Anchors without any similar neighbor, excluded from the mean.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub size: usize,
    pub median_ns: f64,
}

/// Accuracy and cost of one representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub split: Split,
    pub pairs: usize,
    pub seed: u64,
    pub bits_real: f64,
    pub bits_packed: u64,
    pub mse: Vec<MeasureRow>,
    pub quality: Vec<QualityRow>,
    pub timings: Vec<TimingRow>,
}

pub const REPORT_HEADER: &str = "method,measure,mse,bits_real,bits_packed,pairs,seed";
pub const QUALITY_HEADER: &str = "method,k,quality";

impl EvalReport {
    pub fn mse_of(&self, m: Measure) -> Option<f64> {
        self.mse.iter().find(|r| r.measure == m).map(|r| r.mse)
    }

    pub fn mean_mse(&self) -> f64 {
        self.mse.iter().map(|r| r.mse).sum::<f64>() / self.mse.len().max(1) as f64
    }

    /// Report rows without the header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.mse {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.method, r.measure, r.mse, self.bits_real, self.bits_packed, self.pairs, self.seed
            )
            .unwrap();
        }
        out
    }

    pub fn quality_rows(&self) -> String {
        let mut out = String::new();
        for q in &self.quality {
            writeln!(out, "{},{},{}", self.method, q.k, q.quality).unwrap();
        }
        out
    }

    /// Parses report CSV (with header) back into per-method reports. Fields
    /// not present in the CSV keep their defaults.
    pub fn parse_csv(text: &str) -> Result<Vec<EvalReport>> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == REPORT_HEADER => {}
            _ => return Err(invalid("missing report header")),
        }
        let mut out: Vec<EvalReport> = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                line: n + 2,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad("expected 7 fields"));
            }
            let measure: Measure = f[1].parse().map_err(|_| bad("bad measure"))?;
            let mse: f64 = f[2].parse().map_err(|_| bad("bad mse"))?;
            let bits_real: f64 = f[3].parse().map_err(|_| bad("bad bits_real"))?;
            let bits_packed: u64 = f[4].parse().map_err(|_| bad("bad bits_packed"))?;
            let pairs: usize = f[5].parse().map_err(|_| bad("bad pairs"))?;
            let seed: u64 = f[6].parse().map_err(|_| bad("bad seed"))?;
            let row = MeasureRow { measure, mse };
            match out.iter_mut().find(|r| r.method == f[0] && r.seed == seed) {
                Some(r) => r.mse.push(row),
                None => out.push(EvalReport {
                    method: f[0].to_string(),
                    split: Split::Test,
                    pairs,
                    seed,
                    bits_real,
                    bits_packed,
                    mse: vec![row],
                    quality: Vec::new(),
                    timings: Vec::new(),
                }),
            }
        }
        Ok(out)
    }
}

/// Per-measure MSE between exact and estimated similarity on uniform pairs
/// of `split`. Measures the estimator does not support are skipped.
pub fn mse_eval(
    corpus: &SetCorpus,
    est: &dyn PairEstimator,
    method: &str,
    split: Split,
    num_pairs: usize,
    seed: u64,
    measures: &[Measure],
) -> Result<EvalReport> {
    let pairs = sample_pairs(corpus, split, num_pairs, seed)?;
    let measures: Vec<Measure> = measures.iter().copied().filter(|&m| est.supports(m)).collect();
    let mse = mse_on_pairs(corpus, &pairs, est, &measures);
    Ok(EvalReport {
        method: method.to_string(),
        split,
        pairs: num_pairs,
        seed,
        bits_real: 0.0,
        bits_packed: 0,
        mse: measures
            .into_iter()
            .zip(mse)
            .map(|(measure, mse)| MeasureRow { measure, mse })
            .collect(),
        quality: Vec::new(),
        timings: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct QualityResult {
    pub mean: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

fn top_k(scores: &[(SetId, f64)], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |&a: &usize, &b: &usize| {
        scores[b]
            .1
            .total_cmp(&scores[a].1)
            .then(scores[a].0.cmp(&scores[b].0))
    };
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx
}

/// Mean ratio of the true Jaccard mass of the estimated top-`k` neighbors to
/// that of the exact top-`k`, over up to `anchors` random anchors of `split`.
pub fn quality_at_k(
    corpus: &SetCorpus,
    est: &dyn PairEstimator,
    split: Split,
    k: usize,
    anchors: usize,
    seed: u64,
) -> Result<QualityResult> {
    let ids = corpus.ids_in(split);
    if k == 0 || k >= ids.len() {
        return Err(invalid(format!(
            "k = {k} must be in 1..{} for the {split} split",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<SetId> = if anchors >= ids.len() {
        ids.clone()
    } else {
        sample(&mut rng, ids.len(), anchors).into_iter().map(|i| ids[i]).collect()
    };
    chosen.sort_unstable();
    let (mut total, mut evaluated, mut skipped) = (0.0, 0, 0);
    let mut truth = Vec::with_capacity(ids.len());
    let mut guess = Vec::with_capacity(ids.len());
    for &a in &chosen {
        truth.clear();
        guess.clear();
        for &b in ids.iter().filter(|&&b| b != a) {
            truth.push((b, corpus.exact_similarity(a, b, Measure::Jaccard)));
            guess.push((b, clamp_unit(est.estimate_pair(a, b, Measure::Jaccard))));
        }
        let best: f64 = top_k(&truth, k).into_iter().map(|i| truth[i].1).sum();
        if best <= 0.0 {
            skipped += 1;
            continue;
        }
        let got: f64 = top_k(&guess, k).into_iter().map(|i| truth[i].1).sum();
        let q = got / best;
        debug_assert!(q <= 1.0 + 1e-12);
        total += q.min(1.0);
        evaluated += 1;
    }
    Ok(QualityResult {
        mean: if evaluated > 0 { total / evaluated as f64 } else { 0.0 },
        evaluated,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    /// Largest over smallest median latency.
    pub ratio: f64,
}

/// Median per-pair estimation latency for random sets of each size.
pub fn timing_probe<E: SetEncoder>(
    enc: &E,
    sizes: &[usize],
    universe: usize,
    measure: Measure,
    seed: u64,
) -> Result<TimingReport> {
    const TRIALS: usize = 31;
    const BUDGET_NS: f64 = 2e5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size == 0 || size > universe {
            return Err(invalid(format!("set size {size} invalid for a universe of {universe}")));
        }
        let draw = |rng: &mut ChaCha8Rng| -> Vec<EntityId> {
            let mut v: Vec<EntityId> = sample(rng, universe, size).into_iter().map(|e| e as EntityId).collect();
            v.sort_unstable();
            v
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let (ca, cb) = (enc.encode(&a)?, enc.encode(&b)?);
        // Calibrate the repetition count so one trial takes ~BUDGET_NS.
        let mut reps = 1usize;
        loop {
            let start = Instant::now();
            for _ in 0..reps {
                black_box(enc.estimate(black_box(&ca), black_box(&cb), measure));
            }
            let ns = start.elapsed().as_nanos() as f64;
            if ns >= BUDGET_NS || reps >= 1 << 24 {
                break;
            }
            reps *= 2;
        }
        let mut samples = Vec::with_capacity(TRIALS);
        for _ in 0..TRIALS {
            let start = Instant::now();
            for _ in 0..reps {
                black_box(enc.estimate(black_box(&ca), black_box(&cb), measure));
            }
            samples.push(start.elapsed().as_nanos() as f64 / reps as f64);
        }
        samples.sort_by(f64::total_cmp);
        rows.push(TimingRow {
            size,
            median_ns: samples[TRIALS / 2],
        });
    }
    let max = rows.iter().map(|r| r.median_ns).fold(f64::MIN, f64::max);
    let min = rows.iter().map(|r| r.median_ns).fold(f64::MAX, f64::min);
    Ok(TimingReport {
        rows,
        ratio: if min > 0.0 { max / min } else { f64::INFINITY },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth;

    struct Fixed(f64);

    impl PairEstimator for Fixed {
        fn estimate_pair(&self, _: SetId, _: SetId, _: Measure) -> f64 {
            self.0
        }
    }

    fn corpus() -> SetCorpus {
        synth::uniform(60, 30, 2, 10, 4).unwrap().split(0.2, 1).unwrap()
    }

    #[test]
    fn exact_oracle_has_zero_error() {
        let c = corpus();
        let r = mse_eval(&c, &ExactOracle { corpus: &c }, "exact", Split::Test, 500, 1, &Measure::ALL).unwrap();
        assert!(r.mse.iter().all(|m| m.mse == 0.0));
        let enc = EncodedSets::new(ExactEncoder, &c).unwrap();
        let r = mse_eval(&c, &enc, "exact", Split::Test, 500, 1, &Measure::ALL).unwrap();
        assert!(r.mse.iter().all(|m| m.mse == 0.0));
    }

    #[test]
    fn mse_by_hand() {
        // truths 0.5 and 0.25 against estimates 0.6 and 0.05
        let e: f64 = ((0.5f64 - 0.6).powi(2) + (0.25f64 - 0.05).powi(2)) / 2.0;
        assert!((e - 0.025).abs() < 1e-15);
        let c = SetCorpus::from_sets(vec![vec![0, 1], vec![1, 2], vec![3], vec![4]]).unwrap();
        let pairs = [(0, 1), (2, 3)];
        let m = mse_on_pairs(&c, &pairs, &Fixed(0.5), &[Measure::Overlap]);
        assert!((m[0] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn pairs_are_distinct_and_reproducible() {
        let c = corpus();
        let a = sample_pairs(&c, Split::Val, 2000, 9).unwrap();
        assert_eq!(a, sample_pairs(&c, Split::Val, 2000, 9).unwrap());
        for &(x, y) in &a {
            assert_ne!(x, y);
            assert_eq!(c.split_of(x), Split::Val);
            assert_eq!(c.split_of(y), Split::Val);
        }
        let tiny = SetCorpus::from_sets(vec![vec![0]]).unwrap();
        assert!(sample_pairs(&tiny, Split::Train, 1, 0).is_err());
    }

    #[test]
    fn quality_bounds() {
        let c = corpus();
        let exact = ExactOracle { corpus: &c };
        let q = quality_at_k(&c, &exact, Split::Test, 5, 100, 0).unwrap();
        assert_eq!(q.mean, 1.0);
        let n = c.ids_in(Split::Test).len();
        let q = quality_at_k(&c, &Fixed(0.3), Split::Test, n - 1, 100, 0).unwrap();
        assert!((q.mean - 1.0).abs() < 1e-12);
        let q = quality_at_k(&c, &Fixed(0.3), Split::Test, 2, 100, 0).unwrap();
        assert!(q.mean < 1.0 && q.mean >= 0.0);
        assert!(quality_at_k(&c, &exact, Split::Test, n, 10, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let r = EvalReport {
            method: "set2box".into(),
            split: Split::Test,
            pairs: 100,
            seed: 3,
            bits_real: 2075699.6331,
            bits_packed: 2114944,
            mse: Measure::ALL
                .iter()
                .enumerate()
                .map(|(i, &measure)| MeasureRow {
                    measure,
                    mse: 0.1 / (i as f64 + 3.0),
                })
                .collect(),
            quality: Vec::new(),
            timings: Vec::new(),
        };
        let text = format!("{REPORT_HEADER}\n{}", r.csv_rows());
        let back = EvalReport::parse_csv(&text).unwrap();
        assert_eq!(back, vec![r]);
    }
}
