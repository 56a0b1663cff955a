use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{SetCorpus, Split, Triple};
use crate::error::{Error, Result};

/// How a training triple was drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TripleKind {
    /// Anchor plus two sets that each share an entity with it.
    Positive,
    /// Anchor plus two uniformly drawn train sets.
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SampledTriple {
    pub triple: Triple,
    pub kind: TripleKind,
}

const PARTNER_ATTEMPTS: usize = 16;

/// Draws `num_pos` positive and `num_neg` negative triples per train set.
///
/// Positive partners are found through the inverted index restricted to the
/// train split: a random member entity shared with at least one other train
/// set is picked, then a random other set containing it. Anchors without any
/// overlapping partner contribute negatives only. All three ids in a triple
/// are distinct. The output is a deterministic function of `seed`.
pub fn sample_triples(
    corpus: &SetCorpus,
    num_pos: usize,
    num_neg: usize,
    seed: u64,
) -> Result<Vec<SampledTriple>> {
    let train = corpus.ids_in(Split::Train);
    if train.len() < 3 {
        return Err(Error::NotEnoughSets(format!(
            "triple sampling needs at least 3 train sets, found {}",
            train.len()
        )));
    }
    let mut train_index: Vec<Vec<u32>> = vec![Vec::new(); corpus.num_entities()];
    for &id in &train {
        for &e in corpus.set(id) {
            train_index[e as usize].push(id as u32);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(train.len() * (num_pos + num_neg));
    let mut shared = Vec::new();
    for &anchor in &train {
        shared.clear();
        shared.extend(
            corpus
                .set(anchor)
                .iter()
                .copied()
                .filter(|&e| train_index[e as usize].len() > 1),
        );
        if !shared.is_empty() {
            for _ in 0..num_pos {
                let first = draw_partner(&mut rng, anchor, &shared, &train_index);
                let mut second = None;
                for _ in 0..PARTNER_ATTEMPTS {
                    let cand = draw_partner(&mut rng, anchor, &shared, &train_index);
                    if cand != first {
                        second = Some(cand);
                        break;
                    }
                }
                if let Some(second) = second {
                    out.push(SampledTriple {
                        triple: Triple::new(anchor, first, second),
                        kind: TripleKind::Positive,
                    });
                }
            }
        }
        for _ in 0..num_neg {
            let r1 = loop {
                let c = train[rng.gen_range(0..train.len())];
                if c != anchor {
                    break c;
                }
            };
            let r2 = loop {
                let c = train[rng.gen_range(0..train.len())];
                if c != anchor && c != r1 {
                    break c;
                }
            };
            out.push(SampledTriple {
                triple: Triple::new(anchor, r1, r2),
                kind: TripleKind::Negative,
            });
        }
    }
    Ok(out)
}

fn draw_partner(
    rng: &mut ChaCha8Rng,
    anchor: usize,
    shared: &[u32],
    index: &[Vec<u32>],
) -> usize {
    let e = shared[rng.gen_range(0..shared.len())];
    let holders = &index[e as usize];
    // Uniform over holders other than the anchor.
    let pick = rng.gen_range(0..holders.len() - 1);
    let pos = holders
        .binary_search(&(anchor as u32))
        .expect("anchor holds its own entity");
    let idx = if pick >= pos { pick + 1 } else { pick };
    holders[idx] as usize
}
