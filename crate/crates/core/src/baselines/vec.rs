//! Set2Vec: pooled set vectors whose inner product approximates one fixed
//! similarity measure.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EntityId, Measure, SampledTriple, SetCorpus, SetId};
use crate::diff::{ParamId, ParamStore, Real, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::eval::{mse_on_pairs, EncodedSets, SetEncoder};
use crate::model::scp_pool;
use crate::train::{fit, uniform_init, BatchSets, TrainConfig, TrainLog, Trainable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VecConfig {
    pub base: TrainConfig,
    /// The only measure the model estimates.
    pub measure: Measure,
}

impl Default for VecConfig {
    fn default() -> Self {
        VecConfig {
            base: TrainConfig {
                d: 8,
                num_pos: 24,
                num_neg: 24,
                ..TrainConfig::default()
            },
            measure: Measure::Jaccard,
        }
    }
}

/// Fixed per-entity input features, row-major `num_entities × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub dim: usize,
    pub values: Vec<f32>,
}

/// Entity vectors (or a projection of fixed features) plus one context.
#[derive(Clone, Debug)]
pub struct VecModel {
    store: ParamStore<f32>,
    /// Entity table, or the `features.dim × d` projection.
    table: ParamId,
    ctx: ParamId,
    features: Option<Features>,
    num_entities: usize,
    d: usize,
    measure: Measure,
}

impl VecModel {
    pub fn new(num_entities: usize, d: usize, measure: Measure, features: Option<Features>, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(invalid("d must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = match &features {
            Some(f) => {
                if f.dim == 0 || f.values.len() != num_entities * f.dim {
                    return Err(Error::DimensionMismatch {
                        expected: num_entities * f.dim,
                        got: f.values.len(),
                    });
                }
                f.dim
            }
            None => num_entities,
        };
        let scale = 0.5 / (d as f64).sqrt();
        let mut store = ParamStore::new();
        let table = store.add("vectors", rows, d, uniform_init(&mut rng, rows * d, scale));
        let ctx = store.add("ctx", 1, d, uniform_init(&mut rng, d, scale));
        Ok(VecModel {
            store,
            table,
            ctx,
            features,
            num_entities,
            d,
            measure,
        })
    }

    /// Rebuilds a model from a materialized entity table.
    pub fn from_table(num_entities: usize, d: usize, measure: Measure, table: Vec<f32>, ctx: Vec<f32>) -> Result<Self> {
        if table.len() != num_entities * d || ctx.len() != d {
            return Err(Error::DimensionMismatch {
                expected: num_entities * d,
                got: table.len(),
            });
        }
        let mut store = ParamStore::new();
        let t = store.add("vectors", num_entities, d, table.into_iter().map(f64::from).collect());
        let c = store.add("ctx", 1, d, ctx.into_iter().map(f64::from).collect());
        Ok(VecModel {
            store,
            table: t,
            ctx: c,
            features: None,
            num_entities,
            d,
            measure,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn ctx(&self) -> &[f32] {
        self.store.values(self.ctx)
    }

    /// Entity vectors, projecting features if the model has them.
    pub fn entity_table(&self) -> Vec<f32> {
        match &self.features {
            None => self.store.values(self.table).to_vec(),
            Some(f) => {
                let w = self.store.values(self.table);
                let mut out = vec![0f32; self.num_entities * self.d];
                for e in 0..self.num_entities {
                    for k in 0..f.dim {
                        let x = f.values[e * f.dim + k] as f64;
                        for c in 0..self.d {
                            let o = &mut out[e * self.d + c];
                            *o = (*o as f64 + x * w[k * self.d + c] as f64) as f32;
                        }
                    }
                }
                out
            }
        }
    }

    fn entity_row(&self, e: EntityId, out: &mut Vec<f64>) {
        let d = self.d;
        match &self.features {
            None => out.extend(self.store.values(self.table)[e as usize * d..(e as usize + 1) * d].iter().map(|&x| x as f64)),
            Some(f) => {
                let w = self.store.values(self.table);
                let x = &f.values[e as usize * f.dim..(e as usize + 1) * f.dim];
                out.extend((0..d).map(|c| (0..f.dim).map(|k| x[k] as f64 * w[k * d + c] as f64).sum::<f64>()));
            }
        }
    }

    /// Pooled vector of a member list, rounded to storage precision.
    pub fn embed(&self, members: &[EntityId]) -> Result<Vec<f32>> {
        if members.is_empty() {
            return Err(invalid("cannot embed an empty set"));
        }
        if let Some(&e) = members.iter().find(|&&e| e as usize >= self.num_entities) {
            return Err(invalid(format!("entity {e} outside the {} embedded entities", self.num_entities)));
        }
        let mut rows = Vec::with_capacity(members.len() * self.d);
        for &e in members {
            self.entity_row(e, &mut rows);
        }
        let a: Vec<f64> = self.ctx().iter().map(|&x| x as f64).collect();
        Ok(scp_pool(&rows, &a)?.into_iter().map(|x| x as f32).collect())
    }

    fn parts(&self) -> VecParts<'_> {
        VecParts {
            table: self.table,
            ctx: self.ctx,
            d: self.d,
            measure: self.measure,
            features: self.features.as_ref(),
        }
    }
}

struct VecParts<'a> {
    table: ParamId,
    ctx: ParamId,
    d: usize,
    measure: Measure,
    features: Option<&'a Features>,
}

/// Squared error of the inner products over the three pairs of every
/// triple, summed over the batch.
fn vec_batch_loss<S: Real>(
    t: &mut Tape,
    store: &ParamStore<S>,
    parts: &VecParts<'_>,
    corpus: &SetCorpus,
    batch: &[SampledTriple],
) -> Var {
    let d = parts.d;
    let sets = BatchSets::new(batch);
    let p = t.param(store, parts.table);
    let table = match parts.features {
        None => p,
        Some(f) => {
            let x: Vec<f64> = f.values.iter().map(|&v| v as f64).collect();
            let x = t.constant(&x);
            t.mix_rows(x, p, d, f.dim)
        }
    };
    let ctx = t.param(store, parts.ctx);
    let pooled: Vec<Var> = sets.ids.iter().map(|&id| t.pool_rows(table, corpus.set(id), ctx)).collect();
    let z = t.concat(&pooled);
    let mut left = Vec::with_capacity(3 * batch.len());
    let mut right = Vec::with_capacity(3 * batch.len());
    let mut target = Vec::with_capacity(3 * batch.len());
    for s in batch {
        let [i, j, k] = s.triple.ids();
        for (a, b) in [(i, j), (j, k), (k, i)] {
            left.push(sets.slot(a) as u32);
            right.push(sets.slot(b) as u32);
            target.push(corpus.exact_similarity(a, b, parts.measure));
        }
    }
    let za = t.gather(z, &left, d);
    let zb = t.gather(z, &right, d);
    let prod = t.mul(za, zb);
    let dots = t.group_sum(prod, d);
    let target = t.constant(&target);
    let diff = t.sub(dots, target);
    let sq = t.square(diff);
    t.sum(sq)
}

pub fn inner_product(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

impl SetEncoder for VecModel {
    type Code = Vec<f32>;

    fn encode(&self, members: &[EntityId]) -> Result<Vec<f32>> {
        self.embed(members)
    }

    fn estimate(&self, a: &Vec<f32>, b: &Vec<f32>, measure: Measure) -> f64 {
        if measure == self.measure {
            inner_product(a, b)
        } else {
            f64::NAN
        }
    }

    fn supports(&self, measure: Measure) -> bool {
        measure == self.measure
    }
}

impl Trainable for VecModel {
    fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    fn batch_loss(&self, t: &mut Tape, corpus: &SetCorpus, batch: &[SampledTriple]) -> Result<Var> {
        Ok(vec_batch_loss(t, &self.store, &self.parts(), corpus, batch))
    }

    fn selection_error(&self, corpus: &SetCorpus, pairs: &[(SetId, SetId)]) -> Result<f64> {
        let table = EncodedSets::new(self.clone(), corpus)?;
        Ok(mse_on_pairs(corpus, pairs, &table, &[self.measure])[0])
    }
}

/// Trains Set2Vec for `cfg.measure` on pairs drawn from sampled triples.
pub fn train_vec(corpus: &SetCorpus, cfg: &VecConfig, features: Option<Features>) -> Result<(VecModel, TrainLog)> {
    cfg.base.validate()?;
    let mut model = VecModel::new(corpus.num_entities(), cfg.base.d, cfg.measure, features, cfg.base.seed)?;
    let log = fit(&mut model, corpus, &cfg.base)?;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Triple;
    use crate::diff::GradcheckConfig;

    #[test]
    fn pooling_ignores_member_order() {
        let m = VecModel::new(10, 4, Measure::Jaccard, None, 3).unwrap();
        let a = m.embed(&[1, 4, 7]).unwrap();
        let b = m.embed(&[7, 1, 4]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!(m.estimate(&a, &b, Measure::Overlap).is_nan());
        assert!(!m.supports(Measure::Dice));
    }

    #[test]
    fn projected_features_match_table() {
        let feats = Features {
            dim: 2,
            values: (0..12).map(|i| (i as f32 * 0.37).sin()).collect(),
        };
        let m = VecModel::new(6, 3, Measure::Cosine, Some(feats), 1).unwrap();
        let table = m.entity_table();
        let flat = VecModel::from_table(6, 3, Measure::Cosine, table, m.ctx().to_vec()).unwrap();
        let (a, b) = (m.embed(&[0, 2, 5]).unwrap(), flat.embed(&[0, 2, 5]).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    fn gradcheck_on(features: Option<Features>) {
        let corpus = SetCorpus::from_sets(vec![vec![0, 1, 2], vec![1, 2, 3], vec![3, 4], vec![0, 4, 5]]).unwrap();
        let model = VecModel::new(6, 3, Measure::Dice, features, 5).unwrap();
        let batch: Vec<SampledTriple> = [Triple::new(0, 1, 2), Triple::new(1, 2, 3), Triple::new(0, 2, 3)]
            .into_iter()
            .map(|triple| SampledTriple {
                triple,
                kind: crate::corpus::TripleKind::Positive,
            })
            .collect();
        let parts = model.parts();
        let report = crate::diff::gradcheck(
            |store, backprop| {
                let mut t = Tape::new();
                let l = vec_batch_loss(&mut t, store, &parts, &corpus, &batch);
                if backprop {
                    t.backward(l, store)?;
                }
                Ok(t.scalar(l))
            },
            &model.store,
            GradcheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn loss_gradcheck() {
        gradcheck_on(None);
        gradcheck_on(Some(Features {
            dim: 2,
            values: (0..12).map(|i| (i as f32 * 0.61).cos()).collect(),
        }));
    }
}
