//! Set2Box-order: non-negative vectors with volume `exp(-Σz)`, meet by
//! componentwise max and join by componentwise min.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CardinalityProfile, EntityId, Measure, SampledTriple, SetCorpus, SetId};
use crate::diff::{softplus, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::eval::{mse_on_pairs, EncodedSets, SetEncoder};
use crate::model::{batch_ratios, ratio_loss, scp_pool, tape_ratio_loss};
use crate::train::{fit, uniform_init, BatchSets, TrainConfig, TrainLog, Trainable};

pub fn order_volume(z: &[f32]) -> f64 {
    (-z.iter().map(|&x| x as f64).sum::<f64>()).exp()
}

pub fn order_meet(a: &[f32], b: &[f32]) -> Vec<f32> {
    a.iter().zip(b).map(|(x, y)| x.max(*y)).collect()
}

pub fn order_join(a: &[f32], b: &[f32]) -> Vec<f32> {
    a.iter().zip(b).map(|(x, y)| x.min(*y)).collect()
}

/// Similarity from order volumes; the union is the join's volume.
pub fn order_similarity(a: &[f32], b: &[f32], measure: Measure) -> f64 {
    let meet = order_volume(&order_meet(a, b));
    let join = order_volume(&order_join(a, b));
    measure.from_sizes_with_union(order_volume(a), order_volume(b), meet, join)
}

/// The seven-ratio loss with order volumes.
pub fn order_triple_loss(profile: &CardinalityProfile, z: [&[f32]; 3], mean: bool) -> f64 {
    let [a, b, c] = z;
    let ab = order_meet(a, b);
    let v = [
        order_volume(a),
        order_volume(b),
        order_volume(c),
        order_volume(&ab),
        order_volume(&order_meet(b, c)),
        order_volume(&order_meet(c, a)),
        order_volume(&order_meet(&ab, c)),
    ];
    ratio_loss(&profile.ratios(), &v, mean)
}

#[derive(Clone, Debug)]
pub struct OrderModel {
    store: ParamStore<f32>,
    table: ParamId,
    ctx: ParamId,
    d: usize,
}

impl OrderModel {
    pub fn new(num_entities: usize, d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(invalid("d must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.5 / (d as f64).sqrt();
        let mut store = ParamStore::new();
        let table = store.add("vectors", num_entities, d, uniform_init(&mut rng, num_entities * d, scale));
        let ctx = store.add("ctx", 1, d, uniform_init(&mut rng, d, scale));
        Ok(OrderModel { store, table, ctx, d })
    }

    /// Rebuilds a model from raw (pre-softplus) entity rows and context.
    pub fn from_raw(num_entities: usize, d: usize, table: Vec<f32>, ctx: Vec<f32>) -> Result<Self> {
        if table.len() != num_entities * d || ctx.len() != d {
            return Err(Error::DimensionMismatch {
                expected: num_entities * d,
                got: table.len(),
            });
        }
        let mut store = ParamStore::new();
        let t = store.add("vectors", num_entities, d, table.into_iter().map(f64::from).collect());
        let c = store.add("ctx", 1, d, ctx.into_iter().map(f64::from).collect());
        Ok(OrderModel {
            store,
            table: t,
            ctx: c,
            d,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_entities(&self) -> usize {
        self.store.rows(self.table)
    }

    pub fn table_raw(&self) -> &[f32] {
        self.store.values(self.table)
    }

    pub fn ctx(&self) -> &[f32] {
        self.store.values(self.ctx)
    }

    /// `z = SCP(softplus(rows), a)`, rounded to storage precision.
    pub fn embed(&self, members: &[EntityId]) -> Result<Vec<f32>> {
        if members.is_empty() {
            return Err(invalid("cannot embed an empty set"));
        }
        let n = self.num_entities();
        if let Some(&e) = members.iter().find(|&&e| e as usize >= n) {
            return Err(invalid(format!("entity {e} outside the {n} embedded entities")));
        }
        let d = self.d;
        let data = self.table_raw();
        let rows: Vec<f64> = members
            .iter()
            .flat_map(|&e| data[e as usize * d..(e as usize + 1) * d].iter().map(|&x| softplus(x as f64, 1.0)))
            .collect();
        let a: Vec<f64> = self.ctx().iter().map(|&x| x as f64).collect();
        Ok(scp_pool(&rows, &a)?.into_iter().map(|x| x as f32).collect())
    }
}

impl SetEncoder for OrderModel {
    type Code = Vec<f32>;

    fn encode(&self, members: &[EntityId]) -> Result<Vec<f32>> {
        self.embed(members)
    }

    fn estimate(&self, a: &Vec<f32>, b: &Vec<f32>, measure: Measure) -> f64 {
        order_similarity(a, b, measure)
    }
}

fn order_batch_loss<S: Real>(
    t: &mut Tape,
    store: &ParamStore<S>,
    ids: (ParamId, ParamId),
    d: usize,
    corpus: &SetCorpus,
    batch: &[SampledTriple],
    mean: bool,
) -> Var {
    let sets = BatchSets::new(batch);
    let raw = t.param(store, ids.0);
    let table = t.softplus(raw, 1.0);
    let ctx = t.param(store, ids.1);
    let pooled: Vec<Var> = sets.ids.iter().map(|&id| t.pool_rows(table, corpus.set(id), ctx)).collect();
    let z = t.concat(&pooled);
    let [a, b, c] = [0, 1, 2].map(|slot| {
        let rows: Vec<u32> = batch.iter().map(|s| sets.slot(s.triple.ids()[slot]) as u32).collect();
        t.gather(z, &rows, d)
    });
    let ab = t.max(a, b);
    let bc = t.max(b, c);
    let ca = t.max(c, a);
    let abc = t.max(ab, c);
    let volumes = [a, b, c, ab, bc, ca, abc].map(|x| {
        let s = t.group_sum(x, d);
        let s = t.scale(s, -1.0);
        t.exp(s)
    });
    tape_ratio_loss(t, volumes, &batch_ratios(corpus, batch), mean)
}

struct OrderTrainer<'a> {
    model: OrderModel,
    cfg: &'a TrainConfig,
}

impl Trainable for OrderTrainer<'_> {
    fn store(&self) -> &ParamStore<f32> {
        &self.model.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.model.store
    }

    fn batch_loss(&self, t: &mut Tape, corpus: &SetCorpus, batch: &[SampledTriple]) -> Result<Var> {
        let m = &self.model;
        Ok(order_batch_loss(t, &m.store, (m.table, m.ctx), m.d, corpus, batch, self.cfg.mean_over_ratios))
    }

    fn selection_error(&self, corpus: &SetCorpus, pairs: &[(SetId, SetId)]) -> Result<f64> {
        let table = EncodedSets::new(self.model.clone(), corpus)?;
        let mse = mse_on_pairs(corpus, pairs, &table, &Measure::ALL);
        Ok(mse.iter().sum::<f64>() / mse.len() as f64)
    }
}

/// Trains the order embedding with the seven-ratio triple loss.
pub fn train_order(corpus: &SetCorpus, cfg: &TrainConfig) -> Result<(OrderModel, TrainLog)> {
    cfg.validate()?;
    let model = OrderModel::new(corpus.num_entities(), cfg.d, cfg.seed)?;
    let mut trainer = OrderTrainer { model, cfg };
    let log = fit(&mut trainer, corpus, cfg)?;
    Ok((trainer.model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Triple, TripleKind};
    use crate::diff::GradcheckConfig;

    #[test]
    fn volumes_and_lattice() {
        assert!((order_volume(&[0.5, 1.0]) - (-1.5f64).exp()).abs() < 1e-12);
        let a = [0.2f32, 0.9, 0.0];
        let b = [0.5f32, 0.1, 0.3];
        assert_eq!(order_meet(&a, &a), a.to_vec());
        assert_eq!(order_join(&a, &a), a.to_vec());
        assert!(order_volume(&order_meet(&a, &b)) <= order_volume(&a).min(order_volume(&b)));
        for m in Measure::ALL {
            assert!((order_similarity(&a, &a, m) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_gradcheck_and_pure_agreement() {
        let corpus = SetCorpus::from_sets(vec![vec![0, 1, 2], vec![1, 2, 3], vec![3, 4], vec![0, 4, 5]]).unwrap();
        let model = OrderModel::new(6, 3, 2).unwrap();
        let batch: Vec<SampledTriple> = [Triple::new(0, 1, 2), Triple::new(1, 2, 3), Triple::new(3, 0, 1)]
            .into_iter()
            .map(|triple| SampledTriple {
                triple,
                kind: TripleKind::Positive,
            })
            .collect();
        let ids = (model.table, model.ctx);
        let report = crate::diff::gradcheck(
            |store, backprop| {
                let mut t = Tape::new();
                let l = order_batch_loss(&mut t, store, ids, 3, &corpus, &batch, false);
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

        let mut t = Tape::new();
        let l = order_batch_loss(&mut t, &model.store, ids, 3, &corpus, &batch[..1], false);
        let z: Vec<Vec<f32>> = [0, 1, 2].iter().map(|&i| model.embed(corpus.set(i)).unwrap()).collect();
        let pure = order_triple_loss(&corpus.cardinality_profile(batch[0].triple), [&z[0], &z[1], &z[2]], false);
        assert!((t.scalar(l) - pure).abs() < 1e-5, "{} {pure}", t.scalar(l));
    }
}
