//! Box embeddings of sets: pooling, the seven-ratio triple loss, training.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::boxes::{intersection_volume, Hyperbox, TapeBox, Volume};
use crate::corpus::{
    CardinalityProfile, EntityId, Measure, SampledTriple, SetCorpus, SetId,
};
use crate::diff::{softmax_into, softplus, softplus_inverse, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::eval::{clamp_unit, mse_on_pairs, PairEstimator, SetEncoder};
use crate::train::{fit, uniform_init, BatchSets, TrainConfig, TrainLog, Trainable};

/// Initial value of every transformed offset.
pub const INIT_OFFSET: f64 = 0.1;

/// Set-context pooling of the rows of `q` (row-major, `d` columns).
///
/// Members are scored against the global context `a`, the softmax-weighted
/// mean becomes a set-specific context, and members are scored again against
/// it; the output is the second weighted mean.
pub fn scp_pool(q: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    let d = a.len();
    if q.is_empty() {
        return Err(invalid("cannot pool an empty set"));
    }
    if d == 0 || q.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: q.len(),
        });
    }
    let n = q.len() / d;
    let rows = || q.chunks_exact(d);
    let attend = |ctx: &[f64]| {
        let scores: Vec<f64> = rows().map(|r| dot(r, ctx)).collect();
        let mut w = vec![0.0; n];
        softmax_into(&scores, &mut w);
        let mut out = vec![0.0; d];
        for (r, wi) in rows().zip(&w) {
            for (o, x) in out.iter_mut().zip(r) {
                *o += wi * x;
            }
        }
        out
    };
    let b = attend(a);
    Ok(attend(&b))
}

/// Set-context pooling on a tape; `rows` is `n × len(a)`.
pub fn tape_scp(t: &mut Tape, rows: Var, a: Var) -> Var {
    let s1 = t.row_dot(rows, a);
    let alpha = t.softmax(s1);
    let b = t.weighted_sum(alpha, rows);
    let s2 = t.row_dot(rows, b);
    let omega = t.softmax(s2);
    t.weighted_sum(omega, rows)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|s|^(1/d)`
pub fn size_scale(size: usize, d: usize) -> f64 {
    (size as f64).powf(1.0 / d as f64)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EmbeddingIds {
    pub centers: ParamId,
    pub offsets: ParamId,
    pub ctx_center: ParamId,
    pub ctx_offset: ParamId,
}

/// Learnable entity tables and context vectors.
///
/// Offsets are stored unconstrained and mapped through a unit softplus.
#[derive(Clone, Debug)]
pub struct EntityEmbeddings {
    pub(crate) store: ParamStore<f32>,
    pub(crate) ids: EmbeddingIds,
    d: usize,
    beta: f64,
}

impl EntityEmbeddings {
    pub fn new(num_entities: usize, d: usize, beta: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.5 / (d as f64).sqrt();
        let raw = softplus_inverse(INIT_OFFSET, 1.0);
        let mut store = ParamStore::new();
        let centers = store.add("centers", num_entities, d, uniform_init(&mut rng, num_entities * d, scale));
        let offsets = store.add("offsets", num_entities, d, vec![raw; num_entities * d]);
        let ctx_center = store.add("ctx_center", 1, d, uniform_init(&mut rng, d, scale));
        let ctx_offset = store.add("ctx_offset", 1, d, uniform_init(&mut rng, d, scale));
        EntityEmbeddings {
            store,
            ids: EmbeddingIds {
                centers,
                offsets,
                ctx_center,
                ctx_offset,
            },
            d,
            beta,
        }
    }

    /// Rebuilds embeddings from raw parameter values.
    pub fn from_raw(
        num_entities: usize,
        d: usize,
        beta: f64,
        centers: Vec<f32>,
        raw_offsets: Vec<f32>,
        ctx_center: Vec<f32>,
        ctx_offset: Vec<f32>,
    ) -> Result<Self> {
        let want = num_entities * d;
        for (got, exp) in [
            (centers.len(), want),
            (raw_offsets.len(), want),
            (ctx_center.len(), d),
            (ctx_offset.len(), d),
        ] {
            if got != exp {
                return Err(Error::DimensionMismatch { expected: exp, got });
            }
        }
        let cast = |v: Vec<f32>| v.into_iter().map(f64::from).collect();
        let mut store = ParamStore::new();
        let ids = EmbeddingIds {
            centers: store.add("centers", num_entities, d, cast(centers)),
            offsets: store.add("offsets", num_entities, d, cast(raw_offsets)),
            ctx_center: store.add("ctx_center", 1, d, cast(ctx_center)),
            ctx_offset: store.add("ctx_offset", 1, d, cast(ctx_offset)),
        };
        Ok(EntityEmbeddings {
            store,
            ids,
            d,
            beta,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn num_entities(&self) -> usize {
        self.store.rows(self.ids.centers)
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub fn centers_raw(&self) -> &[f32] {
        self.store.values(self.ids.centers)
    }

    pub fn offsets_raw(&self) -> &[f32] {
        self.store.values(self.ids.offsets)
    }

    pub fn ctx_center(&self) -> &[f32] {
        self.store.values(self.ids.ctx_center)
    }

    pub fn ctx_offset(&self) -> &[f32] {
        self.store.values(self.ids.ctx_offset)
    }

    fn check_members(&self, members: &[EntityId]) -> Result<()> {
        if members.is_empty() {
            return Err(invalid("cannot embed an empty set"));
        }
        let n = self.num_entities();
        if let Some(&e) = members.iter().find(|&&e| e as usize >= n) {
            return Err(invalid(format!("entity {e} outside the {n} embedded entities")));
        }
        Ok(())
    }

    fn gather(&self, id: ParamId, members: &[EntityId], positive: bool) -> Vec<f64> {
        let data = self.store.values(id);
        let d = self.d;
        let mut out = Vec::with_capacity(members.len() * d);
        for &e in members {
            let row = &data[e as usize * d..(e as usize + 1) * d];
            if positive {
                out.extend(row.iter().map(|&x| softplus(x as f64, 1.0)));
            } else {
                out.extend(row.iter().map(|&x| x as f64));
            }
        }
        out
    }

    /// Box of an arbitrary non-empty member list.
    pub fn embed(&self, members: &[EntityId]) -> Result<Hyperbox> {
        self.check_members(members)?;
        let ac: Vec<f64> = self.ctx_center().iter().map(|&x| x as f64).collect();
        let af: Vec<f64> = self.ctx_offset().iter().map(|&x| x as f64).collect();
        let center = scp_pool(&self.gather(self.ids.centers, members, false), &ac)?;
        let scale = size_scale(members.len(), self.d);
        let offset = scp_pool(&self.gather(self.ids.offsets, members, true), &af)?
            .into_iter()
            .map(|x| scale * x)
            .collect();
        Hyperbox::new(center, offset)
    }

    pub fn embed_set(&self, corpus: &SetCorpus, id: SetId) -> Result<Hyperbox> {
        self.embed(corpus.set(id))
    }

    /// Records the box of `members` on a tape.
    pub fn embed_tape(&self, t: &mut Tape, ctx: &TapeContext, members: &[EntityId]) -> TapeBox {
        embed_tape_with(t, &self.store, self.ids, ctx, members)
    }

    pub fn tape_context(&self, t: &mut Tape) -> TapeContext {
        tape_context_with(t, &self.store, self.ids)
    }

    /// Boxes of every set in the corpus.
    pub fn embed_all(&self, corpus: &SetCorpus) -> Result<Vec<Hyperbox>> {
        corpus.sets().iter().map(|s| self.embed(s)).collect()
    }
}

impl SetEncoder for EntityEmbeddings {
    type Code = Hyperbox;

    fn encode(&self, members: &[EntityId]) -> Result<Hyperbox> {
        self.embed(members)
    }

    fn estimate(&self, a: &Hyperbox, b: &Hyperbox, measure: Measure) -> f64 {
        estimate_similarity(a, b, measure, Volume::Smooth { beta: self.beta })
    }
}

pub(crate) fn embed_tape_with<S: Real>(
    t: &mut Tape,
    store: &ParamStore<S>,
    ids: EmbeddingIds,
    ctx: &TapeContext,
    members: &[EntityId],
) -> TapeBox {
    let d = store.cols(ids.centers);
    let center = t.pool_rows(ctx.centers, members, ctx.center);
    let pooled = t.pool_rows(ctx.offsets, members, ctx.offset);
    let offset = t.scale(pooled, size_scale(members.len(), d));
    TapeBox { center, offset }
}

/// Boxes of the sets `ids`, concatenated in order.
pub(crate) fn embed_batch_with<S: Real>(
    t: &mut Tape,
    store: &ParamStore<S>,
    ids: EmbeddingIds,
    ctx: &TapeContext,
    corpus: &SetCorpus,
    sets: &[SetId],
) -> TapeBox {
    let boxes: Vec<TapeBox> = sets
        .iter()
        .map(|&id| embed_tape_with(t, store, ids, ctx, corpus.set(id)))
        .collect();
    TapeBox::concat(t, &boxes)
}

pub(crate) fn tape_context_with<S: Real>(t: &mut Tape, store: &ParamStore<S>, ids: EmbeddingIds) -> TapeContext {
    let centers = t.param(store, ids.centers);
    let raw = t.param(store, ids.offsets);
    TapeContext {
        center: t.param(store, ids.ctx_center),
        offset: t.param(store, ids.ctx_offset),
        centers,
        offsets: t.softplus(raw, 1.0),
    }
}

/// Entity tables and context vectors recorded once per tape.
#[derive(Clone, Copy, Debug)]
pub struct TapeContext {
    pub center: Var,
    pub offset: Var,
    /// All entity centers, row-major.
    pub centers: Var,
    /// All transformed (positive) entity offsets, row-major.
    pub offsets: Var,
}

/// The seven volumes of a triple: three boxes, three pairwise and one
/// triple intersection, in profile order.
pub fn seven_volumes(boxes: [&Hyperbox; 3], vol: Volume) -> [f64; 7] {
    let [a, b, c] = boxes;
    let triple = {
        let mut v = 1.0;
        for i in 0..a.dim() {
            let lo = (a.center()[i] - a.offset()[i])
                .max(b.center()[i] - b.offset()[i])
                .max(c.center()[i] - c.offset()[i]);
            let hi = (a.center()[i] + a.offset()[i])
                .min(b.center()[i] + b.offset()[i])
                .min(c.center()[i] + c.offset()[i]);
            v *= vol.edge(hi - lo);
        }
        v
    };
    [
        vol.of_box(a),
        vol.of_box(b),
        vol.of_box(c),
        intersection_volume(a, b, vol),
        intersection_volume(b, c, vol),
        intersection_volume(c, a, vol),
        triple,
    ]
}

/// Boxes intersected by each of the seven volumes, in profile order.
const SEVEN_REGIONS: [&[usize]; 7] = [&[0], &[1], &[2], &[0, 1], &[1, 2], &[2, 0], &[0, 1, 2]];

/// Squared error between true and volume-estimated seven-way ratios.
pub fn ratio_loss(p: &[f64; 7], v: &[f64; 7], mean: bool) -> f64 {
    let z: f64 = v.iter().sum();
    let s: f64 = p.iter().zip(v).map(|(p, v)| (p - v / z).powi(2)).sum();
    if mean {
        s / 7.0
    } else {
        s
    }
}

/// Triple loss of three boxes against the exact profile, smoothed volumes.
pub fn triple_loss(profile: &CardinalityProfile, boxes: [&Hyperbox; 3], beta: f64, mean: bool) -> f64 {
    ratio_loss(&profile.ratios(), &seven_volumes(boxes, Volume::Smooth { beta }), mean)
}

/// Batched ratio loss: `volumes` are seven tape vectors of length `n` and
/// `ratios` the `n` true profiles. Returns the sum over the batch.
pub fn tape_ratio_loss(t: &mut Tape, volumes: [Var; 7], ratios: &[[f64; 7]], mean: bool) -> Var {
    let mut z = volumes[0];
    for &v in &volumes[1..] {
        z = t.add(z, v);
    }
    let mut terms = Vec::with_capacity(7);
    for (l, &v) in volumes.iter().enumerate() {
        let phat = t.div(v, z);
        let p: Vec<f64> = ratios.iter().map(|r| r[l]).collect();
        let p = t.constant(&p);
        let diff = t.sub(phat, p);
        let sq = t.square(diff);
        terms.push(sq);
    }
    let all = t.concat(&terms);
    let total = t.sum(all);
    if mean {
        t.scale(total, 1.0 / 7.0)
    } else {
        total
    }
}

/// Batched triple loss over boxes laid out per slot (`n·dim` values each).
pub fn tape_triple_loss(
    t: &mut Tape,
    boxes: [TapeBox; 3],
    ratios: &[[f64; 7]],
    beta: f64,
    dim: usize,
    mean: bool,
) -> Var {
    let n = t.len_of(boxes[0].center) / dim;
    let pairs = boxes.map(|b| (b.center, b.offset));
    let all = t.region_volumes(&pairs, &SEVEN_REGIONS, dim, beta);
    let volumes: [Var; 7] = std::array::from_fn(|l| t.slice(all, l * n, n));
    tape_ratio_loss(t, volumes, ratios, mean)
}

/// Substitutes box volumes for set sizes in `measure`; the union comes from
/// inclusion-exclusion.
pub fn estimate_similarity(a: &Hyperbox, b: &Hyperbox, measure: Measure, vol: Volume) -> f64 {
    let va = vol.of_box(a);
    let vb = vol.of_box(b);
    let vi = intersection_volume(a, b, vol);
    measure.from_sizes(va, vb, vi)
}

/// Precomputed boxes used as a pair estimator.
pub struct BoxTable {
    pub boxes: Vec<Hyperbox>,
    pub volume: Volume,
}

impl PairEstimator for BoxTable {
    fn estimate_pair(&self, a: SetId, b: SetId, measure: Measure) -> f64 {
        clamp_unit(estimate_similarity(&self.boxes[a], &self.boxes[b], measure, self.volume))
    }
}

/// Boxes for the sets appearing in `pairs`; others are left as a placeholder.
pub(crate) fn boxes_for_pairs<F>(corpus: &SetCorpus, pairs: &[(SetId, SetId)], mut f: F) -> Result<Vec<Hyperbox>>
where
    F: FnMut(SetId) -> Result<Hyperbox>,
{
    let mut need = vec![false; corpus.len()];
    for &(a, b) in pairs {
        need[a] = true;
        need[b] = true;
    }
    let placeholder = Hyperbox::new(vec![0.0], vec![0.0])?;
    (0..corpus.len())
        .map(|id| if need[id] { f(id) } else { Ok(placeholder.clone()) })
        .collect()
}

/// Profiles of the triples of a batch as ratio vectors.
pub(crate) fn batch_ratios(corpus: &SetCorpus, batch: &[SampledTriple]) -> Vec<[f64; 7]> {
    batch
        .iter()
        .map(|s| corpus.cardinality_profile(s.triple).ratios())
        .collect()
}

/// Per-slot boxes of a batch, gathered from the boxes of `sets.ids`
/// concatenated in order.
pub(crate) fn slot_boxes(t: &mut Tape, sets: &BatchSets, boxes: TapeBox, batch: &[SampledTriple], d: usize) -> [TapeBox; 3] {
    [0, 1, 2].map(|slot| {
        let rows: Vec<u32> = batch
            .iter()
            .map(|s| sets.slot(s.triple.ids()[slot]) as u32)
            .collect();
        TapeBox {
            center: t.gather(boxes.center, &rows, d),
            offset: t.gather(boxes.offset, &rows, d),
        }
    })
}

struct BoxTrainer<'a> {
    emb: EntityEmbeddings,
    cfg: &'a TrainConfig,
}

impl Trainable for BoxTrainer<'_> {
    fn store(&self) -> &ParamStore<f32> {
        &self.emb.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.emb.store
    }

    fn batch_loss(&self, t: &mut Tape, corpus: &SetCorpus, batch: &[SampledTriple]) -> Result<Var> {
        let sets = BatchSets::new(batch);
        let ctx = self.emb.tape_context(t);
        let boxes = embed_batch_with(t, &self.emb.store, self.emb.ids, &ctx, corpus, &sets.ids);
        let slots = slot_boxes(t, &sets, boxes, batch, self.cfg.d);
        let ratios = batch_ratios(corpus, batch);
        Ok(tape_triple_loss(
            t,
            slots,
            &ratios,
            self.cfg.beta,
            self.cfg.d,
            self.cfg.mean_over_ratios,
        ))
    }

    fn selection_error(&self, corpus: &SetCorpus, pairs: &[(SetId, SetId)]) -> Result<f64> {
        let table = BoxTable {
            boxes: boxes_for_pairs(corpus, pairs, |id| self.emb.embed_set(corpus, id))?,
            volume: Volume::Smooth { beta: self.cfg.beta },
        };
        let mse = mse_on_pairs(corpus, pairs, &table, &Measure::ALL);
        Ok(mse.iter().sum::<f64>() / mse.len() as f64)
    }
}

/// Trains Set2Box embeddings on triples sampled from the train split.
pub fn train(corpus: &SetCorpus, cfg: &TrainConfig) -> Result<(EntityEmbeddings, TrainLog)> {
    cfg.validate()?;
    let emb = EntityEmbeddings::new(corpus.num_entities(), cfg.d, cfg.beta, cfg.seed);
    let mut trainer = BoxTrainer { emb, cfg };
    let log = fit(&mut trainer, corpus, cfg)?;
    Ok((trainer.emb, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Triple;
    use crate::diff::GradcheckConfig;

    #[test]
    fn scp_singleton_and_constant_rows() {
        let q = [0.3, -0.2, 0.9];
        assert_eq!(scp_pool(&q, &[5.0, 1.0, -2.0]).unwrap(), q.to_vec());
        let rows = [1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        let out = scp_pool(&rows, &[0.7, -0.4]).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15 && (out[1] - 2.0).abs() < 1e-15);
        assert!(scp_pool(&[], &[1.0]).is_err());
    }

    #[test]
    fn scp_two_members_by_hand() {
        let (r1, r2, a) = ([1.0, 0.0], [0.0, 2.0], [0.5, 0.25]);
        let (s1, s2) = (0.5f64, 0.5f64);
        let (w1, w2) = (s1.exp() / (s1.exp() + s2.exp()), s2.exp() / (s1.exp() + s2.exp()));
        let b = [w1 * r1[0] + w2 * r2[0], w1 * r1[1] + w2 * r2[1]];
        let (t1, t2) = (b[0] * r1[0] + b[1] * r1[1], b[0] * r2[0] + b[1] * r2[1]);
        let (u1, u2) = (t1.exp() / (t1.exp() + t2.exp()), t2.exp() / (t1.exp() + t2.exp()));
        let want = [u1 * r1[0] + u2 * r2[0], u1 * r1[1] + u2 * r2[1]];
        let got = scp_pool(&[r1[0], r1[1], r2[0], r2[1]], &a).unwrap();
        assert!((got[0] - want[0]).abs() < 1e-14 && (got[1] - want[1]).abs() < 1e-14);
    }

    #[test]
    fn embed_singleton_and_scale() {
        let emb = EntityEmbeddings::new(20, 4, 1.0, 3);
        let b = emb.embed(&[7]).unwrap();
        let c: Vec<f64> = emb.centers_raw()[28..32].iter().map(|&x| x as f64).collect();
        assert_eq!(b.center(), &c[..]);
        for &f in b.offset() {
            assert!((f - INIT_OFFSET).abs() < 1e-6);
        }
        let members: Vec<u32> = (0..16).collect();
        let big = emb.embed(&members).unwrap();
        for &f in big.offset() {
            assert!((f - 2.0 * INIT_OFFSET).abs() < 1e-6);
        }
        assert!(emb.embed(&[]).is_err());
        assert!(emb.embed(&[20]).is_err());
    }

    #[test]
    fn tape_embedding_matches_pure() {
        let emb = EntityEmbeddings::new(10, 3, 1.0, 9);
        let members = [1u32, 4, 6, 9];
        let mut t = Tape::new();
        let ctx = emb.tape_context(&mut t);
        let tb = emb.embed_tape(&mut t, &ctx, &members);
        let pure = emb.embed(&members).unwrap();
        let got = tb.value(&t);
        for i in 0..3 {
            assert!((got.center()[i] - pure.center()[i]).abs() < 1e-15);
            assert!((got.offset()[i] - pure.offset()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn ratio_loss_examples() {
        let p = [1.0 / 7.0; 7];
        let v = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!((ratio_loss(&p, &v, false) - 42.0 / 49.0).abs() < 1e-15);
        let q = [2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 0.5];
        let pq: [f64; 7] = q.map(|x| x / 9.5);
        assert!(ratio_loss(&pq, &q, false) < 1e-30);
        let scaled = q.map(|x| 3.7 * x);
        assert!(ratio_loss(&pq, &scaled, false) < 1e-30);
    }

    #[test]
    fn estimates_from_volumes() {
        let a = Hyperbox::from_corners(&[0.0, 0.0], &[2.0, 1.0]).unwrap();
        let b = Hyperbox::from_corners(&[1.0, 0.0], &[3.0, 1.0]).unwrap();
        let e = |m| estimate_similarity(&a, &b, m, Volume::Hard);
        assert!((e(Measure::Jaccard) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(e(Measure::Dice), 0.5);
        assert_eq!(e(Measure::Overlap), 0.5);
        assert_eq!(e(Measure::Cosine), 0.5);
        for m in Measure::ALL {
            assert_eq!(estimate_similarity(&a, &a, m, Volume::Hard), 1.0);
        }
    }

    fn tiny_corpus() -> SetCorpus {
        SetCorpus::from_sets(vec![
            vec![0, 1, 2],
            vec![1, 2, 3, 4],
            vec![4, 5],
            vec![0, 5, 6, 7],
            vec![2, 6],
        ])
        .unwrap()
    }

    #[test]
    fn triple_loss_gradcheck() {
        let corpus = tiny_corpus();
        let mut emb = EntityEmbeddings::new(8, 3, 2.0, 4);
        // unequal offsets
        for (k, x) in emb.store.values_mut(emb.ids.offsets).iter_mut().enumerate() {
            *x += 0.05 * (k % 5) as f32;
        }
        let triples = [Triple::new(0, 1, 3), Triple::new(2, 3, 4), Triple::new(0, 1, 4)];
        let batch: Vec<SampledTriple> = triples
            .iter()
            .map(|&triple| SampledTriple {
                triple,
                kind: crate::corpus::TripleKind::Positive,
            })
            .collect();
        let ids = emb.ids;
        let report = crate::diff::gradcheck(
            |store, backprop| {
                let mut t = Tape::new();
                let sets = BatchSets::new(&batch);
                let ctx = tape_context_with(&mut t, store, ids);
                let boxes = embed_batch_with(&mut t, store, ids, &ctx, &corpus, &sets.ids);
                let slots = slot_boxes(&mut t, &sets, boxes, &batch, 3);
                let ratios = batch_ratios(&corpus, &batch);
                let loss = tape_triple_loss(&mut t, slots, &ratios, 2.0, 3, false);
                if backprop {
                    t.backward(loss, store)?;
                }
                Ok(t.scalar(loss))
            },
            &emb.store,
            GradcheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn tape_loss_matches_pure() {
        let corpus = tiny_corpus();
        let emb = EntityEmbeddings::new(8, 3, 2.0, 11);
        let tr = Triple::new(0, 1, 3);
        let boxes: Vec<Hyperbox> = tr.ids().iter().map(|&i| emb.embed_set(&corpus, i).unwrap()).collect();
        let pure = triple_loss(&corpus.cardinality_profile(tr), [&boxes[0], &boxes[1], &boxes[2]], 2.0, false);
        let mut t = Tape::new();
        let tb = [0, 1, 2].map(|i| TapeBox::constant(&mut t, &boxes[i]));
        let loss = tape_triple_loss(&mut t, tb, &[corpus.cardinality_profile(tr).ratios()], 2.0, 3, false);
        assert!((t.scalar(loss) - pure).abs() < 1e-15);
    }

    #[test]
    fn zero_epochs_and_determinism() {
        let corpus = crate::corpus::synth::planted_clusters(2, 10, 8, 2, 5, 1)
            .unwrap()
            .split(0.5, 1)
            .unwrap();
        let cfg = TrainConfig {
            d: 3,
            epochs: 0,
            ..TrainConfig::default()
        };
        let (e0, log) = train(&corpus, &cfg).unwrap();
        let init = EntityEmbeddings::new(corpus.num_entities(), 3, cfg.beta, cfg.seed);
        assert_eq!(e0.centers_raw(), init.centers_raw());
        assert!(log.epochs.is_empty());
        let cfg = TrainConfig {
            d: 3,
            epochs: 3,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let (a, la) = train(&corpus, &cfg).unwrap();
        let (b, lb) = train(&corpus, &cfg).unwrap();
        assert_eq!(a.centers_raw(), b.centers_raw());
        assert_eq!(a.offsets_raw(), b.offsets_raw());
        assert_eq!(la, lb);
    }
}
