//! Box quantization: subspace key boxes, discrete codes, straight-through
//! reconstruction and joint training.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::{Hyperbox, TapeBox, Volume};
use crate::corpus::{CardinalityProfile, EntityId, Measure, SampledTriple, SetCorpus, SetId, Split};
use crate::diff::{overlap_ratio, softmax_into, softplus, softplus_inverse, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::eval::{mse_on_pairs, SetEncoder};
use crate::model::{
    batch_ratios, boxes_for_pairs, estimate_similarity, ratio_loss, seven_volumes, slot_boxes,
    tape_context_with, tape_triple_loss, embed_batch_with, BoxTable, EmbeddingIds, EntityEmbeddings,
};
use crate::train::{fit, BatchSets, TrainConfig, TrainLog, Trainable};

/// Bits of one packed code field, `⌈log₂K⌉`.
pub fn code_width(num_keys: usize) -> u32 {
    if num_keys <= 1 {
        0
    } else {
        usize::BITS - (num_keys - 1).leading_zeros()
    }
}

/// `D` subspaces of `K` key boxes each.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    d: usize,
    num_subspaces: usize,
    num_keys: usize,
    beta: f64,
    centers: Vec<f32>,
    raw_offsets: Vec<f32>,
    /// Key `j` of subspace `i` at `i * K + j`.
    keys: Vec<Hyperbox>,
}

impl Codebook {
    /// Builds a codebook from key centers and unconstrained offsets (mapped
    /// through a unit softplus), both laid out as `D·K` rows of `d/D` values.
    pub fn new(
        d: usize,
        num_subspaces: usize,
        num_keys: usize,
        beta: f64,
        centers: &[f64],
        raw_offsets: &[f64],
    ) -> Result<Self> {
        check_shape(d, num_subspaces, num_keys)?;
        let sub = d / num_subspaces;
        let n = num_subspaces * num_keys * sub;
        if centers.len() != n || raw_offsets.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: centers.len().min(raw_offsets.len()),
            });
        }
        // Keys derive from the stored f32 values so a saved codebook decodes
        // to identical boxes.
        let centers: Vec<f32> = centers.iter().map(|&x| x as f32).collect();
        let raw_offsets: Vec<f32> = raw_offsets.iter().map(|&x| x as f32).collect();
        let keys = (0..num_subspaces * num_keys)
            .map(|r| {
                let c = centers[r * sub..(r + 1) * sub].iter().map(|&x| x as f64).collect();
                let f = raw_offsets[r * sub..(r + 1) * sub]
                    .iter()
                    .map(|&x| softplus(x as f64, 1.0))
                    .collect();
                Hyperbox::new(c, f)
            })
            .collect::<Result<_>>()?;
        Ok(Codebook {
            d,
            num_subspaces,
            num_keys,
            beta,
            centers,
            raw_offsets,
            keys,
        })
    }

    pub fn from_f32(
        d: usize,
        num_subspaces: usize,
        num_keys: usize,
        beta: f64,
        centers: &[f32],
        raw_offsets: &[f32],
    ) -> Result<Self> {
        let c: Vec<f64> = centers.iter().map(|&x| x as f64).collect();
        let f: Vec<f64> = raw_offsets.iter().map(|&x| x as f64).collect();
        Codebook::new(d, num_subspaces, num_keys, beta, &c, &f)
    }

    pub(crate) fn from_store<S: Real>(store: &ParamStore<S>, ids: KeyIds, d: usize, num_subspaces: usize, num_keys: usize, beta: f64) -> Result<Self> {
        let c: Vec<f64> = store.values(ids.centers).iter().map(|x| x.to_f64()).collect();
        let f: Vec<f64> = store.values(ids.offsets).iter().map(|x| x.to_f64()).collect();
        Codebook::new(d, num_subspaces, num_keys, beta, &c, &f)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    pub fn num_keys(&self) -> usize {
        self.num_keys
    }

    pub fn subdim(&self) -> usize {
        self.d / self.num_subspaces
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn key(&self, subspace: usize, j: usize) -> &Hyperbox {
        &self.keys[subspace * self.num_keys + j]
    }

    pub fn centers_raw(&self) -> &[f32] {
        &self.centers
    }

    pub fn offsets_raw(&self) -> &[f32] {
        &self.raw_offsets
    }

    fn check_box(&self, b: &Hyperbox) -> Result<()> {
        if b.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: b.dim(),
            });
        }
        Ok(())
    }

    fn scores<'a>(&'a self, b: &'a Hyperbox, subspace: usize) -> impl Iterator<Item = f64> + 'a {
        let r = subspace * self.subdim()..(subspace + 1) * self.subdim();
        let (c, f) = (&b.center()[r.clone()], &b.offset()[r]);
        (0..self.num_keys).map(move |j| {
            let key = self.key(subspace, j);
            overlap_ratio(c, f, key.center(), key.offset(), self.beta)
        })
    }
}

fn check_shape(d: usize, num_subspaces: usize, num_keys: usize) -> Result<()> {
    if num_subspaces == 0 || d == 0 || d % num_subspaces != 0 {
        return Err(invalid(format!("D = {num_subspaces} must divide d = {d}")));
    }
    if num_keys == 0 {
        return Err(invalid("K must be at least 1"));
    }
    Ok(())
}

/// One key index per subspace.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodeAssignment(pub Vec<u32>);

impl CodeAssignment {
    pub fn validate(&self, cb: &Codebook) -> Result<()> {
        if self.0.len() != cb.num_subspaces {
            return Err(Error::DimensionMismatch {
                expected: cb.num_subspaces,
                got: self.0.len(),
            });
        }
        if let Some(&c) = self.0.iter().find(|&&c| c as usize >= cb.num_keys) {
            return Err(invalid(format!("code {c} out of range for K = {}", cb.num_keys)));
        }
        Ok(())
    }
}

/// Per subspace, the key with the largest overlap ratio; ties go to the
/// lowest index.
pub fn discretize(b: &Hyperbox, cb: &Codebook) -> Result<CodeAssignment> {
    cb.check_box(b)?;
    let codes = (0..cb.num_subspaces).map(|i| argmax(cb.scores(b, i))).collect();
    Ok(CodeAssignment(codes))
}

/// First index of the maximum.
fn argmax(scores: impl Iterator<Item = f64>) -> u32 {
    let mut best = (0u32, f64::NEG_INFINITY);
    for (j, s) in scores.enumerate() {
        if s > best.1 {
            best = (j as u32, s);
        }
    }
    best.0
}

/// Concatenation of the selected key boxes.
pub fn reconstruct(codes: &CodeAssignment, cb: &Codebook) -> Result<Hyperbox> {
    codes.validate(cb)?;
    Ok(Hyperbox::concat(
        codes.0.iter().enumerate().map(|(i, &c)| cb.key(i, c as usize)),
    ))
}

/// Per subspace, the softmax of overlap ratios divided by `tau`.
pub fn soft_assign(b: &Hyperbox, cb: &Codebook, tau: f64) -> Result<Vec<Vec<f64>>> {
    cb.check_box(b)?;
    if !(tau > 0.0) {
        return Err(invalid(format!("temperature must be positive, got {tau}")));
    }
    Ok((0..cb.num_subspaces)
        .map(|i| {
            let s: Vec<f64> = cb.scores(b, i).map(|x| x / tau).collect();
            let mut p = vec![0.0; s.len()];
            softmax_into(&s, &mut p);
            p
        })
        .collect())
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct KeyIds {
    pub centers: ParamId,
    pub offsets: ParamId,
}

/// Key boxes recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TapeKeys {
    pub boxes: TapeBox,
    sub: usize,
    num_keys: usize,
    beta: f64,
}

impl TapeKeys {
    /// Keys from tape values laid out like [`Codebook::new`]'s inputs;
    /// offsets go through a unit softplus.
    pub fn from_vars(t: &mut Tape, center: Var, raw: Var, sub: usize, num_keys: usize, beta: f64) -> Self {
        let offset = t.softplus(raw, 1.0);
        TapeKeys {
            boxes: TapeBox { center, offset },
            sub,
            num_keys,
            beta,
        }
    }

    /// Keys of `cb` as constants.
    pub fn constant(t: &mut Tape, cb: &Codebook) -> Self {
        let c: Vec<f64> = cb.centers.iter().map(|&x| x as f64).collect();
        let f: Vec<f64> = cb.raw_offsets.iter().map(|&x| x as f64).collect();
        let (c, f) = (t.constant(&c), t.constant(&f));
        TapeKeys::from_vars(t, c, f, cb.subdim(), cb.num_keys, cb.beta)
    }

    pub(crate) fn from_store<S: Real>(t: &mut Tape, store: &ParamStore<S>, ids: KeyIds, num_keys: usize, beta: f64) -> Self {
        let sub = store.cols(ids.centers);
        let c = t.param(store, ids.centers);
        let f = t.param(store, ids.offsets);
        TapeKeys::from_vars(t, c, f, sub, num_keys, beta)
    }

    /// Overlap ratios of every box in `b` (any number of boxes, laid out
    /// back to back) with every key of its subspaces.
    pub fn scores(&self, t: &mut Tape, b: TapeBox) -> Var {
        let k = &self.boxes;
        t.overlap_ratios(b.center, b.offset, k.center, k.offset, self.num_keys, self.sub, self.beta)
    }
}

/// Which value a quantized box carries forward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantPath {
    /// Hard reconstruction forward, soft-mixture gradient backward.
    StraightThrough,
    /// Soft mixture both ways (used to check the backward path).
    Soft,
}

/// Soft assignment probabilities on a tape, `D·K` values per box of `b`.
pub fn tape_soft_assign(t: &mut Tape, b: TapeBox, keys: &TapeKeys, tau: f64) -> Var {
    let s = keys.scores(t, b);
    let s = t.scale(s, 1.0 / tau);
    t.group_softmax(s, keys.num_keys)
}

/// Quantized boxes on a tape, for one or more boxes laid out back to back
/// in `b`. The forward value under [`QuantPath::StraightThrough`] is
/// exactly `reconstruct(discretize(value))` per box; gradients follow the
/// soft mixture of keys at temperature `tau`.
pub fn st_reconstruct(t: &mut Tape, b: TapeBox, keys: &TapeKeys, cb: &Codebook, tau: f64, path: QuantPath) -> Result<TapeBox> {
    let k = keys.num_keys;
    let sub = keys.sub;
    let scores = keys.scores(t, b);
    let scaled = t.scale(scores, 1.0 / tau);
    let w = t.group_softmax(scaled, k);
    let soft = TapeBox {
        center: t.mix_rows(w, keys.boxes.center, sub, k),
        offset: t.mix_rows(w, keys.boxes.offset, sub, k),
    };
    match path {
        QuantPath::Soft => Ok(soft),
        QuantPath::StraightThrough => {
            // same arithmetic as `discretize`, so the codes agree exactly
            let codes: Vec<u32> = t
                .value(scores)
                .chunks_exact(k)
                .map(|s| argmax(s.iter().copied()))
                .collect();
            let mut hc = Vec::with_capacity(codes.len() * sub);
            let mut hf = Vec::with_capacity(codes.len() * sub);
            for (q, &c) in codes.iter().enumerate() {
                let key = cb.key(q % cb.num_subspaces, c as usize);
                hc.extend_from_slice(key.center());
                hf.extend_from_slice(key.offset());
            }
            let (hc, hf) = (t.constant(&hc), t.constant(&hf));
            Ok(TapeBox {
                center: t.straight_through(hc, soft.center),
                offset: t.straight_through(hf, soft.offset),
            })
        }
    }
}

/// Which slots use the reconstructed box, for `J_1..J_8`.
pub const JOINT_VIEWS: [[bool; 3]; 8] = [
    [false, false, false],
    [true, false, false],
    [false, true, false],
    [false, false, true],
    [true, true, false],
    [true, false, true],
    [false, true, true],
    [true, true, true],
];

/// `λ(J_1 + … + J_7) + J_8` over original and reconstructed boxes.
pub fn joint_loss(
    profile: &CardinalityProfile,
    orig: [&Hyperbox; 3],
    recon: [&Hyperbox; 3],
    lambda: f64,
    beta: f64,
    mean: bool,
) -> f64 {
    let p = profile.ratios();
    let j = |view: &[bool; 3]| {
        let pick = |s: usize| if view[s] { recon[s] } else { orig[s] };
        ratio_loss(&p, &seven_volumes([pick(0), pick(1), pick(2)], Volume::Smooth { beta }), mean)
    };
    let last = j(&JOINT_VIEWS[7]);
    if lambda == 0.0 {
        return last;
    }
    lambda * JOINT_VIEWS[..7].iter().map(j).sum::<f64>() + last
}

/// Batched joint loss. With `lambda == 0` only `J_8` is recorded.
#[allow(clippy::too_many_arguments)]
pub fn tape_joint_loss(
    t: &mut Tape,
    orig: [TapeBox; 3],
    recon: [TapeBox; 3],
    ratios: &[[f64; 7]],
    lambda: f64,
    beta: f64,
    dim: usize,
    mean: bool,
) -> Var {
    let view = |t: &mut Tape, v: &[bool; 3]| {
        let b = [0, 1, 2].map(|s| if v[s] { recon[s] } else { orig[s] });
        tape_triple_loss(t, b, ratios, beta, dim, mean)
    };
    let last = view(t, &JOINT_VIEWS[7]);
    if lambda == 0.0 {
        return last;
    }
    let parts: Vec<Var> = JOINT_VIEWS[..7].iter().map(|v| view(t, v)).collect();
    let all = t.concat(&parts);
    let s = t.sum(all);
    let s = t.scale(s, lambda);
    t.add(s, last)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantTrainConfig {
    pub base: TrainConfig,
    /// `D`
    pub num_subspaces: usize,
    /// `K`
    pub num_keys: usize,
    pub lambda: f64,
    /// Backward temperature.
    pub tau: f64,
}

impl Default for QuantTrainConfig {
    fn default() -> Self {
        QuantTrainConfig {
            base: TrainConfig {
                d: 32,
                ..TrainConfig::default()
            },
            num_subspaces: 16,
            num_keys: 30,
            lambda: 0.1,
            tau: 1.0,
        }
    }
}

impl QuantTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        check_shape(self.base.d, self.num_subspaces, self.num_keys)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Embeddings plus codebook: sets are encoded as codes and decoded to the
/// reconstructed boxes for estimation.
#[derive(Clone, Debug)]
pub struct QuantizedModel {
    pub embeddings: EntityEmbeddings,
    pub codebook: Codebook,
}

impl QuantizedModel {
    pub fn encode_set(&self, members: &[EntityId]) -> Result<CodeAssignment> {
        discretize(&self.embeddings.embed(members)?, &self.codebook)
    }

    pub fn encode_corpus(&self, corpus: &SetCorpus) -> Result<Vec<CodeAssignment>> {
        corpus.sets().iter().map(|s| self.encode_set(s)).collect()
    }
}

impl SetEncoder for QuantizedModel {
    type Code = CodeAssignment;

    fn encode(&self, members: &[EntityId]) -> Result<CodeAssignment> {
        self.encode_set(members)
    }

    fn estimate(&self, a: &CodeAssignment, b: &CodeAssignment, measure: Measure) -> f64 {
        match (reconstruct(a, &self.codebook), reconstruct(b, &self.codebook)) {
            (Ok(x), Ok(y)) => estimate_similarity(&x, &y, measure, Volume::Smooth { beta: self.codebook.beta }),
            _ => f64::NAN,
        }
    }
}

/// Boxes of the stored codes, as a pair estimator.
pub fn decoded_table(cb: &Codebook, codes: &[CodeAssignment]) -> Result<BoxTable> {
    Ok(BoxTable {
        boxes: codes.iter().map(|c| reconstruct(c, cb)).collect::<Result<_>>()?,
        volume: Volume::Smooth { beta: cb.beta },
    })
}

/// k-means++ seeding of key centers on sub-box centers of up to 1,000 train
/// sets; offsets start at the per-coordinate median sub-box offset.
pub(crate) fn init_keys(
    emb: &EntityEmbeddings,
    corpus: &SetCorpus,
    num_subspaces: usize,
    num_keys: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sub = emb.dim() / num_subspaces;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let boxes = seeding_boxes(emb, corpus, &mut rng)?;
    let mut centers = Vec::with_capacity(num_subspaces * num_keys * sub);
    let mut offsets = Vec::with_capacity(num_subspaces * num_keys * sub);
    for i in 0..num_subspaces {
        let pts: Vec<&[f64]> = boxes.iter().map(|b| &b.center()[i * sub..(i + 1) * sub]).collect();
        for p in kmeans_pp(&pts, num_keys, &mut rng) {
            centers.extend_from_slice(pts[p]);
        }
        let mut med = Vec::with_capacity(sub);
        for c in 0..sub {
            let mut v: Vec<f64> = boxes.iter().map(|b| b.offset()[i * sub + c]).collect();
            v.sort_by(f64::total_cmp);
            med.push(softplus_inverse(v[v.len() / 2].max(1e-6), 1.0));
        }
        for _ in 0..num_keys {
            offsets.extend_from_slice(&med);
        }
    }
    Ok((centers, offsets))
}

/// Boxes of up to 1,000 random train sets (all sets if there is no train
/// split).
pub(crate) fn seeding_boxes(emb: &EntityEmbeddings, corpus: &SetCorpus, rng: &mut ChaCha8Rng) -> Result<Vec<Hyperbox>> {
    let mut ids = corpus.ids_in(Split::Train);
    if ids.is_empty() {
        ids = (0..corpus.len()).collect();
    }
    if ids.len() > 1000 {
        ids = rand::seq::index::sample(rng, ids.len(), 1000)
            .into_iter()
            .map(|i| ids[i])
            .collect();
        ids.sort_unstable();
    }
    ids.iter().map(|&i| emb.embed_set(corpus, i)).collect()
}

/// Indices of `k` seeds chosen by D² sampling (repeats allowed when there
/// are fewer distinct points than seeds).
pub(crate) fn kmeans_pp(pts: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut chosen = vec![rng.gen_range(0..pts.len())];
    let mut near: Vec<f64> = pts.iter().map(|p| dist2(p, pts[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = near.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen_range(0.0..total);
            let mut idx = pts.len() - 1;
            for (i, &w) in near.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.gen_range(0..pts.len())
        };
        chosen.push(pick);
        for (n, p) in near.iter_mut().zip(pts) {
            *n = n.min(dist2(p, pts[pick]));
        }
    }
    chosen
}

pub(crate) struct QuantParts {
    pub emb: EmbeddingIds,
    pub keys: KeyIds,
}

/// Joint loss of a batch for parameters in `store`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn quant_batch_loss<S: Real>(
    t: &mut Tape,
    store: &ParamStore<S>,
    parts: &QuantParts,
    corpus: &SetCorpus,
    batch: &[SampledTriple],
    cfg: &QuantTrainConfig,
    path: QuantPath,
) -> Result<Var> {
    let (d, beta) = (cfg.base.d, cfg.base.beta);
    let sets = BatchSets::new(batch);
    let ctx = tape_context_with(t, store, parts.emb);
    let keys = TapeKeys::from_store(t, store, parts.keys, cfg.num_keys, beta);
    let cb = Codebook::from_store(store, parts.keys, d, cfg.num_subspaces, cfg.num_keys, beta)?;
    let orig = embed_batch_with(t, store, parts.emb, &ctx, corpus, &sets.ids);
    let recon = st_reconstruct(t, orig, &keys, &cb, cfg.tau, path)?;
    let ratios = batch_ratios(corpus, batch);
    let o = slot_boxes(t, &sets, orig, batch, d);
    let r = slot_boxes(t, &sets, recon, batch, d);
    Ok(tape_joint_loss(t, o, r, &ratios, cfg.lambda, beta, d, cfg.base.mean_over_ratios))
}

struct QuantTrainer<'a> {
    store: ParamStore<f32>,
    parts: QuantParts,
    cfg: &'a QuantTrainConfig,
}

impl QuantTrainer<'_> {
    fn model(&self) -> Result<QuantizedModel> {
        let (c, o) = (self.parts.emb, self.parts.keys);
        let s = &self.store;
        let cfg = &self.cfg.base;
        let embeddings = EntityEmbeddings::from_raw(
            s.rows(c.centers),
            cfg.d,
            cfg.beta,
            s.values(c.centers).to_vec(),
            s.values(c.offsets).to_vec(),
            s.values(c.ctx_center).to_vec(),
            s.values(c.ctx_offset).to_vec(),
        )?;
        let codebook = Codebook::from_f32(
            cfg.d,
            self.cfg.num_subspaces,
            self.cfg.num_keys,
            cfg.beta,
            s.values(o.centers),
            s.values(o.offsets),
        )?;
        Ok(QuantizedModel { embeddings, codebook })
    }
}

impl Trainable for QuantTrainer<'_> {
    fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    fn batch_loss(&self, t: &mut Tape, corpus: &SetCorpus, batch: &[SampledTriple]) -> Result<Var> {
        quant_batch_loss(t, &self.store, &self.parts, corpus, batch, self.cfg, QuantPath::StraightThrough)
    }

    fn selection_error(&self, corpus: &SetCorpus, pairs: &[(SetId, SetId)]) -> Result<f64> {
        let m = self.model()?;
        let table = BoxTable {
            boxes: boxes_for_pairs(corpus, pairs, |id| reconstruct(&m.encode_set(corpus.set(id))?, &m.codebook))?,
            volume: Volume::Smooth { beta: self.cfg.base.beta },
        };
        let mse = mse_on_pairs(corpus, pairs, &table, &Measure::ALL);
        Ok(mse.iter().sum::<f64>() / mse.len() as f64)
    }
}

/// Fresh embeddings plus seeded key boxes in one parameter store.
pub(crate) fn init_quant_store(corpus: &SetCorpus, cfg: &QuantTrainConfig) -> Result<(ParamStore<f32>, QuantParts)> {
    let base = &cfg.base;
    let emb = EntityEmbeddings::new(corpus.num_entities(), base.d, base.beta, base.seed);
    let (kc, kf) = init_keys(&emb, corpus, cfg.num_subspaces, cfg.num_keys, base.seed)?;
    let sub = base.d / cfg.num_subspaces;
    let rows = cfg.num_subspaces * cfg.num_keys;
    let emb_ids = emb.ids;
    let mut store = emb.store;
    let keys = KeyIds {
        centers: store.add("key_centers", rows, sub, kc),
        offsets: store.add("key_offsets", rows, sub, kf),
    };
    Ok((store, QuantParts { emb: emb_ids, keys }))
}

/// Trains embeddings and key boxes end to end under the joint loss.
pub fn train_quantized(corpus: &SetCorpus, cfg: &QuantTrainConfig) -> Result<(QuantizedModel, TrainLog)> {
    cfg.validate()?;
    let (store, parts) = init_quant_store(corpus, cfg)?;
    let mut trainer = QuantTrainer { store, parts, cfg };
    let log = fit(&mut trainer, corpus, &cfg.base)?;
    Ok((trainer.model()?, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Triple, TripleKind};
    use crate::diff::{gradcheck, GradcheckConfig};

    fn grid_codebook() -> Codebook {
        // d = 4, D = 2, K = 3; keys are unit squares at x = 0, 2, 4
        let mut c = Vec::new();
        for _ in 0..2 {
            for j in 0..3 {
                c.extend_from_slice(&[2.0 * j as f64, 0.0]);
            }
        }
        let f = vec![softplus_inverse(0.5, 1.0); 12];
        Codebook::new(4, 2, 3, 4.0, &c, &f).unwrap()
    }

    #[test]
    fn self_match_and_round_trip() {
        let cb = grid_codebook();
        let b = Hyperbox::concat([cb.key(0, 2), cb.key(1, 1)]);
        let codes = discretize(&b, &cb).unwrap();
        assert_eq!(codes.0, vec![2, 1]);
        let r = reconstruct(&codes, &cb).unwrap();
        assert_eq!(r, b);
        assert!(reconstruct(&CodeAssignment(vec![3, 0]), &cb).is_err());
        assert!(discretize(&Hyperbox::new(vec![0.0; 3], vec![1.0; 3]).unwrap(), &cb).is_err());
    }

    #[test]
    fn single_subspace_and_single_key() {
        let cb = Codebook::new(2, 1, 1, 1.0, &[0.3, 0.1], &[0.0, 0.0]).unwrap();
        let b = Hyperbox::new(vec![5.0, 5.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(discretize(&b, &cb).unwrap().0, vec![0]);
        assert_eq!(code_width(1), 0);
        assert_eq!(code_width(2), 1);
        assert_eq!(code_width(30), 5);
        assert_eq!(code_width(32), 5);
        assert_eq!(code_width(33), 6);
    }

    #[test]
    fn soft_assign_rows() {
        let cb = grid_codebook();
        let b = Hyperbox::new(vec![0.7, 0.0, 3.1, 0.2], vec![0.4, 0.6, 0.5, 0.5]).unwrap();
        let p = soft_assign(&b, &cb, 1.0).unwrap();
        let codes = discretize(&b, &cb).unwrap();
        for (i, row) in p.iter().enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let arg = (0..3).fold(0, |a, j| if row[j] > row[a] { j } else { a });
            assert_eq!(arg as u32, codes.0[i]);
        }
        let cold = soft_assign(&b, &cb, 1e-4).unwrap();
        assert!(cold[0][codes.0[0] as usize] > 1.0 - 1e-9);
        let same = Codebook::new(2, 1, 3, 1.0, &[0.0; 6], &[0.0; 6]).unwrap();
        let u = soft_assign(&b.sub_box(0, 2), &same, 1.0).unwrap();
        for x in &u[0] {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let mut s = [0.0; 3];
        softmax_into(&[0.9, 0.5, 0.1], &mut s);
        let want = [0.471776221, 0.316241058, 0.211982721];
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn straight_through_value_is_hard() {
        let cb = grid_codebook();
        let b = Hyperbox::new(vec![1.3, 0.1, 3.9, -0.2], vec![0.3, 0.4, 0.7, 0.5]).unwrap();
        let mut t = Tape::new();
        let keys = TapeKeys::constant(&mut t, &cb);
        let tb = TapeBox::constant(&mut t, &b);
        let st = st_reconstruct(&mut t, tb, &keys, &cb, 1.0, QuantPath::StraightThrough).unwrap();
        let hard = reconstruct(&discretize(&b, &cb).unwrap(), &cb).unwrap();
        assert_eq!(st.value(&t), hard);
    }

    #[test]
    fn joint_loss_degenerate_cases() {
        let c = SetCorpus::from_sets(vec![vec![0, 1, 2], vec![1, 2], vec![2, 3]]).unwrap();
        let p = c.cardinality_profile(Triple::new(0, 1, 2));
        let bx = |x: f64| Hyperbox::new(vec![x, 0.0], vec![0.5, 0.7]).unwrap();
        let (a, b, d) = (bx(0.0), bx(0.3), bx(0.9));
        let (ra, rb, rd) = (bx(0.1), bx(0.2), bx(1.2));
        let j1 = joint_loss(&p, [&a, &b, &d], [&a, &b, &d], 0.0, 2.0, false);
        let all = joint_loss(&p, [&a, &b, &d], [&a, &b, &d], 0.3, 2.0, false);
        assert!((all - (7.0 * 0.3 + 1.0) * j1).abs() < 1e-12);
        let only = joint_loss(&p, [&a, &b, &d], [&ra, &rb, &rd], 0.0, 2.0, false);
        assert_eq!(only, triple_loss_on(&p, [&ra, &rb, &rd]));
        // enumerate the eight views independently
        let mut want = 0.0;
        for mask in 0..8u32 {
            let pick = |s: u32, o: &Hyperbox, r: &Hyperbox| if mask >> s & 1 == 1 { r.clone() } else { o.clone() };
            let v = [pick(0, &a, &ra), pick(1, &b, &rb), pick(2, &d, &rd)];
            let l = triple_loss_on(&p, [&v[0], &v[1], &v[2]]);
            want += if mask == 7 { l } else { 0.25 * l };
        }
        let got = joint_loss(&p, [&a, &b, &d], [&ra, &rb, &rd], 0.25, 2.0, false);
        assert!((got - want).abs() < 1e-14);
    }

    fn triple_loss_on(p: &CardinalityProfile, b: [&Hyperbox; 3]) -> f64 {
        crate::model::triple_loss(p, b, 2.0, false)
    }

    fn small_corpus() -> SetCorpus {
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
    fn soft_path_gradcheck() {
        let corpus = small_corpus();
        let cfg = QuantTrainConfig {
            base: TrainConfig {
                d: 4,
                beta: 2.0,
                ..TrainConfig::default()
            },
            num_subspaces: 2,
            num_keys: 3,
            lambda: 0.5,
            tau: 1.0,
        };
        let (mut store, parts) = init_quant_store(&corpus, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for v in store.values_mut(parts.keys.centers) {
            *v += rng.gen_range(-0.3..0.3);
        }
        let batch: Vec<SampledTriple> = [Triple::new(0, 1, 3), Triple::new(2, 3, 4)]
            .into_iter()
            .map(|triple| SampledTriple {
                triple,
                kind: TripleKind::Positive,
            })
            .collect();
        let r = gradcheck(
            |s, backprop| {
                let mut t = Tape::new();
                let loss = quant_batch_loss(&mut t, s, &parts, &corpus, &batch, &cfg, QuantPath::Soft)?;
                if backprop {
                    t.backward(loss, s)?;
                }
                Ok(t.scalar(loss))
            },
            &store,
            GradcheckConfig::default(),
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn keys_receive_gradient() {
        let corpus = small_corpus().split(0.6, 0).unwrap();
        let cfg = QuantTrainConfig {
            base: TrainConfig {
                d: 4,
                epochs: 1,
                batch_size: 8,
                val_pairs: 0,
                ..TrainConfig::default()
            },
            num_subspaces: 2,
            num_keys: 3,
            lambda: 0.0,
            tau: 1.0,
        };
        let (store, parts) = init_quant_store(&corpus, &cfg).unwrap();
        let before = store.values(parts.keys.centers).to_vec();
        let (model, _) = train_quantized(&corpus, &cfg).unwrap();
        assert_ne!(model.codebook.centers_raw(), &before[..]);
    }
}
