//! Set2Box-PQ: centers and offsets quantized independently by
//! dot-product product quantization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::{Hyperbox, TapeBox, Volume};
use crate::corpus::{EntityId, Measure, SampledTriple, SetCorpus, SetId};
use crate::diff::{softplus, softplus_inverse, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::eval::{mse_on_pairs, SetEncoder};
use crate::model::{
    batch_ratios, boxes_for_pairs, embed_batch_with, estimate_similarity, slot_boxes, tape_context_with,
    BoxTable, EmbeddingIds, EntityEmbeddings,
};
use crate::quant::{kmeans_pp, seeding_boxes, tape_joint_loss, QuantPath};
use crate::train::{fit, BatchSets, TrainConfig, TrainLog, Trainable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PqConfig {
    pub base: TrainConfig,
    pub num_subspaces: usize,
    pub num_keys: usize,
    /// Weight of the seven mixed views; 0 trains on reconstructions only.
    pub lambda: f64,
    pub tau: f64,
}

impl Default for PqConfig {
    fn default() -> Self {
        PqConfig {
            base: TrainConfig {
                d: 32,
                ..TrainConfig::default()
            },
            num_subspaces: 8,
            num_keys: 30,
            lambda: 0.0,
            tau: 1.0,
        }
    }
}

impl PqConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let (d, dd) = (self.base.d, self.num_subspaces);
        if dd == 0 || d % dd != 0 {
            return Err(invalid(format!("D = {dd} must divide d = {d}")));
        }
        if self.num_keys == 0 {
            return Err(invalid("K must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Separate center and offset codes, one index per subspace each.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PqCodes {
    pub center: Vec<u32>,
    pub offset: Vec<u32>,
}

/// Embeddings plus the two codebooks.
#[derive(Clone, Debug)]
pub struct PqModel {
    pub embeddings: EntityEmbeddings,
    num_subspaces: usize,
    num_keys: usize,
    center_keys: Vec<f32>,
    offset_keys_raw: Vec<f32>,
    center_f64: Vec<f64>,
    offset_f64: Vec<f64>,
}

impl PqModel {
    pub fn new(
        embeddings: EntityEmbeddings,
        num_subspaces: usize,
        num_keys: usize,
        center_keys: Vec<f32>,
        offset_keys_raw: Vec<f32>,
    ) -> Result<Self> {
        let d = embeddings.dim();
        if num_subspaces == 0 || d % num_subspaces != 0 || num_keys == 0 {
            return Err(invalid(format!("invalid shape D = {num_subspaces}, K = {num_keys} for d = {d}")));
        }
        for len in [center_keys.len(), offset_keys_raw.len()] {
            if len != num_keys * d {
                return Err(Error::DimensionMismatch {
                    expected: num_keys * d,
                    got: len,
                });
            }
        }
        let center_f64 = center_keys.iter().map(|&x| x as f64).collect();
        let offset_f64 = offset_keys_raw.iter().map(|&x| softplus(x as f64, 1.0)).collect();
        Ok(PqModel {
            embeddings,
            num_subspaces,
            num_keys,
            center_keys,
            offset_keys_raw,
            center_f64,
            offset_f64,
        })
    }

    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    pub fn num_keys(&self) -> usize {
        self.num_keys
    }

    pub fn center_keys(&self) -> &[f32] {
        &self.center_keys
    }

    pub fn offset_keys_raw(&self) -> &[f32] {
        &self.offset_keys_raw
    }

    fn subdim(&self) -> usize {
        self.embeddings.dim() / self.num_subspaces
    }

    fn key<'a>(&self, keys: &'a [f64], i: usize, j: usize) -> &'a [f64] {
        let sub = self.subdim();
        let o = (i * self.num_keys + j) * sub;
        &keys[o..o + sub]
    }

    /// Per subspace, the key with the largest dot product (lowest index on
    /// ties).
    fn assign(&self, x: &[f64], keys: &[f64]) -> Vec<u32> {
        let sub = self.subdim();
        (0..self.num_subspaces)
            .map(|i| {
                let part = &x[i * sub..(i + 1) * sub];
                let mut best = (0u32, f64::NEG_INFINITY);
                for j in 0..self.num_keys {
                    let s: f64 = part.iter().zip(self.key(keys, i, j)).map(|(a, b)| a * b).sum();
                    if s > best.1 {
                        best = (j as u32, s);
                    }
                }
                best.0
            })
            .collect()
    }

    pub fn encode_box(&self, b: &Hyperbox) -> Result<PqCodes> {
        if b.dim() != self.embeddings.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.embeddings.dim(),
                got: b.dim(),
            });
        }
        Ok(PqCodes {
            center: self.assign(b.center(), &self.center_f64),
            offset: self.assign(b.offset(), &self.offset_f64),
        })
    }

    pub fn encode_set(&self, members: &[EntityId]) -> Result<PqCodes> {
        self.encode_box(&self.embeddings.embed(members)?)
    }

    /// Concatenated center keys and offset keys of the codes.
    pub fn reconstruct(&self, codes: &PqCodes) -> Result<Hyperbox> {
        let (dd, k) = (self.num_subspaces, self.num_keys as u32);
        if codes.center.len() != dd || codes.offset.len() != dd {
            return Err(Error::DimensionMismatch {
                expected: dd,
                got: codes.center.len().min(codes.offset.len()),
            });
        }
        if codes.center.iter().chain(&codes.offset).any(|&c| c >= k) {
            return Err(invalid(format!("code out of range for K = {k}")));
        }
        let pick = |keys: &[f64], cs: &[u32]| -> Vec<f64> {
            cs.iter()
                .enumerate()
                .flat_map(|(i, &c)| self.key(keys, i, c as usize).to_vec())
                .collect()
        };
        Hyperbox::new(pick(&self.center_f64, &codes.center), pick(&self.offset_f64, &codes.offset))
    }
}

impl SetEncoder for PqModel {
    type Code = PqCodes;

    fn encode(&self, members: &[EntityId]) -> Result<PqCodes> {
        self.encode_set(members)
    }

    fn estimate(&self, a: &PqCodes, b: &PqCodes, measure: Measure) -> f64 {
        match (self.reconstruct(a), self.reconstruct(b)) {
            (Ok(x), Ok(y)) => estimate_similarity(&x, &y, measure, Volume::Smooth { beta: self.embeddings.beta() }),
            _ => f64::NAN,
        }
    }
}

#[derive(Clone, Copy)]
struct PqIds {
    emb: EmbeddingIds,
    center_keys: ParamId,
    offset_keys: ParamId,
}

/// Straight-through product quantization of the vectors in `x` (`n·d`
/// values) against `keys` (`D·K·sub` values).
fn st_quantize(t: &mut Tape, x: Var, keys: Var, k: usize, sub: usize, tau: f64, path: QuantPath) -> Var {
    let scores = t.subspace_dots(x, keys, k, sub);
    let scaled = t.scale(scores, 1.0 / tau);
    let w = t.group_softmax(scaled, k);
    let soft = t.mix_rows(w, keys, sub, k);
    if path == QuantPath::Soft {
        return soft;
    }
    let parts = t.len_of(keys) / (k * sub);
    let kv = t.value(keys);
    let mut hard = Vec::with_capacity(t.len_of(x));
    for (q, s) in t.value(scores).chunks_exact(k).enumerate() {
        let mut best = (0, f64::NEG_INFINITY);
        for (j, &v) in s.iter().enumerate() {
            if v > best.1 {
                best = (j, v);
            }
        }
        let o = ((q % parts) * k + best.0) * sub;
        hard.extend_from_slice(&kv[o..o + sub]);
    }
    let hard = t.constant(&hard);
    t.straight_through(hard, soft)
}

#[allow(clippy::too_many_arguments)]
fn pq_batch_loss<S: Real>(
    t: &mut Tape,
    store: &ParamStore<S>,
    ids: PqIds,
    corpus: &SetCorpus,
    batch: &[SampledTriple],
    cfg: &PqConfig,
    path: QuantPath,
) -> Var {
    let (d, beta, k) = (cfg.base.d, cfg.base.beta, cfg.num_keys);
    let sub = d / cfg.num_subspaces;
    let sets = BatchSets::new(batch);
    let ctx = tape_context_with(t, store, ids.emb);
    let kc = t.param(store, ids.center_keys);
    let raw = t.param(store, ids.offset_keys);
    let kf = t.softplus(raw, 1.0);
    let orig = embed_batch_with(t, store, ids.emb, &ctx, corpus, &sets.ids);
    let recon = TapeBox {
        center: st_quantize(t, orig.center, kc, k, sub, cfg.tau, path),
        offset: st_quantize(t, orig.offset, kf, k, sub, cfg.tau, path),
    };
    let o = slot_boxes(t, &sets, orig, batch, d);
    let r = slot_boxes(t, &sets, recon, batch, d);
    let ratios = batch_ratios(corpus, batch);
    tape_joint_loss(t, o, r, &ratios, cfg.lambda, beta, d, cfg.base.mean_over_ratios)
}

struct PqTrainer<'a> {
    store: ParamStore<f32>,
    ids: PqIds,
    cfg: &'a PqConfig,
}

impl PqTrainer<'_> {
    fn model(&self) -> Result<PqModel> {
        let (s, e, cfg) = (&self.store, self.ids.emb, &self.cfg.base);
        let embeddings = EntityEmbeddings::from_raw(
            s.rows(e.centers),
            cfg.d,
            cfg.beta,
            s.values(e.centers).to_vec(),
            s.values(e.offsets).to_vec(),
            s.values(e.ctx_center).to_vec(),
            s.values(e.ctx_offset).to_vec(),
        )?;
        PqModel::new(
            embeddings,
            self.cfg.num_subspaces,
            self.cfg.num_keys,
            s.values(self.ids.center_keys).to_vec(),
            s.values(self.ids.offset_keys).to_vec(),
        )
    }
}

impl Trainable for PqTrainer<'_> {
    fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    fn batch_loss(&self, t: &mut Tape, corpus: &SetCorpus, batch: &[SampledTriple]) -> Result<Var> {
        Ok(pq_batch_loss(t, &self.store, self.ids, corpus, batch, self.cfg, QuantPath::StraightThrough))
    }

    fn selection_error(&self, corpus: &SetCorpus, pairs: &[(SetId, SetId)]) -> Result<f64> {
        let m = self.model()?;
        let table = BoxTable {
            boxes: boxes_for_pairs(corpus, pairs, |id| m.reconstruct(&m.encode_set(corpus.set(id))?))?,
            volume: Volume::Smooth { beta: self.cfg.base.beta },
        };
        let mse = mse_on_pairs(corpus, pairs, &table, &Measure::ALL);
        Ok(mse.iter().sum::<f64>() / mse.len() as f64)
    }
}

/// Keys seeded by k-means++ on sub-vectors of up to 1,000 train boxes:
/// center keys on sub-centers, offset keys on sub-offsets.
fn init_pq_keys(emb: &EntityEmbeddings, corpus: &SetCorpus, cfg: &PqConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let sub = cfg.base.d / cfg.num_subspaces;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.base.seed);
    rng.set_stream(2);
    let boxes = seeding_boxes(emb, corpus, &mut rng)?;
    let mut centers = Vec::with_capacity(cfg.num_keys * cfg.base.d);
    let mut offsets = Vec::with_capacity(cfg.num_keys * cfg.base.d);
    for i in 0..cfg.num_subspaces {
        let r = i * sub..(i + 1) * sub;
        let pts: Vec<&[f64]> = boxes.iter().map(|b| &b.center()[r.clone()]).collect();
        for p in kmeans_pp(&pts, cfg.num_keys, &mut rng) {
            centers.extend_from_slice(pts[p]);
        }
        let pts: Vec<&[f64]> = boxes.iter().map(|b| &b.offset()[r.clone()]).collect();
        for p in kmeans_pp(&pts, cfg.num_keys, &mut rng) {
            offsets.extend(pts[p].iter().map(|&x| softplus_inverse(x.max(1e-6), 1.0)));
        }
    }
    Ok((centers, offsets))
}

pub fn train_pq(corpus: &SetCorpus, cfg: &PqConfig) -> Result<(PqModel, TrainLog)> {
    cfg.validate()?;
    let base = &cfg.base;
    let emb = EntityEmbeddings::new(corpus.num_entities(), base.d, base.beta, base.seed);
    let (kc, kf) = init_pq_keys(&emb, corpus, cfg)?;
    let rows = cfg.num_subspaces * cfg.num_keys;
    let sub = base.d / cfg.num_subspaces;
    let emb_ids = emb.ids;
    let mut store = emb.store;
    let ids = PqIds {
        emb: emb_ids,
        center_keys: store.add("center_keys", rows, sub, kc),
        offset_keys: store.add("offset_keys", rows, sub, kf),
    };
    let mut trainer = PqTrainer { store, ids, cfg };
    let log = fit(&mut trainer, corpus, base)?;
    Ok((trainer.model()?, log))
}
