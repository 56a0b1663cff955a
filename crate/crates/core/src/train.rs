//! Minibatch Adam loop shared by every learned representation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{sample_triples, SampledTriple, SetCorpus, SetId, Split};
use crate::diff::{Adam, ParamStore, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::eval::sample_pairs;

/// Hyperparameters common to all trained methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub d: usize,
    /// Softplus sharpness of smoothed volumes.
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub num_pos: usize,
    pub num_neg: usize,
    pub seed: u64,
    /// Draw a fresh triple sample every epoch instead of once.
    pub resample_each_epoch: bool,
    /// Average the seven squared ratio errors instead of summing them.
    pub mean_over_ratios: bool,
    /// Number of val pairs for model selection; 0 disables selection.
    pub val_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 4,
            beta: 1.0,
            lr: 0.01,
            batch_size: 512,
            epochs: 30,
            num_pos: 10,
            num_neg: 10,
            seed: 0,
            resample_each_epoch: false,
            mean_over_ratios: false,
            val_pairs: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("d must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss per triple over the epoch.
    pub train_loss: f64,
    /// Selection error on the val pairs, if selection is enabled.
    pub val_error: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (`None`: the last one).
    pub selected_epoch: Option<usize>,
    pub steps: u64,
    pub num_triples: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_error\n");
        for r in &self.epochs {
            let v = r.val_error.map(|v| format!("{v:.9e}")).unwrap_or_default();
            out.push_str(&format!("{},{:.9e},{}\n", r.epoch, r.train_loss, v));
        }
        out
    }
}

/// A model trained from triples by minibatch Adam.
pub(crate) trait Trainable {
    fn store(&self) -> &ParamStore<f32>;
    fn store_mut(&mut self) -> &mut ParamStore<f32>;
    /// Records the loss summed over the triples of `batch`.
    fn batch_loss(&self, t: &mut Tape, corpus: &SetCorpus, batch: &[SampledTriple]) -> Result<Var>;
    /// Error used for model selection on val pairs (lower is better).
    fn selection_error(&self, corpus: &SetCorpus, pairs: &[(SetId, SetId)]) -> Result<f64>;
}

pub(crate) fn fit<M: Trainable>(model: &mut M, corpus: &SetCorpus, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok(log);
    }
    let mut triples = sample_triples(corpus, cfg.num_pos, cfg.num_neg, cfg.seed)?;
    if triples.is_empty() {
        return Err(Error::NotEnoughSets("no training triples could be sampled".into()));
    }
    let val_pairs = if cfg.val_pairs > 0 && corpus.ids_in(Split::Val).len() >= 2 {
        sample_pairs(corpus, Split::Val, cfg.val_pairs, cfg.seed ^ 0x5e1ec7)?
    } else {
        Vec::new()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let opt = Adam::new(cfg.lr);
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;

    for epoch in 0..cfg.epochs {
        if cfg.resample_each_epoch && epoch > 0 {
            triples = sample_triples(corpus, cfg.num_pos, cfg.num_neg, cfg.seed.wrapping_add(epoch as u64))?;
        }
        triples.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in triples.chunks(cfg.batch_size) {
            let mut t = Tape::new();
            let loss = model.batch_loss(&mut t, corpus, batch)?;
            let value = t.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss became {value} in epoch {epoch}"
                )));
            }
            total += value;
            let store = model.store_mut();
            store.zero_grad();
            t.backward(loss, store)?;
            opt.step(store)?;
        }
        let train_loss = total / triples.len() as f64;
        let val_error = if val_pairs.is_empty() {
            None
        } else {
            let e = model.selection_error(corpus, &val_pairs)?;
            if best.as_ref().is_none_or(|(b, _, _)| e < *b) {
                best = Some((e, epoch, model.store().clone()));
            }
            Some(e)
        };
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_error,
        });
    }
    log.steps = model.store().steps_taken();
    log.num_triples = triples.len();
    if let Some((_, epoch, snapshot)) = best {
        model.store_mut().copy_values_from(&snapshot);
        log.selected_epoch = Some(epoch);
    }
    Ok(log)
}

/// Distinct set ids of a batch with a lookup from id to slot.
pub(crate) struct BatchSets {
    pub ids: Vec<SetId>,
}

impl BatchSets {
    pub fn new(batch: &[SampledTriple]) -> Self {
        let mut ids: Vec<SetId> = batch.iter().flat_map(|s| s.triple.ids()).collect();
        ids.sort_unstable();
        ids.dedup();
        BatchSets { ids }
    }

    pub fn slot(&self, id: SetId) -> usize {
        self.ids.binary_search(&id).expect("id belongs to the batch")
    }
}

/// Uniform initial values in `[-scale, scale)`.
pub(crate) fn uniform_init(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    use rand::Rng;
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}
