//! Training any method into an in-memory artifact, and persisting it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use set2box::baselines::vec::Features;
use set2box::baselines::{
    bin_estimate, train_order, train_pq, train_vec, BinSketch, OrderModel, PqCodes, PqModel, Set2Bin, VecModel,
};
use set2box::eval::{clamp_unit, timing_probe, EncodedSets, PairEstimator, TimingReport};
use set2box::io;
use set2box::model::{train, BoxTable};
use set2box::quant::{decoded_table, train_quantized, CodeAssignment, QuantizedModel};
use set2box::{EntityEmbeddings, Measure, Method, SetCorpus, TrainLog, Volume};

use crate::config::RunConfig;
use crate::CliError;

const EMBEDDINGS: &str = "model.s2b1";
const CODEBOOK: &str = "codebook.s2bq";
const SKETCH: &str = "sketch.s2bn";
const VECTORS: &str = "model.s2be";
const PQ: &str = "codebook.s2bp";
const HASH: &str = "hash.json";

/// A trained representation of one method and seed.
#[derive(Clone, Debug)]
pub enum Trained {
    Bin { enc: Set2Bin, sketches: Vec<BinSketch> },
    /// One model per trained measure.
    Vec(Vec<VecModel>),
    Order(OrderModel),
    Box(EntityEmbeddings),
    Quant { model: QuantizedModel, codes: Vec<CodeAssignment> },
    Pq { model: PqModel, codes: Vec<PqCodes> },
}

/// Training logs keyed by a label (the measure for Set2Vec, else "model").
pub type Logs = Vec<(String, TrainLog)>;

#[derive(Serialize, Deserialize)]
struct HashParams {
    d: usize,
    seed: u64,
}

pub fn load_features(path: &Path, num_entities: usize) -> Result<Features, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut values = Vec::new();
    let mut dim = None;
    let mut rows = 0;
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#')) {
        let row: Vec<f32> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| CliError::Config(format!("{}:{}: bad feature {t:?}", path.display(), n + 1))))
            .collect::<Result<_, _>>()?;
        if *dim.get_or_insert(row.len()) != row.len() {
            return Err(CliError::Config(format!("{}:{}: ragged feature row", path.display(), n + 1)));
        }
        values.extend(row);
        rows += 1;
    }
    if rows != num_entities {
        return Err(CliError::Config(format!("{rows} feature rows for {num_entities} entities")));
    }
    Ok(Features {
        dim: dim.unwrap_or(0),
        values,
    })
}

/// Trains `cfg.method` on `corpus` with `seed`.
pub fn train_method(corpus: &SetCorpus, cfg: &RunConfig, seed: u64) -> Result<(Trained, Logs), CliError> {
    cfg.validate()?;
    let one = |log: TrainLog| vec![("model".to_string(), log)];
    Ok(match cfg.method {
        Method::Set2Bin => {
            let enc = Set2Bin::new(cfg.d, seed)?;
            let sketches = corpus.sets().iter().map(|s| enc.sketch(s)).collect();
            (Trained::Bin { enc, sketches }, Vec::new())
        }
        Method::Set2Vec | Method::Set2VecPlus => {
            let features = match &cfg.features {
                Some(p) if cfg.method == Method::Set2VecPlus => Some(load_features(p, corpus.num_entities())?),
                _ => None,
            };
            let mut models = Vec::new();
            let mut logs = Vec::new();
            for &m in &cfg.vec_measures {
                let (model, log) = train_vec(corpus, &cfg.vec_config(seed, m), features.clone())?;
                models.push(model);
                logs.push((m.short_name().to_string(), log));
            }
            (Trained::Vec(models), logs)
        }
        Method::Set2BoxOrder => {
            let (m, log) = train_order(corpus, &cfg.train_config(seed))?;
            (Trained::Order(m), one(log))
        }
        Method::Set2Box => {
            let (m, log) = train(corpus, &cfg.train_config(seed))?;
            (Trained::Box(m), one(log))
        }
        Method::Set2BoxPlus | Method::Set2BoxBq => {
            let (model, log) = train_quantized(corpus, &cfg.quant_config(seed))?;
            let codes = model.encode_corpus(corpus)?;
            (Trained::Quant { model, codes }, one(log))
        }
        Method::Set2BoxPq => {
            let (model, log) = train_pq(corpus, &cfg.pq_config(seed))?;
            let codes = corpus
                .sets()
                .iter()
                .map(|s| model.encode_set(s))
                .collect::<set2box::Result<_>>()?;
            (Trained::Pq { model, codes }, one(log))
        }
    })
}

fn vec_file(m: Measure) -> String {
    format!("model-{}.s2be", m.short_name())
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>, CliError> {
    let p = dir.join(name);
    fs::read(&p).map_err(|e| CliError::Artifact(format!("cannot read {}: {e}", p.display())))
}

impl Trained {
    /// Writes the binary artifacts of this representation into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let write = |name: &str, bytes: Vec<u8>| io::write_file(dir.join(name), &bytes);
        match self {
            Trained::Bin { enc, sketches } => {
                write(SKETCH, io::sketches_to_bytes(enc.d, sketches))?;
                let json = serde_json::to_vec_pretty(&HashParams { d: enc.d, seed: enc.seed }).expect("serializable");
                write(HASH, json)?;
            }
            Trained::Vec(models) => {
                for m in models {
                    write(&vec_file(m.measure()), io::vec_to_bytes(m))?;
                }
            }
            Trained::Order(m) => write(VECTORS, io::order_to_bytes(m))?,
            Trained::Box(e) => write(EMBEDDINGS, io::embeddings_to_bytes(e))?,
            Trained::Quant { model, codes } => {
                write(EMBEDDINGS, io::embeddings_to_bytes(&model.embeddings))?;
                write(CODEBOOK, io::codebook_to_bytes(&model.codebook, codes))?;
            }
            Trained::Pq { model, codes } => {
                write(EMBEDDINGS, io::embeddings_to_bytes(&model.embeddings))?;
                write(PQ, io::pq_to_bytes(model, codes))?;
            }
        }
        Ok(())
    }

    /// Reads the artifacts `save` wrote for `method`.
    pub fn load(dir: &Path, method: Method, vec_measures: &[Measure]) -> Result<Self, CliError> {
        Ok(match method {
            Method::Set2Bin => {
                let (d, sketches) = io::sketches_from_bytes(&read(dir, SKETCH)?)?;
                let h: HashParams = serde_json::from_slice(&read(dir, HASH)?)
                    .map_err(|e| CliError::Artifact(format!("bad {HASH}: {e}")))?;
                if h.d != d {
                    return Err(CliError::Artifact(format!("{HASH} width {} differs from sketches {d}", h.d)));
                }
                Trained::Bin {
                    enc: Set2Bin::new(d, h.seed)?,
                    sketches,
                }
            }
            Method::Set2Vec | Method::Set2VecPlus => {
                let mut models = Vec::new();
                for &m in vec_measures {
                    match io::vectors_from_bytes(&read(dir, &vec_file(m))?)? {
                        io::VectorArtifact::Vec(v) if v.measure() == m => models.push(v),
                        _ => return Err(CliError::Artifact(format!("{} is not a {m} vector model", vec_file(m)))),
                    }
                }
                Trained::Vec(models)
            }
            Method::Set2BoxOrder => match io::vectors_from_bytes(&read(dir, VECTORS)?)? {
                io::VectorArtifact::Order(m) => Trained::Order(m),
                _ => return Err(CliError::Artifact(format!("{VECTORS} is not an order model"))),
            },
            Method::Set2Box => Trained::Box(io::embeddings_from_bytes(&read(dir, EMBEDDINGS)?)?),
            Method::Set2BoxPlus | Method::Set2BoxBq => {
                let embeddings = io::embeddings_from_bytes(&read(dir, EMBEDDINGS)?)?;
                let (codebook, codes) = io::codebook_from_bytes(&read(dir, CODEBOOK)?, embeddings.beta())?;
                if codebook.dim() != embeddings.dim() {
                    return Err(CliError::Artifact("codebook and embeddings differ in width".into()));
                }
                Trained::Quant {
                    model: QuantizedModel { embeddings, codebook },
                    codes,
                }
            }
            Method::Set2BoxPq => {
                let embeddings = io::embeddings_from_bytes(&read(dir, EMBEDDINGS)?)?;
                let (model, codes) = io::pq_from_bytes(&read(dir, PQ)?, embeddings)?;
                Trained::Pq { model, codes }
            }
        })
    }

    /// Entity universe the representation was trained on, if it has one.
    pub fn num_entities(&self) -> Option<usize> {
        match self {
            Trained::Bin { .. } => None,
            Trained::Vec(m) => m.first().map(VecModel::num_entities),
            Trained::Order(m) => Some(m.num_entities()),
            Trained::Box(e) => Some(e.num_entities()),
            Trained::Quant { model, .. } => Some(model.embeddings.num_entities()),
            Trained::Pq { model, .. } => Some(model.embeddings.num_entities()),
        }
    }

    /// Number of stored per-set codes, for representations that store them.
    pub fn num_codes(&self) -> Option<usize> {
        match self {
            Trained::Bin { sketches, .. } => Some(sketches.len()),
            Trained::Quant { codes, .. } => Some(codes.len()),
            Trained::Pq { codes, .. } => Some(codes.len()),
            _ => None,
        }
    }

    fn check(&self, corpus: &SetCorpus) -> Result<(), CliError> {
        if let Some(n) = self.num_entities() {
            if n != corpus.num_entities() {
                return Err(CliError::Config(format!(
                    "model has {n} entities but the corpus has {}",
                    corpus.num_entities()
                )));
            }
        }
        if let Some(n) = self.num_codes() {
            if n != corpus.len() {
                return Err(CliError::Config(format!("model stores {n} sets but the corpus has {}", corpus.len())));
            }
        }
        Ok(())
    }

    /// Similarity estimates for the sets of `corpus`, from the stored codes
    /// where the method has them.
    pub fn estimator(&self, corpus: &SetCorpus) -> Result<Box<dyn PairEstimator>, CliError> {
        self.check(corpus)?;
        let smooth = |beta| Volume::Smooth { beta };
        Ok(match self {
            Trained::Bin { sketches, .. } => Box::new(SketchTable(sketches.clone())),
            Trained::Vec(models) => Box::new(VecTables(
                models
                    .iter()
                    .map(|m| EncodedSets::new(m.clone(), corpus))
                    .collect::<set2box::Result<_>>()?,
            )),
            Trained::Order(m) => Box::new(EncodedSets::new(m.clone(), corpus)?),
            Trained::Box(e) => Box::new(BoxTable {
                boxes: e.embed_all(corpus)?,
                volume: smooth(e.beta()),
            }),
            Trained::Quant { model, codes } => Box::new(decoded_table(&model.codebook, codes)?),
            Trained::Pq { model, codes } => Box::new(BoxTable {
                boxes: codes.iter().map(|c| model.reconstruct(c)).collect::<set2box::Result<_>>()?,
                volume: smooth(model.embeddings.beta()),
            }),
        })
    }

    /// Per-pair estimation latency on random sets of each size.
    pub fn timing(&self, sizes: &[usize], universe: usize, seed: u64) -> Result<TimingReport, CliError> {
        let m = Measure::Jaccard;
        Ok(match self {
            Trained::Bin { enc, .. } => timing_probe(enc, sizes, universe, m, seed)?,
            Trained::Vec(models) => {
                let v = &models[0];
                timing_probe(v, sizes, universe, v.measure(), seed)?
            }
            Trained::Order(o) => timing_probe(o, sizes, universe, m, seed)?,
            Trained::Box(e) => timing_probe(e, sizes, universe, m, seed)?,
            Trained::Quant { model, .. } => timing_probe(model, sizes, universe, m, seed)?,
            Trained::Pq { model, .. } => timing_probe(model, sizes, universe, m, seed)?,
        })
    }
}

struct SketchTable(Vec<BinSketch>);

impl PairEstimator for SketchTable {
    fn estimate_pair(&self, a: usize, b: usize, measure: Measure) -> f64 {
        clamp_unit(bin_estimate(&self.0[a], &self.0[b], measure).map_or(f64::NAN, |e| e.value))
    }
}

struct VecTables(Vec<EncodedSets<VecModel>>);

impl PairEstimator for VecTables {
    fn estimate_pair(&self, a: usize, b: usize, measure: Measure) -> f64 {
        self.0
            .iter()
            .find(|t| t.encoder.measure() == measure)
            .map_or(f64::NAN, |t| t.estimate_pair(a, b, measure))
    }

    fn supports(&self, measure: Measure) -> bool {
        self.0.iter().any(|t| t.encoder.measure() == measure)
    }
}
