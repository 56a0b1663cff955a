//! Flat `key = value` run configuration.
//!
//! Values are layered: built-in defaults, then a config file, then flags.
//! Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use set2box::baselines::{PqConfig, VecConfig};
use set2box::quant::QuantTrainConfig;
use set2box::{Measure, Method, Split, TrainConfig};

use crate::CliError;

pub const OUT_ENV: &str = "SET2BOX_OUT";

/// Everything a run needs, fully resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    pub corpus: Option<PathBuf>,
    /// Optional split labels aligned with the corpus.
    pub split: Option<PathBuf>,
    pub train_frac: f64,
    pub split_seed: u64,
    pub out: PathBuf,

    pub d: usize,
    /// Subspaces `D`.
    pub subspaces: usize,
    /// Keys per subspace `K`.
    pub keys: usize,
    pub beta: f64,
    pub lambda: f64,
    pub tau: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Triples per train set; `None` picks the method default.
    pub pos: Option<usize>,
    pub neg: Option<usize>,
    pub seeds: Vec<u64>,
    pub val_pairs: usize,
    pub mean_over_ratios: bool,
    pub resample: bool,
    /// Measures Set2Vec is trained for, one model each.
    pub vec_measures: Vec<Measure>,
    /// Entity features for Set2Vec+ (one whitespace-separated row per entity).
    pub features: Option<PathBuf>,

    pub pairs: usize,
    pub eval_split: Split,
    pub measures: Vec<Measure>,
    pub quality_k: Vec<usize>,
    pub anchors: usize,
    pub timing: bool,

    pub lrs: Vec<f64>,
    pub betas: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Set2Box,
            corpus: None,
            split: None,
            train_frac: 0.2,
            split_seed: 0,
            out: default_out(),
            d: 4,
            subspaces: 16,
            keys: 30,
            beta: 1.0,
            lambda: 0.1,
            tau: 1.0,
            lr: 0.01,
            epochs: 30,
            batch: 512,
            pos: None,
            neg: None,
            seeds: vec![0],
            val_pairs: 10_000,
            mean_over_ratios: false,
            resample: false,
            vec_measures: Measure::ALL.to_vec(),
            features: None,
            pairs: 100_000,
            eval_split: Split::Test,
            measures: Measure::ALL.to_vec(),
            quality_k: Vec::new(),
            anchors: 500,
            timing: false,
            lrs: vec![0.001, 0.01],
            betas: vec![1.0, 2.0, 4.0],
            lambdas: vec![0.0, 0.001, 0.01, 0.1, 1.0],
        }
    }
}

fn default_out() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// Every recognized key, in the order they are written back.
pub const KEYS: &[&str] = &[
    "method", "corpus", "split", "train_frac", "split_seed", "out", "d", "D", "K", "beta", "lambda", "tau", "lr",
    "epochs", "batch", "pos", "neg", "seeds", "val_pairs", "mean_over_ratios", "resample", "vec_measures",
    "features", "pairs", "eval_split", "measures", "quality_k", "anchors", "timing", "lrs", "betas", "lambdas",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.trim()
        .parse()
        .map_err(|_| CliError::Config(format!("bad value for `{key}`: {v:?}")))
}

fn parse_maybe_empty<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError> {
    let items = parse_maybe_empty(key, v)?;
    if items.is_empty() {
        return Err(CliError::Config(format!("`{key}` needs at least one value")));
    }
    Ok(items)
}

fn parse_measures(key: &str, v: &str) -> Result<Vec<Measure>, CliError> {
    if v.trim() == "all" {
        return Ok(Measure::ALL.to_vec());
    }
    let mut m: Vec<Measure> = parse_list(key, v)?;
    m.sort();
    m.dedup();
    Ok(m)
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Config(format!("bad value for `{key}`: {v:?}"))),
    }
}

fn opt_parse<T: FromStr>(key: &str, v: &str) -> Result<Option<T>, CliError> {
    if v.trim().is_empty() { Ok(None) } else { parse(key, v).map(Some) }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    let v = v.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "method" => self.method = parse(key, v)?,
            "corpus" => self.corpus = opt_path(v),
            "split" => self.split = opt_path(v),
            "train_frac" => self.train_frac = parse(key, v)?,
            "split_seed" => self.split_seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v.trim()),
            "d" => self.d = parse(key, v)?,
            "D" => self.subspaces = parse(key, v)?,
            "K" => self.keys = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "pos" => self.pos = opt_parse(key, v)?,
            "neg" => self.neg = opt_parse(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "val_pairs" => self.val_pairs = parse(key, v)?,
            "mean_over_ratios" => self.mean_over_ratios = parse_bool(key, v)?,
            "resample" => self.resample = parse_bool(key, v)?,
            "vec_measures" => self.vec_measures = parse_measures(key, v)?,
            "features" => self.features = opt_path(v),
            "pairs" => self.pairs = parse(key, v)?,
            "eval_split" => self.eval_split = parse(key, v)?,
            "measures" => self.measures = parse_measures(key, v)?,
            "quality_k" => self.quality_k = parse_maybe_empty(key, v)?,
            "anchors" => self.anchors = parse(key, v)?,
            "timing" => self.timing = parse_bool(key, v)?,
            "lrs" => self.lrs = parse_list(key, v)?,
            "betas" => self.betas = parse_list(key, v)?,
            "lambdas" => self.lambdas = parse_list(key, v)?,
            _ => return Err(CliError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let opt = |x: Option<usize>| x.map(|x| x.to_string()).unwrap_or_default();
        match key {
            "method" => self.method.to_string(),
            "corpus" => path(&self.corpus),
            "split" => path(&self.split),
            "train_frac" => self.train_frac.to_string(),
            "split_seed" => self.split_seed.to_string(),
            "out" => self.out.display().to_string(),
            "d" => self.d.to_string(),
            "D" => self.subspaces.to_string(),
            "K" => self.keys.to_string(),
            "beta" => self.beta.to_string(),
            "lambda" => self.lambda.to_string(),
            "tau" => self.tau.to_string(),
            "lr" => self.lr.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch" => self.batch.to_string(),
            "pos" => opt(self.pos),
            "neg" => opt(self.neg),
            "seeds" => join(&self.seeds),
            "val_pairs" => self.val_pairs.to_string(),
            "mean_over_ratios" => self.mean_over_ratios.to_string(),
            "resample" => self.resample.to_string(),
            "vec_measures" => join(&self.vec_measures),
            "features" => path(&self.features),
            "pairs" => self.pairs.to_string(),
            "eval_split" => self.eval_split.to_string(),
            "measures" => join(&self.measures),
            "quality_k" => join(&self.quality_k),
            "anchors" => self.anchors.to_string(),
            "timing" => self.timing.to_string(),
            "lrs" => join(&self.lrs),
            "betas" => join(&self.betas),
            "lambdas" => join(&self.lambdas),
            _ => unreachable!("unlisted key {key}"),
        }
    }

    /// Applies `key = value` lines.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("config line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut c = RunConfig::default();
        c.apply_file(path)?;
        Ok(c)
    }

    /// The resolved configuration as `key = value` lines; reading them back
    /// reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            writeln!(out, "{k} = {}", self.get(k)).unwrap();
        }
        out
    }

    pub fn corpus_path(&self) -> Result<&Path, CliError> {
        self.corpus
            .as_deref()
            .ok_or_else(|| CliError::Config("no corpus given (use --corpus or `corpus = ...`)".into()))
    }

    fn triples_per_set(&self) -> (usize, usize) {
        // Vector methods see 3 pairs per triple against 7 ratios per box
        // triple; matching the supervision needs ⌈7/3 · 10⌉ triples.
        let default = if matches!(self.method, Method::Set2Vec | Method::Set2VecPlus) { 24 } else { 10 };
        (self.pos.unwrap_or(default), self.neg.unwrap_or(default))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let (num_pos, num_neg) = self.triples_per_set();
        TrainConfig {
            d: self.d,
            beta: self.beta,
            lr: self.lr,
            batch_size: self.batch,
            epochs: self.epochs,
            num_pos,
            num_neg,
            seed,
            resample_each_epoch: self.resample,
            mean_over_ratios: self.mean_over_ratios,
            val_pairs: self.val_pairs,
        }
    }

    pub fn quant_config(&self, seed: u64) -> QuantTrainConfig {
        QuantTrainConfig {
            base: self.train_config(seed),
            num_subspaces: self.subspaces,
            num_keys: self.keys,
            lambda: if self.method == Method::Set2BoxBq { 0.0 } else { self.lambda },
            tau: self.tau,
        }
    }

    pub fn pq_config(&self, seed: u64) -> PqConfig {
        PqConfig {
            base: self.train_config(seed),
            num_subspaces: self.subspaces,
            num_keys: self.keys,
            lambda: self.lambda,
            tau: self.tau,
        }
    }

    pub fn vec_config(&self, seed: u64, measure: Measure) -> VecConfig {
        VecConfig {
            base: self.train_config(seed),
            measure,
        }
    }

    /// Method-specific checks that do not need the corpus.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) && self.split.is_none() {
            return bad(format!("train_frac must be in (0, 1), got {}", self.train_frac));
        }
        match self.method {
            Method::Set2Bin => Ok(()),
            Method::Set2VecPlus if self.features.is_none() => bad("set2vec+ needs entity features (`features`)".into()),
            Method::Set2Vec | Method::Set2VecPlus if self.vec_measures.is_empty() => bad("no measures to train".into()),
            Method::Set2BoxPlus | Method::Set2BoxBq => self.quant_config(0).validate().map_err(CliError::from),
            Method::Set2BoxPq => self.pq_config(0).validate().map_err(CliError::from),
            _ => self.train_config(0).validate().map_err(CliError::from),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("method = set2box+\n# comment\n\nd=32\nD = 16\nK=30\nseeds = 0,1,2\nmeasures = ji, oc\ncorpus = a b.sets\n")
            .unwrap();
        assert_eq!(c.method, Method::Set2BoxPlus);
        assert_eq!(c.measures, vec![Measure::Overlap, Measure::Jaccard]);
        assert_eq!(c.corpus.as_deref(), Some(Path::new("a b.sets")));
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("colour = red").is_err());
        assert!(c.apply_text("d = four").is_err());
        assert!(c.apply_text("just words").is_err());
        assert!(c.apply_text("seeds = ").is_err());
    }

    #[test]
    fn method_specific_validation() {
        let mut c = RunConfig {
            method: Method::Set2BoxPlus,
            d: 32,
            subspaces: 5,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        c.subspaces = 16;
        assert!(c.validate().is_ok());
        c.method = Method::Set2Bin;
        c.subspaces = 5;
        assert!(c.validate().is_ok());
        c.method = Method::Set2VecPlus;
        assert!(c.validate().is_err());
        assert_eq!(RunConfig { method: Method::Set2Vec, ..c }.train_config(0).num_pos, 24);
    }
}
