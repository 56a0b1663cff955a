//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use set2box::corpus::EntityId;
use set2box::eval::{mse_eval, quality_at_k, EvalReport, QualityRow, QUALITY_HEADER, REPORT_HEADER};
use set2box::{encoding_cost, CostParams, Measure, Method, SetCorpus, Split, TrainLog};

use crate::artifact::{train_method, Trained};
use crate::config::RunConfig;
use crate::CliError;

pub const CONFIG_FILE: &str = "config.txt";
pub const SPLIT_FILE: &str = "split.txt";
pub const EVAL_FILE: &str = "eval.csv";
pub const QUALITY_FILE: &str = "quality.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const COST_FILE: &str = "cost.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Applies `f` to every item on up to `jobs` threads; results keep the
/// input order, so the output does not depend on `jobs`.
pub fn par_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every item ran")).collect()
}

/// Set sizes probed by `--timing`.
pub const TIMING_SIZES: [usize; 3] = [10, 100, 1000];

fn read_corpus(path: &Path) -> Result<SetCorpus, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("corpus {} does not exist", path.display())));
    }
    Ok(SetCorpus::load(path)?)
}

/// The configured corpus with its split: labels from `labels` if given,
/// else from `cfg.split`, else a fresh seeded split.
pub fn load_corpus(cfg: &RunConfig, labels: Option<&Path>) -> Result<SetCorpus, CliError> {
    let corpus = read_corpus(cfg.corpus_path()?)?;
    match labels.or(cfg.split.as_deref()) {
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| CliError::Config(format!("cannot open split {}: {e}", p.display())))?;
            Ok(corpus.with_split_labels(SetCorpus::read_split_labels(f)?)?)
        }
        None => Ok(corpus.split(cfg.train_frac, cfg.split_seed)?),
    }
}

/// Input formats understood by `ingest`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    /// One set per line.
    Sets,
    /// `user item rating [timestamp]` rows (tab, comma, whitespace or `::`
    /// separated); every user becomes the set of items rated above a
    /// threshold.
    Ratings,
}

/// Sets of items each user rated above `min_rating`. Users and items are
/// renumbered densely in increasing order of their original ids; users with
/// no such item are dropped.
pub fn ratings_to_sets(text: &str, min_rating: f64) -> Result<SetCorpus, CliError> {
    let mut by_user: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c == ':' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let bad = || CliError::Config(format!("ratings line {}: expected `user item rating`", n + 1));
        if fields.len() < 3 {
            return Err(bad());
        }
        let user: u64 = fields[0].parse().map_err(|_| bad())?;
        let item: u64 = fields[1].parse().map_err(|_| bad())?;
        let rating: f64 = fields[2].parse().map_err(|_| bad())?;
        if rating > min_rating {
            by_user.entry(user).or_default().push(item);
        }
    }
    let mut items: Vec<u64> = by_user.values().flatten().copied().collect();
    items.sort_unstable();
    items.dedup();
    let id = |i: &u64| items.binary_search(i).unwrap() as EntityId;
    let sets: Vec<Vec<EntityId>> = by_user.values().map(|v| v.iter().map(id).collect()).collect();
    if sets.is_empty() {
        return Err(CliError::Config("no ratings above the threshold".into()));
    }
    Ok(SetCorpus::from_sets(sets)?)
}

/// Writes `corpus.sets` and `corpus.split` into `out`.
pub fn cmd_ingest(
    input: &Path,
    format: InputFormat,
    min_rating: f64,
    train_frac: f64,
    split_seed: u64,
    out: &Path,
) -> Result<(PathBuf, PathBuf), CliError> {
    let corpus = match format {
        InputFormat::Sets => read_corpus(input)?,
        InputFormat::Ratings => {
            let text = fs::read_to_string(input)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", input.display())))?;
            ratings_to_sets(&text, min_rating)?
        }
    };
    let corpus = corpus.split(train_frac, split_seed)?;
    fs::create_dir_all(out)?;
    let (sets, split) = (out.join("corpus.sets"), out.join("corpus.split"));
    corpus.write(fs::File::create(&sets)?)?;
    corpus.write_split_labels(fs::File::create(&split)?)?;
    Ok((sets, split))
}

#[derive(Serialize)]
struct Sidecar<'a> {
    method: Method,
    seed: u64,
    config: &'a RunConfig,
    logs: Vec<LabelledLog<'a>>,
}

#[derive(Serialize)]
struct LabelledLog<'a> {
    label: &'a str,
    log: &'a TrainLog,
}

pub fn seed_dir(run: &Path, seed: u64) -> PathBuf {
    run.join(format!("seed-{seed}"))
}

/// Trains every configured seed into `<out>/seed-<s>/`, next to a copy of
/// the resolved config and the split labels. Seeds run `jobs` at a time.
pub fn cmd_train(cfg: &RunConfig, jobs: usize) -> Result<Vec<PathBuf>, CliError> {
    cfg.validate()?;
    let corpus = load_corpus(cfg, None)?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join(CONFIG_FILE), cfg.to_text())?;
    corpus.write_split_labels(fs::File::create(cfg.out.join(SPLIT_FILE))?)?;
    par_map(&cfg.seeds, jobs, |&seed| train_seed(&corpus, cfg, seed)).into_iter().collect()
}

fn train_seed(corpus: &SetCorpus, cfg: &RunConfig, seed: u64) -> Result<PathBuf, CliError> {
    let dir = seed_dir(&cfg.out, seed);
    fs::create_dir_all(&dir)?;
    let (trained, logs) = train_method(corpus, cfg, seed)?;
    trained.save(&dir)?;
    for (label, log) in &logs {
        let name = if label == "model" { "train_log.csv".to_string() } else { format!("train_log-{label}.csv") };
        fs::write(dir.join(name), log.to_csv())?;
    }
    let sidecar = Sidecar {
        method: cfg.method,
        seed,
        config: cfg,
        logs: logs.iter().map(|(label, log)| LabelledLog { label, log }).collect(),
    };
    fs::write(dir.join("model.json"), serde_json::to_string_pretty(&sidecar).expect("serializable"))?;
    Ok(dir)
}

pub fn cost_params(cfg: &RunConfig, num_sets: usize) -> CostParams {
    CostParams {
        num_sets: num_sets as u64,
        d: cfg.d as u64,
        num_subspaces: cfg.subspaces as u64,
        num_keys: cfg.keys as u64,
    }
}

/// Overrides `eval` accepts on top of a run's saved config.
#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub measures: Option<Vec<Measure>>,
    pub pairs: Option<usize>,
    pub split: Option<Split>,
    pub quality_k: Option<Vec<usize>>,
    pub anchors: Option<usize>,
    pub timing: bool,
}

/// A saved run's config with `opts` applied.
pub fn run_config(run: &Path, opts: &EvalOptions) -> Result<RunConfig, CliError> {
    let path = run.join(CONFIG_FILE);
    if !path.exists() {
        return Err(CliError::Config(format!("{} is not a run directory (no {CONFIG_FILE})", run.display())));
    }
    let mut cfg = RunConfig::load(&path)?;
    if let Some(m) = &opts.measures {
        cfg.measures = m.clone();
    }
    if let Some(p) = opts.pairs {
        cfg.pairs = p;
    }
    if let Some(s) = opts.split {
        cfg.eval_split = s;
    }
    if let Some(k) = &opts.quality_k {
        cfg.quality_k = k.clone();
    }
    if let Some(a) = opts.anchors {
        cfg.anchors = a;
    }
    cfg.timing |= opts.timing;
    Ok(cfg)
}

/// Evaluates one trained representation; the pair sample is seeded by the
/// training seed.
pub fn evaluate(trained: &Trained, corpus: &SetCorpus, cfg: &RunConfig, seed: u64) -> Result<EvalReport, CliError> {
    let est = trained.estimator(corpus)?;
    let mut report = mse_eval(corpus, est.as_ref(), cfg.method.name(), cfg.eval_split, cfg.pairs, seed, &cfg.measures)?;
    let cost = encoding_cost(cfg.method, cost_params(cfg, corpus.len()))?;
    report.bits_real = cost.real;
    report.bits_packed = cost.packed;
    for &k in &cfg.quality_k {
        let q = quality_at_k(corpus, est.as_ref(), cfg.eval_split, k, cfg.anchors, seed)?;
        report.quality.push(QualityRow {
            k,
            quality: q.mean,
            skipped: q.skipped,
        });
    }
    if cfg.timing {
        let universe = corpus.num_entities();
        let sizes: Vec<usize> = TIMING_SIZES.iter().copied().filter(|&s| s <= universe).collect();
        report.timings = trained.timing(&sizes, universe, seed)?.rows;
    }
    Ok(report)
}

/// Evaluates every seed of a run directory (`jobs` at a time) and writes
/// the CSV reports into it.
pub fn cmd_eval(run: &Path, opts: &EvalOptions, jobs: usize) -> Result<Vec<EvalReport>, CliError> {
    let cfg = run_config(run, opts)?;
    let corpus = load_corpus(&cfg, Some(&run.join(SPLIT_FILE)))?;
    let reports = par_map(&cfg.seeds, jobs, |&seed| {
        let trained = Trained::load(&seed_dir(run, seed), cfg.method, &cfg.vec_measures)?;
        evaluate(&trained, &corpus, &cfg, seed)
    })
    .into_iter()
    .collect::<Result<Vec<_>, CliError>>()?;
    write_reports(run, &reports, &cfg, &corpus)?;
    Ok(reports)
}

fn write_reports(dir: &Path, reports: &[EvalReport], cfg: &RunConfig, corpus: &SetCorpus) -> Result<(), CliError> {
    let mut eval = format!("{REPORT_HEADER}\n");
    for r in reports {
        eval.push_str(&r.csv_rows());
    }
    fs::write(dir.join(EVAL_FILE), eval)?;
    if reports.iter().any(|r| !r.quality.is_empty()) {
        let mut q = format!("{QUALITY_HEADER}\n");
        for r in reports {
            q.push_str(&r.quality_rows());
        }
        fs::write(dir.join(QUALITY_FILE), q)?;
    }
    if reports.iter().any(|r| !r.timings.is_empty()) {
        let mut t = String::from("method,seed,size,median_ns\n");
        for r in reports {
            for row in &r.timings {
                writeln!(t, "{},{},{},{}", r.method, r.seed, row.size, row.median_ns).unwrap();
            }
        }
        fs::write(dir.join(TIMING_FILE), t)?;
    }
    fs::write(dir.join(COST_FILE), cost_table(cfg, corpus)?)?;
    Ok(())
}

/// Costs of storing every set, and of storing each split alone.
pub fn cost_table(cfg: &RunConfig, corpus: &SetCorpus) -> Result<String, CliError> {
    let mut out = String::from("method,scope,num_sets,bits_real,bits_packed\n");
    let scopes = [
        ("all", corpus.len()),
        ("train", corpus.ids_in(Split::Train).len()),
        ("val", corpus.ids_in(Split::Val).len()),
        ("test", corpus.ids_in(Split::Test).len()),
    ];
    for (scope, n) in scopes {
        let c = encoding_cost(cfg.method, cost_params(cfg, n))?;
        writeln!(out, "{},{scope},{n},{},{}", cfg.method, c.real, c.packed).unwrap();
    }
    Ok(out)
}

/// One point of a sweep grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub lr: f64,
    pub beta: f64,
    pub lambda: f64,
    pub dir: PathBuf,
}

/// The grid `cfg.method` is searched over: learning rates, volume
/// sharpness and joint weight, as far as the method uses them.
pub fn sweep_grid(cfg: &RunConfig) -> Result<Vec<GridPoint>, CliError> {
    let one_lr = [cfg.lr];
    let one_beta = [cfg.beta];
    let one_lambda = [cfg.lambda];
    let (lrs, betas, lambdas): (&[f64], &[f64], &[f64]) = match cfg.method {
        Method::Set2Bin => (&one_lr, &one_beta, &one_lambda),
        Method::Set2Vec | Method::Set2VecPlus | Method::Set2BoxOrder => (&cfg.lrs, &one_beta, &one_lambda),
        Method::Set2Box | Method::Set2BoxBq => (&cfg.lrs, &cfg.betas, &one_lambda),
        Method::Set2BoxPlus | Method::Set2BoxPq => (&cfg.lrs, &cfg.betas, &cfg.lambdas),
    };
    let mut grid = Vec::new();
    for &lr in lrs {
        for &beta in betas {
            for &lambda in lambdas {
                let index = grid.len();
                grid.push(GridPoint {
                    index,
                    lr,
                    beta,
                    lambda,
                    dir: cfg.out.join(format!("run-{index:03}")),
                });
            }
        }
    }
    if grid.is_empty() {
        return Err(CliError::Config("the sweep grid is empty".into()));
    }
    Ok(grid)
}

pub fn describe(p: &GridPoint, method: Method) -> String {
    format!("run {:03}: {method} lr={} beta={} lambda={} -> {}", p.index, p.lr, p.beta, p.lambda, p.dir.display())
}

/// Per-seed val and test errors of one grid point.
#[derive(Clone, Debug)]
pub struct SweepResult {
    pub point: GridPoint,
    pub val: Vec<EvalReport>,
    pub test: Vec<EvalReport>,
}

impl SweepResult {
    pub fn mean_val(&self) -> f64 {
        self.val.iter().map(EvalReport::mean_mse).sum::<f64>() / self.val.len().max(1) as f64
    }
}

fn run_point(base: &RunConfig, p: &GridPoint) -> Result<SweepResult, CliError> {
    let cfg = RunConfig {
        lr: p.lr,
        beta: p.beta,
        lambda: p.lambda,
        out: p.dir.clone(),
        ..base.clone()
    };
    cmd_train(&cfg, 1)?;
    let corpus = load_corpus(&cfg, Some(&cfg.out.join(SPLIT_FILE)))?;
    let (mut val, mut test) = (Vec::new(), Vec::new());
    for &seed in &cfg.seeds {
        let trained = Trained::load(&seed_dir(&cfg.out, seed), cfg.method, &cfg.vec_measures)?;
        for (split, out) in [(Split::Val, &mut val), (Split::Test, &mut test)] {
            let c = RunConfig {
                eval_split: split,
                quality_k: Vec::new(),
                timing: false,
                ..cfg.clone()
            };
            out.push(evaluate(&trained, &corpus, &c, seed)?);
        }
    }
    write_reports(&cfg.out, &test, &cfg, &corpus)?;
    Ok(SweepResult {
        point: p.clone(),
        val,
        test,
    })
}

/// Trains and evaluates every grid point, `jobs` at a time, and writes
/// `sweep.csv` with the point of lowest mean val MSE flagged.
pub fn cmd_sweep(cfg: &RunConfig, jobs: usize) -> Result<Vec<SweepResult>, CliError> {
    cfg.validate()?;
    let grid = sweep_grid(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    let results: Vec<SweepResult> = par_map(&grid, jobs, |p| run_point(cfg, p)).into_iter().collect::<Result<_, _>>()?;
    let best = results
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mean_val().total_cmp(&b.1.mean_val()))
        .map(|(i, _)| i);
    let mut csv = String::from("run,method,lr,beta,lambda,seed,split,oc,cs,ji,di,mean,best\n");
    for (i, r) in results.iter().enumerate() {
        for (split, reports) in [("val", &r.val), ("test", &r.test)] {
            for rep in reports {
                let m = |x| rep.mse_of(x).map(|v| v.to_string()).unwrap_or_default();
                writeln!(
                    csv,
                    "{},{},{},{},{},{},{split},{},{},{},{},{},{}",
                    r.point.index,
                    cfg.method,
                    r.point.lr,
                    r.point.beta,
                    r.point.lambda,
                    rep.seed,
                    m(Measure::Overlap),
                    m(Measure::Cosine),
                    m(Measure::Jaccard),
                    m(Measure::Dice),
                    rep.mean_mse(),
                    Some(i) == best
                )
                .unwrap();
            }
        }
    }
    fs::write(cfg.out.join(SWEEP_FILE), csv)?;
    Ok(results)
}

/// `method,bits_real,bits_packed` rows.
pub fn cmd_cost(methods: &[Method], p: CostParams) -> Result<String, CliError> {
    let mut out = String::from("method,bits_real,bits_packed\n");
    for &m in methods {
        let c = encoding_cost(m, p)?;
        writeln!(out, "{m},{},{}", c.real, c.packed).unwrap();
    }
    Ok(out)
}

/// Estimated nearest neighbors of one set by Jaccard, within its split.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub set: usize,
    pub estimated: f64,
    pub exact: f64,
}

pub fn cmd_knn(run: &Path, seed: Option<u64>, set: usize, k: usize) -> Result<Vec<Neighbor>, CliError> {
    let cfg = run_config(run, &EvalOptions::default())?;
    let corpus = load_corpus(&cfg, Some(&run.join(SPLIT_FILE)))?;
    if set >= corpus.len() {
        return Err(CliError::Config(format!("set {set} out of range for {} sets", corpus.len())));
    }
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let trained = Trained::load(&seed_dir(run, seed), cfg.method, &cfg.vec_measures)?;
    let est = trained.estimator(&corpus)?;
    let m = Measure::Jaccard;
    if !est.supports(m) {
        return Err(CliError::Config(format!("{} was not trained for {m}", cfg.method)));
    }
    let mut all: Vec<Neighbor> = corpus
        .ids_in(corpus.split_of(set))
        .into_iter()
        .filter(|&b| b != set)
        .map(|b| Neighbor {
            set: b,
            estimated: est.estimate_pair(set, b, m),
            exact: corpus.exact_similarity(set, b, m),
        })
        .collect();
    all.sort_by(|a, b| b.estimated.total_cmp(&a.estimated).then(a.set.cmp(&b.set)));
    all.truncate(k);
    Ok(all)
}
