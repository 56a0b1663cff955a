use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use set2box::{CostParams, Method, SetCorpus, Split};
use set2box_cli::commands::{self, EvalOptions, InputFormat};
use set2box_cli::config::{RunConfig, OUT_ENV};
use set2box_cli::CliError;

#[derive(Parser)]
#[command(name = "set2box", version, about = "Box embeddings of sets: train, compress, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Canonicalize a corpus (or convert ratings) and write a seeded split.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Sets)]
        format: Format,
        /// Ratings strictly above this value are kept.
        #[arg(long, default_value_t = 3.0)]
        min_rating: f64,
        #[arg(long, default_value_t = 0.2)]
        train_frac: f64,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long, env = OUT_ENV, default_value = "runs")]
        out: PathBuf,
    },
    /// Train a method for every configured seed.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Seeds trained in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate the seeds of a run directory.
    Eval {
        #[command(flatten)]
        args: EvalArgs,
        /// Seeds evaluated in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Train and evaluate a hyperparameter grid.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated learning rates.
        #[arg(long)]
        lrs: Option<String>,
        #[arg(long)]
        betas: Option<String>,
        #[arg(long)]
        lambdas: Option<String>,
        /// Grid points trained in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Print the planned runs and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Print encoding costs in bits.
    Cost {
        /// A method name or `all`.
        #[arg(long, default_value = "all")]
        method: String,
        /// Number of sets; defaults to the size of `--corpus`.
        #[arg(long)]
        num_sets: Option<u64>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        d: u64,
        #[arg(long = "D", default_value_t = 16)]
        subspaces: u64,
        #[arg(long = "K", default_value_t = 30)]
        keys: u64,
    },
    /// Estimated Jaccard nearest neighbors of one set within its split.
    Knn {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        set: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Which trained seed to use (default: the first).
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Sets,
    Ratings,
}

/// Run settings; flags override the config file, which overrides defaults.
#[derive(Args, Default)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    corpus: Option<String>,
    /// Split labels aligned with the corpus.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    train_frac: Option<String>,
    #[arg(long)]
    split_seed: Option<String>,
    /// Output directory (default: $SET2BOX_OUT or `runs`).
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    d: Option<String>,
    /// Subspaces.
    #[arg(long = "D")]
    subspaces: Option<String>,
    /// Keys per subspace.
    #[arg(long = "K")]
    keys: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    pos: Option<String>,
    #[arg(long)]
    neg: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    val_pairs: Option<String>,
    /// Measures Set2Vec is trained for (comma-separated or `all`).
    #[arg(long)]
    vec_measures: Option<String>,
    /// Entity feature matrix for set2vec+.
    #[arg(long)]
    features: Option<String>,
    /// Any other config key, as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    extra: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        let flags = [
            ("method", &self.method),
            ("corpus", &self.corpus),
            ("split", &self.split),
            ("train_frac", &self.train_frac),
            ("split_seed", &self.split_seed),
            ("out", &self.out),
            ("d", &self.d),
            ("D", &self.subspaces),
            ("K", &self.keys),
            ("beta", &self.beta),
            ("lambda", &self.lambda),
            ("tau", &self.tau),
            ("lr", &self.lr),
            ("epochs", &self.epochs),
            ("batch", &self.batch),
            ("pos", &self.pos),
            ("neg", &self.neg),
            ("seeds", &self.seeds),
            ("val_pairs", &self.val_pairs),
            ("vec_measures", &self.vec_measures),
            ("features", &self.features),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        for kv in &self.extra {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Comma-separated measures (oc, cs, ji, di) or `all`.
    #[arg(long)]
    measures: Option<String>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    split: Option<String>,
    /// Comma-separated k values for quality@k.
    #[arg(long)]
    quality_k: Option<String>,
    #[arg(long)]
    anchors: Option<usize>,
    /// Also measure per-pair estimation latency.
    #[arg(long)]
    timing: bool,
}

impl EvalArgs {
    fn options(&self) -> Result<EvalOptions, CliError> {
        let mut scratch = RunConfig::default();
        let mut opts = EvalOptions {
            pairs: self.pairs,
            anchors: self.anchors,
            timing: self.timing,
            ..EvalOptions::default()
        };
        if let Some(m) = &self.measures {
            scratch.set("measures", m)?;
            opts.measures = Some(scratch.measures.clone());
        }
        if let Some(s) = &self.split {
            opts.split = Some(s.parse::<Split>()?);
        }
        if let Some(k) = &self.quality_k {
            scratch.set("quality_k", k)?;
            opts.quality_k = Some(scratch.quality_k.clone());
        }
        Ok(opts)
    }
}

fn print_reports(reports: &[set2box::eval::EvalReport]) {
    println!("{}", set2box::eval::REPORT_HEADER);
    for r in reports {
        print!("{}", r.csv_rows());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest {
            input,
            format,
            min_rating,
            train_frac,
            split_seed,
            out,
        } => {
            let format = match format {
                Format::Sets => InputFormat::Sets,
                Format::Ratings => InputFormat::Ratings,
            };
            let (sets, split) = commands::cmd_ingest(&input, format, min_rating, train_frac, split_seed, &out)?;
            println!("wrote {} and {}", sets.display(), split.display());
        }
        Command::Train { run, jobs } => {
            let cfg = run.resolve()?;
            for dir in commands::cmd_train(&cfg, jobs)? {
                println!("wrote {}", dir.display());
            }
        }
        Command::Eval { args, jobs } => {
            let reports = commands::cmd_eval(&args.run, &args.options()?, jobs)?;
            print_reports(&reports);
        }
        Command::Sweep {
            run,
            lrs,
            betas,
            lambdas,
            jobs,
            dry_run,
        } => {
            let mut cfg = run.resolve()?;
            for (k, v) in [("lrs", lrs), ("betas", betas), ("lambdas", lambdas)] {
                if let Some(v) = v {
                    cfg.set(k, &v)?;
                }
            }
            cfg.validate()?;
            let grid = commands::sweep_grid(&cfg)?;
            if dry_run {
                for p in &grid {
                    println!("{}", commands::describe(p, cfg.method));
                }
                println!("{} runs x {} seeds", grid.len(), cfg.seeds.len());
                return Ok(());
            }
            let results = commands::cmd_sweep(&cfg, jobs)?;
            println!("wrote {} ({} runs)", cfg.out.join(commands::SWEEP_FILE).display(), results.len());
        }
        Command::Cost {
            method,
            num_sets,
            corpus,
            d,
            subspaces,
            keys,
        } => {
            let methods: Vec<Method> = if method == "all" {
                Method::ALL.to_vec()
            } else {
                method
                    .split(',')
                    .map(|m| m.parse::<Method>().map_err(CliError::from))
                    .collect::<Result<_, _>>()?
            };
            let num_sets = match (num_sets, corpus) {
                (Some(n), _) => n,
                (None, Some(p)) => load_sets(&p)?.len() as u64,
                (None, None) => return Err(CliError::Config("give --num-sets or --corpus".into())),
            };
            let p = CostParams {
                num_sets,
                d,
                num_subspaces: subspaces,
                num_keys: keys,
            };
            print!("{}", commands::cmd_cost(&methods, p)?);
        }
        Command::Knn { run, set, k, seed } => {
            println!("rank,set,estimated_ji,exact_ji");
            for (i, n) in commands::cmd_knn(&run, seed, set, k)?.iter().enumerate() {
                println!("{},{},{},{}", i + 1, n.set, n.estimated, n.exact);
            }
        }
    }
    Ok(())
}

fn load_sets(p: &Path) -> Result<SetCorpus, CliError> {
    if !p.exists() {
        return Err(CliError::Config(format!("corpus {} does not exist", p.display())));
    }
    Ok(SetCorpus::load(p)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Config(_) = e {
                eprintln!("run `set2box --help` for usage");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

