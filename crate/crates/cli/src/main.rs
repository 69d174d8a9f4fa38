use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kgimpute_core::imputer::{ImputeMode, Provenance};
use kgimpute_core::pipeline::{self, PipelineConfig};
use kgimpute_core::synthetic::{self, SyntheticConfig};
use kgimpute_core::trainer::Optimizer;

const LONG_VERSION: &str = if cfg!(debug_assertions) {
    concat!(
        env!("CARGO_PKG_VERSION"),
        " (debug build, kgimpute-core ",
        env!("CARGO_PKG_VERSION"),
        ")"
    )
} else {
    concat!(
        env!("CARGO_PKG_VERSION"),
        " (release build, kgimpute-core ",
        env!("CARGO_PKG_VERSION"),
        ")"
    )
};

/// Impute embeddings for out-of-vocabulary words from a definition-overlap
/// knowledge graph.
#[derive(Parser)]
#[command(name = "kgimpute", version, long_version = LONG_VERSION)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch encyclopedia summaries and dictionary definitions into a grounding corpus
    Fetch(FetchArgs),
    /// Build the knowledge graph from embeddings, grounding corpus and frequency list
    BuildGraph(BuildGraphArgs),
    /// Train the graph convolutional network on a saved graph
    Train(TrainArgs),
    /// Write vectors for OOV words using a trained model or the node-feature baseline
    Impute(ImputeArgs),
    /// Score embeddings on word-pair similarity datasets
    Eval(EvalArgs),
    /// Run build-graph, train, impute and eval (and fetch when configured)
    RunAll(RunAllArgs),
    /// Write a small synthetic fixture and a matching run-all config
    Synth(SynthArgs),
}

#[derive(Args, Default)]
struct ConfigArg {
    /// key = value config file; flags given on the command line win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Default)]
struct TokenizerOpts {
    /// Keep letter case in grounding text and dataset lookups
    #[arg(long)]
    keep_case: bool,
    /// Keep digit-only tokens
    #[arg(long)]
    keep_digits: bool,
    /// File with one stopword per line
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Args, Default)]
struct GraphOpts {
    /// Jaccard threshold; an edge needs a strictly larger coefficient
    #[arg(long)]
    eta: Option<f64>,
    /// Number of most frequent words skipped before anchor selection
    #[arg(long)]
    skip_top: Option<usize>,
    /// Number of anchor words with pre-trained vectors
    #[arg(long)]
    vprime: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args, Default)]
struct TrainOpts {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Number of graph convolution layers
    #[arg(long)]
    layers: Option<usize>,
    /// Comma-separated widths of the hidden layers (defaults to the embedding dimension)
    #[arg(long, value_delimiter = ',')]
    hidden_dims: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of supervised nodes held out for early stopping (0 disables it)
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Gnn,
    NodeFeature,
}

impl From<ModeArg> for ImputeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Gnn => ImputeMode::Gnn,
            ModeArg::NodeFeature => ImputeMode::NodeFeature,
        }
    }
}

#[derive(Args)]
struct FetchArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Word list, one word per line
    #[arg(long)]
    words: Option<PathBuf>,
    /// Cache directory
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Output grounding corpus
    #[arg(long)]
    out: PathBuf,
    /// Serve from the cache only
    #[arg(long)]
    offline: bool,
    /// Maximum requests per second
    #[arg(long)]
    max_rps: Option<f64>,
}

#[derive(Args)]
struct BuildGraphArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    freq: Option<PathBuf>,
    /// OOV word list; when absent, dataset words without vectors are used
    #[arg(long)]
    oov: Option<PathBuf>,
    /// Similarity dataset used to derive OOV words (repeatable)
    #[arg(long)]
    dataset: Vec<PathBuf>,
    #[command(flatten)]
    graph: GraphOpts,
    #[command(flatten)]
    tokenizer: TokenizerOpts,
    /// Output graph file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    graph: PathBuf,
    /// Output model file
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch losses as JSON lines
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    train: TrainOpts,
}

#[derive(Args)]
struct ImputeArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    graph: PathBuf,
    /// Trained model (required for --mode gnn)
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Words to impute; defaults to every OOV node in the graph
    #[arg(long)]
    oov: Option<PathBuf>,
    /// Output embeddings: the input table plus imputed vectors
    #[arg(long)]
    out: PathBuf,
    /// JSON report with per-word provenance and warnings
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    embeddings: PathBuf,
    /// Similarity dataset (repeatable)
    #[arg(long)]
    dataset: Vec<PathBuf>,
    /// Do not fall back to the lowercased word on a lookup miss
    #[arg(long)]
    keep_case: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunAllArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    freq: Option<PathBuf>,
    #[arg(long)]
    oov: Option<PathBuf>,
    /// Replaces the datasets listed in the config file (repeatable)
    #[arg(long)]
    dataset: Vec<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[command(flatten)]
    graph: GraphOpts,
    #[command(flatten)]
    tokenizer: TokenizerOpts,
    #[command(flatten)]
    train: TrainOpts,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Generator seed
    #[arg(long, default_value_t = SyntheticConfig::default().seed)]
    seed: u64,
}

fn load_config(arg: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = arg {
        cfg.apply_file(path)?;
    }
    Ok(cfg)
}

fn set_some<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

impl TokenizerOpts {
    fn apply(self, cfg: &mut PipelineConfig) {
        if self.keep_case {
            cfg.lowercase = false;
        }
        if self.keep_digits {
            cfg.keep_digits = true;
        }
        set_some(&mut cfg.stopwords, self.stopwords);
    }
}

impl GraphOpts {
    fn apply(self, cfg: &mut PipelineConfig) {
        cfg.eta = self.eta.unwrap_or(cfg.eta);
        cfg.skip_top = self.skip_top.unwrap_or(cfg.skip_top);
        cfg.v_prime_size = self.vprime.unwrap_or(cfg.v_prime_size);
    }
}

impl TrainOpts {
    fn apply(self, cfg: &mut PipelineConfig) {
        let t = &mut cfg.train;
        t.epochs = self.epochs.unwrap_or(t.epochs);
        t.learning_rate = self.lr.unwrap_or(t.learning_rate);
        t.layers = self.layers.unwrap_or(t.layers);
        set_some(&mut t.hidden_dims, self.hidden_dims);
        t.seed = self.seed.unwrap_or(t.seed);
        t.val_fraction = self.val_fraction.unwrap_or(t.val_fraction);
        t.patience = self.patience.unwrap_or(t.patience);
        match self.optimizer {
            Some(OptimizerArg::Adam) => t.optimizer = Optimizer::adam(),
            Some(OptimizerArg::Sgd) => t.optimizer = Optimizer::Sgd,
            None => {}
        }
    }
}

fn fetch(args: FetchArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(args.config.config.as_deref())?;
    set_some(&mut cfg.fetch_words, args.words);
    set_some(&mut cfg.cache_dir, args.cache);
    if args.offline {
        cfg.fetch.offline = true;
    }
    cfg.fetch.max_rps = args.max_rps.unwrap_or(cfg.fetch.max_rps);
    let counts = pipeline::fetch(&cfg, &args.out)?;
    println!(
        "fetched {} words: {} ok, {} not found, {} errors",
        counts.ok + counts.not_found + counts.error,
        counts.ok,
        counts.not_found,
        counts.error
    );
    Ok(())
}

fn build_graph(args: BuildGraphArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(args.config.config.as_deref())?;
    set_some(&mut cfg.embeddings, args.embeddings);
    set_some(&mut cfg.corpus, args.corpus);
    set_some(&mut cfg.freq, args.freq);
    set_some(&mut cfg.oov, args.oov);
    if !args.dataset.is_empty() {
        cfg.datasets = args.dataset;
    }
    args.graph.apply(&mut cfg);
    args.tokenizer.apply(&mut cfg);
    let g = pipeline::build_graph(&cfg, &args.out)?;
    println!(
        "graph: {} nodes, {} supervised, {} edges, {} without grounding",
        g.len(),
        g.supervised().len(),
        g.edge_count(),
        g.missing_grounding().len()
    );
    Ok(())
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(args.config.config.as_deref())?;
    args.train.apply(&mut cfg);
    let (_, report) = pipeline::train(&cfg, &args.graph, &args.out, args.report.as_deref())?;
    if let Some(best) = report.best() {
        let val = best.val_mse.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.6e}"));
        println!(
            "trained {} epochs{}; best epoch {}: train mse {:.6e}, val mse {val}",
            report.epochs.len(),
            if report.stopped_early { " (stopped early)" } else { "" },
            best.epoch,
            best.train_mse
        );
    }
    Ok(())
}

fn impute(args: ImputeArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(args.config.config.as_deref())?;
    set_some(&mut cfg.embeddings, args.embeddings);
    set_some(&mut cfg.oov, args.oov);
    if let Some(mode) = args.mode {
        cfg.mode = mode.into();
    }
    let result = pipeline::impute(
        &cfg,
        &args.graph,
        args.model.as_deref(),
        &args.out,
        args.report.as_deref(),
    )?;
    println!(
        "imputed {} words ({} pre-trained, {} zero), {} warnings",
        result.count(Provenance::Imputed) + result.count(Provenance::NodeFeatureBaseline),
        result.count(Provenance::Pretrained),
        result.count(Provenance::Zero),
        result.warnings.len()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(args.config.config.as_deref())?;
    if !args.dataset.is_empty() {
        cfg.datasets = args.dataset;
    }
    if args.keep_case {
        cfg.lowercase = false;
    }
    if cfg.datasets.is_empty() {
        bail!("eval: no --dataset given");
    }
    let results = pipeline::eval(&cfg, &args.embeddings, &args.out)?;
    print_summary(&results);
    Ok(())
}

fn print_summary(results: &[kgimpute_core::EvalResult]) {
    println!(
        "{:<20} {:>8} {:>8} {:>13} {:>13}",
        "dataset", "pearson", "spearman", "missed words", "missed pairs"
    );
    for r in results {
        println!(
            "{:<20} {:>8.1} {:>8.1} {:>12.2}% {:>12.2}%",
            r.dataset,
            100.0 * r.pearson,
            100.0 * r.spearman,
            r.missed_words_pct,
            r.missed_pairs_pct
        );
    }
}

fn run_all(args: RunAllArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(Some(&args.config))?;
    set_some(&mut cfg.embeddings, args.embeddings);
    set_some(&mut cfg.corpus, args.corpus);
    set_some(&mut cfg.freq, args.freq);
    set_some(&mut cfg.oov, args.oov);
    if let Some(dir) = args.out_dir {
        cfg.out_dir = dir;
    }
    if !args.dataset.is_empty() {
        cfg.datasets = args.dataset;
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode.into();
    }
    args.graph.apply(&mut cfg);
    args.tokenizer.apply(&mut cfg);
    args.train.apply(&mut cfg);
    if cfg.datasets.is_empty() {
        bail!("run-all: no dataset configured");
    }
    let artifacts = pipeline::run_all(&cfg)?;
    let results: std::collections::BTreeMap<String, serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(&artifacts.results).context("reading results")?)?;
    println!("artifacts written to {}", cfg.out_dir.display());
    for (name, row) in results {
        println!(
            "{name}: pearson {:.1} spearman {:.1}",
            100.0 * row["pearson"].as_f64().unwrap_or(f64::NAN),
            100.0 * row["spearman"].as_f64().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn synth(args: SynthArgs) -> anyhow::Result<()> {
    let world = synthetic::generate(&SyntheticConfig {
        seed: args.seed,
        ..SyntheticConfig::default()
    })?;
    let files = world.write_files(&args.out)?;
    let name = |p: &Path| p.file_name().unwrap().to_string_lossy().into_owned();
    let conf = format!(
        "# synthetic fixture: {} concepts, {} held out\nembeddings = {}\ncorpus = {}\nfreq = {}\noov = {}\ndataset = {}\nskip_top = 0\nout_dir = out\n",
        world.concepts.len(),
        world.held_out.len(),
        name(&files.embeddings),
        name(&files.corpus),
        name(&files.freq),
        name(&files.oov),
        name(&files.dataset),
    );
    let conf_path = args.out.join("run.conf");
    fs::write(&conf_path, conf).with_context(|| format!("writing {}", conf_path.display()))?;
    println!(
        "wrote fixture to {}; try: kgimpute run-all --config {}",
        args.out.display(),
        conf_path.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fetch(a) => fetch(a),
        Command::BuildGraph(a) => build_graph(a),
        Command::Train(a) => train(a),
        Command::Impute(a) => impute(a),
        Command::Eval(a) => eval(a),
        Command::RunAll(a) => run_all(a),
        Command::Synth(a) => synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
