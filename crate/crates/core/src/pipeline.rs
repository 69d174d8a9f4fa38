//! Pipeline configuration and the stages behind each CLI subcommand.
//!
//! Stages read and write files so that `run_all` and a manual sequence of
//! subcommands go through exactly the same code.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::evaluate::{self, EvalResult, SimilarityDataset};
use crate::gcn::GcnModel;
use crate::graph::{self, KnowledgeGraph, DEFAULT_ETA};
use crate::grounding::{self, FrequencyList, Tokenizer, DEFAULT_SKIP_TOP, DEFAULT_V_PRIME_SIZE};
use crate::imputer::{self, ImputationResult, ImputeMode};
use crate::trainer::{self, Optimizer, TrainConfig, TrainReport};
use crate::wikifetch::{self, FetchConfig, FetchCounts, Fetcher};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub embeddings: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub freq: Option<PathBuf>,
    pub oov: Option<PathBuf>,
    pub datasets: Vec<PathBuf>,
    /// Word list for the optional fetch stage of `run_all`.
    pub fetch_words: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub fetch: FetchConfig,
    pub stopwords: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub eta: f64,
    pub skip_top: usize,
    pub v_prime_size: usize,
    pub lowercase: bool,
    pub keep_digits: bool,
    pub train: TrainConfig,
    pub mode: ImputeMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            embeddings: None,
            corpus: None,
            freq: None,
            oov: None,
            datasets: Vec::new(),
            fetch_words: None,
            cache_dir: None,
            fetch: FetchConfig::default(),
            stopwords: None,
            out_dir: PathBuf::from("kgimpute-out"),
            eta: DEFAULT_ETA,
            skip_top: DEFAULT_SKIP_TOP,
            v_prime_size: DEFAULT_V_PRIME_SIZE,
            lowercase: true,
            keep_digits: false,
            train: TrainConfig::default(),
            mode: ImputeMode::Gnn,
        }
    }
}

fn parse_bool(value: &str) -> Option<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Some(true),
        "false" | "no" | "0" | "off" => Some(false),
        _ => None,
    }
}

fn parse_num<T: std::str::FromStr>(value: &str) -> Option<T> {
    value.parse().ok()
}

impl PipelineConfig {
    /// Reads a `key = value` file on top of the current values. Relative
    /// paths are resolved against the file's directory; `dataset` may
    /// repeat.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, idx + 1, "expected key = value"))?;
            self.set(key.trim(), value.trim(), base)
                .map_err(|message| Error::parse(path, idx + 1, message))?;
        }
        Ok(())
    }

    /// Sets one option by its config-file key.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> std::result::Result<(), String> {
        let path = || Some(base.join(value));
        let invalid = || format!("invalid value {value:?} for {key}");
        match key {
            "embeddings" => self.embeddings = path(),
            "corpus" => self.corpus = path(),
            "freq" => self.freq = path(),
            "oov" => self.oov = path(),
            "dataset" => self.datasets.push(base.join(value)),
            "fetch_words" => self.fetch_words = path(),
            "cache" => self.cache_dir = path(),
            "stopwords" => self.stopwords = path(),
            "out_dir" => self.out_dir = base.join(value),
            "offline" => self.fetch.offline = parse_bool(value).ok_or_else(invalid)?,
            "max_rps" => self.fetch.max_rps = parse_num(value).ok_or_else(invalid)?,
            "summary_url" => self.fetch.summary_url = value.to_owned(),
            "definition_url" => self.fetch.definition_url = value.to_owned(),
            "search_url" => self.fetch.search_url = value.to_owned(),
            "eta" => self.eta = parse_num(value).ok_or_else(invalid)?,
            "skip_top" => self.skip_top = parse_num(value).ok_or_else(invalid)?,
            "vprime" | "v_prime_size" => self.v_prime_size = parse_num(value).ok_or_else(invalid)?,
            "lowercase" => self.lowercase = parse_bool(value).ok_or_else(invalid)?,
            "keep_digits" => self.keep_digits = parse_bool(value).ok_or_else(invalid)?,
            "layers" => self.train.layers = parse_num(value).ok_or_else(invalid)?,
            "hidden_dims" => {
                let dims: std::result::Result<Vec<usize>, _> = value.split(',').map(|d| d.trim().parse()).collect();
                self.train.hidden_dims = Some(dims.map_err(|_| invalid())?);
            }
            "epochs" => self.train.epochs = parse_num(value).ok_or_else(invalid)?,
            "lr" | "learning_rate" => self.train.learning_rate = parse_num(value).ok_or_else(invalid)?,
            "seed" => self.train.seed = parse_num(value).ok_or_else(invalid)?,
            "val_fraction" => self.train.val_fraction = parse_num(value).ok_or_else(invalid)?,
            "patience" => self.train.patience = parse_num(value).ok_or_else(invalid)?,
            "optimizer" => {
                self.train.optimizer = match value {
                    "adam" => Optimizer::adam(),
                    "sgd" => Optimizer::Sgd,
                    _ => return Err(invalid()),
                }
            }
            "mode" => self.mode = parse_mode(value).ok_or_else(invalid)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn tokenizer(&self) -> Result<Tokenizer> {
        let mut tok = Tokenizer {
            lowercase: self.lowercase,
            keep_digits: self.keep_digits,
            ..Tokenizer::default()
        };
        if let Some(path) = &self.stopwords {
            tok.load_stopwords(path)?;
        }
        Ok(tok)
    }

    /// Artifact locations used by `run_all`.
    pub fn artifacts(&self) -> RunArtifacts {
        let d = &self.out_dir;
        RunArtifacts {
            corpus: d.join("corpus.tsv"),
            graph: d.join("graph.json"),
            model: d.join("model.json"),
            train_report: d.join("train_report.jsonl"),
            imputed: d.join("imputed.txt"),
            impute_report: d.join("impute_report.json"),
            results: d.join("results.json"),
        }
    }
}

pub fn parse_mode(value: &str) -> Option<ImputeMode> {
    match value {
        "gnn" => Some(ImputeMode::Gnn),
        "node-feature" | "node_feature" => Some(ImputeMode::NodeFeature),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunArtifacts {
    pub corpus: PathBuf,
    pub graph: PathBuf,
    pub model: PathBuf,
    pub train_report: PathBuf,
    pub imputed: PathBuf,
    pub impute_report: PathBuf,
    pub results: PathBuf,
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("no {what} file given")))
}

/// Fetches grounding text for `cfg.fetch_words` into `out`.
pub fn fetch(cfg: &PipelineConfig, out: &Path) -> Result<FetchCounts> {
    let inner = || -> Result<FetchCounts> {
        let words = wikifetch::load_word_list(required(&cfg.fetch_words, "word list")?)?;
        let cache = required(&cfg.cache_dir, "cache directory")?;
        let mut fetcher = Fetcher::live(cfg.fetch.clone(), cache)?;
        let counts = fetcher.build_corpus(&words, out)?;
        log::info!(
            "fetched {} ok, {} not found, {} errors ({} requests)",
            counts.ok,
            counts.not_found,
            counts.error,
            fetcher.network_calls()
        );
        Ok(counts)
    };
    inner().map_err(|e| e.in_stage("fetch"))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    wikifetch::load_word_list(path)
}

/// Dataset words that have no vector (after the lowercase fallback when
/// enabled), in first-seen order.
pub fn missing_dataset_words(datasets: &[SimilarityDataset], table: &EmbeddingTable, lowercase: bool) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for ds in datasets {
        for p in &ds.pairs {
            for w in [&p.first, &p.second] {
                let known = table.contains(w) || (lowercase && table.contains(&w.to_lowercase()));
                if !known && seen.insert(w.clone()) {
                    out.push(w.clone());
                }
            }
        }
    }
    out
}

/// Builds the graph and writes it to `out`. Without an OOV file the OOV
/// list is every dataset word lacking a vector.
pub fn build_graph(cfg: &PipelineConfig, out: &Path) -> Result<KnowledgeGraph> {
    let inner = || -> Result<KnowledgeGraph> {
        let tokenizer = cfg.tokenizer()?;
        let table = EmbeddingTable::load(required(&cfg.embeddings, "embeddings")?, None)?;
        let corpus = grounding::load_grounding_corpus(required(&cfg.corpus, "grounding corpus")?, &tokenizer)?;
        let freq = FrequencyList::load(required(&cfg.freq, "frequency list")?)?;
        let oov = match &cfg.oov {
            Some(path) => read_lines(path)?,
            None if !cfg.datasets.is_empty() => {
                let datasets = cfg
                    .datasets
                    .iter()
                    .map(SimilarityDataset::load)
                    .collect::<Result<Vec<_>>>()?;
                missing_dataset_words(&datasets, &table, cfg.lowercase)
            }
            None => return Err(Error::InvalidArgument("no OOV word list given".into())),
        };
        let selection = grounding::select_vocabulary(&freq, cfg.skip_top, cfg.v_prime_size, &table)?;
        let g = graph::build_graph(&selection, &oov, &corpus, &table, cfg.eta)?;
        log::info!(
            "graph: {} nodes ({} supervised), {} edges",
            g.len(),
            g.supervised().len(),
            g.edge_count()
        );
        g.save(out)?;
        Ok(g)
    };
    inner().map_err(|e| e.in_stage("build-graph"))
}

pub fn train(
    cfg: &PipelineConfig,
    graph: &Path,
    model_out: &Path,
    report_out: Option<&Path>,
) -> Result<(GcnModel, TrainReport)> {
    let inner = || -> Result<(GcnModel, TrainReport)> {
        let g = KnowledgeGraph::load(graph)?;
        let (model, report) = trainer::train(&g, &cfg.train)?;
        model.save(model_out)?;
        if let Some(path) = report_out {
            report.save_jsonl(path)?;
        }
        if let Some(best) = report.best() {
            log::info!(
                "best epoch {} of {}: train mse {:.6e}, val mse {:?}",
                best.epoch,
                report.epochs.len(),
                best.train_mse,
                best.val_mse
            );
        }
        Ok((model, report))
    };
    inner().map_err(|e| e.in_stage("train"))
}

pub fn impute(
    cfg: &PipelineConfig,
    graph: &Path,
    model: Option<&Path>,
    out: &Path,
    report: Option<&Path>,
) -> Result<ImputationResult> {
    let inner = || -> Result<ImputationResult> {
        let g = KnowledgeGraph::load(graph)?;
        let table = EmbeddingTable::load(required(&cfg.embeddings, "embeddings")?, Some(g.dim()))?;
        let model = match (cfg.mode, model) {
            (ImputeMode::Gnn, None) => return Err(Error::InvalidArgument("gnn mode needs --model".into())),
            (_, Some(path)) => Some(GcnModel::load(path)?),
            (ImputeMode::NodeFeature, None) => None,
        };
        let requested = match &cfg.oov {
            Some(path) => read_lines(path)?,
            None => Vec::new(),
        };
        let result = imputer::impute(&g, model.as_ref(), &table, &requested, cfg.mode)?;
        result.write_embeddings(out, &table)?;
        if let Some(path) = report {
            result.write_report(path)?;
        }
        Ok(result)
    };
    inner().map_err(|e| e.in_stage("impute"))
}

#[derive(Serialize)]
struct ResultRow {
    pearson: f64,
    spearman: f64,
    missed_words_pct: f64,
    missed_pairs_pct: f64,
    n_pairs: usize,
}

/// Writes `{dataset: {pearson, spearman, missed_words_pct, missed_pairs_pct, n_pairs}}`.
pub fn write_results(path: &Path, results: &[EvalResult]) -> Result<()> {
    let mut rows = BTreeMap::new();
    for r in results {
        let mut key = r.dataset.clone();
        let mut k = 2;
        while rows.contains_key(&key) {
            key = format!("{}#{k}", r.dataset);
            k += 1;
        }
        rows.insert(
            key,
            ResultRow {
                pearson: r.pearson,
                spearman: r.spearman,
                missed_words_pct: r.missed_words_pct,
                missed_pairs_pct: r.missed_pairs_pct,
                n_pairs: r.n_pairs,
            },
        );
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, &rows)?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn eval(cfg: &PipelineConfig, embeddings: &Path, out: &Path) -> Result<Vec<EvalResult>> {
    let inner = || -> Result<Vec<EvalResult>> {
        let table = EmbeddingTable::load(embeddings, None)?;
        let mut results = Vec::new();
        for path in &cfg.datasets {
            let ds = SimilarityDataset::load(path)?;
            let r = evaluate::evaluate(&ds, &table, cfg.lowercase)?;
            log::info!(
                "{}: pearson {:.1} spearman {:.1} missed words {:.2}% missed pairs {:.2}%",
                r.dataset,
                100.0 * r.pearson,
                100.0 * r.spearman,
                r.missed_words_pct,
                r.missed_pairs_pct
            );
            results.push(r);
        }
        write_results(out, &results)?;
        Ok(results)
    };
    inner().map_err(|e| e.in_stage("eval"))
}

/// Runs every stage in order, writing all artifacts under `cfg.out_dir`.
/// The fetch stage runs only when a word list and cache are configured;
/// its output then replaces `cfg.corpus`.
pub fn run_all(cfg: &PipelineConfig) -> Result<RunArtifacts> {
    let artifacts = cfg.artifacts();
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e).in_stage("run-all"))?;
    let mut cfg = cfg.clone();
    if cfg.fetch_words.is_some() && cfg.cache_dir.is_some() {
        fetch(&cfg, &artifacts.corpus)?;
        cfg.corpus = Some(artifacts.corpus.clone());
    }
    build_graph(&cfg, &artifacts.graph)?;
    train(&cfg, &artifacts.graph, &artifacts.model, Some(&artifacts.train_report))?;
    impute(
        &cfg,
        &artifacts.graph,
        Some(&artifacts.model),
        &artifacts.imputed,
        Some(&artifacts.impute_report),
    )?;
    eval(&cfg, &artifacts.imputed, &artifacts.results)?;
    Ok(artifacts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.eta, 0.5);
        assert_eq!(cfg.skip_top, 2000);
        assert_eq!(cfg.v_prime_size, 9000);
        assert_eq!(cfg.train.layers, 3);
        assert!(cfg.lowercase);
    }

    #[test]
    fn config_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(
            &path,
            "# comment\nembeddings = vec.txt\ndataset = a.tsv\ndataset=b.tsv\neta = 0.4\nvprime=100\nlowercase = false\nhidden_dims = 8, 6\nlayers = 3\noptimizer = sgd\nmode = node-feature\n",
        )
        .unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.embeddings, Some(dir.path().join("vec.txt")));
        assert_eq!(cfg.datasets, vec![dir.path().join("a.tsv"), dir.path().join("b.tsv")]);
        assert_eq!(cfg.eta, 0.4);
        assert_eq!(cfg.v_prime_size, 100);
        assert!(!cfg.lowercase);
        assert_eq!(cfg.train.hidden_dims, Some(vec![8, 6]));
        assert_eq!(cfg.train.optimizer, Optimizer::Sgd);
        assert_eq!(cfg.mode, ImputeMode::NodeFeature);
    }

    #[test]
    fn config_file_errors_name_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "eta = 0.5\nbogus = 1\n").unwrap();
        let err = PipelineConfig::default().apply_file(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        fs::write(&path, "eta = high\n").unwrap();
        assert!(PipelineConfig::default().apply_file(&path).is_err());
        fs::write(&path, "no equals sign\n").unwrap();
        assert!(PipelineConfig::default().apply_file(&path).is_err());
    }

    #[test]
    fn missing_words_use_lowercase_fallback() {
        let mut table = EmbeddingTable::new(1).unwrap();
        table.insert("paris", &[1.0]).unwrap();
        let ds = SimilarityDataset::new(
            "d",
            vec![
                evaluate::WordPair {
                    first: "Paris".into(),
                    second: "brexit".into(),
                    gold: 1.0,
                },
                evaluate::WordPair {
                    first: "brexit".into(),
                    second: "paris".into(),
                    gold: 2.0,
                },
            ],
        )
        .unwrap();
        assert_eq!(
            missing_dataset_words(std::slice::from_ref(&ds), &table, true),
            vec!["brexit"]
        );
        assert_eq!(missing_dataset_words(&[ds], &table, false), vec!["Paris", "brexit"]);
    }
}
