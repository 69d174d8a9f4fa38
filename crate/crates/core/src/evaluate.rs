//! Word-pair similarity benchmarks.
//!
//! Similarity is the raw inner product. A word without a vector is treated
//! as the zero vector, so its pairs score 0 and stay in the correlation.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

/// Anything that maps a word to a vector.
pub trait VectorSource {
    fn vector(&self, word: &str) -> Option<&[f64]>;
}

impl VectorSource for EmbeddingTable {
    fn vector(&self, word: &str) -> Option<&[f64]> {
        self.lookup(word)
    }
}

impl VectorSource for HashMap<String, Vec<f64>> {
    fn vector(&self, word: &str) -> Option<&[f64]> {
        self.get(word).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordPair {
    pub first: String,
    pub second: String,
    pub gold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityDataset {
    pub name: String,
    pub pairs: Vec<WordPair>,
}

impl SimilarityDataset {
    pub fn new(name: impl Into<String>, pairs: Vec<WordPair>) -> Result<Self> {
        if pairs.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a similarity dataset needs at least 2 pairs, got {}",
                pairs.len()
            )));
        }
        if let Some(p) = pairs.iter().find(|p| !p.gold.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite gold score for ({}, {})",
                p.first, p.second
            )));
        }
        Ok(SimilarityDataset {
            name: name.into(),
            pairs,
        })
    }

    /// Loads `word1<TAB>word2<TAB>score` lines; further columns are ignored
    /// and `#` lines skipped. Spaces inside a word become underscores, the
    /// convention for multi-word graph nodes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 {
                return Err(Error::parse(path, lineno, "expected word1<TAB>word2<TAB>score"));
            }
            let gold: f64 = fields[2]
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("non-numeric score {:?}", fields[2])))?;
            if !gold.is_finite() {
                return Err(Error::parse(path, lineno, "score is not finite"));
            }
            pairs.push(WordPair {
                first: node_key(fields[0]),
                second: node_key(fields[1]),
                gold,
            });
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        SimilarityDataset::new(name, pairs).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn node_key(word: &str) -> String {
    word.split_whitespace().collect::<Vec<_>>().join("_")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub scores: Vec<f64>,
    pub missed_words_pct: f64,
    pub missed_pairs_pct: f64,
}

fn resolve<'a, V: VectorSource>(vectors: &'a V, word: &str, lowercase_fallback: bool) -> Option<&'a [f64]> {
    vectors.vector(word).or_else(|| {
        if lowercase_fallback {
            let lower = word.to_lowercase();
            if lower != word {
                return vectors.vector(&lower);
            }
        }
        None
    })
}

/// Scores every pair by inner product, substituting zero for missing words.
pub fn score_pairs<V: VectorSource>(ds: &SimilarityDataset, vectors: &V, lowercase_fallback: bool) -> PairScores {
    let mut distinct = HashSet::new();
    let mut missing = HashSet::new();
    let mut missed_pairs = 0usize;
    let scores = ds
        .pairs
        .iter()
        .map(|p| {
            let a = resolve(vectors, &p.first, lowercase_fallback);
            let b = resolve(vectors, &p.second, lowercase_fallback);
            for (word, v) in [(&p.first, a), (&p.second, b)] {
                distinct.insert(word.as_str());
                if v.is_none() {
                    missing.insert(word.as_str());
                }
            }
            match (a, b) {
                (Some(a), Some(b)) => dot(a, b),
                _ => {
                    missed_pairs += 1;
                    0.0
                }
            }
        })
        .collect();
    let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    PairScores {
        scores,
        missed_words_pct: pct(missing.len(), distinct.len()),
        missed_pairs_pct: pct(missed_pairs, ds.pairs.len()),
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Correlation(format!(
            "lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Correlation("need at least two observations".into()));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Correlation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub dataset: String,
    pub pearson: f64,
    pub spearman: f64,
    pub missed_words_pct: f64,
    pub missed_pairs_pct: f64,
    pub n_pairs: usize,
}

pub fn evaluate<V: VectorSource>(ds: &SimilarityDataset, vectors: &V, lowercase_fallback: bool) -> Result<EvalResult> {
    let scored = score_pairs(ds, vectors, lowercase_fallback);
    let gold: Vec<f64> = ds.pairs.iter().map(|p| p.gold).collect();
    let named = |e: Error| Error::Correlation(format!("{}: {e}", ds.name));
    Ok(EvalResult {
        dataset: ds.name.clone(),
        pearson: pearson(&scored.scores, &gold).map_err(named)?,
        spearman: spearman(&scored.scores, &gold).map_err(named)?,
        missed_words_pct: scored.missed_words_pct,
        missed_pairs_pct: scored.missed_pairs_pct,
        n_pairs: ds.len(),
    })
}
