//! Synthetic pseudo-OOV world for end-to-end checks.
//!
//! Concept words belong to clusters. Each has a ground-truth vector near
//! its cluster center and a definition made of the cluster's core tokens,
//! one token shared by every word, and a few tokens unique to the word.
//! Core-token vectors sit near a per-cluster token center that is only
//! partly aligned with the concept center, so the mean of a definition is
//! a biased estimate of the concept vector. Some concept words are held
//! out: they keep their definitions but lose their vectors.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::grounding::{FrequencyList, GroundingCorpus, GroundingRecord, Tokenizer};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub clusters: usize,
    pub words_per_cluster: usize,
    pub dim: usize,
    pub held_out_per_cluster: usize,
    pub core_tokens: usize,
    pub unique_tokens: usize,
    /// Norm of each cluster center.
    pub center_norm: f64,
    /// Per-component standard deviation around the cluster center.
    pub concept_noise: f64,
    /// Per-component standard deviation of token vectors around their
    /// token center.
    pub token_noise: f64,
    /// Token center = `alignment * concept center + (1 - alignment) * r`,
    /// with `r` an independent random direction of the same norm.
    pub alignment: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            clusters: 4,
            words_per_cluster: 15,
            dim: 20,
            held_out_per_cluster: 3,
            core_tokens: 8,
            unique_tokens: 2,
            center_norm: 2.0,
            concept_noise: 0.15,
            token_noise: 0.15,
            alignment: 0.5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub concepts: Vec<String>,
    pub cluster_of: Vec<usize>,
    /// Ground-truth vector of every concept, held out or not.
    pub truth: Vec<Vec<f64>>,
    /// Indices into `concepts`.
    pub held_out: Vec<usize>,
    /// Vectors for visible concepts and all definition tokens.
    pub table: EmbeddingTable,
    /// `(word, summary, definition)` per concept.
    pub records: Vec<(String, String, String)>,
    pub frequencies: Vec<(String, u64)>,
}

/// Paths written by [`SyntheticWorld::write_files`].
#[derive(Debug, Clone)]
pub struct SyntheticFiles {
    pub embeddings: PathBuf,
    pub corpus: PathBuf,
    pub freq: PathBuf,
    pub oov: PathBuf,
    pub dataset: PathBuf,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

fn with_norm(mut v: Vec<f64>, norm: f64) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x *= norm / n);
    v
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticWorld> {
    if cfg.clusters == 0 || cfg.words_per_cluster == 0 || cfg.dim == 0 || cfg.core_tokens == 0 {
        return Err(Error::InvalidArgument(
            "synthetic world needs clusters, words, tokens and dims".into(),
        ));
    }
    if cfg.held_out_per_cluster >= cfg.words_per_cluster {
        return Err(Error::InvalidArgument(
            "must keep at least one visible word per cluster".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut table = EmbeddingTable::new(cfg.dim)?;
    let mut concepts = Vec::new();
    let mut cluster_of = Vec::new();
    let mut truth = Vec::new();
    let mut held_out = Vec::new();
    let mut records = Vec::new();
    let mut token_rows: Vec<(String, Vec<f64>)> = Vec::new();

    let shared = "entity".to_owned();
    token_rows.push((shared.clone(), gaussian(&mut rng, cfg.dim, cfg.token_noise)));

    for c in 0..cfg.clusters {
        let center = with_norm(gaussian(&mut rng, cfg.dim, 1.0), cfg.center_norm);
        let other = with_norm(gaussian(&mut rng, cfg.dim, 1.0), cfg.center_norm);
        let token_center: Vec<f64> = center
            .iter()
            .zip(&other)
            .map(|(a, b)| cfg.alignment * a + (1.0 - cfg.alignment) * b)
            .collect();
        let core: Vec<String> = (0..cfg.core_tokens)
            .map(|k| format!("{}core{k}", cluster_tag(c)))
            .collect();
        for tok in &core {
            let v = add(&token_center, &gaussian(&mut rng, cfg.dim, cfg.token_noise));
            token_rows.push((tok.clone(), v));
        }
        for i in 0..cfg.words_per_cluster {
            let idx = concepts.len();
            let word = format!("{}concept{i}", cluster_tag(c));
            let vector = add(&center, &gaussian(&mut rng, cfg.dim, cfg.concept_noise));
            let unique: Vec<String> = (0..cfg.unique_tokens).map(|k| format!("{word}x{k}")).collect();
            for tok in &unique {
                let v = add(&token_center, &gaussian(&mut rng, cfg.dim, 2.0 * cfg.token_noise));
                token_rows.push((tok.clone(), v));
            }
            let mut body: Vec<&str> = core.iter().map(String::as_str).collect();
            body.push(&shared);
            body.extend(unique.iter().map(String::as_str));
            // split the token list across summary and definition
            let cut = rng.random_range(0..=body.len());
            let summary = body[..cut].join(" ");
            let definition = body[cut..].join(" ");
            records.push((word.clone(), summary, definition));
            if i >= cfg.words_per_cluster - cfg.held_out_per_cluster {
                held_out.push(idx);
            }
            concepts.push(word);
            cluster_of.push(c);
            truth.push(vector);
        }
    }

    for (i, word) in concepts.iter().enumerate() {
        if !held_out.contains(&i) {
            table.insert(word.clone(), &truth[i])?;
        }
    }
    for (tok, v) in &token_rows {
        table.insert(tok.clone(), v)?;
    }
    let frequencies = concepts
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), 1000 - i as u64))
        .collect();

    Ok(SyntheticWorld {
        concepts,
        cluster_of,
        truth,
        held_out,
        table,
        records,
        frequencies,
    })
}

fn cluster_tag(c: usize) -> String {
    // letters only, so the tokenizer never splits or drops the tag
    let mut tag = String::new();
    let mut n = c;
    loop {
        tag.push((b'a' + (n % 26) as u8) as char);
        n /= 26;
        if n == 0 {
            break;
        }
    }
    format!("c{tag}")
}

impl SyntheticWorld {
    pub fn held_out_words(&self) -> Vec<String> {
        self.held_out.iter().map(|&i| self.concepts[i].clone()).collect()
    }

    pub fn corpus(&self, tokenizer: &Tokenizer) -> GroundingCorpus {
        let mut corpus = GroundingCorpus::default();
        for (w, s, d) in &self.records {
            corpus.insert(GroundingRecord::new(w.clone(), s.clone(), d.clone(), tokenizer));
        }
        corpus
    }

    pub fn frequency_list(&self) -> FrequencyList {
        FrequencyList::from_counts(self.frequencies.clone())
    }

    pub fn token_set(&self, concept: usize) -> BTreeSet<String> {
        let (_, s, d) = &self.records[concept];
        Tokenizer::default().tokenize(&format!("{s} {d}"))
    }

    /// Index of the concept whose ground-truth vector has the largest inner
    /// product with `v`.
    pub fn nearest_concept(&self, v: &[f64]) -> usize {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, t) in self.truth.iter().enumerate() {
            let score: f64 = t.iter().zip(v).map(|(a, b)| a * b).sum();
            if score > best.0 {
                best = (score, i);
            }
        }
        best.1
    }

    /// Pairs of each held-out word with the other concepts, gold score the
    /// ground-truth inner product.
    pub fn similarity_pairs(&self) -> Vec<(String, String, f64)> {
        let mut pairs = Vec::new();
        for &h in &self.held_out {
            for (j, other) in self.concepts.iter().enumerate() {
                if j != h && j % 4 == h % 4 {
                    let gold: f64 = self.truth[h].iter().zip(&self.truth[j]).map(|(a, b)| a * b).sum();
                    pairs.push((self.concepts[h].clone(), other.clone(), gold));
                }
            }
        }
        pairs
    }

    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<SyntheticFiles> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = SyntheticFiles {
            embeddings: dir.join("embeddings.txt"),
            corpus: dir.join("corpus.tsv"),
            freq: dir.join("freq.txt"),
            oov: dir.join("oov.txt"),
            dataset: dir.join("similarity.tsv"),
        };
        write_embeddings_full(&files.embeddings, &self.table)?;
        let write = |path: &Path, text: String| fs::write(path, text).map_err(|e| Error::io(path, e));
        write(
            &files.corpus,
            self.records
                .iter()
                .map(|(w, s, d)| format!("{w}\t{s}\t{d}\n"))
                .collect(),
        )?;
        write(
            &files.freq,
            self.frequencies.iter().map(|(w, c)| format!("{w} {c}\n")).collect(),
        )?;
        write(
            &files.oov,
            self.held_out_words().iter().map(|w| format!("{w}\n")).collect(),
        )?;
        write(
            &files.dataset,
            self.similarity_pairs()
                .iter()
                .map(|(a, b, g)| format!("{a}\t{b}\t{g}\n"))
                .collect(),
        )?;
        Ok(files)
    }
}

// Full precision so the file reloads to exactly the in-memory table.
fn write_embeddings_full(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let mut text = String::new();
    for (w, v) in table.iter() {
        text.push_str(w);
        for x in v {
            text.push(' ');
            text.push_str(&x.to_string());
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
