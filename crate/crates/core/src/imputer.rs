//! Final embeddings for requested words: dictionary vectors where they
//! exist, model outputs (or the node-feature baseline) for OOV graph nodes,
//! and the zero vector for anything else.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::{write_embeddings, EmbeddingTable};
use crate::error::{Error, Result};
use crate::gcn::{self, GcnModel};
use crate::graph::{KnowledgeGraph, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeMode {
    Gnn,
    NodeFeature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Pretrained,
    Imputed,
    NodeFeatureBaseline,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    /// Not a graph node; received the zero vector.
    NotInGraph,
    /// Graph node without grounding text: zero feature, no edges, so the
    /// model output depends on the biases alone.
    MissingGrounding,
    /// Has grounding text but no edge passed the threshold.
    Isolated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImputeWarning {
    pub word: String,
    pub kind: WarningKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedWord {
    pub word: String,
    pub vector: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationResult {
    pub mode: ImputeMode,
    pub dim: usize,
    /// One entry per distinct requested word, in request order.
    pub words: Vec<ImputedWord>,
    pub warnings: Vec<ImputeWarning>,
}

/// Imputes vectors for `requested`, or for every OOV node of the graph when
/// `requested` is empty. `model` is required for [`ImputeMode::Gnn`].
pub fn impute(
    g: &KnowledgeGraph,
    model: Option<&GcnModel>,
    table: &EmbeddingTable,
    requested: &[String],
    mode: ImputeMode,
) -> Result<ImputationResult> {
    let dim = table.dim();
    if g.dim() != dim {
        return Err(Error::Shape(format!(
            "graph features are {}-dim, embeddings are {dim}-dim",
            g.dim()
        )));
    }
    let outputs = match mode {
        ImputeMode::Gnn => {
            let model = model.ok_or_else(|| Error::InvalidArgument("gnn mode needs a trained model".into()))?;
            if model.input_dim() != dim || model.output_dim() != dim {
                return Err(Error::Shape(format!(
                    "model maps {} -> {} dims, embeddings are {dim}-dim",
                    model.input_dim(),
                    model.output_dim()
                )));
            }
            gcn::forward(g, model)?.activations.pop().expect("non-empty trace")
        }
        ImputeMode::NodeFeature => g.features().to_vec(),
    };

    let default_request: Vec<String>;
    let requested = if requested.is_empty() {
        default_request = g
            .nodes()
            .iter()
            .filter(|n| n.kind == NodeKind::Oov)
            .map(|n| n.word.clone())
            .collect();
        &default_request
    } else {
        requested
    };

    let index: std::collections::HashMap<&str, usize> = g
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.word.as_str(), i))
        .collect();
    let missing: HashSet<usize> = g.missing_grounding().iter().copied().collect();
    let mut seen = HashSet::new();
    let mut words = Vec::new();
    let mut warnings = Vec::new();

    for word in requested {
        if !seen.insert(word.as_str()) {
            continue;
        }
        if let Some(v) = table.lookup(word) {
            words.push(ImputedWord {
                word: word.clone(),
                vector: v.to_vec(),
                provenance: Provenance::Pretrained,
            });
            continue;
        }
        match index.get(word.as_str()) {
            Some(&node) => {
                if missing.contains(&node) {
                    warnings.push(ImputeWarning {
                        word: word.clone(),
                        kind: WarningKind::MissingGrounding,
                    });
                } else if g.degree(node) == 0 {
                    warnings.push(ImputeWarning {
                        word: word.clone(),
                        kind: WarningKind::Isolated,
                    });
                }
                words.push(ImputedWord {
                    word: word.clone(),
                    vector: outputs[node * dim..(node + 1) * dim].to_vec(),
                    provenance: match mode {
                        ImputeMode::Gnn => Provenance::Imputed,
                        ImputeMode::NodeFeature => Provenance::NodeFeatureBaseline,
                    },
                });
            }
            None => {
                warnings.push(ImputeWarning {
                    word: word.clone(),
                    kind: WarningKind::NotInGraph,
                });
                words.push(ImputedWord {
                    word: word.clone(),
                    vector: vec![0.0; dim],
                    provenance: Provenance::Zero,
                });
            }
        }
    }
    if !warnings.is_empty() {
        log::warn!("{} requested word(s) have weak or no graph support", warnings.len());
    }
    Ok(ImputationResult {
        mode,
        dim,
        words,
        warnings,
    })
}

#[derive(Serialize)]
struct ReportFile<'a> {
    mode: ImputeMode,
    requested: usize,
    counts: BTreeMap<Provenance, usize>,
    warnings: &'a [ImputeWarning],
}

impl ImputationResult {
    pub fn get(&self, word: &str) -> Option<&ImputedWord> {
        self.words.iter().find(|w| w.word == word)
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.words.iter().filter(|w| w.provenance == provenance).count()
    }

    /// The pre-trained table followed by every requested word it lacks.
    pub fn merged_table(&self, table: &EmbeddingTable) -> Result<EmbeddingTable> {
        let mut merged = table.clone();
        for w in self.extra_words(table) {
            merged.insert(w.word.clone(), &w.vector)?;
        }
        Ok(merged)
    }

    fn extra_words<'a>(&'a self, table: &'a EmbeddingTable) -> impl Iterator<Item = &'a ImputedWord> + 'a {
        self.words.iter().filter(move |w| !table.contains(&w.word))
    }

    /// Writes the merged table in the embedding text format.
    pub fn write_embeddings(&self, path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let entries = table
            .iter()
            .chain(self.extra_words(table).map(|w| (w.word.as_str(), w.vector.as_slice())));
        write_embeddings(BufWriter::new(file), self.dim, entries).map_err(|e| Error::io(path, e))
    }

    pub fn write_report(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut counts = BTreeMap::new();
        for p in [
            Provenance::Pretrained,
            Provenance::Imputed,
            Provenance::NodeFeatureBaseline,
            Provenance::Zero,
        ] {
            counts.insert(p, self.count(p));
        }
        let report = ReportFile {
            mode: self.mode,
            requested: self.words.len(),
            counts,
            warnings: &self.warnings,
        };
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, &report)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}
