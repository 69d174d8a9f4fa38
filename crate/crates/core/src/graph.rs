//! Knowledge-graph construction from grounding token sets.
//!
//! Nodes are the selected anchor words plus the OOV words to impute. Two
//! nodes are joined when the Jaccard coefficient of their token sets is
//! strictly above `eta`; the coefficient becomes the edge weight. Each node
//! carries a feature vector, the mean of the pre-trained vectors of its
//! in-vocabulary tokens.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::grounding::{GroundingCorpus, VocabSelection};

pub const DEFAULT_ETA: f64 = 0.5;

const GRAPH_MAGIC: &str = "kgimpute-graph";
const GRAPH_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Pretrained,
    Oov,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub word: String,
    pub kind: NodeKind,
}

/// Vocabulary-selection settings recorded alongside the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GraphProvenance {
    pub skip_top: usize,
    pub v_prime_size: usize,
}

/// Undirected weighted graph in CSR form, with per-node features and
/// optional regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    nodes: Vec<Node>,
    dim: usize,
    eta: f64,
    features: Vec<f64>,
    targets: Vec<Option<Vec<f64>>>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
    missing_grounding: Vec<usize>,
    provenance: GraphProvenance,
}

/// Jaccard coefficient of two sets; 0 when both are empty.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// All pairs `(v, u, s)` with `v < u` and Jaccard `s > eta`, sorted by
/// `(v, u)`.
///
/// Intersections are counted through an inverted index from token to the
/// nodes containing it, so only pairs sharing at least one token are
/// visited. Each row is independent; the result does not depend on the
/// thread count.
pub fn jaccard_edges(sets: &[BTreeSet<String>], eta: f64) -> Vec<(usize, usize, f64)> {
    let mut token_ids: HashMap<&str, usize> = HashMap::new();
    let mut postings: Vec<Vec<usize>> = Vec::new();
    let node_tokens: Vec<Vec<usize>> = sets
        .iter()
        .enumerate()
        .map(|(v, set)| {
            set.iter()
                .map(|tok| {
                    let id = *token_ids.entry(tok.as_str()).or_insert_with(|| {
                        postings.push(Vec::new());
                        postings.len() - 1
                    });
                    postings[id].push(v);
                    id
                })
                .collect()
        })
        .collect();

    let n = sets.len();
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0u32; n], Vec::new()),
            |(counts, touched), v| {
                for &tok in &node_tokens[v] {
                    let posting = &postings[tok];
                    // postings are ascending in node index
                    let start = posting.partition_point(|&u| u <= v);
                    for &u in &posting[start..] {
                        if counts[u] == 0 {
                            touched.push(u);
                        }
                        counts[u] += 1;
                    }
                }
                touched.sort_unstable();
                let dv = sets[v].len();
                let mut row = Vec::new();
                for &u in touched.iter() {
                    let inter = counts[u] as usize;
                    counts[u] = 0;
                    let union = dv + sets[u].len() - inter;
                    let s = inter as f64 / union as f64;
                    if s > eta {
                        row.push((u, s));
                    }
                }
                touched.clear();
                row
            },
        )
        .collect();

    rows.into_iter()
        .enumerate()
        .flat_map(|(v, row)| row.into_iter().map(move |(u, s)| (v, u, s)))
        .collect()
}

/// Mean of the table vectors of the tokens that have one, or the zero
/// vector when none do. Tokens are summed in sorted order.
pub fn feature_vector(tokens: &BTreeSet<String>, table: &EmbeddingTable) -> Vec<f64> {
    let mut sum = vec![0.0; table.dim()];
    let mut count = 0usize;
    for tok in tokens {
        if let Some(v) = table.lookup(tok) {
            for (acc, x) in sum.iter_mut().zip(v) {
                *acc += x;
            }
            count += 1;
        }
    }
    if count > 0 {
        let inv = count as f64;
        sum.iter_mut().for_each(|x| *x /= inv);
    }
    sum
}

/// Builds the graph over `selection.selected` followed by `oov_words`.
///
/// Duplicate words are merged. A node whose word has a pre-trained vector
/// is supervised (kind `Pretrained`) even when it was requested as OOV.
/// Words without a grounding record get an empty token set, a zero feature
/// vector and no edges; their indices are kept in
/// [`KnowledgeGraph::missing_grounding`].
pub fn build_graph(
    selection: &VocabSelection,
    oov_words: &[String],
    corpus: &GroundingCorpus,
    table: &EmbeddingTable,
    eta: f64,
) -> Result<KnowledgeGraph> {
    check_eta(eta)?;
    let mut seen = HashSet::new();
    let mut nodes = Vec::new();
    for word in selection.selected.iter().chain(oov_words) {
        if !seen.insert(word.as_str()) {
            continue;
        }
        let kind = if table.contains(word) {
            NodeKind::Pretrained
        } else {
            NodeKind::Oov
        };
        nodes.push(Node {
            word: word.clone(),
            kind,
        });
    }
    if nodes.is_empty() {
        return Err(Error::InvalidArgument("graph would have zero nodes".into()));
    }

    let empty = BTreeSet::new();
    let mut missing_grounding = Vec::new();
    let token_sets: Vec<&BTreeSet<String>> = nodes
        .iter()
        .enumerate()
        .map(|(i, node)| match corpus.get(&node.word) {
            Some(rec) => &rec.tokens,
            None => {
                missing_grounding.push(i);
                &empty
            }
        })
        .collect();
    if !missing_grounding.is_empty() {
        log::warn!("{} node(s) have no grounding record", missing_grounding.len());
    }

    let owned: Vec<BTreeSet<String>> = token_sets.iter().map(|s| (*s).clone()).collect();
    let edges = jaccard_edges(&owned, eta);

    let dim = table.dim();
    let mut features = Vec::with_capacity(nodes.len() * dim);
    for set in &token_sets {
        features.extend(feature_vector(set, table));
    }
    let targets = nodes
        .iter()
        .map(|n| match n.kind {
            NodeKind::Pretrained => table.lookup(&n.word).map(<[f64]>::to_vec),
            NodeKind::Oov => None,
        })
        .collect();

    let mut graph = KnowledgeGraph::from_parts(nodes, dim, features, targets, &edges, eta)?;
    graph.missing_grounding = missing_grounding;
    graph.provenance = GraphProvenance {
        skip_top: selection.skip_top,
        v_prime_size: selection.v_prime_size,
    };
    Ok(graph)
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("eta must lie in [0, 1), got {eta}")));
    }
    Ok(())
}

impl KnowledgeGraph {
    /// Assembles a graph from an undirected edge list. Each edge may be given
    /// once in either orientation.
    pub fn from_parts(
        nodes: Vec<Node>,
        dim: usize,
        features: Vec<f64>,
        targets: Vec<Option<Vec<f64>>>,
        edges: &[(usize, usize, f64)],
        eta: f64,
    ) -> Result<Self> {
        check_eta(eta)?;
        let n = nodes.len();
        if n == 0 {
            return Err(Error::InvalidArgument("graph would have zero nodes".into()));
        }
        if dim == 0 || features.len() != n * dim || targets.len() != n {
            return Err(Error::Shape(format!(
                "{n} nodes need {} feature values and {n} targets, got {} and {}",
                n * dim,
                features.len(),
                targets.len()
            )));
        }
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(v, u, s) in edges {
            if v >= n || u >= n {
                return Err(Error::InvalidArgument(format!("edge ({v}, {u}) out of range")));
            }
            if v == u {
                return Err(Error::InvalidArgument(format!("self-edge at node {v}")));
            }
            adj[v].push((u, s));
            adj[u].push((v, s));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for row in &mut adj {
            row.sort_by_key(|e| e.0);
            for &(u, s) in row.iter() {
                neighbors.push(u);
                weights.push(s);
            }
            offsets.push(neighbors.len());
        }
        let graph = KnowledgeGraph {
            nodes,
            dim,
            eta,
            features,
            targets,
            offsets,
            neighbors,
            weights,
            missing_grounding: Vec::new(),
            provenance: GraphProvenance::default(),
        };
        graph.validate()?;
        Ok(graph)
    }

    fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.offsets.len() != n + 1
            || self.offsets[0] != 0
            || self.offsets[n] != self.neighbors.len()
            || self.neighbors.len() != self.weights.len()
            || self.offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::Format("inconsistent adjacency offsets".into()));
        }
        if self.features.len() != n * self.dim || self.targets.len() != n {
            return Err(Error::Format("feature or target table has the wrong size".into()));
        }
        if self.features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("non-finite node feature".into()));
        }
        for (v, node) in self.nodes.iter().enumerate() {
            match (&self.targets[v], node.kind) {
                (Some(t), NodeKind::Pretrained) if t.len() == self.dim => {}
                (None, NodeKind::Oov) => {}
                _ => {
                    return Err(Error::Format(format!(
                        "node {v} ({:?}): target must be present with length {} exactly for pretrained nodes",
                        node.word, self.dim
                    )))
                }
            }
            let mut prev = None;
            for (u, s) in self.neighbors(v) {
                if u >= n || u == v || prev.is_some_and(|p| p >= u) {
                    return Err(Error::Format(format!("bad adjacency entry {u} at node {v}")));
                }
                prev = Some(u);
                if !(s > self.eta && s <= 1.0) {
                    return Err(Error::Format(format!(
                        "edge ({v}, {u}) weight {s} outside ({}, 1]",
                        self.eta
                    )));
                }
                if self.edge_weight(u, v) != Some(s) {
                    return Err(Error::Format(format!("edge ({v}, {u}) is not symmetric")));
                }
            }
        }
        if self.missing_grounding.iter().any(|&v| v >= n) {
            return Err(Error::Format("missing-grounding index out of range".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn provenance(&self) -> GraphProvenance {
        self.provenance
    }

    pub fn node_index(&self, word: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.word == word)
    }

    pub fn feature(&self, v: usize) -> &[f64] {
        &self.features[v * self.dim..(v + 1) * self.dim]
    }

    /// Row-major `len() x dim()` feature matrix.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn target(&self, v: usize) -> Option<&[f64]> {
        self.targets[v].as_deref()
    }

    /// Indices of supervised (pretrained) nodes, ascending.
    pub fn supervised(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.targets[v].is_some()).collect()
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[v]..self.offsets[v + 1];
        self.neighbors[range.clone()]
            .iter()
            .copied()
            .zip(self.weights[range].iter().copied())
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn edge_weight(&self, v: usize, u: usize) -> Option<f64> {
        let range = self.offsets[v]..self.offsets[v + 1];
        let row = &self.neighbors[range.clone()];
        row.binary_search(&u).ok().map(|i| self.weights[range.start + i])
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Edges as `(v, u, s)` with `v < u`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        (0..self.len())
            .flat_map(|v| {
                self.neighbors(v)
                    .filter(move |&(u, _)| u > v)
                    .map(move |(u, s)| (v, u, s))
            })
            .collect()
    }

    /// `1 + sum of incident edge weights`, the aggregation normalizer.
    pub fn normalizer(&self, v: usize) -> f64 {
        1.0 + self.neighbors(v).map(|(_, s)| s).sum::<f64>()
    }

    /// Nodes that had no grounding record at build time.
    pub fn missing_grounding(&self) -> &[usize] {
        &self.missing_grounding
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, &GraphFile::from(self))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let raw: GraphFile = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        raw.into_graph()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    magic: String,
    version: u32,
    eta: f64,
    dim: usize,
    provenance: GraphProvenance,
    nodes: Vec<Node>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
    features: Vec<f64>,
    targets: Vec<Option<Vec<f64>>>,
    missing_grounding: Vec<usize>,
}

impl From<&KnowledgeGraph> for GraphFile {
    fn from(g: &KnowledgeGraph) -> Self {
        GraphFile {
            magic: GRAPH_MAGIC.to_owned(),
            version: GRAPH_VERSION,
            eta: g.eta,
            dim: g.dim,
            provenance: g.provenance,
            nodes: g.nodes.clone(),
            offsets: g.offsets.clone(),
            neighbors: g.neighbors.clone(),
            weights: g.weights.clone(),
            features: g.features.clone(),
            targets: g.targets.clone(),
            missing_grounding: g.missing_grounding.clone(),
        }
    }
}

impl GraphFile {
    fn into_graph(self) -> Result<KnowledgeGraph> {
        if self.magic != GRAPH_MAGIC {
            return Err(Error::Format(format!("not a graph file (magic {:?})", self.magic)));
        }
        if self.version != GRAPH_VERSION {
            return Err(Error::Format(format!(
                "unsupported graph file version {} (expected {GRAPH_VERSION})",
                self.version
            )));
        }
        check_eta(self.eta)?;
        let graph = KnowledgeGraph {
            nodes: self.nodes,
            dim: self.dim,
            eta: self.eta,
            features: self.features,
            targets: self.targets,
            offsets: self.offsets,
            neighbors: self.neighbors,
            weights: self.weights,
            missing_grounding: self.missing_grounding,
            provenance: self.provenance,
        };
        if graph.nodes.is_empty() {
            return Err(Error::Format("graph has zero nodes".into()));
        }
        graph.validate()?;
        Ok(graph)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::{GroundingRecord, Tokenizer};
    use proptest::prelude::*;

    fn set(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&set(&["x", "y"]), &set(&["x", "y"])), 1.0);
        assert_eq!(jaccard(&set(&["x"]), &set(&["y"])), 0.0);
        assert_eq!(jaccard(&set(&["a", "b", "c"]), &set(&["b", "c", "d"])), 0.5);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 0.0);
    }

    fn fixture(
        records: &[(&str, &str)],
        table_rows: &[(&str, &[f64])],
        vprime: &[&str],
        oov: &[&str],
        eta: f64,
    ) -> Result<KnowledgeGraph> {
        let tok = Tokenizer::default();
        let mut corpus = GroundingCorpus::default();
        for (w, text) in records {
            corpus.insert(GroundingRecord::new(*w, *text, "", &tok));
        }
        let dim = table_rows.first().map_or(2, |r| r.1.len());
        let mut table = EmbeddingTable::new(dim).unwrap();
        for (w, v) in table_rows {
            table.insert(*w, v).unwrap();
        }
        let selection = VocabSelection {
            skipped: vec![],
            selected: vprime.iter().map(|s| s.to_string()).collect(),
            skip_top: 0,
            v_prime_size: vprime.len(),
        };
        let oov: Vec<String> = oov.iter().map(|s| s.to_string()).collect();
        build_graph(&selection, &oov, &corpus, &table, eta)
    }

    #[test]
    fn identical_definitions_give_unit_edge() {
        let g = fixture(
            &[("p", "red fruit"), ("q", "red fruit")],
            &[("p", &[1.0, 0.0])],
            &["p"],
            &["q"],
            0.5,
        )
        .unwrap();
        assert_eq!(g.edges(), vec![(0, 1, 1.0)]);
        assert_eq!(g.nodes()[1].kind, NodeKind::Oov);
        assert!(g.target(1).is_none());
        assert_eq!(g.target(0), Some(&[1.0, 0.0][..]));
    }

    #[test]
    fn boundary_jaccard_is_excluded() {
        // {a,b,c} vs {b,c,d}: jaccard exactly 0.5
        let g = fixture(
            &[("p", "a b c"), ("q", "b c d")],
            &[("p", &[1.0, 0.0])],
            &["p"],
            &["q"],
            0.5,
        )
        .unwrap();
        assert_eq!(g.edge_count(), 0);
        let g = fixture(
            &[("p", "a b c"), ("q", "b c d")],
            &[("p", &[1.0, 0.0])],
            &["p"],
            &["q"],
            0.49,
        )
        .unwrap();
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn feature_is_mean_over_known_tokens() {
        let g = fixture(&[("q", "a zzz")], &[("a", &[2.0, 0.0])], &["a"], &["q"], 0.5).unwrap();
        let q = g.node_index("q").unwrap();
        assert_eq!(g.feature(q), &[2.0, 0.0]);
        let g = fixture(
            &[("q", "a b")],
            &[("a", &[2.0, 0.0]), ("b", &[0.0, 4.0])],
            &["a"],
            &["q"],
            0.5,
        )
        .unwrap();
        assert_eq!(g.feature(g.node_index("q").unwrap()), &[1.0, 2.0]);
    }

    #[test]
    fn missing_grounding_is_isolated_zero() {
        let g = fixture(&[("p", "a b")], &[("p", &[1.0, 1.0])], &["p"], &["ghost"], 0.5).unwrap();
        let ghost = g.node_index("ghost").unwrap();
        assert_eq!(g.missing_grounding(), &[ghost]);
        assert_eq!(g.feature(ghost), &[0.0, 0.0]);
        assert_eq!(g.degree(ghost), 0);
    }

    #[test]
    fn overlapping_words_are_merged() {
        let g = fixture(
            &[("p", "a"), ("q", "b")],
            &[("p", &[1.0, 0.0]), ("q", &[0.0, 1.0])],
            &["p"],
            &["p", "q", "q"],
            0.5,
        )
        .unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.nodes()[0].kind, NodeKind::Pretrained);
        // in the table, so supervised even though requested as OOV
        assert_eq!(g.nodes()[1].kind, NodeKind::Pretrained);
    }

    #[test]
    fn empty_graph_and_bad_eta_rejected() {
        assert!(fixture(&[], &[("p", &[1.0, 0.0])], &[], &[], 0.5).is_err());
        assert!(fixture(&[], &[("p", &[1.0, 0.0])], &["p"], &[], 1.0).is_err());
        assert!(fixture(&[], &[("p", &[1.0, 0.0])], &["p"], &[], -0.1).is_err());
    }

    fn three_node_graph() -> KnowledgeGraph {
        let nodes = vec![
            Node {
                word: "a".into(),
                kind: NodeKind::Pretrained,
            },
            Node {
                word: "b".into(),
                kind: NodeKind::Oov,
            },
            Node {
                word: "c".into(),
                kind: NodeKind::Pretrained,
            },
        ];
        KnowledgeGraph::from_parts(
            nodes,
            2,
            vec![0.1, 0.2, 0.3, 1.0 / 3.0, -0.5, 0.0],
            vec![Some(vec![1.0, 2.0]), None, Some(vec![0.7, f64::MIN_POSITIVE])],
            &[(0, 1, 0.75), (2, 1, 0.6)],
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn graph_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        let g = three_node_graph();
        g.save(&path).unwrap();
        assert_eq!(KnowledgeGraph::load(&path).unwrap(), g);
    }

    #[test]
    fn edgeless_graph_saves() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        let g = KnowledgeGraph::from_parts(
            vec![Node {
                word: "a".into(),
                kind: NodeKind::Oov,
            }],
            1,
            vec![0.0],
            vec![None],
            &[],
            0.5,
        )
        .unwrap();
        g.save(&path).unwrap();
        assert_eq!(KnowledgeGraph::load(&path).unwrap().edge_count(), 0);
    }

    #[test]
    fn truncated_or_foreign_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        three_node_graph().save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(KnowledgeGraph::load(&path).is_err());

        let bumped = text.replace("\"version\":1", "\"version\":99");
        std::fs::write(&path, bumped).unwrap();
        let err = KnowledgeGraph::load(&path).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn from_parts_rejects_bad_weights() {
        let nodes = vec![
            Node {
                word: "a".into(),
                kind: NodeKind::Oov,
            },
            Node {
                word: "b".into(),
                kind: NodeKind::Oov,
            },
        ];
        let mk =
            |s: f64| KnowledgeGraph::from_parts(nodes.clone(), 1, vec![0.0, 0.0], vec![None, None], &[(0, 1, s)], 0.5);
        assert!(mk(0.5).is_err());
        assert!(mk(1.5).is_err());
        assert!(mk(0.8).is_ok());
        assert!(
            KnowledgeGraph::from_parts(nodes.clone(), 1, vec![0.0, 0.0], vec![None, None], &[(1, 1, 0.9)], 0.5)
                .is_err()
        );
    }

    fn token_sets() -> impl Strategy<Value = Vec<BTreeSet<String>>> {
        prop::collection::vec(prop::collection::btree_set(0u8..12, 0..6), 1..25).prop_map(|sets| {
            sets.into_iter()
                .map(|s| s.into_iter().map(|t| format!("t{t}")).collect())
                .collect()
        })
    }

    proptest! {
        #[test]
        fn jaccard_is_symmetric(a in prop::collection::btree_set(0u8..10, 0..8), b in prop::collection::btree_set(0u8..10, 0..8)) {
            prop_assert_eq!(jaccard(&a, &b), jaccard(&b, &a));
        }

        #[test]
        fn raising_eta_never_adds_edges(sets in token_sets(), lo in 0.0f64..0.9, step in 0.0f64..0.5) {
            let hi = (lo + step).min(0.99);
            let low: HashSet<(usize, usize)> = jaccard_edges(&sets, lo).into_iter().map(|(v, u, _)| (v, u)).collect();
            for (v, u, _) in jaccard_edges(&sets, hi) {
                prop_assert!(low.contains(&(v, u)));
            }
        }

        #[test]
        fn feature_ignores_token_order(tokens in prop::collection::vec(0u8..6, 0..10)) {
            let mut table = EmbeddingTable::new(2).unwrap();
            for t in 0..4u8 {
                table.insert(format!("t{t}"), &[f64::from(t) * 0.3, 1.0 / f64::from(t + 1)]).unwrap();
            }
            let forward: BTreeSet<String> = tokens.iter().map(|t| format!("t{t}")).collect();
            let reversed: BTreeSet<String> = tokens.iter().rev().map(|t| format!("t{t}")).collect();
            prop_assert_eq!(feature_vector(&forward, &table), feature_vector(&reversed, &table));
        }
    }
}
