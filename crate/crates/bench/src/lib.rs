//! Seeded fixtures shared by the benchmarks.

use std::collections::BTreeSet;

use kgimpute_core::gcn::GcnModel;
use kgimpute_core::graph::{jaccard_edges, KnowledgeGraph, Node, NodeKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Token sets drawn from `topics` overlapping pools plus a little noise, so
/// that a realistic fraction of pairs clears the threshold.
pub fn token_sets(n: usize, vocab: usize, topics: usize, seed: u64) -> Vec<BTreeSet<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pools: Vec<Vec<usize>> = (0..topics)
        .map(|_| (0..12).map(|_| rng.random_range(0..vocab)).collect())
        .collect();
    (0..n)
        .map(|_| {
            let pool = &pools[rng.random_range(0..topics)];
            let mut set: BTreeSet<String> = pool
                .iter()
                .filter(|_| rng.random_bool(0.9))
                .map(|t| format!("t{t}"))
                .collect();
            for _ in 0..3 {
                set.insert(format!("t{}", rng.random_range(0..vocab)));
            }
            set
        })
        .collect()
}

/// Graph over [`token_sets`] with random features and targets on 80% of
/// the nodes.
pub fn graph(n: usize, dim: usize, seed: u64) -> KnowledgeGraph {
    let sets = token_sets(n, 5 * n, (n / 20).max(1), seed);
    let edges = jaccard_edges(&sets, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let features = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let targets: Vec<Option<Vec<f64>>> = (0..n)
        .map(|_| {
            rng.random_bool(0.8)
                .then(|| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        })
        .collect();
    let nodes = targets
        .iter()
        .enumerate()
        .map(|(i, t)| Node {
            word: format!("w{i}"),
            kind: if t.is_some() {
                NodeKind::Pretrained
            } else {
                NodeKind::Oov
            },
        })
        .collect();
    KnowledgeGraph::from_parts(nodes, dim, features, targets, &edges, 0.5).expect("fixture graph is valid")
}

pub fn model(dim: usize, layers: usize, seed: u64) -> GcnModel {
    GcnModel::init(&vec![dim; layers + 1], seed).expect("fixture dims are valid")
}
