//! Imputation of out-of-vocabulary word embeddings from a knowledge graph.
//!
//! Words are linked when the token sets of their encyclopedia summaries and
//! dictionary definitions overlap strongly (Jaccard coefficient above a
//! threshold). A graph convolutional network is trained to map each node's
//! averaged definition embedding, smoothed over its neighborhood, onto the
//! node's pre-trained vector. The trained network then produces vectors for
//! nodes that have none.
//!
//! The modules follow the pipeline:
//!
//! * [`embeddings`]: pre-trained vectors in text format
//! * [`grounding`]: grounding records, tokenization, anchor vocabulary
//! * [`wikifetch`]: cached HTTP fetching of grounding text
//! * [`graph`]: Jaccard-thresholded knowledge graph and node features
//! * [`gcn`]: forward and backward passes
//! * [`trainer`]: MSE regression with Adam and early stopping
//! * [`imputer`]: final vectors for OOV words
//! * [`evaluate`]: word-pair similarity benchmarks
//! * [`pipeline`]: configuration and the stage functions used by the CLI

pub mod embeddings;
pub mod error;
pub mod evaluate;
pub mod gcn;
pub mod graph;
pub mod grounding;
pub mod imputer;
pub mod pipeline;
pub mod synthetic;
pub mod trainer;
pub mod wikifetch;

pub use embeddings::EmbeddingTable;
pub use error::{Error, Result};
pub use evaluate::{EvalResult, SimilarityDataset};
pub use gcn::{ForwardTrace, GcnModel, Gradients};
pub use graph::{KnowledgeGraph, NodeKind};
pub use grounding::{FrequencyList, GroundingCorpus, GroundingRecord, Tokenizer, VocabSelection};
pub use imputer::{ImputationResult, ImputeMode, Provenance};
pub use pipeline::PipelineConfig;
pub use trainer::{TrainConfig, TrainReport};
