//! Full-batch training of the GCN against pre-trained target vectors.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{self, ForwardTrace, GcnModel, Gradients, DEFAULT_LAYERS};
use crate::graph::KnowledgeGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Number of aggregation layers T.
    pub layers: usize,
    /// Widths of the T-1 hidden layers; `None` keeps every layer at the
    /// embedding dimension.
    pub hidden_dims: Option<Vec<usize>>,
    /// Fraction of supervised nodes held out for early stopping. Zero
    /// disables the split and early stopping.
    pub val_fraction: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam(),
            seed: 42,
            layers: DEFAULT_LAYERS,
            hidden_dims: None,
            val_fraction: 0.1,
            patience: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.layers == 0 {
            return bad("at least one layer is required".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        if let Some(hidden) = &self.hidden_dims {
            if hidden.len() + 1 != self.layers {
                return bad(format!(
                    "{} layers need {} hidden widths, got {}",
                    self.layers,
                    self.layers - 1,
                    hidden.len()
                ));
            }
            if hidden.contains(&0) {
                return bad("hidden widths must be positive".into());
            }
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return bad("Adam needs beta1, beta2 in [0, 1) and eps > 0".into());
            }
        }
        Ok(())
    }

    /// Layer widths `d_0 .. d_T` for embeddings of size `dim`.
    pub fn dims(&self, dim: usize) -> Vec<usize> {
        let mut dims = vec![dim];
        match &self.hidden_dims {
            Some(hidden) => dims.extend(hidden),
            None => dims.extend(std::iter::repeat_n(dim, self.layers - 1)),
        }
        dims.push(dim);
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    /// Absent when no validation split is used.
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Losses of the parameters in effect at the start of each epoch.
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub seed: u64,
    pub train_nodes: Vec<usize>,
    pub val_nodes: Vec<usize>,
}

impl TrainReport {
    pub fn best(&self) -> Option<&EpochStats> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    /// One JSON object per epoch per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for stats in &self.epochs {
            serde_json::to_writer(&mut out, stats)?;
            out.write_all(b"\n").map_err(|e| Error::io("<report>", e))?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_jsonl(&mut out)?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Mean squared error over `subset`, averaged over nodes and dimensions,
/// with its gradient with respect to the final embeddings (zero outside
/// `subset`).
pub fn mse_loss(trace: &ForwardTrace, g: &KnowledgeGraph, subset: &[usize]) -> Result<(f64, Vec<f64>)> {
    let output = trace.output();
    let d = output.len() / g.len().max(1);
    let mut grad = vec![0.0; output.len()];
    let loss = mse_terms(output, d, g, subset, Some(&mut grad))?;
    Ok((loss, grad))
}

/// Loss only.
pub fn mse(output: &[f64], g: &KnowledgeGraph, subset: &[usize]) -> Result<f64> {
    let d = output.len() / g.len().max(1);
    mse_terms(output, d, g, subset, None)
}

fn mse_terms(
    output: &[f64],
    d: usize,
    g: &KnowledgeGraph,
    subset: &[usize],
    mut grad: Option<&mut Vec<f64>>,
) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("loss over an empty node set".into()));
    }
    if d != g.dim() || output.len() != g.len() * d {
        return Err(Error::Shape(format!(
            "output width {d} does not match graph embedding dim {}",
            g.dim()
        )));
    }
    let scale = 1.0 / (subset.len() * d) as f64;
    let mut total = 0.0;
    for &v in subset {
        let target = g
            .target(v)
            .ok_or_else(|| Error::InvalidArgument(format!("node {v} has no target vector")))?;
        let row = &output[v * d..(v + 1) * d];
        for (k, (&h, &y)) in row.iter().zip(target).enumerate() {
            let r = h - y;
            total += r * r;
            if let Some(grad) = grad.as_deref_mut() {
                grad[v * d + k] = 2.0 * r * scale;
            }
        }
    }
    Ok(total * scale)
}

struct AdamState {
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

fn parameters_mut(model: &mut GcnModel) -> impl Iterator<Item = &mut Vec<f64>> {
    model.layers_mut().iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
}

fn gradients(grads: Gradients) -> impl Iterator<Item = Vec<f64>> {
    grads.weights.into_iter().zip(grads.biases).flat_map(|(w, b)| [w, b])
}

fn apply_step(model: &mut GcnModel, grads: Gradients, cfg: &TrainConfig, adam: &mut AdamState) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, g) in parameters_mut(model).zip(gradients(grads)) {
                for (x, dx) in p.iter_mut().zip(g) {
                    *x -= lr * dx;
                }
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            adam.step += 1;
            let c1 = 1.0 - beta1.powi(adam.step);
            let c2 = 1.0 - beta2.powi(adam.step);
            let moments = adam.m.iter_mut().zip(adam.v.iter_mut());
            for ((p, g), (m, v)) in parameters_mut(model).zip(gradients(grads)).zip(moments) {
                for (((x, dx), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = beta1 * *m + (1.0 - beta1) * dx;
                    *v = beta2 * *v + (1.0 - beta2) * dx * dx;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *x -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

/// Splits supervised nodes into (train, validation) with a seeded shuffle.
/// Both halves are returned sorted.
pub fn split_supervised(g: &KnowledgeGraph, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut nodes = g.supervised();
    if val_fraction <= 0.0 || nodes.len() < 2 {
        return (nodes, Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    nodes.shuffle(&mut rng);
    let n_val = ((nodes.len() as f64 * val_fraction).round() as usize).clamp(1, nodes.len() - 1);
    let mut val = nodes.split_off(nodes.len() - n_val);
    nodes.sort_unstable();
    val.sort_unstable();
    (nodes, val)
}

/// Trains a fresh model on `g` and returns the best-validation checkpoint
/// (or the final parameters when validation is disabled).
pub fn train(g: &KnowledgeGraph, cfg: &TrainConfig) -> Result<(GcnModel, TrainReport)> {
    cfg.validate()?;
    let supervised = g.supervised();
    let needed = if cfg.val_fraction > 0.0 { 2 } else { 1 };
    if supervised.len() < needed {
        return Err(Error::InvalidArgument(format!(
            "training needs at least {needed} supervised node(s), graph has {}",
            supervised.len()
        )));
    }
    let (train_nodes, val_nodes) = split_supervised(g, cfg.val_fraction, cfg.seed);
    let mut model = GcnModel::init(&cfg.dims(g.dim()), cfg.seed)?;
    let mut adam = AdamState {
        step: 0,
        m: parameters_mut(&mut model).map(|p| vec![0.0; p.len()]).collect(),
        v: parameters_mut(&mut model).map(|p| vec![0.0; p.len()]).collect(),
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, GcnModel)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let trace = gcn::forward(g, &model)?;
        let (train_mse, grad_out) = mse_loss(&trace, g, &train_nodes)?;
        let val_mse = if val_nodes.is_empty() {
            None
        } else {
            Some(mse(trace.output(), g, &val_nodes)?)
        };
        let watched = val_mse.unwrap_or(train_mse);
        if !train_mse.is_finite() || !watched.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: if train_mse.is_finite() { watched } else { train_mse },
            });
        }
        history.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
        });
        log::debug!("epoch {epoch}: train {train_mse:.6e} val {val_mse:?}");

        if let Some(val) = val_mse {
            if best.as_ref().is_none_or(|(b, _, _)| val < *b) {
                best = Some((val, epoch, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }

        let grads = gcn::backward(g, &model, &trace, &grad_out)?;
        apply_step(&mut model, grads, cfg, &mut adam);
    }

    let (model, best_epoch) = match best {
        Some((_, epoch, checkpoint)) => (checkpoint, epoch),
        None => (model, history.len()),
    };
    let report = TrainReport {
        epochs: history,
        best_epoch,
        stopped_early,
        seed: cfg.seed,
        train_nodes,
        val_nodes,
    };
    Ok((model, report))
}
