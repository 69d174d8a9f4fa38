//! Graph convolutional network over a [`KnowledgeGraph`].
//!
//! Each layer aggregates the closed neighborhood of a node with weights
//! `s_vu / C_v` (self weight `1 / C_v`, `C_v = 1 + sum of s_vu`) and applies
//! an affine map `W^t x + b^t`. Every layer except the last is followed by a
//! ReLU. Input to the first layer is the node feature matrix.
//!
//! Gradients are derived by hand in [`backward`]; [`forward_dense_oracle`]
//! recomputes the forward pass with a materialized adjacency matrix for
//! testing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;

pub const DEFAULT_LAYERS: usize = 3;

const MODEL_MAGIC: &str = "kgimpute-model";
const MODEL_VERSION: u32 = 1;

/// One affine layer. `weight` is `out_dim x in_dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut layer = Layer::zeros(dim, dim);
        for i in 0..dim {
            layer.weight[i * dim + i] = 1.0;
        }
        layer
    }

    pub fn weight_at(&self, row: usize, col: usize) -> f64 {
        self.weight[row * self.in_dim + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    layers: Vec<Layer>,
    seed: Option<u64>,
}

impl GcnModel {
    /// Checks that the layer shapes chain and all parameters are finite.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("a model needs at least one layer".into()));
        }
        for (t, layer) in layers.iter().enumerate() {
            if layer.in_dim == 0
                || layer.out_dim == 0
                || layer.weight.len() != layer.in_dim * layer.out_dim
                || layer.bias.len() != layer.out_dim
            {
                return Err(Error::Shape(format!(
                    "layer {} has inconsistent parameter sizes",
                    t + 1
                )));
            }
            if t > 0 && layers[t - 1].out_dim != layer.in_dim {
                return Err(Error::Shape(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    t,
                    layers[t - 1].out_dim,
                    t + 1,
                    layer.in_dim
                )));
            }
            if layer.weight.iter().chain(&layer.bias).any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "layer {} has non-finite parameters",
                    t + 1
                )));
            }
        }
        Ok(GcnModel { layers, seed: None })
    }

    /// Uniform(-a, a) weights with `a = sqrt(6 / (d_in + d_out))`, zero
    /// biases. `dims` lists `d_0 .. d_T`.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Shape(
                "dims must list at least an input and an output size".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (d_in, d_out) = (w[0], w[1]);
                let bound = (6.0 / (d_in + d_out) as f64).sqrt();
                let mut layer = Layer::zeros(d_in, d_out);
                for x in &mut layer.weight {
                    *x = rng.random_range(-bound..bound);
                }
                layer
            })
            .collect();
        let mut model = GcnModel::from_layers(layers)?;
        model.seed = Some(seed);
        Ok(model)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Number of aggregation layers T.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].in_dim)
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn set_seed(&mut self, seed: Option<u64>) {
        self.seed = seed;
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let raw = ModelFile {
            magic: MODEL_MAGIC.to_owned(),
            version: MODEL_VERSION,
            depth: self.depth(),
            dims: self.dims(),
            seed: self.seed,
            layers: self.layers.clone(),
        };
        serde_json::to_writer(&mut out, &raw)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let raw: ModelFile = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if raw.magic != MODEL_MAGIC {
            return Err(Error::Format(format!("{}: not a model file", path.display())));
        }
        if raw.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported model file version {}",
                path.display(),
                raw.version
            )));
        }
        let mut model = GcnModel::from_layers(raw.layers)?;
        if model.depth() != raw.depth || model.dims() != raw.dims {
            return Err(Error::Format(format!(
                "{}: header does not match layer shapes",
                path.display()
            )));
        }
        model.seed = raw.seed;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    magic: String,
    version: u32,
    depth: usize,
    dims: Vec<usize>,
    seed: Option<u64>,
    layers: Vec<Layer>,
}

/// Intermediates of a forward pass, all row-major `nodes x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `h^0 .. h^T`; `h^0` is the input feature matrix.
    pub activations: Vec<Vec<f64>>,
    /// Aggregated inputs to layers `1 .. T`.
    pub aggregated: Vec<Vec<f64>>,
    /// Affine outputs `z^1 .. z^T` before the ReLU.
    pub preactivations: Vec<Vec<f64>>,
    pub widths: Vec<usize>,
    pub nodes: usize,
}

impl ForwardTrace {
    /// Final node embeddings `h^T`.
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has at least the input layer")
    }

    pub fn output_row(&self, v: usize) -> &[f64] {
        let d = *self.widths.last().expect("non-empty widths");
        &self.output()[v * d..(v + 1) * d]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Per layer, same layout as [`Layer::weight`].
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    /// Gradient with respect to the input feature matrix.
    pub input: Vec<f64>,
}

/// Closed-neighborhood coefficients `(u, s_vu / C_v)` of node `v`, self
/// first with coefficient `1 / C_v`.
pub fn aggregation_coefficients(g: &KnowledgeGraph, v: usize) -> Vec<(usize, f64)> {
    let c = g.normalizer(v);
    std::iter::once((v, 1.0 / c))
        .chain(g.neighbors(v).map(|(u, s)| (u, s / c)))
        .collect()
}

/// Aggregates row `v` of the `nodes x width` matrix `h_prev`.
pub fn aggregate(g: &KnowledgeGraph, h_prev: &[f64], width: usize, v: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    aggregate_into(g, h_prev, width, v, g.normalizer(v), &mut out);
    out
}

// Written as h_v + sum_u s_vu (h_u - h_v) / C_v, which equals the weighted
// mean over S(v) and returns h_v exactly when all rows are equal.
fn aggregate_into(g: &KnowledgeGraph, h: &[f64], width: usize, v: usize, c: f64, out: &mut [f64]) {
    let own = &h[v * width..(v + 1) * width];
    out.fill(0.0);
    for (u, s) in g.neighbors(v) {
        let other = &h[u * width..(u + 1) * width];
        for ((acc, &x), &y) in out.iter_mut().zip(other).zip(own) {
            *acc += s * (x - y);
        }
    }
    for (acc, &y) in out.iter_mut().zip(own) {
        *acc = y + *acc / c;
    }
}

fn aggregate_all(g: &KnowledgeGraph, h: &[f64], width: usize, normalizers: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; h.len()];
    out.par_chunks_mut(width)
        .enumerate()
        .for_each(|(v, row)| aggregate_into(g, h, width, v, normalizers[v], row));
    out
}

// Transpose of the aggregation operator: node u collects its own upstream
// gradient scaled by 1/C_u and each neighbor's scaled by s_uv/C_v.
fn aggregate_transpose(g: &KnowledgeGraph, grad: &[f64], width: usize, normalizers: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grad.len()];
    out.par_chunks_mut(width).enumerate().for_each(|(u, row)| {
        let inv = 1.0 / normalizers[u];
        for (acc, &x) in row.iter_mut().zip(&grad[u * width..(u + 1) * width]) {
            *acc = x * inv;
        }
        for (v, s) in g.neighbors(u) {
            let coef = s / normalizers[v];
            for (acc, &x) in row.iter_mut().zip(&grad[v * width..(v + 1) * width]) {
                *acc += coef * x;
            }
        }
    });
    out
}

/// `c (m x n) = a (m x k) * b (k x n)` with explicit strides; `c` is
/// overwritten and must be row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the caller's strides describe matrices fully inside `a` and
    // `b`; `c` holds at least m*n elements laid out row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn forward(g: &KnowledgeGraph, model: &GcnModel) -> Result<ForwardTrace> {
    forward_from(g, model, g.features())
}

/// Forward pass with `input` (row-major `nodes x d_0`) in place of the
/// graph's feature matrix.
pub fn forward_from(g: &KnowledgeGraph, model: &GcnModel, input: &[f64]) -> Result<ForwardTrace> {
    let n = g.len();
    if model.input_dim() != g.dim() {
        return Err(Error::Shape(format!(
            "model expects {}-dim input, graph features are {}-dim",
            model.input_dim(),
            g.dim()
        )));
    }
    if input.len() != n * model.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} values, expected {}",
            input.len(),
            n * model.input_dim()
        )));
    }
    let normalizers: Vec<f64> = (0..n).map(|v| g.normalizer(v)).collect();
    let depth = model.depth();
    let mut activations = Vec::with_capacity(depth + 1);
    let mut aggregated = Vec::with_capacity(depth);
    let mut preactivations = Vec::with_capacity(depth);
    activations.push(input.to_vec());

    for (t, layer) in model.layers().iter().enumerate() {
        let h = &activations[t];
        let agg = aggregate_all(g, h, layer.in_dim, &normalizers);
        let mut z = vec![0.0; n * layer.out_dim];
        // z = agg * W^T
        gemm(
            n,
            layer.in_dim,
            layer.out_dim,
            &agg,
            layer.in_dim,
            1,
            &layer.weight,
            1,
            layer.in_dim,
            &mut z,
        );
        for row in z.chunks_mut(layer.out_dim) {
            for (x, b) in row.iter_mut().zip(&layer.bias) {
                *x += b;
            }
        }
        let next = if t + 1 < depth {
            z.iter().map(|&x| x.max(0.0)).collect()
        } else {
            z.clone()
        };
        aggregated.push(agg);
        preactivations.push(z);
        activations.push(next);
    }

    Ok(ForwardTrace {
        activations,
        aggregated,
        preactivations,
        widths: model.dims(),
        nodes: n,
    })
}

/// Gradients of a scalar loss whose derivative with respect to the final
/// embeddings is `grad_out` (row-major `nodes x d_T`). ReLU'(0) is taken
/// as 0.
pub fn backward(g: &KnowledgeGraph, model: &GcnModel, trace: &ForwardTrace, grad_out: &[f64]) -> Result<Gradients> {
    let n = g.len();
    let depth = model.depth();
    if trace.nodes != n || trace.widths != model.dims() || trace.preactivations.len() != depth {
        return Err(Error::Shape("trace was not produced by this graph and model".into()));
    }
    if grad_out.len() != n * model.output_dim() {
        return Err(Error::Shape(format!(
            "output gradient has {} values, expected {}",
            grad_out.len(),
            n * model.output_dim()
        )));
    }
    let normalizers: Vec<f64> = (0..n).map(|v| g.normalizer(v)).collect();
    let mut weights = vec![Vec::new(); depth];
    let mut biases = vec![Vec::new(); depth];
    let mut upstream = grad_out.to_vec();

    for t in (0..depth).rev() {
        let layer = &model.layers()[t];
        let (d_in, d_out) = (layer.in_dim, layer.out_dim);
        let mut dz = upstream;
        if t + 1 < depth {
            for (d, &z) in dz.iter_mut().zip(&trace.preactivations[t]) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
        }

        let mut gb = vec![0.0; d_out];
        for row in dz.chunks(d_out) {
            for (acc, x) in gb.iter_mut().zip(row) {
                *acc += x;
            }
        }
        // dW = dz^T * agg
        let mut gw = vec![0.0; d_out * d_in];
        gemm(d_out, n, d_in, &dz, 1, d_out, &trace.aggregated[t], d_in, 1, &mut gw);
        // d(agg) = dz * W
        let mut dagg = vec![0.0; n * d_in];
        gemm(n, d_out, d_in, &dz, d_out, 1, &layer.weight, d_in, 1, &mut dagg);

        weights[t] = gw;
        biases[t] = gb;
        upstream = aggregate_transpose(g, &dagg, d_in, &normalizers);
    }

    Ok(Gradients {
        weights,
        biases,
        input: upstream,
    })
}

/// Reference forward pass through an explicit dense `n x n` normalized
/// adjacency matrix and naive loops. Meant for small test graphs only.
pub fn forward_dense_oracle(g: &KnowledgeGraph, model: &GcnModel) -> Vec<f64> {
    let n = g.len();
    let mut adj = vec![vec![0.0; n]; n];
    for (v, row) in adj.iter_mut().enumerate() {
        let c = 1.0 + g.neighbors(v).map(|(_, s)| s).sum::<f64>();
        row[v] = 1.0 / c;
        for (u, s) in g.neighbors(v) {
            row[u] = s / c;
        }
    }
    let mut h: Vec<Vec<f64>> = (0..n).map(|v| g.feature(v).to_vec()).collect();
    let depth = model.depth();
    for (t, layer) in model.layers().iter().enumerate() {
        let agg: Vec<Vec<f64>> = (0..n)
            .map(|v| {
                (0..layer.in_dim)
                    .map(|c| (0..n).map(|u| adj[v][u] * h[u][c]).sum())
                    .collect()
            })
            .collect();
        h = agg
            .iter()
            .map(|a| {
                (0..layer.out_dim)
                    .map(|r| {
                        let z = layer.bias[r] + (0..layer.in_dim).map(|c| layer.weight_at(r, c) * a[c]).sum::<f64>();
                        if t + 1 < depth {
                            z.max(0.0)
                        } else {
                            z
                        }
                    })
                    .collect()
            })
            .collect();
    }
    h.into_iter().flatten().collect()
}
