// Copyright 2026 the nebula authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! The behavior scorer: node-type embeddings, three rounds of mean-
//! aggregation message passing over the window graph, and a logistic edge
//! head. Everything is plain `f64` with a flat parameter vector, so
//! training is deterministic given a seed and gradients are easy to verify
//! against finite differences.
//!
//! Aggregation treats the window as an undirected multigraph: each edge
//! contributes both endpoints to the other's neighbor list, and a node
//! with no neighbors aggregates the zero vector.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{CodecError, Reader, Writer};
use crate::dagfeat::FEATURE_DIM;
use crate::math;
use crate::windowing::WindowGraph;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"NEBM";
pub const LITE_MAGIC: [u8; 4] = *b"NEBL";
pub const WEIGHTS_VERSION: u32 = 1;

const NODE_TYPES: usize = 8;
const EDGE_TYPES: usize = 6;
const LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderError {
    /// Weight dimensions disagree with the file, config, or each other.
    ShapeMismatch(String),
    /// Training data contains a single class.
    DegenerateLabels,
    /// Loss left the finite range during training.
    NonFiniteLoss,
    /// A training-config invariant is broken.
    InvalidConfig(String),
    Codec(CodecError),
}

impl fmt::Display for EncoderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderError::ShapeMismatch(what) => write!(f, "shape mismatch: {what}"),
            EncoderError::DegenerateLabels => write!(f, "training labels contain a single class"),
            EncoderError::NonFiniteLoss => write!(f, "loss became non-finite"),
            EncoderError::InvalidConfig(what) => write!(f, "invalid train config: {what}"),
            EncoderError::Codec(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for EncoderError {}

impl From<CodecError> for EncoderError {
    fn from(e: CodecError) -> Self {
        EncoderError::Codec(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Windows per gradient step.
    pub batch: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.01, epochs: 20, batch: 8, l2: 1e-4, seed: 0 }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), EncoderError> {
        if !(self.learning_rate > 0.0) {
            return Err(EncoderError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.epochs < 1 {
            return Err(EncoderError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch < 1 {
            return Err(EncoderError::InvalidConfig("batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// All model parameters in one flat vector with a fixed layout:
/// node-type table, edge-type table, three message-passing layers
/// (`w_self`, `w_nbr`, `bias` each), then the two head layers. Matrices
/// are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    d: usize,
    h: usize,
    params: Vec<f64>,
}

fn param_len(d: usize, h: usize) -> usize {
    NODE_TYPES * d + EDGE_TYPES * d + LAYERS * (2 * d * d + d) + h * 3 * d + h + h + 1
}

impl ModelWeights {
    pub fn dims(&self) -> (usize, usize) {
        (self.d, self.h)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Seeded uniform init in `[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn init(d: usize, h: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / math::sqrt(d as f64);
        let params = (0..param_len(d, h))
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
            .collect();
        ModelWeights { d, h, params }
    }

    fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    // Offsets into the flat layout.
    fn off_node(&self) -> usize {
        0
    }
    fn off_edge(&self) -> usize {
        NODE_TYPES * self.d
    }
    fn off_layer(&self, l: usize) -> usize {
        self.off_edge() + EDGE_TYPES * self.d + l * (2 * self.d * self.d + self.d)
    }
    fn off_head_w1(&self) -> usize {
        self.off_layer(LAYERS)
    }
    fn off_head_b1(&self) -> usize {
        self.off_head_w1() + self.h * 3 * self.d
    }
    fn off_head_w2(&self) -> usize {
        self.off_head_b1() + self.h
    }
    fn off_head_b2(&self) -> usize {
        self.off_head_w2() + self.h
    }

    fn node_emb<'a>(&self, p: &'a [f64], t: usize) -> &'a [f64] {
        let o = self.off_node() + t * self.d;
        &p[o..o + self.d]
    }
    fn edge_emb<'a>(&self, p: &'a [f64], t: usize) -> &'a [f64] {
        let o = self.off_edge() + t * self.d;
        &p[o..o + self.d]
    }
    fn w_self<'a>(&self, p: &'a [f64], l: usize) -> &'a [f64] {
        let o = self.off_layer(l);
        &p[o..o + self.d * self.d]
    }
    fn w_nbr<'a>(&self, p: &'a [f64], l: usize) -> &'a [f64] {
        let o = self.off_layer(l) + self.d * self.d;
        &p[o..o + self.d * self.d]
    }
    fn bias<'a>(&self, p: &'a [f64], l: usize) -> &'a [f64] {
        let o = self.off_layer(l) + 2 * self.d * self.d;
        &p[o..o + self.d]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(WEIGHTS_MAGIC, WEIGHTS_VERSION);
        w.put_u32(self.d as u32);
        w.put_u32(self.h as u32);
        w.put_f64_array(&self.params);
        w.finish()
    }

    /// Decodes a weight container; when `expected` dims are supplied, a
    /// file with different dims is a `ShapeMismatch`.
    pub fn from_bytes(
        bytes: &[u8],
        expected: Option<(usize, usize)>,
    ) -> Result<Self, EncoderError> {
        let mut r = Reader::open(bytes, WEIGHTS_MAGIC, WEIGHTS_VERSION)?;
        let d = r.u32()? as usize;
        let h = r.u32()? as usize;
        let params = r.f64_array()?;
        r.done()?;
        if params.len() != param_len(d, h) {
            return Err(EncoderError::ShapeMismatch(format!(
                "parameter count {} does not match dims d={d} h={h}",
                params.len()
            )));
        }
        if let Some((ed, eh)) = expected {
            if (d, h) != (ed, eh) {
                return Err(EncoderError::ShapeMismatch(format!(
                    "file dims d={d} h={h}, configured d={ed} h={eh}"
                )));
            }
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(EncoderError::ShapeMismatch("non-finite parameter".into()));
        }
        Ok(ModelWeights { d, h, params })
    }
}

struct LocalGraph {
    /// Neighbor multiset per local node (both directions of every edge).
    nbrs: Vec<Vec<usize>>,
}

fn local_graph(g: &WindowGraph) -> LocalGraph {
    let mut nbrs = vec![Vec::new(); g.num_nodes()];
    for i in 0..g.num_edges() {
        let s = g.local_of(g.edge_src[i]).expect("edge src present in node list");
        let t = g.local_of(g.edge_dst[i]).expect("edge dst present in node list");
        nbrs[s].push(t);
        nbrs[t].push(s);
    }
    LocalGraph { nbrs }
}

/// Every intermediate needed for a backward pass.
struct ForwardTrace {
    /// Activations per layer; `acts[0]` is the embedding lookup.
    acts: Vec<Vec<f64>>,
    /// Pre-activations for layers 1..=3.
    pres: Vec<Vec<f64>>,
    /// Mean-aggregated neighbor inputs for layers 1..=3.
    aggs: Vec<Vec<f64>>,
    /// Per scored edge: head input, hidden pre-activation, output.
    xs: Vec<Vec<f64>>,
    z1s: Vec<Vec<f64>>,
    scores: Vec<f64>,
}

fn mat_vec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

fn mat_t_vec(w: &[f64], dz: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (i, &g) in dz.iter().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        for (o, &a) in out.iter_mut().zip(row) {
            *o += a * g;
        }
    }
}

fn forward_trace(g: &WindowGraph, w: &ModelWeights, scored: &[usize]) -> ForwardTrace {
    let d = w.d;
    let n = g.num_nodes();
    let lg = local_graph(g);
    let p = w.params();

    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(LAYERS + 1);
    let mut h0 = vec![0.0; n * d];
    for (v, &t) in g.node_types.iter().enumerate() {
        h0[v * d..(v + 1) * d].copy_from_slice(w.node_emb(p, t.code() as usize));
    }
    acts.push(h0);

    let mut pres = Vec::with_capacity(LAYERS);
    let mut aggs = Vec::with_capacity(LAYERS);
    for l in 0..LAYERS {
        let prev = &acts[l];
        let mut agg = vec![0.0; n * d];
        for v in 0..n {
            let deg = lg.nbrs[v].len();
            if deg == 0 {
                continue;
            }
            let row = &mut agg[v * d..(v + 1) * d];
            for &u in &lg.nbrs[v] {
                for (a, b) in row.iter_mut().zip(&prev[u * d..(u + 1) * d]) {
                    *a += b;
                }
            }
            for a in row.iter_mut() {
                *a /= deg as f64;
            }
        }
        let mut pre = vec![0.0; n * d];
        for v in 0..n {
            let out = &mut pre[v * d..(v + 1) * d];
            out.copy_from_slice(w.bias(p, l));
            mat_vec(w.w_self(p, l), &prev[v * d..(v + 1) * d], out);
            mat_vec(w.w_nbr(p, l), &agg[v * d..(v + 1) * d], out);
        }
        let act = pre.iter().map(|&z| z.max(0.0)).collect();
        pres.push(pre);
        aggs.push(agg);
        acts.push(act);
    }

    let top = &acts[LAYERS];
    let mut xs = Vec::with_capacity(scored.len());
    let mut z1s = Vec::with_capacity(scored.len());
    let mut scores = Vec::with_capacity(scored.len());
    for &i in scored {
        let s = g.local_of(g.edge_src[i]).unwrap();
        let t = g.local_of(g.edge_dst[i]).unwrap();
        let et = g.edge_types[i].code() as usize;
        let mut x = Vec::with_capacity(3 * d);
        x.extend_from_slice(&top[s * d..(s + 1) * d]);
        x.extend_from_slice(&top[t * d..(t + 1) * d]);
        x.extend_from_slice(w.edge_emb(p, et));
        let mut z1 = w.params()[w.off_head_b1()..w.off_head_b1() + w.h].to_vec();
        mat_vec(&p[w.off_head_w1()..w.off_head_w1() + w.h * 3 * d], &x, &mut z1);
        let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let w2 = &p[w.off_head_w2()..w.off_head_w2() + w.h];
        let mut z2 = p[w.off_head_b2()];
        for (a, b) in w2.iter().zip(&a1) {
            z2 += a * b;
        }
        xs.push(x);
        z1s.push(z1);
        scores.push(math::sigmoid(z2));
    }
    ForwardTrace { acts, pres, aggs, xs, z1s, scores }
}

/// Scores the given edges of a window graph; pure and deterministic for
/// fixed weights. Outputs are strictly inside `(0, 1)`.
pub fn forward(
    g: &WindowGraph,
    w: &ModelWeights,
    scored: &[usize],
) -> Result<Vec<f64>, EncoderError> {
    if w.params.len() != param_len(w.d, w.h) {
        return Err(EncoderError::ShapeMismatch("weight vector length".into()));
    }
    debug_assert!(scored.iter().all(|&i| i < g.num_edges()));
    Ok(forward_trace(g, w, scored).scores)
}

/// One labeled training window.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub graph: WindowGraph,
    pub scored: Vec<usize>,
    pub labels: Vec<u8>,
}

fn bce(score: f64, label: f64) -> f64 {
    let eps = 1e-12;
    let p = score.clamp(eps, 1.0 - eps);
    -(label * math::ln(p) + (1.0 - label) * math::ln(1.0 - p))
}

/// Mean logistic loss over one example set (no regularizer).
pub fn dataset_loss(examples: &[TrainExample], w: &ModelWeights) -> Result<f64, EncoderError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ex in examples {
        let scores = forward(&ex.graph, w, &ex.scored)?;
        for (s, &y) in scores.iter().zip(&ex.labels) {
            total += bce(*s, y as f64);
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Accumulates the gradient of the mean logistic loss over one window into
/// `grads`; returns the number of edges contributing. `inv_count` is the
/// 1/K normalizer shared across the batch.
fn accumulate_grads(
    ex: &TrainExample,
    w: &ModelWeights,
    grads: &mut [f64],
    inv_count: f64,
) -> f64 {
    let d = w.d;
    let n = ex.graph.num_nodes();
    let lg = local_graph(&ex.graph);
    let p = w.params();
    let trace = forward_trace(&ex.graph, w, &ex.scored);

    let mut loss = 0.0;
    let mut d_top = vec![0.0; n * d];
    for (k, &i) in ex.scored.iter().enumerate() {
        let y = ex.labels[k] as f64;
        let score = trace.scores[k];
        loss += bce(score, y);
        let dz2 = (score - y) * inv_count;

        let x = &trace.xs[k];
        let z1 = &trace.z1s[k];
        let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let w2 = &p[w.off_head_w2()..w.off_head_w2() + w.h];

        grads[w.off_head_b2()] += dz2;
        for (j, &a) in a1.iter().enumerate() {
            grads[w.off_head_w2() + j] += dz2 * a;
        }
        let dz1: Vec<f64> = (0..w.h)
            .map(|j| if z1[j] > 0.0 { w2[j] * dz2 } else { 0.0 })
            .collect();
        for (j, &g1) in dz1.iter().enumerate() {
            grads[w.off_head_b1() + j] += g1;
            let row = w.off_head_w1() + j * 3 * d;
            for (c, &xv) in x.iter().enumerate() {
                grads[row + c] += g1 * xv;
            }
        }
        let mut dx = vec![0.0; 3 * d];
        mat_t_vec(&p[w.off_head_w1()..w.off_head_w1() + w.h * 3 * d], &dz1, &mut dx);

        let s = ex.graph.local_of(ex.graph.edge_src[i]).unwrap();
        let t = ex.graph.local_of(ex.graph.edge_dst[i]).unwrap();
        let et = ex.graph.edge_types[i].code() as usize;
        for c in 0..d {
            d_top[s * d + c] += dx[c];
            d_top[t * d + c] += dx[d + c];
            grads[w.off_edge() + et * d + c] += dx[2 * d + c];
        }
    }

    let mut d_act = d_top;
    for l in (0..LAYERS).rev() {
        let prev = &trace.acts[l];
        let pre = &trace.pres[l];
        let agg = &trace.aggs[l];
        let mut d_prev = vec![0.0; n * d];
        for v in 0..n {
            let dz: Vec<f64> = (0..d)
                .map(|c| if pre[v * d + c] > 0.0 { d_act[v * d + c] } else { 0.0 })
                .collect();
            if dz.iter().all(|&z| z == 0.0) {
                continue;
            }
            let layer = w.off_layer(l);
            for (r, &g1) in dz.iter().enumerate() {
                grads[layer + 2 * d * d + r] += g1;
                let self_row = layer + r * d;
                let nbr_row = layer + d * d + r * d;
                for c in 0..d {
                    grads[self_row + c] += g1 * prev[v * d + c];
                    grads[nbr_row + c] += g1 * agg[v * d + c];
                }
            }
            mat_t_vec(w.w_self(p, l), &dz, &mut d_prev[v * d..(v + 1) * d]);
            let deg = lg.nbrs[v].len();
            if deg > 0 {
                let mut back = vec![0.0; d];
                mat_t_vec(w.w_nbr(p, l), &dz, &mut back);
                let scale = 1.0 / deg as f64;
                for &u in &lg.nbrs[v] {
                    for (o, &b) in d_prev[u * d..(u + 1) * d].iter_mut().zip(&back) {
                        *o += b * scale;
                    }
                }
            }
        }
        d_act = d_prev;
    }
    for (v, &t) in ex.graph.node_types.iter().enumerate() {
        let o = w.off_node() + t.code() as usize * d;
        for c in 0..d {
            grads[o + c] += d_act[v * d + c];
        }
    }
    loss
}

/// Trains all weight groups with seeded mini-batch gradient descent on the
/// mean logistic loss plus an L2 penalty. Deterministic for a fixed seed:
/// init and the per-epoch shuffle draw from one ChaCha stream.
pub fn train_head(
    examples: &[TrainExample],
    d: usize,
    h: usize,
    cfg: &TrainConfig,
) -> Result<ModelWeights, EncoderError> {
    cfg.validate()?;
    let mut pos = 0usize;
    let mut neg = 0usize;
    for ex in examples {
        if ex.scored.len() != ex.labels.len() {
            return Err(EncoderError::ShapeMismatch("labels vs scored edges".into()));
        }
        for &y in &ex.labels {
            if y == 0 {
                neg += 1;
            } else {
                pos += 1;
            }
        }
    }
    if pos == 0 || neg == 0 {
        return Err(EncoderError::DegenerateLabels);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 1.0 / math::sqrt(d as f64);
    let mut w = ModelWeights {
        d,
        h,
        params: (0..param_len(d, h))
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
            .collect(),
    };

    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _epoch in 0..cfg.epochs {
        // Fisher-Yates with the shared stream.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch) {
            let count: usize = chunk.iter().map(|&i| examples[i].scored.len()).sum();
            if count == 0 {
                continue;
            }
            let mut grads = w.zeros_like();
            let mut batch_loss = 0.0;
            for &i in chunk {
                batch_loss += accumulate_grads(&examples[i], &w, &mut grads, 1.0 / count as f64);
            }
            if !batch_loss.is_finite() {
                return Err(EncoderError::NonFiniteLoss);
            }
            for (p, g) in w.params.iter_mut().zip(&grads) {
                *p -= cfg.learning_rate * (g + cfg.l2 * *p);
            }
        }
    }
    Ok(w)
}

/// Compares analytic gradients against central finite differences on one
/// sample; returns the maximum relative error over every parameter. A
/// sample with no scored edges returns 0 by convention.
pub fn grad_check(w: &ModelWeights, ex: &TrainExample) -> f64 {
    if ex.scored.is_empty() {
        return 0.0;
    }
    let count = ex.scored.len();
    let mut analytic = w.zeros_like();
    accumulate_grads(ex, w, &mut analytic, 1.0 / count as f64);

    let step = 1e-5;
    let mut probe = w.clone();
    let mut worst = 0.0f64;
    for i in 0..probe.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + step;
        let up = dataset_loss(core::slice::from_ref(ex), &probe).unwrap();
        probe.params[i] = orig - step;
        let down = dataset_loss(core::slice::from_ref(ex), &probe).unwrap();
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let denom = (math::abs(analytic[i]) + math::abs(numeric)).max(1e-6);
        worst = worst.max(math::abs(analytic[i] - numeric) / denom);
    }
    worst
}

/// Variant of [`grad_check`] with the neighbor-matrix gradient zeroed;
/// used as a mutation probe that a correct checker must flag.
pub fn grad_check_mutated(w: &ModelWeights, ex: &TrainExample) -> f64 {
    if ex.scored.is_empty() {
        return 0.0;
    }
    let count = ex.scored.len();
    let mut analytic = w.zeros_like();
    accumulate_grads(ex, w, &mut analytic, 1.0 / count as f64);
    for l in 0..LAYERS {
        let o = w.off_layer(l) + w.d * w.d;
        for g in &mut analytic[o..o + w.d * w.d] {
            *g = 0.0;
        }
    }

    let step = 1e-5;
    let mut probe = w.clone();
    let mut worst = 0.0f64;
    for i in 0..probe.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + step;
        let up = dataset_loss(core::slice::from_ref(ex), &probe).unwrap();
        probe.params[i] = orig - step;
        let down = dataset_loss(core::slice::from_ref(ex), &probe).unwrap();
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let denom = (math::abs(analytic[i]) + math::abs(numeric)).max(1e-6);
        worst = worst.max(math::abs(analytic[i] - numeric) / denom);
    }
    worst
}

/// Logistic scorer over raw feature rows, used by the lite profile. Shares
/// the deterministic SGD contract of [`train_head`].
#[derive(Debug, Clone, PartialEq)]
pub struct LiteModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LiteModel {
    pub fn score(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.weights.len());
        let mut z = self.bias;
        for (w, x) in self.weights.iter().zip(row) {
            z += w * x;
        }
        math::sigmoid(z)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(LITE_MAGIC, WEIGHTS_VERSION);
        w.put_f64_array(&self.weights);
        w.put_f64(self.bias);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EncoderError> {
        let mut r = Reader::open(bytes, LITE_MAGIC, WEIGHTS_VERSION)?;
        let weights = r.f64_array()?;
        let bias = r.f64()?;
        r.done()?;
        if weights.len() != FEATURE_DIM {
            return Err(EncoderError::ShapeMismatch(format!(
                "lite weights len {} != {FEATURE_DIM}",
                weights.len()
            )));
        }
        Ok(LiteModel { weights, bias })
    }
}

/// Trains the lite logistic scorer on feature rows.
pub fn train_lite(
    rows: &[Vec<f64>],
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<LiteModel, EncoderError> {
    cfg.validate()?;
    if rows.len() != labels.len() {
        return Err(EncoderError::ShapeMismatch("labels vs rows".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(EncoderError::DegenerateLabels);
    }
    let dim = rows.first().map(|r| r.len()).unwrap_or(FEATURE_DIM);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 1.0 / math::sqrt(dim as f64);
    let mut model = LiteModel {
        weights: (0..dim)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
            .collect(),
        bias: 0.0,
    };
    let mut order: Vec<usize> = (0..rows.len()).collect();
    // Row batches mirror the window batching heuristic.
    let batch = (cfg.batch * 64).max(1);
    for _epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(batch) {
            let inv = 1.0 / chunk.len() as f64;
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            let mut loss = 0.0;
            for &i in chunk {
                let p = model.score(&rows[i]);
                let y = labels[i] as f64;
                loss += bce(p, y);
                let dz = (p - y) * inv;
                gb += dz;
                for (g, x) in gw.iter_mut().zip(&rows[i]) {
                    *g += dz * x;
                }
            }
            if !loss.is_finite() {
                return Err(EncoderError::NonFiniteLoss);
            }
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= cfg.learning_rate * (g + cfg.l2 * *w);
            }
            model.bias -= cfg.learning_rate * gb;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{EdgeType, NodeType};
    use crate::windowing::{EdgeAttrs, WindowGraph};

    pub(crate) fn tiny_graph() -> WindowGraph {
        // agent(0) -invoke-> tool(1) -net_out-> remote(2); tool(3) isolated edge pair.
        WindowGraph {
            window_id: 0,
            t_start: 0,
            t_end: 10_000,
            node_ids: vec![0, 1, 2, 3, 4],
            node_types: vec![
                NodeType::Agent,
                NodeType::Tool,
                NodeType::Remote,
                NodeType::Agent,
                NodeType::Tool,
            ],
            edge_src: vec![0, 1, 3],
            edge_dst: vec![1, 2, 4],
            edge_types: vec![EdgeType::Invoke, EdgeType::NetOut, EdgeType::Invoke],
            edge_ts: vec![1_000, 1_000, 2_000],
            edge_eids: vec!["a".into(), "a:net".into(), "b".into()],
            edge_attrs: vec![EdgeAttrs::default(), EdgeAttrs::default(), EdgeAttrs::default()],
        }
    }

    #[test]
    fn empty_graph_scores_nothing() {
        let w = ModelWeights::init(8, 16, 1);
        let g = WindowGraph::default();
        assert!(forward(&g, &w, &[]).unwrap().is_empty());
    }

    #[test]
    fn scores_stay_in_open_interval() {
        let w = ModelWeights::init(8, 16, 1);
        let g = tiny_graph();
        for s in forward(&g, &w, &[0, 1, 2]).unwrap() {
            assert!(s > 0.0 && s < 1.0);
        }
    }

    #[test]
    fn isolated_edge_ignores_unrelated_nodes() {
        let w = ModelWeights::init(8, 16, 1);
        let g = tiny_graph();
        let full = forward(&g, &w, &[2]).unwrap()[0];

        // The same isolated pair alone in a window.
        let lone = WindowGraph {
            node_ids: vec![3, 4],
            node_types: vec![NodeType::Agent, NodeType::Tool],
            edge_src: vec![3],
            edge_dst: vec![4],
            edge_types: vec![EdgeType::Invoke],
            edge_ts: vec![2_000],
            edge_eids: vec!["b".into()],
            edge_attrs: vec![EdgeAttrs::default()],
            ..tiny_graph()
        };
        let alone = forward(&lone, &w, &[0]).unwrap()[0];
        assert!((full - alone).abs() < 1e-12);
    }

    #[test]
    fn weights_round_trip_and_reject_damage() {
        let w = ModelWeights::init(32, 64, 7);
        let bytes = w.to_bytes();
        assert_eq!(ModelWeights::from_bytes(&bytes, Some((32, 64))).unwrap(), w);

        let mut bad = bytes.clone();
        bad[40] ^= 1;
        assert!(matches!(
            ModelWeights::from_bytes(&bad, None),
            Err(EncoderError::Codec(CodecError::CorruptContainer(_)))
        ));

        assert!(matches!(
            ModelWeights::from_bytes(&bytes, Some((16, 64))),
            Err(EncoderError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let g = tiny_graph();
        let ex = TrainExample { graph: g, scored: vec![0, 1, 2], labels: vec![0, 1, 0] };
        let cfg = TrainConfig { epochs: 30, seed: 5, ..TrainConfig::default() };
        let before = dataset_loss(
            core::slice::from_ref(&ex),
            &ModelWeights::init(8, 16, cfg.seed),
        )
        .unwrap();
        let w1 = train_head(core::slice::from_ref(&ex), 8, 16, &cfg).unwrap();
        let w2 = train_head(core::slice::from_ref(&ex), 8, 16, &cfg).unwrap();
        assert_eq!(w1, w2, "same seed must give bit-identical weights");
        let after = dataset_loss(core::slice::from_ref(&ex), &w1).unwrap();
        assert!(after <= before, "loss {after} should not exceed init loss {before}");
    }

    #[test]
    fn zero_epochs_rejected() {
        let g = tiny_graph();
        let ex = TrainExample { graph: g, scored: vec![0], labels: vec![1] };
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(
            train_head(&[ex], 8, 16, &cfg),
            Err(EncoderError::InvalidConfig(_))
        ));
    }

    #[test]
    fn single_class_rejected() {
        let g = tiny_graph();
        let ex = TrainExample { graph: g, scored: vec![0, 1], labels: vec![0, 0] };
        assert_eq!(
            train_head(&[ex], 8, 16, &TrainConfig::default()).unwrap_err(),
            EncoderError::DegenerateLabels
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        let w = ModelWeights::init(6, 10, 11);
        let ex = TrainExample { graph: tiny_graph(), scored: vec![0, 1, 2], labels: vec![1, 1, 0] };
        let err = grad_check(&w, &ex);
        assert!(err < 1e-4, "max relative error {err}");
        let mutated = grad_check_mutated(&w, &ex);
        assert!(mutated > 1e-2, "mutation must be detected, got {mutated}");
    }

    #[test]
    fn zero_edge_sample_checks_clean() {
        let w = ModelWeights::init(6, 10, 11);
        let ex = TrainExample { graph: tiny_graph(), scored: vec![], labels: vec![] };
        assert_eq!(grad_check(&w, &ex), 0.0);
    }

    #[test]
    fn lite_model_learns_separable_rows() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let hot = i % 2;
            let mut row = vec![0.0; FEATURE_DIM];
            row[10] = hot as f64; // rarity-like column carries the class
            rows.push(row);
            labels.push(hot as u8);
        }
        let cfg = TrainConfig { epochs: 60, learning_rate: 0.5, seed: 3, ..TrainConfig::default() };
        let m = train_lite(&rows, &labels, &cfg).unwrap();
        let correct = rows
            .iter()
            .zip(&labels)
            .filter(|(r, &y)| (m.score(r) >= 0.5) == (y == 1))
            .count();
        assert!(correct as f64 / rows.len() as f64 >= 0.99);
        assert_eq!(LiteModel::from_bytes(&m.to_bytes()).unwrap(), m);
    }
}
