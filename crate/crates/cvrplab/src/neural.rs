//! A small attention policy network with handwritten forward and
//! backward passes.
//!
//! The architecture is deliberately light on the encoder and heavy on
//! the decoder: nodes are embedded by one linear projection plus a
//! single attention layer, while every decode step runs a fresh stack
//! of attention layers over [start context, destination context,
//! available nodes] and scores the available rows. Attention layers are
//! residual without any normalization: h' = h + MHA(h), out = h' +
//! FF(h'). All gradients are computed by explicit backpropagation and
//! are checked against central finite differences in the tests.

use crate::decode::{feasible_actions, DecodeError, DecodeState, Logits, Policy};
use crate::model::{Instance, ModelError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("bad dims: {0}")]
    BadDims(String),
    #[error("non-finite value in {location}")]
    NonFinite { location: String },
    #[error("bad training target: {0}")]
    BadTarget(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn from_row(values: &[f64]) -> Mat {
        Mat {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    /// self (a x b) times other (b x c).
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let s = self.get(i, k);
                if s == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += s * other.get(k, j);
                }
            }
        }
        out
    }

    /// self (a x b) times the transpose of other, where other is (c x b).
    pub fn matmul_nt(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols);
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.get(i, k) * other.get(j, k);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// transpose of self times other, where self is (b x a) and other is (b x c).
    pub fn matmul_tn(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows);
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let s = self.get(k, i);
                if s == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += s * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Affine map y = x W^T + b with W stored (out x in) and b as a 1 x out
/// row.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Mat,
    pub b: Mat,
}

impl Linear {
    fn zeros(out_dim: usize, in_dim: usize) -> Linear {
        Linear {
            w: Mat::zeros(out_dim, in_dim),
            b: Mat::zeros(1, out_dim),
        }
    }

    fn seeded(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Linear {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut layer = Linear::zeros(out_dim, in_dim);
        for v in layer.w.data_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        for v in layer.b.data_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        layer
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = x.matmul_nt(&self.w);
        for r in 0..y.rows() {
            for c in 0..y.cols() {
                let v = y.get(r, c) + self.b.get(0, c);
                y.set(r, c, v);
            }
        }
        y
    }

    /// Accumulates dW and db into `grads` and returns dX.
    pub fn backward(&self, x: &Mat, d_y: &Mat, grads: &mut Linear) -> Mat {
        grads.w.add_assign(&d_y.matmul_tn(x));
        for r in 0..d_y.rows() {
            for c in 0..d_y.cols() {
                let v = grads.b.get(0, c) + d_y.get(r, c);
                grads.b.set(0, c, v);
            }
        }
        d_y.matmul(&self.w)
    }
}

fn softmax_rows(m: &mut Mat) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
}

/// d(softmax)/d(scores) applied row by row: ds = a .* (da - <da, a>).
fn softmax_backward_rows(attn: &Mat, d_attn: &Mat) -> Mat {
    let mut out = Mat::zeros(attn.rows(), attn.cols());
    for r in 0..attn.rows() {
        let a = attn.row(r);
        let da = d_attn.row(r);
        let dot: f64 = a.iter().zip(da).map(|(x, y)| x * y).sum();
        for c in 0..attn.cols() {
            out.set(r, c, a[c] * (da[c] - dot));
        }
    }
    out
}

fn slice_head(m: &Mat, head: usize, head_dim: usize) -> Mat {
    let mut out = Mat::zeros(m.rows(), head_dim);
    for r in 0..m.rows() {
        for c in 0..head_dim {
            out.set(r, c, m.get(r, head * head_dim + c));
        }
    }
    out
}

fn scatter_head(target: &mut Mat, head: usize, head_dim: usize, src: &Mat) {
    for r in 0..src.rows() {
        for c in 0..head_dim {
            let v = target.get(r, head * head_dim + c) + src.get(r, c);
            target.set(r, head * head_dim + c, v);
        }
    }
}

/// Residual multi-head attention block without normalization.
#[derive(Debug, Clone)]
pub struct AttentionLayer {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ff1: Linear,
    pub ff2: Linear,
    pub heads: usize,
}

/// Forward intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct AttnCache {
    input: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    attn: Vec<Mat>,
    concat: Mat,
    hres: Mat,
    ff_pre: Mat,
    ff_act: Mat,
}

impl AttentionLayer {
    fn zeros(embed: usize, heads: usize, ff_hidden: usize) -> AttentionLayer {
        AttentionLayer {
            wq: Linear::zeros(embed, embed),
            wk: Linear::zeros(embed, embed),
            wv: Linear::zeros(embed, embed),
            wo: Linear::zeros(embed, embed),
            ff1: Linear::zeros(ff_hidden, embed),
            ff2: Linear::zeros(embed, ff_hidden),
            heads,
        }
    }

    fn seeded(embed: usize, heads: usize, ff_hidden: usize, rng: &mut impl Rng) -> AttentionLayer {
        AttentionLayer {
            wq: Linear::seeded(embed, embed, rng),
            wk: Linear::seeded(embed, embed, rng),
            wv: Linear::seeded(embed, embed, rng),
            wo: Linear::seeded(embed, embed, rng),
            ff1: Linear::seeded(ff_hidden, embed, rng),
            ff2: Linear::seeded(embed, ff_hidden, rng),
            heads,
        }
    }

    pub fn forward(&self, input: &Mat) -> (Mat, AttnCache) {
        let embed = self.wq.w.rows();
        let head_dim = embed / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let q = self.wq.forward(input);
        let k = self.wk.forward(input);
        let v = self.wv.forward(input);
        let mut concat = Mat::zeros(input.rows(), embed);
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = slice_head(&q, h, head_dim);
            let kh = slice_head(&k, h, head_dim);
            let vh = slice_head(&v, h, head_dim);
            let mut scores = qh.matmul_nt(&kh);
            for s in scores.data_mut() {
                *s *= scale;
            }
            softmax_rows(&mut scores);
            let oh = scores.matmul(&vh);
            scatter_head(&mut concat, h, head_dim, &oh);
            attn.push(scores);
        }
        let mha = self.wo.forward(&concat);
        let mut hres = input.clone();
        hres.add_assign(&mha);
        let ff_pre = self.ff1.forward(&hres);
        let mut ff_act = ff_pre.clone();
        for v in ff_act.data_mut() {
            *v = v.max(0.0);
        }
        let mut out = hres.clone();
        out.add_assign(&self.ff2.forward(&ff_act));
        (
            out,
            AttnCache {
                input: input.clone(),
                q,
                k,
                v,
                attn,
                concat,
                hres,
                ff_pre,
                ff_act,
            },
        )
    }

    /// Accumulates parameter gradients into `grads` and returns the
    /// gradient with respect to the layer input.
    pub fn backward(&self, cache: &AttnCache, d_out: &Mat, grads: &mut AttentionLayer) -> Mat {
        let embed = self.wq.w.rows();
        let head_dim = embed / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let d_ff_act = self.ff2.backward(&cache.ff_act, d_out, &mut grads.ff2);
        let mut d_ff_pre = d_ff_act;
        for (g, &pre) in d_ff_pre.data_mut().iter_mut().zip(cache.ff_pre.data()) {
            if pre <= 0.0 {
                *g = 0.0;
            }
        }
        let mut d_hres = self.ff1.backward(&cache.hres, &d_ff_pre, &mut grads.ff1);
        d_hres.add_assign(d_out);
        let d_concat = self.wo.backward(&cache.concat, &d_hres, &mut grads.wo);
        let mut d_q = Mat::zeros(cache.q.rows(), embed);
        let mut d_k = Mat::zeros(cache.k.rows(), embed);
        let mut d_v = Mat::zeros(cache.v.rows(), embed);
        for h in 0..self.heads {
            let d_oh = slice_head(&d_concat, h, head_dim);
            let qh = slice_head(&cache.q, h, head_dim);
            let kh = slice_head(&cache.k, h, head_dim);
            let vh = slice_head(&cache.v, h, head_dim);
            let d_attn = d_oh.matmul_nt(&vh);
            let d_vh = cache.attn[h].matmul_tn(&d_oh);
            let mut d_scores = softmax_backward_rows(&cache.attn[h], &d_attn);
            for s in d_scores.data_mut() {
                *s *= scale;
            }
            let d_qh = d_scores.matmul(&kh);
            let d_kh = d_scores.matmul_tn(&qh);
            scatter_head(&mut d_q, h, head_dim, &d_qh);
            scatter_head(&mut d_k, h, head_dim, &d_kh);
            scatter_head(&mut d_v, h, head_dim, &d_vh);
        }
        let mut d_input = d_hres;
        d_input.add_assign(&self.wq.backward(&cache.input, &d_q, &mut grads.wq));
        d_input.add_assign(&self.wk.backward(&cache.input, &d_k, &mut grads.wk));
        d_input.add_assign(&self.wv.backward(&cache.input, &d_v, &mut grads.wv));
        d_input
    }
}

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub embed: usize,
    pub heads: usize,
    pub decoder_layers: usize,
    pub ff_hidden: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            embed: 16,
            heads: 2,
            decoder_layers: 2,
            ff_hidden: 32,
        }
    }
}

impl Dims {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.embed == 0 || self.heads == 0 || self.decoder_layers == 0 || self.ff_hidden == 0 {
            return Err(NeuralError::BadDims("all dims must be positive".into()));
        }
        if self.embed % self.heads != 0 {
            return Err(NeuralError::BadDims(format!(
                "embed {} not divisible by heads {}",
                self.embed, self.heads
            )));
        }
        Ok(())
    }
}

/// All parameters of the policy network.
#[derive(Debug, Clone)]
pub struct PolicyParams {
    dims: Dims,
    pub input_proj: Linear,
    pub encoder: AttentionLayer,
    pub decoder: Vec<AttentionLayer>,
    pub w_start: Linear,
    pub w_dest: Linear,
    pub w_out: Linear,
}

impl PolicyParams {
    /// Zero-valued parameters with the given shape.
    pub fn zeros(dims: Dims) -> Result<PolicyParams, NeuralError> {
        dims.validate()?;
        Ok(PolicyParams {
            dims,
            input_proj: Linear::zeros(dims.embed, 3),
            encoder: AttentionLayer::zeros(dims.embed, dims.heads, dims.ff_hidden),
            decoder: (0..dims.decoder_layers)
                .map(|_| AttentionLayer::zeros(dims.embed, dims.heads, dims.ff_hidden))
                .collect(),
            w_start: Linear::zeros(dims.embed, dims.embed),
            w_dest: Linear::zeros(dims.embed, dims.embed),
            w_out: Linear::zeros(1, dims.embed),
        })
    }

    /// Uniform init in (-1/sqrt(fan_in), 1/sqrt(fan_in)) for every
    /// weight and bias, drawn in visit order from the seed.
    pub fn seeded(dims: Dims, seed: u64) -> Result<PolicyParams, NeuralError> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(PolicyParams {
            dims,
            input_proj: Linear::seeded(dims.embed, 3, &mut rng),
            encoder: AttentionLayer::seeded(dims.embed, dims.heads, dims.ff_hidden, &mut rng),
            decoder: (0..dims.decoder_layers)
                .map(|_| AttentionLayer::seeded(dims.embed, dims.heads, dims.ff_hidden, &mut rng))
                .collect(),
            w_start: Linear::seeded(dims.embed, dims.embed, &mut rng),
            w_dest: Linear::seeded(dims.embed, dims.embed, &mut rng),
            w_out: Linear::seeded(1, dims.embed, &mut rng),
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// A same-shaped parameter set holding zeros, used to accumulate
    /// gradients.
    pub fn zeros_like(&self) -> PolicyParams {
        PolicyParams::zeros(self.dims).unwrap()
    }

    /// Visits every parameter matrix in a fixed order with a stable
    /// name; checkpoints and the flat vector view rely on this order.
    pub fn visit(&self, f: &mut dyn FnMut(String, &Mat)) {
        fn linear(f: &mut dyn FnMut(String, &Mat), name: &str, l: &Linear) {
            f(format!("{name}.w"), &l.w);
            f(format!("{name}.b"), &l.b);
        }
        fn layer(f: &mut dyn FnMut(String, &Mat), name: &str, a: &AttentionLayer) {
            linear(f, &format!("{name}.wq"), &a.wq);
            linear(f, &format!("{name}.wk"), &a.wk);
            linear(f, &format!("{name}.wv"), &a.wv);
            linear(f, &format!("{name}.wo"), &a.wo);
            linear(f, &format!("{name}.ff1"), &a.ff1);
            linear(f, &format!("{name}.ff2"), &a.ff2);
        }
        linear(f, "input_proj", &self.input_proj);
        layer(f, "encoder", &self.encoder);
        for (i, dec) in self.decoder.iter().enumerate() {
            layer(f, &format!("decoder.{i}"), dec);
        }
        linear(f, "w_start", &self.w_start);
        linear(f, "w_dest", &self.w_dest);
        linear(f, "w_out", &self.w_out);
    }

    /// Mutable counterpart of [`visit`](Self::visit), same order.
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Mat)) {
        fn linear(f: &mut dyn FnMut(String, &mut Mat), name: &str, l: &mut Linear) {
            f(format!("{name}.w"), &mut l.w);
            f(format!("{name}.b"), &mut l.b);
        }
        fn layer(f: &mut dyn FnMut(String, &mut Mat), name: &str, a: &mut AttentionLayer) {
            linear(f, &format!("{name}.wq"), &mut a.wq);
            linear(f, &format!("{name}.wk"), &mut a.wk);
            linear(f, &format!("{name}.wv"), &mut a.wv);
            linear(f, &format!("{name}.wo"), &mut a.wo);
            linear(f, &format!("{name}.ff1"), &mut a.ff1);
            linear(f, &format!("{name}.ff2"), &mut a.ff2);
        }
        linear(f, "input_proj", &mut self.input_proj);
        layer(f, "encoder", &mut self.encoder);
        for (i, dec) in self.decoder.iter_mut().enumerate() {
            layer(f, &format!("decoder.{i}"), dec);
        }
        linear(f, "w_start", &mut self.w_start);
        linear(f, "w_dest", &mut self.w_dest);
        linear(f, "w_out", &mut self.w_out);
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit(&mut |_, m| count += m.data().len());
        count
    }

    /// All parameters concatenated in visit order.
    pub fn get_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        self.visit(&mut |_, m| flat.extend_from_slice(m.data()));
        flat
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<(), NeuralError> {
        if values.len() != self.param_count() {
            return Err(NeuralError::BadDims(format!(
                "flat vector has {} values, expected {}",
                values.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        self.visit_mut(&mut |_, m| {
            let len = m.data().len();
            m.data_mut().copy_from_slice(&values[offset..offset + len]);
            offset += len;
        });
        Ok(())
    }

    /// Gradient descent update: theta -= lr * grad.
    pub fn sgd_step(&mut self, grads: &PolicyParams, lr: f64) {
        let flat: Vec<f64> = self
            .get_flat()
            .iter()
            .zip(grads.get_flat())
            .map(|(p, g)| p - lr * g)
            .collect();
        self.set_flat(&flat).unwrap();
    }
}

/// Per-node input features: x, y, and demand as a fraction of capacity.
pub fn node_features(instance: &Instance) -> Mat {
    let mut features = Mat::zeros(instance.n() + 1, 3);
    for node in 0..=instance.n() {
        let p = instance.coord(node);
        features.set(node, 0, p.x);
        features.set(node, 1, p.y);
        features.set(node, 2, instance.demand(node) / instance.capacity());
    }
    features
}

/// Node embeddings plus the caches needed to backpropagate through the
/// encoder.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub features: Mat,
    pub h0: Mat,
    pub h1: Mat,
    pub cache: AttnCache,
}

/// Embeds all nodes: a linear projection followed by one attention
/// layer over the whole node set.
pub fn encode(params: &PolicyParams, instance: &Instance) -> Result<Encoding, NeuralError> {
    let features = node_features(instance);
    let h0 = params.input_proj.forward(&features);
    if !h0.is_finite() {
        return Err(NeuralError::NonFinite {
            location: "input_proj".into(),
        });
    }
    let (h1, cache) = params.encoder.forward(&h0);
    if !h1.is_finite() {
        return Err(NeuralError::NonFinite {
            location: "encoder".into(),
        });
    }
    Ok(Encoding {
        features,
        h0,
        h1,
        cache,
    })
}

/// Backpropagates a gradient on the node embeddings through the encoder
/// and input projection.
pub fn encode_backward(
    params: &PolicyParams,
    encoding: &Encoding,
    d_h1: &Mat,
    grads: &mut PolicyParams,
) {
    let d_h0 = params
        .encoder
        .backward(&encoding.cache, d_h1, &mut grads.encoder);
    params
        .input_proj
        .backward(&encoding.features, &d_h0, &mut grads.input_proj);
}

/// Forward intermediates of one decode step.
#[derive(Debug, Clone)]
pub struct StepCache {
    avail: Vec<usize>,
    current: usize,
    dest: usize,
    layers: Vec<AttnCache>,
    out: Mat,
}

/// Scores the feasible next tokens for `state`. The attention stack is
/// [projected current node, projected destination node, available
/// nodes]; the two context rows are never scored.
pub fn decode_step(
    params: &PolicyParams,
    instance: &Instance,
    h1: &Mat,
    state: &DecodeState,
) -> Result<(Logits, StepCache), NeuralError> {
    let avail = feasible_actions(instance, state);
    let embed = params.dims.embed;
    let mut stack = Mat::zeros(2 + avail.len(), embed);
    let start_row = params.w_start.forward(&Mat::from_row(h1.row(state.current)));
    let dest_row = params.w_dest.forward(&Mat::from_row(h1.row(state.dest)));
    stack.row_mut(0).copy_from_slice(start_row.row(0));
    stack.row_mut(1).copy_from_slice(dest_row.row(0));
    for (j, &tok) in avail.iter().enumerate() {
        stack.row_mut(2 + j).copy_from_slice(h1.row(tok));
    }
    let mut layers = Vec::with_capacity(params.decoder.len());
    let mut current = stack;
    for (i, layer) in params.decoder.iter().enumerate() {
        let (next, cache) = layer.forward(&current);
        if !next.is_finite() {
            return Err(NeuralError::NonFinite {
                location: format!("decoder.{i}"),
            });
        }
        layers.push(cache);
        current = next;
    }
    let mut logits = Logits::masked(instance.n() + 1);
    for (j, &tok) in avail.iter().enumerate() {
        let score: f64 = params
            .w_out
            .w
            .row(0)
            .iter()
            .zip(current.row(2 + j))
            .map(|(w, h)| w * h)
            .sum::<f64>()
            + params.w_out.b.get(0, 0);
        if !score.is_finite() {
            return Err(NeuralError::NonFinite {
                location: "w_out".into(),
            });
        }
        logits.set(tok, score);
    }
    Ok((
        logits,
        StepCache {
            avail,
            current: state.current,
            dest: state.dest,
            layers,
            out: current,
        },
    ))
}

/// Backpropagates token-space score gradients through one decode step,
/// accumulating parameter gradients and the gradient on the node
/// embeddings.
pub fn decode_step_backward(
    params: &PolicyParams,
    h1: &Mat,
    cache: &StepCache,
    d_scores: &[f64],
    grads: &mut PolicyParams,
    d_h1: &mut Mat,
) {
    let embed = params.dims.embed;
    let mut d_out = Mat::zeros(cache.out.rows(), embed);
    for (j, &tok) in cache.avail.iter().enumerate() {
        let g = d_scores[tok];
        if g == 0.0 {
            continue;
        }
        for c in 0..embed {
            let v = d_out.get(2 + j, c) + g * params.w_out.w.get(0, c);
            d_out.set(2 + j, c, v);
        }
        grads.w_out.b.set(0, 0, grads.w_out.b.get(0, 0) + g);
        for c in 0..embed {
            let v = grads.w_out.w.get(0, c) + g * cache.out.get(2 + j, c);
            grads.w_out.w.set(0, c, v);
        }
    }
    let mut d_stack = d_out;
    for i in (0..params.decoder.len()).rev() {
        d_stack = params.decoder[i].backward(&cache.layers[i], &d_stack, &mut grads.decoder[i]);
    }
    let d_start = Mat::from_row(d_stack.row(0));
    let d_dest = Mat::from_row(d_stack.row(1));
    let d_h_current = params.w_start.backward(
        &Mat::from_row(h1.row(cache.current)),
        &d_start,
        &mut grads.w_start,
    );
    for c in 0..embed {
        let v = d_h1.get(cache.current, c) + d_h_current.get(0, c);
        d_h1.set(cache.current, c, v);
    }
    let d_h_dest = params.w_dest.backward(
        &Mat::from_row(h1.row(cache.dest)),
        &d_dest,
        &mut grads.w_dest,
    );
    for c in 0..embed {
        let v = d_h1.get(cache.dest, c) + d_h_dest.get(0, c);
        d_h1.set(cache.dest, c, v);
    }
    for (j, &tok) in cache.avail.iter().enumerate() {
        for c in 0..embed {
            let v = d_h1.get(tok, c) + d_stack.get(2 + j, c);
            d_h1.set(tok, c, v);
        }
    }
}

/// Loss and gradients of one training step.
#[derive(Debug)]
pub struct TrainOutcome {
    pub loss: f64,
    pub grads: PolicyParams,
}

/// Teacher-forced cross-entropy over a complete token sequence. Every
/// token after the leading depot is a prediction target; the loss is
/// the mean negative log-likelihood under the masked softmax.
pub fn supervised_step(
    params: &PolicyParams,
    instance: &Instance,
    tokens: &[usize],
) -> Result<TrainOutcome, NeuralError> {
    if tokens.first() != Some(&0) {
        return Err(NeuralError::BadTarget(
            "token sequence must begin at the depot".into(),
        ));
    }
    let encoding = encode(params, instance)?;
    let mut grads = params.zeros_like();
    let mut d_h1 = Mat::zeros(encoding.h1.rows(), encoding.h1.cols());
    let mut state = DecodeState::fresh(instance);
    let n_steps = tokens.len() - 1;
    if n_steps == 0 {
        return Err(NeuralError::BadTarget("token sequence has no steps".into()));
    }
    let mut loss = 0.0;
    for &target in &tokens[1..] {
        let (logits, cache) = decode_step(params, instance, &encoding.h1, &state)?;
        if logits.is_masked(target) {
            return Err(NeuralError::BadTarget(format!(
                "token {target} is infeasible at step {}",
                state.selected_count()
            )));
        }
        let probs = logits.probs();
        loss -= probs[target].ln();
        let mut d_scores = vec![0.0; instance.n() + 1];
        for &tok in &cache.avail {
            d_scores[tok] = (probs[tok] - if tok == target { 1.0 } else { 0.0 }) / n_steps as f64;
        }
        decode_step_backward(params, &encoding.h1, &cache, &d_scores, &mut grads, &mut d_h1);
        state.apply(instance, target);
    }
    if !state.is_terminal() {
        return Err(NeuralError::BadTarget(
            "token sequence does not finish the instance".into(),
        ));
    }
    encode_backward(params, &encoding, &d_h1, &mut grads);
    loss /= n_steps as f64;
    if !loss.is_finite() {
        return Err(NeuralError::NonFinite {
            location: "supervised loss".into(),
        });
    }
    Ok(TrainOutcome { loss, grads })
}

/// Advantages in the pairwise form A_i = sum_j (R_i - R_j) / N. When
/// every reward is identical each sum is a sum of exact zeros, so the
/// advantages are exactly zero rather than rounding noise.
pub fn pairwise_advantages(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len() as f64;
    rewards
        .iter()
        .map(|&ri| rewards.iter().map(|&rj| ri - rj).sum::<f64>() / n)
        .collect()
}

/// One policy-gradient step.
#[derive(Debug)]
pub struct ReinforceOutcome {
    /// The surrogate objective (1/N) sum_i A_i log pi(traj_i) whose
    /// gradient is the policy gradient; advantages are treated as
    /// constants.
    pub surrogate: f64,
    pub grads: PolicyParams,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub baseline: f64,
    pub trajectories: Vec<crate::decode::Trajectory>,
}

/// Samples one trajectory per start customer, scores them by cost, and
/// returns the policy gradient of the advantage-weighted log-likelihood.
/// The forced start step carries no gradient; log-likelihoods here are
/// unsmoothed.
pub fn reinforce_step(
    params: &PolicyParams,
    instance: &Instance,
    n_starts: usize,
    seed: u64,
) -> Result<ReinforceOutcome, NeuralError> {
    let policy = NeuralPolicy::new(params, instance)?;
    let rollout = crate::decode::pomo_rollout(
        &policy,
        instance,
        n_starts,
        crate::decode::Strategy::Softmax,
        seed,
    )?;
    let trajectories = rollout.trajectories;
    let rewards: Vec<f64> = trajectories.iter().map(|t| t.cost).collect();
    let advantages = pairwise_advantages(&rewards);
    let baseline = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let mut grads = params.zeros_like();
    let encoding = encode(params, instance)?;
    let mut d_h1 = Mat::zeros(encoding.h1.rows(), encoding.h1.cols());
    let mut surrogate = 0.0;
    let weight_scale = 1.0 / trajectories.len() as f64;
    for (trajectory, &advantage) in trajectories.iter().zip(&advantages) {
        let weight = advantage * weight_scale;
        let mut state = DecodeState::fresh(instance);
        state.apply(instance, trajectory.tokens[1]);
        for &token in &trajectory.tokens[2..] {
            let (logits, cache) = decode_step(params, instance, &encoding.h1, &state)?;
            let probs = logits.probs();
            surrogate += weight * probs[token].ln();
            if weight != 0.0 {
                let mut d_scores = vec![0.0; instance.n() + 1];
                for &tok in &cache.avail {
                    d_scores[tok] =
                        weight * ((if tok == token { 1.0 } else { 0.0 }) - probs[tok]);
                }
                decode_step_backward(
                    params,
                    &encoding.h1,
                    &cache,
                    &d_scores,
                    &mut grads,
                    &mut d_h1,
                );
            }
            state.apply(instance, token);
        }
    }
    encode_backward(params, &encoding, &d_h1, &mut grads);
    if !surrogate.is_finite() {
        return Err(NeuralError::NonFinite {
            location: "reinforce surrogate".into(),
        });
    }
    Ok(ReinforceOutcome {
        surrogate,
        grads,
        rewards,
        advantages,
        baseline,
        trajectories,
    })
}

/// Recomputes the reinforce surrogate for fixed trajectories and
/// advantages under the given parameters. Used to check the policy
/// gradient by finite differences.
pub fn reinforce_surrogate(
    params: &PolicyParams,
    instance: &Instance,
    trajectories: &[crate::decode::Trajectory],
    advantages: &[f64],
) -> Result<f64, NeuralError> {
    let encoding = encode(params, instance)?;
    let weight_scale = 1.0 / trajectories.len() as f64;
    let mut surrogate = 0.0;
    for (trajectory, &advantage) in trajectories.iter().zip(advantages) {
        let mut state = DecodeState::fresh(instance);
        state.apply(instance, trajectory.tokens[1]);
        for &token in &trajectory.tokens[2..] {
            let (logits, _) = decode_step(params, instance, &encoding.h1, &state)?;
            surrogate += advantage * weight_scale * logits.probs()[token].ln();
            state.apply(instance, token);
        }
    }
    Ok(surrogate)
}

/// A policy bound to one instance with its node embeddings precomputed.
pub struct NeuralPolicy<'a> {
    params: &'a PolicyParams,
    h1: Mat,
}

impl<'a> NeuralPolicy<'a> {
    pub fn new(params: &'a PolicyParams, instance: &Instance) -> Result<Self, NeuralError> {
        let encoding = encode(params, instance)?;
        Ok(NeuralPolicy {
            params,
            h1: encoding.h1,
        })
    }

    pub fn embeddings(&self) -> &Mat {
        &self.h1
    }
}

impl Policy for NeuralPolicy<'_> {
    fn logits(&self, instance: &Instance, state: &DecodeState) -> Result<Logits, DecodeError> {
        let (logits, _) = decode_step(self.params, instance, &self.h1, state)
            .map_err(|e| DecodeError::Policy(e.to_string()))?;
        Ok(logits)
    }

    fn name(&self) -> &'static str {
        "neural"
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"CVLBNN01";

/// Writes all parameters to a versioned binary file. The layout is the
/// magic, the four dims, then each matrix in visit order as name, shape,
/// and little-endian f64 data. Loading restores bit-identical values.
pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<(), NeuralError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    for dim in [
        params.dims.embed,
        params.dims.heads,
        params.dims.decoder_layers,
        params.dims.ff_hidden,
    ] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    let mut count = 0u32;
    params.visit(&mut |_, _| count += 1);
    buf.extend_from_slice(&count.to_le_bytes());
    params.visit(&mut |name, mat| {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(mat.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(mat.cols() as u32).to_le_bytes());
        for v in mat.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    });
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct CheckpointReader {
    data: Vec<u8>,
    pos: usize,
}

impl CheckpointReader {
    fn take(&mut self, len: usize) -> Result<&[u8], NeuralError> {
        if self.pos + len > self.data.len() {
            return Err(NeuralError::Checkpoint("file truncated".into()));
        }
        let slice = &self.data[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, NeuralError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NeuralError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint written by `save_checkpoint`.
pub fn load_checkpoint(path: &Path) -> Result<PolicyParams, NeuralError> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let mut reader = CheckpointReader { data, pos: 0 };
    if reader.take(8)? != CHECKPOINT_MAGIC {
        return Err(NeuralError::Checkpoint("bad magic".into()));
    }
    let dims = Dims {
        embed: reader.u32()? as usize,
        heads: reader.u32()? as usize,
        decoder_layers: reader.u32()? as usize,
        ff_hidden: reader.u32()? as usize,
    };
    let mut params = PolicyParams::zeros(dims)?;
    let count = reader.u32()? as usize;
    let mut expected = 0usize;
    params.visit(&mut |_, _| expected += 1);
    if count != expected {
        return Err(NeuralError::Checkpoint(format!(
            "checkpoint has {count} matrices, expected {expected}"
        )));
    }
    let mut result = Ok(());
    params.visit_mut(&mut |name, mat| {
        if result.is_err() {
            return;
        }
        result = (|| {
            let name_len = reader.u32()? as usize;
            let stored = String::from_utf8(reader.take(name_len)?.to_vec())
                .map_err(|_| NeuralError::Checkpoint("name is not utf8".into()))?;
            if stored != name {
                return Err(NeuralError::Checkpoint(format!(
                    "expected matrix {name}, found {stored}"
                )));
            }
            let rows = reader.u32()? as usize;
            let cols = reader.u32()? as usize;
            if rows != mat.rows() || cols != mat.cols() {
                return Err(NeuralError::Checkpoint(format!(
                    "matrix {name} has shape {rows}x{cols}, expected {}x{}",
                    mat.rows(),
                    mat.cols()
                )));
            }
            for v in mat.data_mut() {
                *v = reader.f64()?;
            }
            Ok(())
        })();
    });
    result?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{generate, GenConfig};
    use crate::model::check_feasible;

    fn tiny_dims() -> Dims {
        Dims {
            embed: 4,
            heads: 2,
            decoder_layers: 1,
            ff_hidden: 8,
        }
    }

    fn random_mat(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
        let mut m = Mat::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        m
    }

    #[test]
    fn matmul_variants_match_hand_examples() {
        let mut a = Mat::zeros(2, 3);
        a.data_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut b = Mat::zeros(3, 2);
        b.data_mut().copy_from_slice(&[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        assert_eq!(a.matmul(&b).data(), &[58.0, 64.0, 139.0, 154.0]);
        assert_eq!(a.matmul_nt(&a).data(), &[14.0, 32.0, 32.0, 77.0]);
        assert_eq!(
            a.matmul_tn(&a).data(),
            &[17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]
        );
    }

    #[test]
    fn seeded_init_is_reproducible_and_bounded() {
        let dims = Dims::default();
        let a = PolicyParams::seeded(dims, 5).unwrap();
        let b = PolicyParams::seeded(dims, 5).unwrap();
        let c = PolicyParams::seeded(dims, 6).unwrap();
        assert_eq!(a.get_flat(), b.get_flat());
        assert_ne!(a.get_flat(), c.get_flat());
        let bound = 1.0 / (3f64).sqrt() + 1e-12;
        for v in a.input_proj.w.data() {
            assert!(v.abs() < bound);
        }
    }

    #[test]
    fn flat_roundtrip_preserves_everything() {
        let mut params = PolicyParams::seeded(tiny_dims(), 3).unwrap();
        let flat = params.get_flat();
        assert_eq!(flat.len(), params.param_count());
        let mut bumped = flat.clone();
        bumped[7] += 0.5;
        params.set_flat(&bumped).unwrap();
        assert_eq!(params.get_flat(), bumped);
    }

    #[test]
    fn attention_is_equivariant_to_row_permutation() {
        let layer = {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            AttentionLayer::seeded(4, 2, 8, &mut rng)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let input = random_mat(5, 4, &mut rng);
        let (out, _) = layer.forward(&input);
        let perm = [3usize, 0, 4, 1, 2];
        let mut permuted = Mat::zeros(5, 4);
        for (to, &from) in perm.iter().enumerate() {
            permuted.row_mut(to).copy_from_slice(input.row(from));
        }
        let (out_perm, _) = layer.forward(&permuted);
        for (to, &from) in perm.iter().enumerate() {
            for c in 0..4 {
                assert!(
                    (out_perm.get(to, c) - out.get(from, c)).abs() < 1e-12,
                    "row {to} col {c}"
                );
            }
        }
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut layer = AttentionLayer::seeded(4, 2, 8, &mut rng);
        let input = random_mat(3, 4, &mut rng);
        let probe = random_mat(3, 4, &mut rng);
        let loss = |layer: &AttentionLayer, input: &Mat| -> f64 {
            let (out, _) = layer.forward(input);
            out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let mut grads = AttentionLayer::zeros(4, 2, 8);
        let (_, cache) = layer.forward(&input);
        let d_input = layer.backward(&cache, &probe, &mut grads);

        let h = 1e-5;
        let mut check = |mat_sel: &dyn Fn(&mut AttentionLayer) -> &mut Mat,
                         grad: &Mat,
                         name: &str| {
            for idx in 0..grad.data().len() {
                let orig = mat_sel(&mut layer).data()[idx];
                mat_sel(&mut layer).data_mut()[idx] = orig + h;
                let up = loss(&layer, &input);
                mat_sel(&mut layer).data_mut()[idx] = orig - h;
                let down = loss(&layer, &input);
                mat_sel(&mut layer).data_mut()[idx] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grad.data()[idx];
                let rel = (numeric - analytic).abs()
                    / numeric.abs().max(analytic.abs()).max(1.0);
                assert!(rel < 1e-4, "{name}[{idx}]: {analytic} vs {numeric}");
            }
        };
        check(&|l| &mut l.wq.w, &grads.wq.w, "wq.w");
        check(&|l| &mut l.wk.w, &grads.wk.w, "wk.w");
        check(&|l| &mut l.wv.w, &grads.wv.w, "wv.w");
        check(&|l| &mut l.wo.w, &grads.wo.w, "wo.w");
        check(&|l| &mut l.ff1.w, &grads.ff1.w, "ff1.w");
        check(&|l| &mut l.ff2.b, &grads.ff2.b, "ff2.b");

        let mut input_var = input.clone();
        for idx in 0..input_var.data().len() {
            let orig = input_var.data()[idx];
            input_var.data_mut()[idx] = orig + h;
            let up = loss(&layer, &input_var);
            input_var.data_mut()[idx] = orig - h;
            let down = loss(&layer, &input_var);
            input_var.data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = d_input.data()[idx];
            let rel =
                (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1.0);
            assert!(rel < 1e-4, "input[{idx}]: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn decode_step_masks_exactly_the_infeasible_tokens() {
        let instance = generate(&GenConfig::for_size(6, 31)).unwrap();
        let params = PolicyParams::seeded(tiny_dims(), 1).unwrap();
        let encoding = encode(&params, &instance).unwrap();
        let mut state = DecodeState::fresh(&instance);
        state.apply(&instance, 2);
        let (logits, cache) = decode_step(&params, &instance, &encoding.h1, &state).unwrap();
        let mask = crate::decode::feasible_mask(&instance, &state);
        for tok in 0..=instance.n() {
            assert_eq!(!logits.is_masked(tok), mask[tok], "token {tok}");
        }
        assert_eq!(cache.avail, crate::decode::feasible_actions(&instance, &state));
    }

    #[test]
    fn neural_policy_rollouts_are_feasible() {
        let params = PolicyParams::seeded(tiny_dims(), 2).unwrap();
        for seed in 0..5u64 {
            let instance = generate(&GenConfig {
                capacity: 12.0,
                ..GenConfig::for_size(8, 200 + seed)
            })
            .unwrap();
            let policy = NeuralPolicy::new(&params, &instance).unwrap();
            let out = crate::decode::pomo_rollout(
                &policy,
                &instance,
                4,
                crate::decode::Strategy::Softmax,
                seed,
            )
            .unwrap();
            for t in &out.trajectories {
                assert!(check_feasible(&instance, &t.solution).is_feasible());
            }
        }
    }

    #[test]
    fn supervised_training_reduces_the_loss() {
        let instance = generate(&GenConfig::for_size(5, 41)).unwrap();
        let mut params = PolicyParams::seeded(tiny_dims(), 7).unwrap();
        let target = crate::construct::Method::NearestSequential
            .build(&instance)
            .to_flat();
        let first = supervised_step(&params, &instance, &target).unwrap();
        let mut best = first.loss;
        for _ in 0..500 {
            let outcome = supervised_step(&params, &instance, &target).unwrap();
            params.sgd_step(&outcome.grads, 0.1);
            best = best.min(outcome.loss);
        }
        assert!(
            best < first.loss * 0.5,
            "best loss {best} from initial {}",
            first.loss
        );
    }

    #[test]
    fn supervised_rejects_bad_targets() {
        let instance = generate(&GenConfig::for_size(4, 43)).unwrap();
        let params = PolicyParams::seeded(tiny_dims(), 7).unwrap();
        assert!(matches!(
            supervised_step(&params, &instance, &[1, 2, 3, 4]),
            Err(NeuralError::BadTarget(_))
        ));
        assert!(matches!(
            supervised_step(&params, &instance, &[0, 1, 2, 0]),
            Err(NeuralError::BadTarget(_))
        ));
    }

    #[test]
    fn advantages_are_centered_and_exactly_zero_when_equal() {
        let advantages = pairwise_advantages(&[3.0, 1.0, 2.0]);
        assert!((advantages.iter().sum::<f64>()).abs() < 1e-12);
        assert!((advantages[0] - 1.0).abs() < 1e-12);
        let equal = pairwise_advantages(&[0.1, 0.1, 0.1, 0.1, 0.1]);
        for a in equal {
            assert_eq!(a, 0.0);
        }
    }

    #[test]
    fn reinforce_advantages_and_baseline_are_consistent() {
        let instance = generate(&GenConfig::for_size(6, 51)).unwrap();
        let params = PolicyParams::seeded(tiny_dims(), 9).unwrap();
        let outcome = reinforce_step(&params, &instance, 4, 17).unwrap();
        assert_eq!(outcome.rewards.len(), 4);
        assert!((outcome.advantages.iter().sum::<f64>()).abs() < 1e-9);
        let mean = outcome.rewards.iter().sum::<f64>() / 4.0;
        assert!((outcome.baseline - mean).abs() < 1e-12);
        for (a, r) in outcome.advantages.iter().zip(&outcome.rewards) {
            assert!((a - (r - mean)).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ckpt");
        let params = PolicyParams::seeded(Dims::default(), 99).unwrap();
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.dims(), params.dims());
        let a = params.get_flat();
        let b = loaded.get_flat();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(NeuralError::Checkpoint(_))
        ));
    }
}
