//! The classifier network and its forward/backward kernels.
//!
//! Parameters are held as f64 for numerically tight gradient checks and
//! quantized to f32 in the on-disk container. Layout: embedding lookup,
//! dropout, width-3 convolution with ReLU, global max pooling over time,
//! dropout, a ReLU hidden layer, and a linear-softmax output.

#![allow(clippy::needless_range_loop)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::vocab::TokenSequence;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub filters: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub dropout: f64,
    /// Maximum token-sequence length; longer inputs drop their oldest tokens.
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 64,
            filters: 64,
            kernel: 3,
            hidden: 300,
            dropout: 0.2,
            max_len: 96,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub cfg: ModelConfig,
    pub vocab_size: usize,
    pub n_classes: usize,
    /// V x E
    pub embedding: Vec<f64>,
    /// F x K x E
    pub conv_w: Vec<f64>,
    /// F
    pub conv_b: Vec<f64>,
    /// H x F
    pub dense_w: Vec<f64>,
    /// H
    pub dense_b: Vec<f64>,
    /// n x H
    pub out_w: Vec<f64>,
    /// n
    pub out_b: Vec<f64>,
    pub seed: u64,
}

impl CnnModel {
    /// Seeded initialization: embeddings uniform in (-0.05, 0.05), the other
    /// weights fan-in-scaled uniform, biases zero.
    pub fn new(cfg: ModelConfig, vocab_size: usize, n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let uniform = |rng: &mut ChaCha8Rng, len: usize, bound: f64| -> Vec<f64> {
            (0..len).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let e = cfg.embed_dim;
        let f = cfg.filters;
        let k = cfg.kernel;
        let h = cfg.hidden;
        let embedding = uniform(&mut rng, vocab_size * e, 0.05);
        let conv_w = uniform(&mut rng, f * k * e, (1.0 / (k * e) as f64).sqrt());
        let conv_b = vec![0.0; f];
        let dense_w = uniform(&mut rng, h * f, (1.0 / f as f64).sqrt());
        let dense_b = vec![0.0; h];
        let out_w = uniform(&mut rng, n_classes * h, (1.0 / h as f64).sqrt());
        let out_b = vec![0.0; n_classes];
        CnnModel {
            cfg,
            vocab_size,
            n_classes,
            embedding,
            conv_w,
            conv_b,
            dense_w,
            dense_b,
            out_w,
            out_b,
            seed,
        }
    }

    /// Mutable views over every parameter tensor, in the fixed update order.
    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.embedding,
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.dense_w,
            &mut self.dense_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub(crate) fn tensors(&self) -> [&Vec<f64>; 7] {
        [
            &self.embedding,
            &self.conv_w,
            &self.conv_b,
            &self.dense_w,
            &self.dense_b,
            &self.out_w,
            &self.out_b,
        ]
    }
}

/// Dropout masks for one training forward pass, scaled for inverted dropout.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    /// T x E over the embedded input.
    pub embed: Vec<f64>,
    /// F over the pooled features.
    pub pooled: Vec<f64>,
}

impl DropoutMasks {
    /// Sample Bernoulli keep-masks with inverted scaling.
    pub fn sample(rng: &mut ChaCha8Rng, rate: f64, t: usize, e: usize, f: usize) -> Self {
        let keep = 1.0 - rate;
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| {
                    if rate == 0.0 || rng.random_bool(keep) {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        DropoutMasks {
            embed: draw(t * e),
            pooled: draw(f),
        }
    }

    /// All-ones masks; training with these equals inference.
    pub fn identity(t: usize, e: usize, f: usize) -> Self {
        DropoutMasks {
            embed: vec![1.0; t * e],
            pooled: vec![1.0; f],
        }
    }
}

/// Everything the backward pass needs from a forward pass.
pub(crate) struct ForwardCache {
    pub t: usize,
    pub x: Vec<f64>,          // T x E, embedded (and masked) input
    pub conv: Vec<f64>,       // positions x F, post-ReLU
    pub pool_arg: Vec<usize>, // F, argmax position per filter
    pub pooled: Vec<f64>,     // F, post-mask
    pub hidden: Vec<f64>,     // H, post-ReLU
    pub probs: Vec<f64>,      // n
    pub masks: Option<DropoutMasks>,
}

/// Inference forward pass: dropout disabled. Output sums to one.
pub fn forward(model: &CnnModel, seq: &TokenSequence) -> Result<Vec<f64>> {
    forward_cached(model, seq, None).map(|c| c.probs)
}

/// Forward pass with optional dropout masks (training mode).
pub(crate) fn forward_cached(
    model: &CnnModel,
    seq: &TokenSequence,
    masks: Option<DropoutMasks>,
) -> Result<ForwardCache> {
    let e = model.cfg.embed_dim;
    let f = model.cfg.filters;
    let k = model.cfg.kernel;
    let h = model.cfg.hidden;
    let n = model.n_classes;

    // Real positions, padded up to at least one kernel window.
    let t = seq.len.clamp(k, seq.indices.len().max(k));
    let mut x = vec![0.0f64; t * e];
    for (pos, chunk) in x.chunks_exact_mut(e).enumerate() {
        let idx = if pos < seq.indices.len() {
            seq.indices[pos] as usize
        } else {
            0
        };
        if idx >= model.vocab_size {
            return Err(Error::Dimension(format!(
                "token index {idx} out of range for vocabulary of {}",
                model.vocab_size
            )));
        }
        chunk.copy_from_slice(&model.embedding[idx * e..(idx + 1) * e]);
    }
    if let Some(m) = &masks {
        debug_assert_eq!(m.embed.len(), t * e);
        for (xi, mi) in x.iter_mut().zip(m.embed.iter()) {
            *xi *= mi;
        }
    }

    // Convolution, stride 1, ReLU.
    let positions = t - k + 1;
    let mut conv = vec![0.0f64; positions * f];
    for pos in 0..positions {
        let window = &x[pos * e..(pos + k) * e];
        let out = &mut conv[pos * f..(pos + 1) * f];
        for (fi, o) in out.iter_mut().enumerate() {
            let w = &model.conv_w[fi * k * e..(fi + 1) * k * e];
            let mut acc = model.conv_b[fi];
            for (wv, xv) in w.iter().zip(window.iter()) {
                acc += wv * xv;
            }
            *o = acc.max(0.0);
        }
    }

    let (mut pooled, pool_arg) = global_max_pool(&conv, positions, f);
    if let Some(m) = &masks {
        for (p, mi) in pooled.iter_mut().zip(m.pooled.iter()) {
            *p *= mi;
        }
    }

    // Hidden layer, ReLU.
    let mut hidden = vec![0.0f64; h];
    for (hi, out) in hidden.iter_mut().enumerate() {
        let w = &model.dense_w[hi * f..(hi + 1) * f];
        let mut acc = model.dense_b[hi];
        for (wv, pv) in w.iter().zip(pooled.iter()) {
            acc += wv * pv;
        }
        *out = acc.max(0.0);
    }

    // Linear output and softmax.
    let mut logits = vec![0.0f64; n];
    for (ci, out) in logits.iter_mut().enumerate() {
        let w = &model.out_w[ci * h..(ci + 1) * h];
        let mut acc = model.out_b[ci];
        for (wv, hv) in w.iter().zip(hidden.iter()) {
            acc += wv * hv;
        }
        *out = acc;
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }

    Ok(ForwardCache {
        t,
        x,
        conv,
        pool_arg,
        pooled,
        hidden,
        probs,
        masks,
    })
}

/// Maximum over time positions per filter, with first-max argmax positions.
/// `values` is laid out position-major: `values[pos * filters + f]`.
pub(crate) fn global_max_pool(
    values: &[f64],
    positions: usize,
    filters: usize,
) -> (Vec<f64>, Vec<usize>) {
    let mut pooled = vec![f64::NEG_INFINITY; filters];
    let mut arg = vec![0usize; filters];
    for pos in 0..positions {
        for fi in 0..filters {
            let v = values[pos * filters + fi];
            if v > pooled[fi] {
                pooled[fi] = v;
                arg[fi] = pos;
            }
        }
    }
    (pooled, arg)
}

/// Per-parameter gradients. The embedding gradient is sparse: only rows
/// reached through the pooled windows carry signal.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub embedding: Vec<(usize, Vec<f64>)>,
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    pub dense_w: Vec<f64>,
    pub dense_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

impl Gradients {
    pub fn zeros(model: &CnnModel) -> Self {
        Gradients {
            embedding: Vec::new(),
            conv_w: vec![0.0; model.conv_w.len()],
            conv_b: vec![0.0; model.conv_b.len()],
            dense_w: vec![0.0; model.dense_w.len()],
            dense_b: vec![0.0; model.dense_b.len()],
            out_w: vec![0.0; model.out_w.len()],
            out_b: vec![0.0; model.out_b.len()],
        }
    }

    /// Accumulate `other`, scaled. Embedding rows are appended; consumers
    /// fold them per index.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        let pairs = [
            (&mut self.conv_w, &other.conv_w),
            (&mut self.conv_b, &other.conv_b),
            (&mut self.dense_w, &other.dense_w),
            (&mut self.dense_b, &other.dense_b),
            (&mut self.out_w, &other.out_w),
            (&mut self.out_b, &other.out_b),
        ];
        for (dst, src) in pairs {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += s * scale;
            }
        }
        for (row, grad) in &other.embedding {
            self.embedding
                .push((*row, grad.iter().map(|g| g * scale).collect()));
        }
    }
}

/// Cross-entropy loss and gradients for one example.
pub(crate) fn backward(
    model: &CnnModel,
    seq: &TokenSequence,
    label: usize,
    cache: &ForwardCache,
) -> (f64, Gradients) {
    let e = model.cfg.embed_dim;
    let f = model.cfg.filters;
    let k = model.cfg.kernel;
    let h = model.cfg.hidden;
    let n = model.n_classes;

    let loss = -cache.probs[label].max(1e-300).ln();
    let mut grads = Gradients::zeros(model);

    // d loss / d logits
    let mut dlogits = cache.probs.clone();
    dlogits[label] -= 1.0;

    // Output layer.
    let mut dhidden = vec![0.0f64; h];
    for ci in 0..n {
        let g = dlogits[ci];
        grads.out_b[ci] = g;
        let row = &mut grads.out_w[ci * h..(ci + 1) * h];
        let w = &model.out_w[ci * h..(ci + 1) * h];
        for hi in 0..h {
            row[hi] = g * cache.hidden[hi];
            dhidden[hi] += g * w[hi];
        }
    }

    // Hidden ReLU.
    let mut dpooled = vec![0.0f64; f];
    for hi in 0..h {
        if cache.hidden[hi] <= 0.0 {
            continue;
        }
        let g = dhidden[hi];
        grads.dense_b[hi] = g;
        let row = &mut grads.dense_w[hi * f..(hi + 1) * f];
        let w = &model.dense_w[hi * f..(hi + 1) * f];
        for fi in 0..f {
            row[fi] = g * cache.pooled[fi];
            dpooled[fi] += g * w[fi];
        }
    }

    // Pooled-feature dropout.
    if let Some(m) = &cache.masks {
        for (g, mi) in dpooled.iter_mut().zip(m.pooled.iter()) {
            *g *= mi;
        }
    }

    // Max pooling routes each filter's gradient to its argmax window; the
    // conv ReLU gates it.
    let mut dx = vec![0.0f64; cache.t * e];
    for fi in 0..f {
        let pos = cache.pool_arg[fi];
        let pre = cache.conv[pos * f + fi];
        if pre <= 0.0 {
            continue;
        }
        let g = dpooled[fi];
        if g == 0.0 {
            continue;
        }
        grads.conv_b[fi] += g;
        let wrow = &model.conv_w[fi * k * e..(fi + 1) * k * e];
        let grow = &mut grads.conv_w[fi * k * e..(fi + 1) * k * e];
        let window = &cache.x[pos * e..(pos + k) * e];
        let dwindow = &mut dx[pos * e..(pos + k) * e];
        for i in 0..k * e {
            grow[i] += g * window[i];
            dwindow[i] += g * wrow[i];
        }
    }

    // Embedding dropout, then scatter into sparse rows.
    if let Some(m) = &cache.masks {
        for (g, mi) in dx.iter_mut().zip(m.embed.iter()) {
            *g *= mi;
        }
    }
    for pos in 0..cache.t {
        let slice = &dx[pos * e..(pos + 1) * e];
        if slice.iter().all(|g| *g == 0.0) {
            continue;
        }
        let idx = if pos < seq.indices.len() {
            seq.indices[pos] as usize
        } else {
            0
        };
        grads.embedding.push((idx, slice.to_vec()));
    }

    (loss, grads)
}
