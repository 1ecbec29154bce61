//! Minibatch training with Adam. Gradient aggregation is order-fixed so a
//! given seed reproduces parameters bit for bit regardless of thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::model::{backward, forward_cached, CnnModel, DropoutMasks, Gradients};
use super::vocab::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            learning_rate: 0.001,
            batch_size: 5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

/// Mean cross-entropy and summed-then-averaged gradients over a batch, with
/// dropout disabled. This is the reference path the finite-difference check
/// exercises.
pub fn loss_and_gradients(
    model: &CnnModel,
    batch: &[(TokenSequence, usize)],
) -> Result<(f64, Gradients)> {
    batch_gradients(model, batch, None)
}

fn batch_gradients(
    model: &CnnModel,
    batch: &[(TokenSequence, usize)],
    dropout_seeds: Option<&[u64]>,
) -> Result<(f64, Gradients)> {
    assert!(!batch.is_empty(), "empty batch");
    let per_sample: Vec<Result<(f64, Gradients)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, (seq, label))| {
            let masks = dropout_seeds.map(|seeds| {
                let mut rng = ChaCha8Rng::seed_from_u64(seeds[i]);
                let k = model.cfg.kernel;
                let t = seq.len.clamp(k, seq.indices.len().max(k));
                DropoutMasks::sample(
                    &mut rng,
                    model.cfg.dropout,
                    t,
                    model.cfg.embed_dim,
                    model.cfg.filters,
                )
            });
            let cache = forward_cached(model, seq, masks)?;
            Ok(backward(model, seq, *label, &cache))
        })
        .collect();

    // Deterministic reduction: fold in sample order.
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut total = Gradients::zeros(model);
    for r in per_sample {
        let (l, g) = r?;
        loss += l * scale;
        total.add_scaled(&g, scale);
    }
    Ok((loss, total))
}

/// Adam optimizer state over the model's tensors.
pub struct Adam {
    cfg: TrainConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(cfg: TrainConfig, model: &CnnModel) -> Self {
        let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
        Adam {
            cfg,
            m: shapes.iter().map(|&l| vec![0.0; l]).collect(),
            v: shapes.iter().map(|&l| vec![0.0; l]).collect(),
            step: 0,
        }
    }

    /// One update from batch-averaged gradients. Sparse embedding rows are
    /// folded into a dense row set first so each parameter is updated once.
    pub fn apply(&mut self, model: &mut CnnModel, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let lr = self.cfg.learning_rate * (1.0 - self.cfg.beta2.powi(t)).sqrt()
            / (1.0 - self.cfg.beta1.powi(t));
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.epsilon);

        let e = model.cfg.embed_dim;
        let mut embed_rows: std::collections::BTreeMap<usize, Vec<f64>> =
            std::collections::BTreeMap::new();
        for (row, g) in &grads.embedding {
            let acc = embed_rows.entry(*row).or_insert_with(|| vec![0.0; e]);
            for (a, gi) in acc.iter_mut().zip(g.iter()) {
                *a += gi;
            }
        }
        for (row, g) in embed_rows {
            for (i, gi) in g.into_iter().enumerate() {
                let offset = row * e + i;
                step_param(
                    &mut self.m[0][offset],
                    &mut self.v[0][offset],
                    &mut model.embedding[offset],
                    gi,
                    lr,
                    b1,
                    b2,
                    eps,
                );
            }
        }

        let [_, cw, cb, dw, db, ow, ob] = model.tensors_mut();
        let dense: [(&mut Vec<f64>, &Vec<f64>); 6] = [
            (cw, &grads.conv_w),
            (cb, &grads.conv_b),
            (dw, &grads.dense_w),
            (db, &grads.dense_b),
            (ow, &grads.out_w),
            (ob, &grads.out_b),
        ];
        for (idx, (params, g)) in dense.into_iter().enumerate() {
            let m = &mut self.m[idx + 1];
            let v = &mut self.v[idx + 1];
            for (offset, gi) in g.iter().enumerate() {
                step_param(
                    &mut m[offset],
                    &mut v[offset],
                    &mut params[offset],
                    *gi,
                    lr,
                    b1,
                    b2,
                    eps,
                );
            }
        }
    }
}

/// Train for `cfg.epochs` passes of seeded-shuffled minibatches. The same
/// seed yields bit-identical parameters.
pub fn train(
    mut model: CnnModel,
    cfg: &TrainConfig,
    data: &[(TokenSequence, usize)],
) -> Result<CnnModel> {
    assert!(!data.is_empty(), "empty training set");
    let mut adam = Adam::new(cfg.clone(), &model);
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, u64::MAX, epoch as u64));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(TokenSequence, usize)> =
                chunk.iter().map(|&i| data[i].clone()).collect();
            let seeds: Vec<u64> = (0..batch.len() as u64)
                .map(|i| mix(cfg.seed, step, i))
                .collect();
            let (_, grads) = batch_gradients(&model, &batch, Some(&seeds))?;
            adam.apply(&mut model, &grads);
            step += 1;
        }
    }
    Ok(model)
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn step_param(
    m: &mut f64,
    v: &mut f64,
    param: &mut f64,
    g: f64,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
) {
    *m = b1 * *m + (1.0 - b1) * g;
    *v = b2 * *v + (1.0 - b2) * g * g;
    *param -= lr * *m / (v.sqrt() + eps);
}

/// splitmix64-style mixing for independent per-step randomness.
pub(crate) fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(b)
        .wrapping_mul(0xbf58476d1ce4e5b9)
        .wrapping_add(c);
    z ^= z >> 30;
    z = z.wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    z
}
