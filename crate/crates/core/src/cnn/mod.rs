//! Agent-and-content text classifier for next-speaker prediction, built on
//! in-crate kernels: embedding, width-3 convolution, global max pooling, a
//! ReLU hidden layer and softmax, trained with Adam on cross-entropy.

mod io;
mod model;
mod train;
mod vocab;

pub use io::{load_model, save_model, verify_classes};
pub use model::{forward, CnnModel, DropoutMasks, Gradients, ModelConfig};
pub use train::{loss_and_gradients, train, Adam, TrainConfig};
pub use vocab::{build_input_text, TokenSequence, Vocabulary, PAD_INDEX, UNK_INDEX};

/// Derive an independent stream seed from a base seed and an index.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    train::mix(base, index, 0)
}

use crate::corpus::{AgentId, Corpus, Inventory};
use crate::error::Result;
use crate::predictors::PredictorOutput;

/// Classify the next speaker from the last two turns.
pub fn predict(
    model: &CnnModel,
    vocab: &Vocabulary,
    inventory: &Inventory,
    prev: Option<(&AgentId, &str)>,
    cur: (&AgentId, &str),
) -> Result<PredictorOutput> {
    let text = build_input_text(prev, cur);
    let seq = vocab.encode(&text, model.cfg.max_len);
    let probs = forward(model, &seq)?;
    Ok(PredictorOutput::from_distribution(probs, inventory))
}

/// Raw input text of every prediction instance in a corpus: one per genuine
/// turn index `t` in `[1, T-1]`, built from turns `t-1` and `t`. Used to
/// build the vocabulary over both splits.
pub fn instance_texts(corpus: &Corpus) -> Vec<String> {
    let mut texts = Vec::new();
    for d in &corpus.dialogues {
        let turns: Vec<_> = d.genuine_turns().collect();
        for t in 0..turns.len().saturating_sub(1) {
            let prev = if t >= 1 {
                Some((&turns[t - 1].sender, turns[t - 1].text.as_str()))
            } else {
                None
            };
            texts.push(build_input_text(prev, (&turns[t].sender, &turns[t].text)));
        }
    }
    texts
}

/// Encoded training pairs: instance text at `t`, labeled with the sender of
/// turn `t+1`.
pub fn training_instances(
    corpus: &Corpus,
    vocab: &Vocabulary,
    inventory: &Inventory,
    max_len: usize,
) -> Vec<(TokenSequence, usize)> {
    let mut out = Vec::new();
    for d in &corpus.dialogues {
        let turns: Vec<_> = d.genuine_turns().collect();
        for t in 0..turns.len().saturating_sub(1) {
            let prev = if t >= 1 {
                Some((&turns[t - 1].sender, turns[t - 1].text.as_str()))
            } else {
                None
            };
            let text = build_input_text(prev, (&turns[t].sender, &turns[t].text));
            let label = inventory
                .index_of(&turns[t + 1].sender)
                .expect("validated corpus");
            out.push((vocab.encode(&text, max_len), label));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Role;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            embed_dim: 2,
            filters: 2,
            kernel: 3,
            hidden: 2,
            dropout: 0.2,
            max_len: 8,
        }
    }

    fn zeroed(mut model: CnnModel) -> CnnModel {
        for t in model.tensors_mut() {
            for v in t.iter_mut() {
                *v = 0.0;
            }
        }
        model
    }

    fn seq(indices: &[u32]) -> TokenSequence {
        TokenSequence {
            indices: indices.to_vec(),
            len: indices.len(),
        }
    }

    #[test]
    fn softmax_normalized_for_random_models() {
        for s in 0..5 {
            let model = CnnModel::new(tiny_cfg(), 6, 3, s);
            let probs = forward(&model, &seq(&[1, 2, 3, 4])).unwrap();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(probs.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn zero_weights_give_uniform_distribution() {
        let model = zeroed(CnnModel::new(tiny_cfg(), 6, 7, 0));
        let probs = forward(&model, &seq(&[1, 2, 3])).unwrap();
        for p in probs {
            assert!((p - 1.0 / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_token_rejected() {
        let model = CnnModel::new(tiny_cfg(), 4, 2, 0);
        assert!(forward(&model, &seq(&[9, 0, 0])).is_err());
    }

    // Independent scalar recomputation of the whole pipeline on a tiny model
    // with hand-set weights.
    #[test]
    fn forward_matches_scalar_recomputation() {
        let mut model = zeroed(CnnModel::new(tiny_cfg(), 4, 2, 0));
        // embedding rows: token i -> [0.1*i, 0.1*i + 0.05]
        for tok in 0..4 {
            model.embedding[tok * 2] = 0.1 * tok as f64;
            model.embedding[tok * 2 + 1] = 0.1 * tok as f64 + 0.05;
        }
        // filter 0 sums the window, filter 1 alternates signs
        for i in 0..6 {
            model.conv_w[i] = 1.0;
            model.conv_w[6 + i] = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        model.conv_b = vec![0.1, -0.05];
        model.dense_w = vec![0.5, -0.25, 1.5, 0.75];
        model.dense_b = vec![0.02, -0.01];
        model.out_w = vec![1.0, -1.0, 0.5, 2.0];
        model.out_b = vec![0.0, 0.3];

        let input = seq(&[2, 3, 1]);
        let got = forward(&model, &input).unwrap();

        // scalar recomputation, one position, all layers written out
        let x: [[f64; 2]; 3] = [
            [0.2, 0.25], // token 2
            [0.3, 0.35], // token 3
            [0.1, 0.15], // token 1
        ];
        let c0: f64 = 0.1 + x[0][0] + x[0][1] + x[1][0] + x[1][1] + x[2][0] + x[2][1];
        let c1: f64 = -0.05 + x[0][0] - x[0][1] + x[1][0] - x[1][1] + x[2][0] - x[2][1];
        let p0 = c0.max(0.0);
        let p1 = c1.max(0.0);
        let h0 = (0.02 + 0.5 * p0 - 0.25 * p1).max(0.0);
        let h1 = (-0.01 + 1.5 * p0 + 0.75 * p1).max(0.0);
        let l0 = 1.0 * h0 - 1.0 * h1;
        let l1 = 0.3 + 0.5 * h0 + 2.0 * h1;
        let z = l0.exp() + l1.exp();
        let want = [l0.exp() / z, l1.exp() / z];

        assert!((got[0] - want[0]).abs() < 1e-12, "{got:?} vs {want:?}");
        assert!((got[1] - want[1]).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        // near-one-hot prediction on the label: loss close to zero
        let mut model = zeroed(CnnModel::new(tiny_cfg(), 4, 2, 0));
        model.out_b = vec![30.0, 0.0];
        let (loss, _) = loss_and_gradients(&model, &[(seq(&[1, 2, 3]), 0)]).unwrap();
        assert!(loss < 1e-9, "loss {loss}");

        // uniform prediction over 7 classes: ln 7
        let model = zeroed(CnnModel::new(tiny_cfg(), 4, 7, 0));
        let (loss, _) = loss_and_gradients(&model, &[(seq(&[1, 2, 3]), 3)]).unwrap();
        assert!((loss - 7.0f64.ln()).abs() < 1e-9);
    }

    /// Activation pattern of a forward pass: pooling argmax positions plus
    /// the ReLU on/off masks. Central differences are only valid where the
    /// pattern is locally constant.
    fn activation_signature(
        model: &CnnModel,
        batch: &[(TokenSequence, usize)],
    ) -> (f64, Vec<(Vec<usize>, Vec<bool>, Vec<bool>)>) {
        let mut loss = 0.0;
        let mut sigs = Vec::new();
        for (s, label) in batch {
            let cache = model::forward_cached(model, s, None).unwrap();
            loss -= cache.probs[*label].ln() / batch.len() as f64;
            sigs.push((
                cache.pool_arg.clone(),
                cache.conv.iter().map(|v| *v > 0.0).collect(),
                cache.hidden.iter().map(|v| *v > 0.0).collect(),
            ));
        }
        (loss, sigs)
    }

    // Analytic gradients against central finite differences on every
    // parameter, over several random tiny models. Parameters whose
    // perturbation crosses a ReLU or pooling kink are excluded (the
    // difference quotient is meaningless there) and must stay rare.
    #[test]
    fn gradient_check_against_finite_differences() {
        let h = 1e-4;
        for s in 0..5u64 {
            let model = CnnModel::new(tiny_cfg(), 5, 3, s);
            let mut rng = ChaCha8Rng::seed_from_u64(s + 1000);
            let batch: Vec<(TokenSequence, usize)> = (0..3)
                .map(|_| {
                    let toks: Vec<u32> = (0..4).map(|_| rng.random_range(0..5)).collect();
                    (seq(&toks), rng.random_range(0..3usize))
                })
                .collect();

            let (_, grads) = loss_and_gradients(&model, &batch).unwrap();

            // fold sparse embedding rows dense
            let mut dense_embed = vec![0.0; model.embedding.len()];
            for (row, g) in &grads.embedding {
                for (i, gi) in g.iter().enumerate() {
                    dense_embed[row * model.cfg.embed_dim + i] += gi;
                }
            }
            let analytic: Vec<Vec<f64>> = vec![
                dense_embed,
                grads.conv_w.clone(),
                grads.conv_b.clone(),
                grads.dense_w.clone(),
                grads.dense_b.clone(),
                grads.out_w.clone(),
                grads.out_b.clone(),
            ];

            let mut max_rel: f64 = 0.0;
            let mut checked = 0usize;
            let mut skipped = 0usize;
            for ti in 0..7 {
                for pi in 0..analytic[ti].len() {
                    let mut plus = model.clone();
                    plus.tensors_mut()[ti][pi] += h;
                    let mut minus = model.clone();
                    minus.tensors_mut()[ti][pi] -= h;
                    let (lp, sig_p) = activation_signature(&plus, &batch);
                    let (lm, sig_m) = activation_signature(&minus, &batch);
                    if sig_p != sig_m {
                        skipped += 1;
                        continue;
                    }
                    checked += 1;
                    let numeric = (lp - lm) / (2.0 * h);
                    let a = analytic[ti][pi];
                    let scale = a.abs().max(numeric.abs());
                    if scale > 1e-6 {
                        max_rel = max_rel.max((a - numeric).abs() / scale);
                    } else {
                        assert!(
                            (a - numeric).abs() < 1e-8,
                            "seed {s} tensor {ti} param {pi}: {a} vs {numeric}"
                        );
                    }
                }
            }
            assert!(max_rel < 1e-4, "seed {s}: max relative error {max_rel}");
            assert!(
                skipped * 10 <= checked,
                "seed {s}: too many kink crossings ({skipped} of {})",
                checked + skipped
            );
        }
    }

    #[test]
    fn dropout_rate_zero_training_equals_inference() {
        let model = CnnModel::new(tiny_cfg(), 5, 3, 7);
        let input = seq(&[1, 2, 3, 4]);
        let inference = forward(&model, &input).unwrap();
        let masks = DropoutMasks::identity(4, 2, 2);
        let trained = model::forward_cached(&model, &input, Some(masks))
            .unwrap()
            .probs;
        for (a, b) in inference.iter().zip(trained.iter()) {
            assert_eq!(a, b);
        }
        // rate-zero sampled masks are the identity as well
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let masks = DropoutMasks::sample(&mut rng, 0.0, 4, 2, 2);
        assert!(masks
            .embed
            .iter()
            .chain(masks.pooled.iter())
            .all(|m| *m == 1.0));
    }

    #[test]
    fn adam_strictly_decreases_loss_on_fixed_batch() {
        let mut model = CnnModel::new(tiny_cfg(), 6, 3, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let batch: Vec<(TokenSequence, usize)> = (0..8)
            .map(|_| {
                let toks: Vec<u32> = (0..5).map(|_| rng.random_range(0..6)).collect();
                (seq(&toks), rng.random_range(0..3usize))
            })
            .collect();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let mut adam = Adam::new(cfg, &model);
        let mut last = f64::INFINITY;
        for step in 0..10 {
            let (loss, grads) = loss_and_gradients(&model, &batch).unwrap();
            assert!(loss < last, "step {step}: {loss} !< {last}");
            last = loss;
            adam.apply(&mut model, &grads);
        }
    }

    fn separable_data(vocab: &Vocabulary) -> Vec<(TokenSequence, usize)> {
        // label is fully determined by the topic token
        let mut data = Vec::new();
        for i in 0..50 {
            let (word, label) = match i % 3 {
                0 => ("alpha", 0),
                1 => ("beta", 1),
                _ => ("gamma", 2),
            };
            let text = format!("pad{} {} pad{}", i % 5, word, (i + 2) % 5);
            data.push((vocab.encode(&text, 8), label));
        }
        data
    }

    #[test]
    fn training_fits_a_separable_synthetic_set() {
        let texts: Vec<String> = (0..50)
            .map(|i| {
                let word = ["alpha", "beta", "gamma"][i % 3];
                format!("pad{} {} pad{}", i % 5, word, (i + 2) % 5)
            })
            .collect();
        let vocab = Vocabulary::build(texts.iter().map(|s| s.as_str()));
        let data = separable_data(&vocab);
        let model = CnnModel::new(
            ModelConfig {
                embed_dim: 8,
                filters: 8,
                kernel: 3,
                hidden: 16,
                dropout: 0.2,
                max_len: 8,
            },
            vocab.len(),
            3,
            1,
        );
        let cfg = TrainConfig {
            epochs: 12,
            seed: 1,
            ..TrainConfig::default()
        };
        let trained = train(model, &cfg, &data).unwrap();
        let correct = data
            .iter()
            .filter(|(s, label)| {
                let probs = forward(&trained, s).unwrap();
                let argmax = probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                argmax == *label
            })
            .count();
        assert!(
            correct as f64 / data.len() as f64 >= 0.95,
            "accuracy {}/{}",
            correct,
            data.len()
        );
    }

    #[test]
    fn same_seed_training_is_bit_identical() {
        let texts = ["a b c d", "b c d e", "c d e f"];
        let vocab = Vocabulary::build(texts);
        let data: Vec<(TokenSequence, usize)> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| (vocab.encode(t, 8), i % 2))
            .collect();
        let cfg = TrainConfig {
            epochs: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let m1 = train(CnnModel::new(tiny_cfg(), vocab.len(), 2, 5), &cfg, &data).unwrap();
        let m2 = train(CnnModel::new(tiny_cfg(), vocab.len(), 2, 5), &cfg, &data).unwrap();
        for (a, b) in m1.tensors().iter().zip(m2.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let vocab = Vocabulary::build(["a b c"]);
        let data = vec![(vocab.encode("a b c", 8), 0)];
        let model = CnnModel::new(tiny_cfg(), vocab.len(), 2, 5);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(model.clone(), &cfg, &data).unwrap();
        assert_eq!(model, out);
    }

    #[test]
    fn model_container_roundtrip() {
        let vocab = Vocabulary::build(["a b c d e"]);
        let classes: Vec<AgentId> = vec![AgentId::from("user"), AgentId::from("x_bot")];
        let model = CnnModel::new(tiny_cfg(), vocab.len(), 2, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &vocab, &classes, &path).unwrap();
        let (loaded, vocab2, classes2) = load_model(&path).unwrap();
        assert_eq!(classes, classes2);
        assert_eq!(vocab, vocab2);

        // quantized round trip: distributions agree to f32 precision
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let toks: Vec<u32> = (0..5)
                .map(|_| rng.random_range(0..vocab.len() as u32))
                .collect();
            let a = forward(&model, &seq(&toks)).unwrap();
            let b = forward(&loaded, &seq(&toks)).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-6);
            }
        }

        // a second save of the loaded model is byte-identical
        let path2 = dir.path().join("model2.bin");
        save_model(&loaded, &vocab2, &classes2, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn corrupt_and_versioned_files_rejected() {
        let vocab = Vocabulary::build(["a b"]);
        let classes = vec![AgentId::from("user")];
        let model = CnnModel::new(tiny_cfg(), vocab.len(), 1, 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &vocab, &classes, &path).unwrap();

        // truncate the tensor section
        let bytes = std::fs::read(&path).unwrap();
        let truncated = &bytes[..bytes.len() - 16];
        let tpath = dir.path().join("trunc.bin");
        std::fs::write(&tpath, truncated).unwrap();
        assert!(matches!(load_model(&tpath), Err(crate::Error::Corrupt(_))));

        // wrong version tag, patched in place so lengths stay intact
        let needle = b"turngate-cnn-v1";
        let pos = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        let mut patched = bytes.clone();
        patched[pos + needle.len() - 1] = b'9';
        let vpath = dir.path().join("ver.bin");
        std::fs::write(&vpath, &patched).unwrap();
        assert!(matches!(
            load_model(&vpath),
            Err(crate::Error::Version { .. })
        ));
    }

    #[test]
    fn corpus_instances_and_vocab_coverage() {
        let inventory = Inventory::new(vec![
            (AgentId::from("user"), Role::User),
            (AgentId::from("x_bot"), Role::Bot),
        ])
        .unwrap();
        let corpus = crate::corpus::Corpus {
            dialogues: vec![crate::corpus::Dialogue {
                id: "d".into(),
                turns: vec![
                    crate::corpus::Utterance::new("user", Role::User, "hello there"),
                    crate::corpus::Utterance::new("x_bot", Role::Bot, "greetings friend"),
                    crate::corpus::Utterance::new("user", Role::User, "goodbye"),
                ],
            }],
            inventory: inventory.clone(),
        };
        let texts = instance_texts(&corpus);
        assert_eq!(
            texts,
            vec!["user hello there", "user hello there x_bot greetings friend"]
        );

        // a vocabulary built over all instance texts leaves nothing unknown
        let vocab = Vocabulary::build(texts.iter().map(|s| s.as_str()));
        assert!(texts.iter().all(|t| vocab.unknown_hits(t) == 0));

        let data = training_instances(&corpus, &vocab, &inventory, 16);
        assert_eq!(data.len(), 2);
        assert_eq!(data[0].1, inventory.index_of(&AgentId::from("x_bot")).unwrap());
        assert_eq!(data[1].1, inventory.index_of(&AgentId::from("user")).unwrap());
    }

    #[test]
    fn predict_confidence_is_distribution_max() {
        let inv = Inventory::new(vec![
            (AgentId::from("user"), Role::User),
            (AgentId::from("x_bot"), Role::Bot),
            (AgentId::from("y_bot"), Role::Bot),
        ])
        .unwrap();
        let vocab = Vocabulary::build(["user hi x_bot hello"]);
        let model = CnnModel::new(tiny_cfg(), vocab.len(), 3, 2);
        let user = AgentId::from("user");
        let xbot = AgentId::from("x_bot");
        let out = predict(&model, &vocab, &inv, Some((&user, "hi")), (&xbot, "hello")).unwrap();
        let max = out.distribution.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(out.confidence, max);
        assert_eq!(out.distribution.len(), 3);
    }

    proptest! {
        // Global max pooling is invariant to permuting time positions.
        #[test]
        fn pooling_permutation_invariant(values in proptest::collection::vec(-5.0f64..5.0, 2..20), swap in 0usize..100) {
            let f = 2usize;
            let padded: Vec<f64> = if values.len() % f == 0 { values.clone() } else {
                let mut v = values.clone();
                v.push(0.0);
                v
            };
            let positions = padded.len() / f;
            let (pooled_a, _) = model::global_max_pool(&padded, positions, f);
            // swap two positions
            let mut permuted = padded.clone();
            let i = swap % positions;
            let j = (swap / 2) % positions;
            for k in 0..f {
                permuted.swap(i * f + k, j * f + k);
            }
            let (pooled_b, _) = model::global_max_pool(&permuted, positions, f);
            prop_assert_eq!(pooled_a, pooled_b);
        }
    }
}
