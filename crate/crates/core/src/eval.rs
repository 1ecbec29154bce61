//! Evaluation harness: next-speaker accuracy, scenario gating accuracy and
//! F1 over seeded candidate draws, disjoint-error analysis and exact
//! McNemar significance testing.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnn::{CnnModel, Vocabulary};
use crate::corpus::{AgentId, Corpus, Role, Utterance};
use crate::dsl::{apply_event, gate, reset_conversation, Attempt, Event, RuleSet, Verdict};
use crate::encoding::window_state;
use crate::error::{Error, Result};
use crate::hybrid::{cascade_predict, CascadeConfig};
use crate::predictors::{mle_predict, repeat_last, TransitionTable};

/// Identifies one scored instance: dialogue id plus turn index (next-speaker
/// evaluation) or slot index (scenario evaluation).
pub type InstanceId = (String, usize);

/// Binary confusion counts with `allow` as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub total: usize,
    pub correct_count: usize,
    /// F1 with allow as the positive class; scenario evaluations only.
    pub f1_binary_allow: Option<f64>,
    /// Unweighted mean of the allow-positive and deny-positive F1 scores.
    pub f1_macro: Option<f64>,
    pub confusion: Option<Confusion>,
    /// Per-instance correctness, in replay order.
    pub per_instance: Vec<(InstanceId, bool)>,
}

impl EvalReport {
    fn from_outcomes(per_instance: Vec<(InstanceId, bool)>, confusion: Option<Confusion>) -> Self {
        let total = per_instance.len();
        let correct_count = per_instance.iter().filter(|(_, c)| *c).count();
        let (f1_binary_allow, f1_macro) = match confusion {
            Some(c) => {
                let allow = f1(c.tp, c.fp, c.fn_);
                let deny = f1(c.tn, c.fn_, c.fp);
                (Some(allow), Some((allow + deny) / 2.0))
            }
            None => (None, None),
        };
        EvalReport {
            accuracy: correct_count as f64 / total.max(1) as f64,
            total,
            correct_count,
            f1_binary_allow,
            f1_macro,
            confusion,
            per_instance,
        }
    }

    pub fn error_indices(&self) -> BTreeSet<InstanceId> {
        self.per_instance
            .iter()
            .filter(|(_, c)| !*c)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn correctness(&self) -> Vec<bool> {
        self.per_instance.iter().map(|(_, c)| *c).collect()
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

// ---------------------------------------------------------------------------
// Next-speaker evaluation
// ---------------------------------------------------------------------------

/// A next-speaker predictor under evaluation.
pub enum Predictor<'a> {
    RepeatLast,
    Mle {
        table: &'a TransitionTable,
        window: usize,
    },
    Cnn {
        model: &'a CnnModel,
        vocab: &'a Vocabulary,
    },
}

impl Predictor<'_> {
    /// Predicted sender of turn `t+1` given genuine turns up to `t`
    /// (0-based). The classifier additionally sees the turn texts.
    fn predict_label(&self, corpus: &Corpus, turns: &[&Utterance], t: usize) -> Result<AgentId> {
        match self {
            Predictor::RepeatLast => {
                let senders: Vec<AgentId> = turns[..=t].iter().map(|u| u.sender.clone()).collect();
                repeat_last(&senders)
            }
            Predictor::Mle { table, window } => {
                let senders: Vec<AgentId> = turns[..=t].iter().map(|u| u.sender.clone()).collect();
                let state = window_state(&senders, *window, &corpus.inventory)?;
                Ok(mle_predict(table, &state, &corpus.inventory)?.label)
            }
            Predictor::Cnn { model, vocab } => {
                let prev = if t >= 1 {
                    Some((&turns[t - 1].sender, turns[t - 1].text.as_str()))
                } else {
                    None
                };
                let out = crate::cnn::predict(
                    model,
                    vocab,
                    &corpus.inventory,
                    prev,
                    (&turns[t].sender, &turns[t].text),
                )?;
                Ok(out.label)
            }
        }
    }
}

/// Accuracy of a predictor over every instance `(dialogue, t)` with
/// `t` in `[1, T-1]` (1-based), on clean test dialogues.
pub fn eval_next_speaker(predictor: &Predictor<'_>, test: &Corpus) -> Result<EvalReport> {
    if test.dialogues.is_empty() {
        return Err(Error::InvalidArgument("empty test corpus".into()));
    }
    let per_dialogue: Vec<Result<Vec<(InstanceId, bool)>>> = test
        .dialogues
        .par_iter()
        .map(|d| {
            let turns: Vec<&Utterance> = d.genuine_turns().collect();
            let mut out = Vec::new();
            for t in 0..turns.len().saturating_sub(1) {
                let label = predictor.predict_label(test, &turns, t)?;
                let correct = label == turns[t + 1].sender;
                out.push(((d.id.clone(), t + 1), correct));
            }
            Ok(out)
        })
        .collect();
    let mut per_instance = Vec::new();
    for r in per_dialogue {
        per_instance.extend(r?);
    }
    Ok(EvalReport::from_outcomes(per_instance, None))
}

// ---------------------------------------------------------------------------
// Disjoint-error analysis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorOverlap {
    /// |e1 ∩ e2| / |e1 ∪ e2|
    pub intersection_over_union: f64,
    /// |e1 \ e2| / |e1|
    pub only_first_over_first: f64,
    /// |e2 \ e1| / |e2|
    pub only_second_over_second: f64,
}

/// Exact set arithmetic over two error sets from the same instance universe.
pub fn error_analysis(e1: &BTreeSet<InstanceId>, e2: &BTreeSet<InstanceId>) -> ErrorOverlap {
    let inter = e1.intersection(e2).count() as f64;
    let union = e1.union(e2).count() as f64;
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    ErrorOverlap {
        intersection_over_union: ratio(inter, union),
        only_first_over_first: ratio(e1.len() as f64 - inter, e1.len() as f64),
        only_second_over_second: ratio(e2.len() as f64 - inter, e2.len() as f64),
    }
}

// ---------------------------------------------------------------------------
// Scenario evaluation
// ---------------------------------------------------------------------------

/// Where the `expected` attribute of each stimulus comes from.
pub enum ExpectedSource<'a> {
    /// No prediction; pure etiquette rules (Scenario A).
    None,
    /// Ground truth: the genuine replier itself (upper-bound check).
    Oracle,
    /// The classifier cascade (Scenario B).
    Cascade {
        cnn: &'a CnnModel,
        vocab: &'a Vocabulary,
        table: &'a TransitionTable,
        window: usize,
        config: CascadeConfig,
    },
}

/// Replay augmented test dialogues on genuine turns (teacher forcing); at
/// each reply slot draw one of its candidates uniformly (seeded), present it
/// to the gate, and score: allow is correct on the genuine reply, deny is
/// correct on a distractor. The genuine reply is then accepted regardless.
pub fn eval_scenario(
    rules: &RuleSet,
    source: &ExpectedSource<'_>,
    test: &Corpus,
    seed: u64,
) -> Result<EvalReport> {
    if !test.has_distractors() {
        return Err(Error::InvalidArgument(
            "scenario evaluation needs an augmented corpus with reply slots".into(),
        ));
    }
    let mut per_instance = Vec::new();
    let mut confusion = Confusion::default();
    for (d_idx, d) in test.dialogues.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::cnn::mix_seed(seed, d_idx as u64));
        let mut state = reset_conversation(rules, &test.inventory);
        let genuine: Vec<&Utterance> = d.genuine_turns().collect();
        let mut history: Vec<AgentId> = Vec::new();

        for (g_idx, turn) in genuine.iter().enumerate() {
            match turn.role {
                Role::User => {
                    let expected = match source {
                        ExpectedSource::None => None,
                        ExpectedSource::Oracle => genuine
                            .get(g_idx + 1)
                            .filter(|r| r.role == Role::Bot)
                            .map(|r| r.sender.clone()),
                        ExpectedSource::Cascade {
                            cnn,
                            vocab,
                            table,
                            window,
                            config,
                        } => {
                            let prev = if g_idx >= 1 {
                                let p = genuine[g_idx - 1];
                                Some((&p.sender, p.text.as_str()))
                            } else {
                                None
                            };
                            let cnn_out = crate::cnn::predict(
                                cnn,
                                vocab,
                                &test.inventory,
                                prev,
                                (&turn.sender, &turn.text),
                            )?;
                            let mut senders = history.clone();
                            senders.push(turn.sender.clone());
                            let mle_state = window_state(&senders, *window, &test.inventory)?;
                            let mle_out = mle_predict(table, &mle_state, &test.inventory)?;
                            Some(cascade_predict(&cnn_out, &mle_out, config)?)
                        }
                    };
                    let event = Event {
                        sender: turn.sender.clone(),
                        role: turn.role,
                        mentions: turn.mentions.clone(),
                        expected,
                    };
                    state = apply_event(&state, rules, &event)?;
                }
                Role::Bot => {
                    if let Some(slot) = turn.slot {
                        let candidates: Vec<&Utterance> =
                            d.turns.iter().filter(|u| u.slot == Some(slot)).collect();
                        let draw = candidates[rng.random_range(0..candidates.len())];
                        let attempt = Attempt {
                            sender: draw.sender.clone(),
                            role: draw.role,
                            mentions: draw.mentions.clone(),
                        };
                        let decision = gate(&state, rules, &attempt)?;
                        let allowed = decision.verdict == Verdict::Allow;
                        let correct = allowed != draw.is_distractor;
                        match (allowed, draw.is_distractor) {
                            (true, false) => confusion.tp += 1,
                            (true, true) => confusion.fp += 1,
                            (false, false) => confusion.fn_ += 1,
                            (false, true) => confusion.tn += 1,
                        }
                        per_instance.push(((d.id.clone(), slot as usize), correct));
                    }
                    let event = Event {
                        sender: turn.sender.clone(),
                        role: turn.role,
                        mentions: turn.mentions.clone(),
                        expected: None,
                    };
                    state = apply_event(&state, rules, &event)?;
                }
            }
            history.push(turn.sender.clone());
        }
    }
    Ok(EvalReport::from_outcomes(per_instance, Some(confusion)))
}

/// Per-slot correctness of a plain next-speaker predictor on an augmented
/// corpus: at each slot, does the predictor's label at the stimulus equal
/// the genuine replier? Instance ids align with [`eval_scenario`] so the
/// vectors pair for significance testing.
pub fn predictor_slot_correctness(
    predictor: &Predictor<'_>,
    test: &Corpus,
) -> Result<Vec<(InstanceId, bool)>> {
    if !test.has_distractors() {
        return Err(Error::InvalidArgument(
            "slot correctness needs an augmented corpus".into(),
        ));
    }
    let mut out = Vec::new();
    for d in &test.dialogues {
        let genuine: Vec<&Utterance> = d.genuine_turns().collect();
        for (g_idx, turn) in genuine.iter().enumerate() {
            if turn.role != Role::Bot || g_idx == 0 {
                continue;
            }
            let Some(slot) = turn.slot else { continue };
            // the stimulus is the genuine turn right before the reply
            let label = predictor.predict_label(test, &genuine, g_idx - 1)?;
            out.push(((d.id.clone(), slot as usize), label == turn.sender));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Significance testing
// ---------------------------------------------------------------------------

/// Exact binomial McNemar test, two-sided, on paired correctness vectors.
pub fn mcnemar(correct1: &[bool], correct2: &[bool]) -> Result<f64> {
    if correct1.len() != correct2.len() {
        return Err(Error::Dimension(format!(
            "paired vectors of length {} and {}",
            correct1.len(),
            correct2.len()
        )));
    }
    let mut b = 0u64; // first correct only
    let mut c = 0u64; // second correct only
    for (x, y) in correct1.iter().zip(correct2.iter()) {
        match (x, y) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    let n = b + c;
    if n == 0 {
        return Ok(1.0);
    }
    let k = b.min(c);
    // ln factorials up to n
    let mut ln_fact = vec![0.0f64; (n + 1) as usize];
    for i in 1..=n as usize {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let ln2 = std::f64::consts::LN_2;
    let mut tail = 0.0f64;
    for i in 0..=k {
        let ln_c = ln_fact[n as usize] - ln_fact[i as usize] - ln_fact[(n - i) as usize];
        tail += (ln_c - n as f64 * ln2).exp();
    }
    Ok((2.0 * tail).min(1.0))
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub kind: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub accuracy: f64,
    pub total: usize,
    pub f1_binary_allow: Option<f64>,
    pub f1_macro: Option<f64>,
    pub confusion: Option<Confusion>,
    /// (dialogue id, index, correct) triples for significance re-testing.
    pub per_instance: Vec<(String, usize, bool)>,
}

impl ReportFile {
    pub fn new(kind: &str, report: &EvalReport, seed: Option<u64>, config: &str) -> Self {
        ReportFile {
            kind: kind.to_string(),
            seed,
            config_hash: format!("{:016x}", fnv1a(config.as_bytes())),
            accuracy: report.accuracy,
            total: report.total,
            f1_binary_allow: report.f1_binary_allow,
            f1_macro: report.f1_macro,
            confusion: report.confusion,
            per_instance: report
                .per_instance
                .iter()
                .map(|((id, idx), c)| (id.clone(), *idx, *c))
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)
            .map_err(|e| Error::Corrupt(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::Corrupt(e.to_string()))
    }

    pub fn correctness(&self) -> Vec<bool> {
        self.per_instance.iter().map(|(_, _, c)| *c).collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
