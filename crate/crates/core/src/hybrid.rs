//! Two-stage cascade over the classifier outputs, and its coupling to the
//! rule gate: the winning label becomes the `expected` attribute of the
//! stimulus event.

use serde::{Deserialize, Serialize};

use crate::cnn::{self, CnnModel, Vocabulary};
use crate::corpus::{extract_mentions, AgentId, Inventory, Role};
use crate::dsl::{
    apply_event, gate, reset_conversation, Attempt, ConversationState, Event, GateDecision,
    RuleSet, Verdict,
};
use crate::encoding::window_state;
use crate::error::{Error, Result};
use crate::predictors::{mle_predict, PredictorOutput, TransitionTable};

/// Thresholded selection between the text classifier, the transition model
/// and a fixed fallback agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    /// Confidence threshold for the text classifier.
    pub k1: f64,
    /// Confidence threshold for the transition model.
    pub k2: f64,
    /// Fallback when neither classifier is confident enough.
    pub default_agent: AgentId,
    /// Reproduce the published guard, which tests the transition model's
    /// confidence against `k1` in the middle branch instead of re-testing
    /// the classifier. Off by default; both settings agree when `k1 == k2`.
    #[serde(default)]
    pub literal_middle_guard: bool,
}

impl CascadeConfig {
    pub fn new(k1: f64, k2: f64, default_agent: impl Into<AgentId>) -> Self {
        CascadeConfig {
            k1,
            k2,
            default_agent: default_agent.into(),
            literal_middle_guard: false,
        }
    }
}

/// Pick the next-speaker label: the classifier's label when its confidence
/// reaches `k1`, else the transition model's when its confidence reaches
/// `k2`, else the default agent.
pub fn cascade_predict(
    cnn_out: &PredictorOutput,
    mle_out: &PredictorOutput,
    cfg: &CascadeConfig,
) -> Result<AgentId> {
    if cnn_out.distribution.len() != mle_out.distribution.len() {
        return Err(Error::Dimension(format!(
            "classifier outputs cover {} and {} agents",
            cnn_out.distribution.len(),
            mle_out.distribution.len()
        )));
    }
    if cnn_out.confidence >= cfg.k1 {
        return Ok(cnn_out.label.clone());
    }
    let middle = if cfg.literal_middle_guard {
        mle_out.confidence < cfg.k1 && mle_out.confidence >= cfg.k2
    } else {
        mle_out.confidence >= cfg.k2
    };
    if middle {
        return Ok(mle_out.label.clone());
    }
    Ok(cfg.default_agent.clone())
}

/// Gate an attempt in the context of a fresh stimulus: run the cascade,
/// attach its label as the stimulus event's expected replier, apply the
/// event, and query the gate. Returns the decision together with the
/// successor state so callers can keep replaying.
pub fn hybrid_gate(
    state: &ConversationState,
    rules: &RuleSet,
    stimulus: &Event,
    attempt: &Attempt,
    cnn_out: &PredictorOutput,
    mle_out: &PredictorOutput,
    cfg: &CascadeConfig,
) -> Result<(GateDecision, ConversationState)> {
    let expected = cascade_predict(cnn_out, mle_out, cfg)?;
    let event = stimulus.clone().with_expected(Some(expected));
    let next = apply_event(state, rules, &event)?;
    let decision = gate(&next, rules, attempt)?;
    Ok((decision, next))
}

/// Loaded predictor bundle for live gating.
pub struct Predictors {
    pub cnn: CnnModel,
    pub vocab: Vocabulary,
    pub table: TransitionTable,
    pub window: usize,
    pub cascade: CascadeConfig,
}

/// The turn-taking decision core shared by the live service and offline
/// replay: per-conversation rule state plus the message history the
/// predictors need.
pub struct Governor {
    rules: RuleSet,
    inventory: Inventory,
    predictors: Option<Predictors>,
    state: ConversationState,
    /// (sender, text) of accepted messages, newest last.
    history: Vec<(AgentId, String)>,
    seq: u64,
}

/// One processed message: the verdict and the expectation that was attached
/// to the stimulus, if any.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HubVerdict {
    pub seq: u64,
    pub sender: String,
    pub decision: GateDecision,
    pub expected: Option<String>,
}

impl Governor {
    pub fn new(rules: RuleSet, inventory: Inventory, predictors: Option<Predictors>) -> Self {
        let state = reset_conversation(&rules, &inventory);
        Governor {
            rules,
            inventory,
            predictors,
            state,
            history: Vec::new(),
            seq: 0,
        }
    }

    /// Gate a submitted message; allowed messages are accepted into the
    /// conversation state, denied ones leave it untouched.
    pub fn submit(&mut self, sender: &str, text: &str) -> Result<HubVerdict> {
        let sender = AgentId::from(sender);
        let role = self
            .inventory
            .role_of(&sender)
            .ok_or_else(|| Error::UnknownAgent(sender.to_string()))?;
        let mentions = extract_mentions(text, &self.inventory);
        let attempt = Attempt {
            sender: sender.clone(),
            role,
            mentions: mentions.clone(),
        };
        let decision = gate(&self.state, &self.rules, &attempt)?;
        let seq = self.seq;
        self.seq += 1;

        let mut expected = None;
        if decision.verdict == Verdict::Allow {
            if role == Role::User {
                expected = self.expectation_for(&sender, text)?;
            }
            let event = Event {
                sender: sender.clone(),
                role,
                mentions,
                expected: expected.clone(),
            };
            self.state = apply_event(&self.state, &self.rules, &event)?;
            self.history.push((sender.clone(), text.to_string()));
        }
        Ok(HubVerdict {
            seq,
            sender: sender.to_string(),
            decision,
            expected: expected.map(|a| a.to_string()),
        })
    }

    fn expectation_for(&self, sender: &AgentId, text: &str) -> Result<Option<AgentId>> {
        let Some(p) = &self.predictors else {
            return Ok(None);
        };
        let prev = self.history.last().map(|(s, t)| (s.clone(), t.clone()));
        let cnn_out = cnn::predict(
            &p.cnn,
            &p.vocab,
            &self.inventory,
            prev.as_ref().map(|(s, t)| (s, t.as_str())),
            (sender, text),
        )?;
        let mut senders: Vec<AgentId> = self.history.iter().map(|(s, _)| s.clone()).collect();
        senders.push(sender.clone());
        let state = window_state(&senders, p.window, &self.inventory)?;
        let mle_out = mle_predict(&p.table, &state, &self.inventory)?;
        Ok(Some(cascade_predict(&cnn_out, &mle_out, &p.cascade)?))
    }
}

/// Offline replay of a scripted message sequence through a fresh governor;
/// the reference the live service is checked against.
pub fn replay_transcript(
    rules: &RuleSet,
    inventory: &Inventory,
    predictors: Option<Predictors>,
    messages: &[(String, String)],
) -> Result<Vec<HubVerdict>> {
    let mut governor = Governor::new(rules.clone(), inventory.clone(), predictors);
    messages
        .iter()
        .map(|(sender, text)| governor.submit(sender, text))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Inventory, Role};
    use crate::dsl::{parse_ruleset, reset_conversation, Verdict, SCENARIO_B_SOURCE};
    use crate::predictors::PredictorOutput;
    use proptest::prelude::*;

    fn inv() -> Inventory {
        Inventory::new(
            [
                ("user", Role::User),
                ("taxi_bot", Role::Bot),
                ("train_bot", Role::Bot),
                ("travel_bot", Role::Bot),
            ]
            .iter()
            .map(|(s, r)| (crate::corpus::AgentId::from(*s), *r))
            .collect(),
        )
        .unwrap()
    }

    fn output(label: &str, confidence: f64) -> PredictorOutput {
        let inv = inv();
        let idx = inv.index_of(&AgentId::from(label)).unwrap();
        let n = inv.len();
        let mut distribution = vec![(1.0 - confidence) / (n as f64 - 1.0); n];
        distribution[idx] = confidence;
        PredictorOutput {
            distribution,
            label: AgentId::from(label),
            confidence,
        }
    }

    #[test]
    fn cascade_truth_table() {
        let cfg = CascadeConfig::new(0.8, 0.8, "travel_bot");
        // confident classifier wins outright
        let got =
            cascade_predict(&output("train_bot", 0.95), &output("taxi_bot", 0.99), &cfg).unwrap();
        assert_eq!(got, AgentId::from("train_bot"));
        // fall through to the transition model
        let got =
            cascade_predict(&output("train_bot", 0.50), &output("taxi_bot", 0.85), &cfg).unwrap();
        assert_eq!(got, AgentId::from("taxi_bot"));
        // both under threshold: default agent
        let got =
            cascade_predict(&output("train_bot", 0.50), &output("taxi_bot", 0.50), &cfg).unwrap();
        assert_eq!(got, AgentId::from("travel_bot"));
    }

    #[test]
    fn zero_thresholds_always_take_the_classifier() {
        let cfg = CascadeConfig::new(0.0, 0.0, "travel_bot");
        let got =
            cascade_predict(&output("train_bot", 0.01), &output("taxi_bot", 0.99), &cfg).unwrap();
        assert_eq!(got, AgentId::from("train_bot"));
    }

    #[test]
    fn unreachable_thresholds_fall_back_to_default() {
        let cfg = CascadeConfig::new(1.0, 1.0, "travel_bot");
        let got =
            cascade_predict(&output("train_bot", 0.99), &output("taxi_bot", 0.999), &cfg).unwrap();
        assert_eq!(got, AgentId::from("travel_bot"));
    }

    #[test]
    fn literal_middle_guard_semantics() {
        let mut cfg = CascadeConfig::new(0.8, 0.6, "travel_bot");
        let cnn = output("train_bot", 0.5);

        // inside [k2, k1) both guards take the transition model
        let mle = output("taxi_bot", 0.7);
        cfg.literal_middle_guard = false;
        assert_eq!(
            cascade_predict(&cnn, &mle, &cfg).unwrap(),
            AgentId::from("taxi_bot")
        );
        cfg.literal_middle_guard = true;
        assert_eq!(
            cascade_predict(&cnn, &mle, &cfg).unwrap(),
            AgentId::from("taxi_bot")
        );

        // at C2 >= k1 the printed guard falls through to the default agent
        let mle = output("taxi_bot", 0.85);
        cfg.literal_middle_guard = false;
        assert_eq!(
            cascade_predict(&cnn, &mle, &cfg).unwrap(),
            AgentId::from("taxi_bot")
        );
        cfg.literal_middle_guard = true;
        assert_eq!(
            cascade_predict(&cnn, &mle, &cfg).unwrap(),
            AgentId::from("travel_bot")
        );
    }

    #[test]
    fn inventory_mismatch_is_an_error() {
        let cfg = CascadeConfig::new(0.8, 0.8, "travel_bot");
        let small = PredictorOutput::from_distribution(
            vec![0.5, 0.5],
            &Inventory::new(vec![
                (AgentId::from("user"), Role::User),
                (AgentId::from("x_bot"), Role::Bot),
            ])
            .unwrap(),
        );
        assert!(cascade_predict(&output("train_bot", 0.9), &small, &cfg).is_err());
    }

    #[test]
    fn hybrid_gate_dispatches_on_the_cascade_label() {
        let rules = parse_ruleset(SCENARIO_B_SOURCE).unwrap();
        let inv = inv();
        let state = reset_conversation(&rules, &inv);
        let cfg = CascadeConfig::new(0.8, 0.8, "travel_bot");
        let stimulus = Event::new("user", Role::User);

        // confident classifier: only its label may reply
        let cnn = output("train_bot", 0.95);
        let mle = output("taxi_bot", 0.95);
        let (decision, _) = hybrid_gate(
            &state,
            &rules,
            &stimulus,
            &Attempt::new("train_bot", Role::Bot),
            &cnn,
            &mle,
            &cfg,
        )
        .unwrap();
        assert_eq!(decision.verdict, Verdict::Allow);
        let (decision, _) = hybrid_gate(
            &state,
            &rules,
            &stimulus,
            &Attempt::new("taxi_bot", Role::Bot),
            &cnn,
            &mle,
            &cfg,
        )
        .unwrap();
        assert_eq!(decision.verdict, Verdict::Deny);

        // nothing confident: the default agent is expected and allowed
        let cnn = output("train_bot", 0.3);
        let mle = output("taxi_bot", 0.3);
        let (decision, _) = hybrid_gate(
            &state,
            &rules,
            &stimulus,
            &Attempt::new("travel_bot", Role::Bot),
            &cnn,
            &mle,
            &cfg,
        )
        .unwrap();
        assert_eq!(decision.verdict, Verdict::Allow);

        // the user is never blocked
        let (decision, _) = hybrid_gate(
            &state,
            &rules,
            &stimulus,
            &Attempt::new("user", Role::User),
            &cnn,
            &mle,
            &cfg,
        )
        .unwrap();
        assert_eq!(decision.verdict, Verdict::Allow);
    }

    proptest! {
        // Raising k1 never switches the outcome toward the classifier.
        #[test]
        fn monotone_in_k1(c1 in 0.0f64..1.0, c2 in 0.0f64..1.0, k1a in 0.0f64..1.0, k1b in 0.0f64..1.0, k2 in 0.0f64..1.0) {
            let (lo, hi) = if k1a <= k1b { (k1a, k1b) } else { (k1b, k1a) };
            let cnn = output("train_bot", c1);
            let mle = output("taxi_bot", c2);
            let at_lo = cascade_predict(&cnn, &mle, &CascadeConfig::new(lo, k2, "travel_bot")).unwrap();
            let at_hi = cascade_predict(&cnn, &mle, &CascadeConfig::new(hi, k2, "travel_bot")).unwrap();
            if at_hi == AgentId::from("train_bot") {
                prop_assert_eq!(at_lo, AgentId::from("train_bot"));
            }
        }
    }
}
