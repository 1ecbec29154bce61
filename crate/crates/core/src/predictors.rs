//! Next-speaker predictors: the Repeat-Last baseline and the agent-only
//! transition model with add-one smoothing.

use std::collections::HashMap;
use std::io::{BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{AgentId, Inventory};
use crate::encoding::{TransitionEvent, WindowedState};
use crate::error::{Error, Result};

/// A prediction over the agent inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorOutput {
    /// Probability per agent, aligned to canonical inventory order.
    pub distribution: Vec<f64>,
    /// Argmax agent; ties broken by canonical agent order.
    pub label: AgentId,
    /// Probability attained by `label`.
    pub confidence: f64,
}

impl PredictorOutput {
    /// Build from a distribution, applying the canonical tie-break.
    pub fn from_distribution(distribution: Vec<f64>, inventory: &Inventory) -> Self {
        debug_assert_eq!(distribution.len(), inventory.len());
        let mut best = 0usize;
        for (i, p) in distribution.iter().enumerate() {
            if *p > distribution[best] {
                best = i;
            }
        }
        PredictorOutput {
            label: inventory.agent_at(best).clone(),
            confidence: distribution[best],
            distribution,
        }
    }
}

/// Repeat-Last baseline: the next speaker is the one who spoke at `t-1`.
/// A single-element history falls back to that sole speaker.
pub fn repeat_last(history: &[AgentId]) -> Result<AgentId> {
    match history.len() {
        0 => Err(Error::InvalidArgument(
            "repeat-last needs a non-empty history".into(),
        )),
        1 => Ok(history[0].clone()),
        len => Ok(history[len - 2].clone()),
    }
}

/// Smoothed transition counts over `(windowed state -> next sender)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    counts: HashMap<WindowedState, Vec<u64>>,
    state_totals: HashMap<WindowedState, u64>,
    window: usize,
    /// Number of possible next senders; the smoothing denominator addend.
    n_next: usize,
}

/// How the per-agent score of a state is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SmoothingMode {
    /// Add-one smoothing conditioned on the source state:
    /// `(count + 1) / (state_total + n)`. Produces a proper distribution.
    #[default]
    Normalized,
    /// The per-pair ratio `(count + 1) / (count + n)`, kept for comparison;
    /// scores are renormalized over agents before reporting so downstream
    /// consumers still see a distribution, but the argmax follows the raw
    /// per-pair ratios.
    LiteralPair,
}

impl TransitionTable {
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn n_next(&self) -> usize {
        self.n_next
    }

    pub fn total_events(&self) -> u64 {
        self.state_totals.values().sum()
    }

    pub fn state_count(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, state: &WindowedState, agent_idx: usize) -> u64 {
        self.counts.get(state).map_or(0, |c| c[agent_idx])
    }
}

/// Tally transition events into a table. All events must share the window
/// size and an inventory of `n` agents.
pub fn mle_train(events: &[TransitionEvent], inventory: &Inventory) -> Result<TransitionTable> {
    let n = inventory.len();
    let mut counts: HashMap<WindowedState, Vec<u64>> = HashMap::new();
    let mut state_totals: HashMap<WindowedState, u64> = HashMap::new();
    let mut window = None;
    for ev in events {
        let state = ev.from_state();
        if state.n() != n {
            return Err(Error::Dimension(format!(
                "event state encodes {} agents, inventory has {n}",
                state.n()
            )));
        }
        match window {
            None => window = Some(state.window()),
            Some(w) if w != state.window() => {
                return Err(Error::Dimension(format!(
                    "mixed window sizes {w} and {} in training events",
                    state.window()
                )))
            }
            _ => {}
        }
        let idx = inventory
            .index_of(&ev.to_sender)
            .ok_or_else(|| Error::UnknownAgent(ev.to_sender.to_string()))?;
        counts.entry(state.clone()).or_insert_with(|| vec![0; n])[idx] += 1;
        *state_totals.entry(state.clone()).or_insert(0) += 1;
    }
    Ok(TransitionTable {
        counts,
        state_totals,
        window: window.unwrap_or(0),
        n_next: n,
    })
}

/// Smoothed prediction for a state. Unseen states yield the uniform
/// distribution `1/n`.
pub fn mle_predict(
    table: &TransitionTable,
    state: &WindowedState,
    inventory: &Inventory,
) -> Result<PredictorOutput> {
    mle_predict_mode(table, state, inventory, SmoothingMode::Normalized)
}

pub fn mle_predict_mode(
    table: &TransitionTable,
    state: &WindowedState,
    inventory: &Inventory,
    mode: SmoothingMode,
) -> Result<PredictorOutput> {
    let n = table.n_next;
    if inventory.len() != n {
        return Err(Error::Dimension(format!(
            "inventory has {} agents, table expects {n}",
            inventory.len()
        )));
    }
    if state.n() != n || (table.window != 0 && state.window() != table.window) {
        return Err(Error::Dimension(format!(
            "state geometry {}x{} does not match table {}x{}",
            state.window(),
            state.n(),
            table.window,
            n
        )));
    }
    let zero = vec![0u64; n];
    let counts = table.counts.get(state).unwrap_or(&zero);
    let total = table.state_totals.get(state).copied().unwrap_or(0);
    let scores: Vec<f64> = match mode {
        SmoothingMode::Normalized => counts
            .iter()
            .map(|&c| (c as f64 + 1.0) / (total as f64 + n as f64))
            .collect(),
        SmoothingMode::LiteralPair => counts
            .iter()
            .map(|&c| (c as f64 + 1.0) / (c as f64 + n as f64))
            .collect(),
    };
    let distribution = match mode {
        SmoothingMode::Normalized => scores,
        SmoothingMode::LiteralPair => {
            let sum: f64 = scores.iter().sum();
            scores.iter().map(|s| s / sum).collect()
        }
    };
    Ok(PredictorOutput::from_distribution(distribution, inventory))
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

const TABLE_FORMAT_VERSION: &str = "turngate-mle-v1";

#[derive(Serialize, Deserialize)]
struct TableFile {
    version: String,
    window: usize,
    agents: Vec<String>,
    /// state hex key -> { agent name -> count }
    counts: std::collections::BTreeMap<String, std::collections::BTreeMap<String, u64>>,
}

/// Write the table as versioned JSON keyed by hex state strings.
pub fn save_table(
    table: &TransitionTable,
    inventory: &Inventory,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut counts = std::collections::BTreeMap::new();
    for (state, per_agent) in &table.counts {
        let entry: std::collections::BTreeMap<String, u64> = per_agent
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(i, c)| (inventory.agent_at(i).to_string(), *c))
            .collect();
        counts.insert(state.hex_key(), entry);
    }
    let file = TableFile {
        version: TABLE_FORMAT_VERSION.to_string(),
        window: table.window,
        agents: inventory.names().map(|a| a.to_string()).collect(),
        counts,
    };
    let mut out =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    serde_json::to_writer_pretty(&mut out, &file).map_err(|e| Error::Corrupt(e.to_string()))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Load a table saved by [`save_table`]; the inventory must list the same
/// agents in the same canonical order.
pub fn load_table(path: impl AsRef<Path>, inventory: &Inventory) -> Result<TransitionTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parsed: TableFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Corrupt(e.to_string()))?;
    if parsed.version != TABLE_FORMAT_VERSION {
        return Err(Error::Version {
            found: parsed.version,
            expected: TABLE_FORMAT_VERSION.to_string(),
        });
    }
    let expected: Vec<String> = inventory.names().map(|a| a.to_string()).collect();
    if parsed.agents != expected {
        return Err(Error::Dimension(
            "table agent inventory does not match corpus inventory".into(),
        ));
    }
    let n = inventory.len();
    let mut counts = HashMap::new();
    let mut state_totals = HashMap::new();
    for (key, per_agent) in parsed.counts {
        let state = WindowedState::from_hex_key(&key, parsed.window, n)?;
        let mut row = vec![0u64; n];
        let mut total = 0u64;
        for (agent, count) in per_agent {
            let idx = inventory
                .index_of(&AgentId::new(agent.clone()))
                .ok_or(Error::UnknownAgent(agent))?;
            row[idx] = count;
            total += count;
        }
        counts.insert(state.clone(), row);
        state_totals.insert(state, total);
    }
    Ok(TransitionTable {
        counts,
        state_totals,
        window: parsed.window,
        n_next: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Role;
    use crate::encoding::{transitions_from_senders, window_state};
    use proptest::prelude::*;

    fn inv7() -> Inventory {
        Inventory::new(
            [
                ("user", Role::User),
                ("attraction_bot", Role::Bot),
                ("hotel_bot", Role::Bot),
                ("restaurant_bot", Role::Bot),
                ("taxi_bot", Role::Bot),
                ("train_bot", Role::Bot),
                ("travel_bot", Role::Bot),
            ]
            .iter()
            .map(|(s, r)| (AgentId::from(*s), *r))
            .collect(),
        )
        .unwrap()
    }

    #[test]
    fn repeat_last_rules() {
        let u = AgentId::from("user");
        let h = AgentId::from("hotel_bot");
        assert_eq!(repeat_last(&[u.clone(), h.clone()]).unwrap(), u);
        assert_eq!(repeat_last(&[u.clone(), h.clone(), u.clone()]).unwrap(), h);
        assert_eq!(repeat_last(&[u.clone()]).unwrap(), u);
        assert!(repeat_last(&[]).is_err());
    }

    #[test]
    fn train_tallies_counts() {
        let inv = inv7();
        let s1 = window_state(&[AgentId::from("user")], 2, &inv).unwrap();
        let events = vec![
            TransitionEvent::new(s1.clone(), AgentId::from("user")),
            TransitionEvent::new(s1.clone(), AgentId::from("user")),
            TransitionEvent::new(s1.clone(), AgentId::from("hotel_bot")),
        ];
        let table = mle_train(&events, &inv).unwrap();
        let user_idx = inv.index_of(&AgentId::from("user")).unwrap();
        let hotel_idx = inv.index_of(&AgentId::from("hotel_bot")).unwrap();
        assert_eq!(table.count(&s1, user_idx), 2);
        assert_eq!(table.count(&s1, hotel_idx), 1);
        assert_eq!(table.total_events(), 3);

        let empty = mle_train(&[], &inv).unwrap();
        assert_eq!(empty.total_events(), 0);
        assert_eq!(empty.state_count(), 0);
    }

    #[test]
    fn predict_matches_hand_counts() {
        let inv = inv7();
        let s = window_state(
            &[AgentId::from("hotel_bot"), AgentId::from("user")],
            2,
            &inv,
        )
        .unwrap();
        // state seen 4 times: 3x -> user, 1x -> hotel_bot
        let mut events = Vec::new();
        for _ in 0..3 {
            events.push(TransitionEvent::new(s.clone(), AgentId::from("user")));
        }
        events.push(TransitionEvent::new(s.clone(), AgentId::from("hotel_bot")));
        let table = mle_train(&events, &inv).unwrap();
        let out = mle_predict(&table, &s, &inv).unwrap();
        assert!((out.confidence - 4.0 / 11.0).abs() < 1e-12);
        assert_eq!(out.label, AgentId::from("user"));
        let sum: f64 = out.distribution.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);

        // state seen 100 times, all -> user
        let mut events = Vec::new();
        for _ in 0..100 {
            events.push(TransitionEvent::new(s.clone(), AgentId::from("user")));
        }
        let table = mle_train(&events, &inv).unwrap();
        let out = mle_predict(&table, &s, &inv).unwrap();
        assert!((out.confidence - 101.0 / 107.0).abs() < 1e-12);
    }

    #[test]
    fn unseen_state_is_uniform() {
        let inv = inv7();
        let table = mle_train(&[], &inv).unwrap();
        let s = window_state(&[AgentId::from("user")], 2, &inv).unwrap();
        let out = mle_predict(&table, &s, &inv).unwrap();
        assert!((out.confidence - 1.0 / 7.0).abs() < 1e-12);
        for p in &out.distribution {
            assert!((p - 1.0 / 7.0).abs() < 1e-12);
        }
        // tie broken by canonical order: first agent lexicographically
        assert_eq!(out.label, AgentId::from("attraction_bot"));
    }

    #[test]
    fn literal_pair_mode_can_disagree_on_argmax() {
        // Under the per-pair ratio (c+1)/(c+n) the score grows with c, so on a
        // single state the argmax agrees with normalized smoothing; both modes
        // must produce a distribution that sums to one.
        let inv = inv7();
        let s = window_state(&[AgentId::from("user")], 2, &inv).unwrap();
        let mut events = Vec::new();
        for _ in 0..5 {
            events.push(TransitionEvent::new(s.clone(), AgentId::from("taxi_bot")));
        }
        events.push(TransitionEvent::new(s.clone(), AgentId::from("user")));
        let table = mle_train(&events, &inv).unwrap();
        let a = mle_predict_mode(&table, &s, &inv, SmoothingMode::Normalized).unwrap();
        let b = mle_predict_mode(&table, &s, &inv, SmoothingMode::LiteralPair).unwrap();
        assert_eq!(a.label, b.label);
        assert!((b.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn alternation_toy_corpus_learns_partner() {
        let inv = Inventory::new(vec![
            (AgentId::from("user"), Role::User),
            (AgentId::from("echo_bot"), Role::Bot),
        ])
        .unwrap();
        let mut senders = Vec::new();
        for _ in 0..20 {
            senders.push(AgentId::from("user"));
            senders.push(AgentId::from("echo_bot"));
        }
        let events = transitions_from_senders(&senders, 2, &inv).unwrap();
        let table = mle_train(&events, &inv).unwrap();
        for t in 1..senders.len() {
            let state = window_state(&senders[..t], 2, &inv).unwrap();
            if table.state_totals.contains_key(&state) {
                let out = mle_predict(&table, &state, &inv).unwrap();
                assert_eq!(out.label, senders[t], "at position {t}");
            }
        }
    }

    #[test]
    fn table_roundtrip() {
        let inv = inv7();
        let senders: Vec<AgentId> = ["user", "hotel_bot", "user", "taxi_bot", "user"]
            .iter()
            .map(|s| AgentId::from(*s))
            .collect();
        let events = transitions_from_senders(&senders, 2, &inv).unwrap();
        let table = mle_train(&events, &inv).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.json");
        save_table(&table, &inv, &path).unwrap();
        let loaded = load_table(&path, &inv).unwrap();
        assert_eq!(table, loaded);
    }

    #[test]
    fn table_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.json");
        std::fs::write(
            &path,
            r#"{"version":"turngate-mle-v0","window":2,"agents":[],"counts":{}}"#,
        )
        .unwrap();
        let err = load_table(&path, &inv7()).unwrap_err();
        assert!(matches!(err, Error::Version { .. }));
    }

    proptest! {
        // Distributions sum to one with a strictly positive smoothing floor.
        #[test]
        fn smoothed_distribution_is_proper(counts in proptest::collection::vec(0u64..50, 7)) {
            let inv = inv7();
            let s = window_state(&[AgentId::from("user")], 2, &inv).unwrap();
            let mut events = Vec::new();
            for (i, c) in counts.iter().enumerate() {
                for _ in 0..*c {
                    events.push(TransitionEvent::new(s.clone(), inv.agent_at(i).clone()));
                }
            }
            let table = mle_train(&events, &inv).unwrap();
            let out = mle_predict(&table, &s, &inv).unwrap();
            let total: u64 = counts.iter().sum();
            let floor = 1.0 / (total as f64 + 7.0);
            prop_assert!((out.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for p in &out.distribution {
                prop_assert!(*p >= floor - 1e-12);
            }
        }

        // Observing (S -> a) strictly raises P(a|S) and strictly lowers P(b|S).
        #[test]
        fn observation_monotonicity(counts in proptest::collection::vec(0u64..30, 7), target in 0..7usize) {
            let inv = inv7();
            let s = window_state(&[AgentId::from("user")], 2, &inv).unwrap();
            let mut events = Vec::new();
            for (i, c) in counts.iter().enumerate() {
                for _ in 0..*c {
                    events.push(TransitionEvent::new(s.clone(), inv.agent_at(i).clone()));
                }
            }
            let before = mle_predict(&mle_train(&events, &inv).unwrap(), &s, &inv).unwrap();
            events.push(TransitionEvent::new(s.clone(), inv.agent_at(target).clone()));
            let after = mle_predict(&mle_train(&events, &inv).unwrap(), &s, &inv).unwrap();
            prop_assert!(after.distribution[target] > before.distribution[target]);
            for i in 0..7 {
                if i != target {
                    prop_assert!(after.distribution[i] < before.distribution[i]);
                }
            }
        }
    }
}
