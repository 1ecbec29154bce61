//! Conversation-rules language: parser and execution engine for deontic
//! norms (obligation, permission, prohibition) over turn events, plus the
//! finite-state bookkeeping that tracks the conversation phase.
//!
//! A ruleset declares FSA states and two kinds of rules. Norms fire on
//! accepted messages and bind deontic statements to concrete agents;
//! transitions advance the FSA state. The gate answers allow/deny for an
//! attempted message from the active norm instances, with a fixed conflict
//! order: obligation allows, else prohibition denies, else permission
//! allows, else allow by default.
//!
//! Trigger conditions see the conversation as it stands once the triggering
//! message has been accepted, so `replied` is true on the reply itself. The
//! `others` selector resolves to bot-role participants minus the message
//! sender and minus agents granted by the same activation group, which is
//! what lets one trigger oblige an agent and simultaneously silence the
//! rest.

mod ast;
mod engine;
mod lexer;
mod parser;

pub use ast::{
    Condition, DeonticKind, DeonticStatement, EventPattern, Expiry, NormSpec, RuleSet, Selector,
    TransitionSpec,
};
pub use engine::{
    apply_event, gate, reset_conversation, ActiveNorm, Attempt, ConversationState, Event,
    GateDecision, Verdict,
};
pub use parser::parse_ruleset;

/// Scenario A ruleset source, as shipped in `rules/scenario_a.cr`.
pub const SCENARIO_A_SOURCE: &str = include_str!("../../../../rules/scenario_a.cr");
/// Scenario B ruleset source, as shipped in `rules/scenario_b.cr`.
pub const SCENARIO_B_SOURCE: &str = include_str!("../../../../rules/scenario_b.cr");

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AgentId, Inventory, Role};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn participants() -> Inventory {
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

    fn user_msg(mentions: &[&str], expected: Option<&str>) -> Event {
        Event::new("user", Role::User)
            .with_mentions(mentions.iter().map(|m| AgentId::from(*m)).collect())
            .with_expected(expected.map(AgentId::from))
    }

    fn bot_msg(sender: &str) -> Event {
        Event::new(sender, Role::Bot)
    }

    fn bot_attempt(sender: &str) -> Attempt {
        Attempt::new(sender, Role::Bot)
    }

    #[test]
    fn scenario_a_parses_to_six_norms_three_transitions() {
        let rs = parse_ruleset(SCENARIO_A_SOURCE).unwrap();
        assert_eq!(rs.norms.len(), 6);
        assert_eq!(rs.transitions.len(), 3);
        assert_eq!(rs.initial, "await_stimulus");
    }

    #[test]
    fn scenario_b_parses_to_twelve_norms_nine_transitions() {
        let rs = parse_ruleset(SCENARIO_B_SOURCE).unwrap();
        assert_eq!(rs.norms.len(), 12);
        assert_eq!(rs.transitions.len(), 9);
    }

    #[test]
    fn scenario_a_norms_are_subset_of_b() {
        let a = parse_ruleset(SCENARIO_A_SOURCE).unwrap();
        let b = parse_ruleset(SCENARIO_B_SOURCE).unwrap();
        let b_ids: BTreeSet<&str> = b.norm_ids().collect();
        for id in a.norm_ids() {
            assert!(b_ids.contains(id), "norm {id} missing from scenario B");
        }
    }

    #[test]
    fn undeclared_state_is_named_in_error() {
        let src = "ruleset broken { states s0; initial s0; norm n1 on message() { permit role(user); } transition t1: s0 -> ghost on message(); }";
        let err = parse_ruleset(src).unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
    }

    #[test]
    fn duplicate_norm_id_rejected() {
        let src = "ruleset dup { states s0; initial s0; norm n1 on message() { permit role(user); } norm n1 on message() { permit role(bot); } }";
        let err = parse_ruleset(src).unwrap_err();
        assert!(err.to_string().contains("duplicate norm id"), "{err}");
    }

    #[test]
    fn overlapping_transitions_rejected() {
        let src = "ruleset amb { states s0, s1; initial s0; \
                   transition t1: s0 -> s1 on message(role(sender) = user); \
                   transition t2: s0 -> s0 on message() where replied; }";
        let err = parse_ruleset(src).unwrap_err();
        assert!(
            err.to_string().contains("can match the same event"),
            "{err}"
        );
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = parse_ruleset("ruleset x {\n  norm 42 on message() { }\n}").unwrap_err();
        match err {
            crate::Error::Dsl { line, col, .. } => assert_eq!((line, col), (2, 8)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn mention_activates_obligation_and_guard() {
        let rs = parse_ruleset(SCENARIO_A_SOURCE).unwrap();
        let inv = participants();
        let state = reset_conversation(&rs, &inv);
        let state = apply_event(&state, &rs, &user_msg(&["hotel_bot"], None)).unwrap();

        let obliged: Vec<_> = state
            .active
            .iter()
            .filter(|n| n.deontic == DeonticKind::Obligation)
            .flat_map(|n| n.targets.iter().cloned())
            .collect();
        assert_eq!(obliged, vec![AgentId::from("hotel_bot")]);

        let prohibited: BTreeSet<_> = state
            .active
            .iter()
            .filter(|n| n.deontic == DeonticKind::Prohibition)
            .flat_map(|n| n.targets.iter().cloned())
            .collect();
        let expected: BTreeSet<AgentId> = inv
            .bots()
            .filter(|b| b.as_str() != "hotel_bot")
            .cloned()
            .collect();
        assert_eq!(prohibited, expected);

        assert!(gate(&state, &rs, &bot_attempt("hotel_bot"))
            .unwrap()
            .allowed());
        assert!(!gate(&state, &rs, &bot_attempt("taxi_bot"))
            .unwrap()
            .allowed());
        assert!(gate(&state, &rs, &Attempt::new("user", Role::User))
            .unwrap()
            .allowed());
    }

    #[test]
    fn bot_message_without_mention_prohibits_all_bots() {
        let rs = parse_ruleset(SCENARIO_A_SOURCE).unwrap();
        let inv = participants();
        let state = reset_conversation(&rs, &inv);
        let state = apply_event(&state, &rs, &user_msg(&[], None)).unwrap();
        let state = apply_event(&state, &rs, &bot_msg("train_bot")).unwrap();

        let prohibited: BTreeSet<_> = state
            .active
            .iter()
            .filter(|n| n.deontic == DeonticKind::Prohibition)
            .flat_map(|n| n.targets.iter().cloned())
            .collect();
        let all_bots: BTreeSet<AgentId> = inv.bots().cloned().collect();
        assert_eq!(prohibited, all_bots);
        for bot in inv.bots() {
            assert!(!gate(&state, &rs, &bot_attempt(bot.as_str()))
                .unwrap()
                .allowed());
        }
        assert!(gate(&state, &rs, &Attempt::new("user", Role::User))
            .unwrap()
            .allowed());
    }

    #[test]
    fn expected_bot_is_obliged_under_scenario_b() {
        let rs = parse_ruleset(SCENARIO_B_SOURCE).unwrap();
        let inv = participants();
        let state = reset_conversation(&rs, &inv);
        let state = apply_event(&state, &rs, &user_msg(&[], Some("train_bot"))).unwrap();

        assert!(gate(&state, &rs, &bot_attempt("train_bot"))
            .unwrap()
            .allowed());
        let denial = gate(&state, &rs, &bot_attempt("taxi_bot")).unwrap();
        assert_eq!(denial.verdict, Verdict::Deny);
        assert!(!denial.justification.is_empty());
    }

    #[test]
    fn reset_semantics() {
        let rs = parse_ruleset(SCENARIO_A_SOURCE).unwrap();
        let inv = participants();
        let state = reset_conversation(&rs, &inv);
        assert_eq!(state, reset_conversation(&rs, &inv));
        assert!(gate(&state, &rs, &Attempt::new("user", Role::User))
            .unwrap()
            .allowed());
        // no prohibition active yet, default allow
        assert!(gate(&state, &rs, &bot_attempt("hotel_bot"))
            .unwrap()
            .allowed());
    }

    #[test]
    fn post_reply_attempts_denied_and_next_stimulus_clears() {
        let rs = parse_ruleset(SCENARIO_A_SOURCE).unwrap();
        let inv = participants();
        let mut state = reset_conversation(&rs, &inv);
        state = apply_event(&state, &rs, &user_msg(&[], None)).unwrap();
        // first bot attempt is fine
        assert!(gate(&state, &rs, &bot_attempt("hotel_bot"))
            .unwrap()
            .allowed());
        state = apply_event(&state, &rs, &bot_msg("hotel_bot")).unwrap();
        // slot answered: every bot is out of turn
        assert!(!gate(&state, &rs, &bot_attempt("taxi_bot"))
            .unwrap()
            .allowed());
        assert!(!gate(&state, &rs, &bot_attempt("hotel_bot"))
            .unwrap()
            .allowed());
        // the next stimulus reopens the floor
        state = apply_event(&state, &rs, &user_msg(&[], None)).unwrap();
        assert!(gate(&state, &rs, &bot_attempt("taxi_bot"))
            .unwrap()
            .allowed());
    }

    #[test]
    fn stale_mention_obligation_expires_when_slot_is_answered() {
        let rs = parse_ruleset(SCENARIO_A_SOURCE).unwrap();
        let inv = participants();
        let mut state = reset_conversation(&rs, &inv);
        state = apply_event(&state, &rs, &user_msg(&["hotel_bot"], None)).unwrap();
        // a different bot's reply is accepted anyway; the mention obligation
        // must not leak into the next slot
        state = apply_event(&state, &rs, &bot_msg("taxi_bot")).unwrap();
        state = apply_event(&state, &rs, &user_msg(&[], None)).unwrap();
        assert!(state
            .active
            .iter()
            .all(|n| n.deontic != DeonticKind::Obligation));
    }

    #[test]
    fn fsa_tracks_phases() {
        let rs = parse_ruleset(SCENARIO_A_SOURCE).unwrap();
        let inv = participants();
        let mut state = reset_conversation(&rs, &inv);
        assert_eq!(state.fsa_state, "await_stimulus");
        state = apply_event(&state, &rs, &user_msg(&[], None)).unwrap();
        assert_eq!(state.fsa_state, "await_reply");
        state = apply_event(&state, &rs, &bot_msg("hotel_bot")).unwrap();
        assert_eq!(state.fsa_state, "await_stimulus");
    }

    #[test]
    fn gate_does_not_mutate_state() {
        let rs = parse_ruleset(SCENARIO_A_SOURCE).unwrap();
        let inv = participants();
        let state = apply_event(
            &reset_conversation(&rs, &inv),
            &rs,
            &user_msg(&["hotel_bot"], None),
        )
        .unwrap();
        let snapshot = state.clone();
        for _ in 0..3 {
            let _ = gate(&state, &rs, &bot_attempt("taxi_bot")).unwrap();
        }
        assert_eq!(state, snapshot);
    }

    #[test]
    fn unknown_sender_is_an_error() {
        let rs = parse_ruleset(SCENARIO_A_SOURCE).unwrap();
        let inv = participants();
        let state = reset_conversation(&rs, &inv);
        assert!(apply_event(&state, &rs, &bot_msg("ghost_bot")).is_err());
        assert!(gate(&state, &rs, &bot_attempt("ghost_bot")).is_err());
    }

    #[test]
    fn total_transitions_make_gaps_a_configuration_error() {
        let src = "ruleset strict { states s0, s1; initial s0; total transitions; \
                   transition t1: s0 -> s1 on message(role(sender) = user); }";
        let rs = parse_ruleset(src).unwrap();
        let inv = participants();
        let state = reset_conversation(&rs, &inv);
        // user message matches t1
        let state = apply_event(&state, &rs, &user_msg(&[], None)).unwrap();
        assert_eq!(state.fsa_state, "s1");
        // nothing leaves s1: configuration error under total transitions
        let err = apply_event(&state, &rs, &bot_msg("hotel_bot")).unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)), "{err}");
    }

    #[test]
    fn last_sender_contains_and_expected_sender_forms() {
        let src = "ruleset extras { states s0; initial s0; \
                   norm echo on message() where expected = sender { oblige $sender until next; } \
                   norm hush on message() where mentions.contains(taxi_bot) { prohibit $last_sender until next; } }";
        let rs = parse_ruleset(src).unwrap();
        let inv = participants();
        let state = reset_conversation(&rs, &inv);

        // expected = sender: the user addresses itself (a note-to-self turn)
        let state = apply_event(&state, &rs, &user_msg(&[], Some("user"))).unwrap();
        assert!(state
            .active
            .iter()
            .any(|n| n.norm_id == "echo" && n.targets.contains(&AgentId::from("user"))));

        // mentions.contains plus $last_sender resolution
        let state = apply_event(&state, &rs, &bot_msg("hotel_bot")).unwrap();
        let state = apply_event(&state, &rs, &user_msg(&["taxi_bot"], None)).unwrap();
        let hushed: Vec<_> = state
            .active
            .iter()
            .filter(|n| n.norm_id == "hush")
            .flat_map(|n| n.targets.iter().cloned())
            .collect();
        assert_eq!(hushed, vec![AgentId::from("hotel_bot")]);
    }

    fn random_event(rng: &mut ChaCha8Rng, inv: &Inventory) -> Event {
        let agents: Vec<&AgentId> = inv.names().collect();
        let sender = agents[rng.random_range(0..agents.len())].clone();
        let role = inv.role_of(&sender).unwrap();
        let mentions = if rng.random_bool(0.3) {
            let bots: Vec<&AgentId> = inv.bots().collect();
            vec![bots[rng.random_range(0..bots.len())].clone()]
        } else {
            Vec::new()
        };
        let expected = if role == Role::User && rng.random_bool(0.4) {
            Some(agents[rng.random_range(0..agents.len())].clone())
        } else {
            None
        };
        Event {
            sender,
            role,
            mentions,
            expected,
        }
    }

    // Simulation over seeded random event sequences: the shipped rulesets
    // never put two participants under an obligation at once (events carry
    // at most one mention, matching the corpus), and replaying the same
    // events always reproduces the same state.
    #[test]
    fn simulation_single_obligation_and_determinism() {
        let inv = participants();
        for source in [SCENARIO_A_SOURCE, SCENARIO_B_SOURCE] {
            let rs = parse_ruleset(source).unwrap();
            for seq in 0..1000u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seq);
                let events: Vec<Event> = (0..12).map(|_| random_event(&mut rng, &inv)).collect();
                let mut state = reset_conversation(&rs, &inv);
                for ev in &events {
                    state = apply_event(&state, &rs, ev).unwrap();
                    let obliged: BTreeSet<&AgentId> = state
                        .active
                        .iter()
                        .filter(|n| n.deontic == DeonticKind::Obligation)
                        .flat_map(|n| n.targets.iter())
                        .collect();
                    assert!(
                        obliged.len() <= 1,
                        "seq {seq}: {obliged:?} simultaneously obliged"
                    );
                }
                // replay determinism
                let mut replay = reset_conversation(&rs, &inv);
                for ev in &events {
                    replay = apply_event(&replay, &rs, ev).unwrap();
                }
                assert_eq!(state, replay);
            }
        }
    }
}
