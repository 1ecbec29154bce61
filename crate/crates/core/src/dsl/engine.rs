//! Execution engine: applies accepted messages to a conversation's norm
//! state and answers allow/deny queries for attempted messages.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{AgentId, Inventory, Role};
use crate::error::{Error, Result};

use super::ast::*;

/// An accepted message, as seen by the rule engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub sender: AgentId,
    pub role: Role,
    pub mentions: Vec<AgentId>,
    /// Predicted replier for this stimulus, supplied externally.
    pub expected: Option<AgentId>,
}

impl Event {
    pub fn new(sender: impl Into<AgentId>, role: Role) -> Self {
        Event {
            sender: sender.into(),
            role,
            mentions: Vec::new(),
            expected: None,
        }
    }

    pub fn with_mentions(mut self, mentions: Vec<AgentId>) -> Self {
        self.mentions = mentions;
        self
    }

    pub fn with_expected(mut self, expected: Option<AgentId>) -> Self {
        self.expected = expected;
        self
    }
}

/// An attempted message, not yet accepted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attempt {
    pub sender: AgentId,
    pub role: Role,
    pub mentions: Vec<AgentId>,
}

impl Attempt {
    pub fn new(sender: impl Into<AgentId>, role: Role) -> Self {
        Attempt {
            sender: sender.into(),
            role,
            mentions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Allow,
    Deny,
}

/// The gate's decision together with the norms that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateDecision {
    pub verdict: Verdict,
    pub justification: Vec<String>,
}

impl GateDecision {
    pub fn allowed(&self) -> bool {
        self.verdict == Verdict::Allow
    }
}

/// A norm activated by some accepted message, bound to concrete agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveNorm {
    pub norm_id: String,
    /// Sequence number of the activating event; statements activated together
    /// share a group and expire together on reply completion.
    pub group: u64,
    pub deontic: DeonticKind,
    pub targets: BTreeSet<AgentId>,
    pub expiry: Expiry,
    /// Agents whose accepted message completes this group's reply.
    pub reply_of: BTreeSet<AgentId>,
}

/// Per-conversation governance state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationState {
    pub fsa_state: String,
    pub last_sender: Option<AgentId>,
    pub prev_sender: Option<AgentId>,
    /// Whether the open stimulus has already received an accepted bot reply.
    pub slot_replied: bool,
    /// Expected replier attached to the open stimulus.
    pub stimulus_expected: Option<AgentId>,
    pub active: Vec<ActiveNorm>,
    pub participants: Inventory,
    seq: u64,
}

/// Fresh state: initial FSA state, no active norms, cleared bookkeeping.
pub fn reset_conversation(rules: &RuleSet, participants: &Inventory) -> ConversationState {
    ConversationState {
        fsa_state: rules.initial.clone(),
        last_sender: None,
        prev_sender: None,
        slot_replied: false,
        stimulus_expected: None,
        active: Vec::new(),
        participants: participants.clone(),
        seq: 0,
    }
}

/// Apply one accepted message: expire norms, activate triggered norms,
/// advance the FSA and update bookkeeping. Returns the successor state.
pub fn apply_event(
    state: &ConversationState,
    rules: &RuleSet,
    event: &Event,
) -> Result<ConversationState> {
    if !state.participants.contains(&event.sender) {
        return Err(Error::UnknownAgent(event.sender.to_string()));
    }

    let mut next = state.clone();

    // Bookkeeping first: trigger conditions describe the situation after the
    // message is accepted.
    next.prev_sender = next.last_sender.take();
    next.last_sender = Some(event.sender.clone());
    match event.role {
        Role::User => {
            next.slot_replied = false;
            next.stimulus_expected = event.expected.clone();
        }
        Role::Bot => {
            next.slot_replied = true;
        }
    }

    // Expiry pass. Reply-scoped instances are bound to the stimulus slot
    // they were activated under: they end when an obliged agent of their
    // group speaks, when a bot reply answers the slot, or when a new user
    // stimulus replaces it.
    next.active.retain(|norm| match norm.expiry {
        Expiry::NextAcceptedMessage => false,
        Expiry::ReplyCompleted => {
            let obliged_spoke = norm.reply_of.contains(&event.sender);
            let slot_answered = event.role == Role::Bot;
            let slot_replaced = event.role == Role::User;
            !(obliged_spoke || slot_answered || slot_replaced)
        }
    });

    // Activation: collect matching norms, resolve grants before prohibitions
    // so the `others` selector can exclude granted agents.
    let (fresh, fsa_target) = {
        let ctx = EvalCtx {
            event,
            state: &next,
        };
        let matching: Vec<&NormSpec> = rules
            .norms
            .iter()
            .filter(|n| ctx.matches(&n.trigger))
            .collect();

        let mut granted: BTreeSet<AgentId> = BTreeSet::new();
        for norm in &matching {
            for stmt in &norm.statements {
                if stmt.deontic != DeonticKind::Prohibition {
                    granted.extend(ctx.resolve(&stmt.selector, &BTreeSet::new()));
                }
            }
        }

        // The group's obliged agents, for reply-completion expiry.
        let group_obliged: BTreeSet<AgentId> = matching
            .iter()
            .flat_map(|n| n.statements.iter())
            .filter(|s| s.deontic == DeonticKind::Obligation)
            .flat_map(|s| ctx.resolve(&s.selector, &granted))
            .collect();

        let mut fresh: Vec<ActiveNorm> = Vec::new();
        for norm in &matching {
            for stmt in &norm.statements {
                let targets = ctx.resolve(&stmt.selector, &granted);
                if targets.is_empty() {
                    continue;
                }
                let reply_of = if group_obliged.is_empty() {
                    targets.clone()
                } else {
                    group_obliged.clone()
                };
                fresh.push(ActiveNorm {
                    norm_id: norm.id.clone(),
                    group: next.seq,
                    deontic: stmt.deontic,
                    targets,
                    expiry: stmt.expiry,
                    reply_of,
                });
            }
        }

        // Parse-time validation guarantees at most one transition matches.
        let fsa_target = rules
            .transitions
            .iter()
            .find(|t| t.from_state == next.fsa_state && ctx.matches(&t.trigger))
            .map(|t| t.to_state.clone());
        (fresh, fsa_target)
    };

    // Re-activation supersedes older instances of the same norm.
    let fresh_ids: BTreeSet<&str> = fresh.iter().map(|n| n.norm_id.as_str()).collect();
    next.active
        .retain(|n| !fresh_ids.contains(n.norm_id.as_str()));
    next.active.extend(fresh);

    match fsa_target {
        Some(state) => next.fsa_state = state,
        None if rules.total_transitions => {
            return Err(Error::Config(format!(
                "no transition from state {} matches the event and the ruleset declares total transitions",
                next.fsa_state
            )));
        }
        None => {}
    }

    next.seq += 1;
    Ok(next)
}

/// Allow/deny verdict for an attempt, without mutating the state.
///
/// Conflict resolution is a fixed total order: an obligation on the sender
/// allows, else a prohibition denies, else a permission allows, else the
/// default is allow.
pub fn gate(
    state: &ConversationState,
    _rules: &RuleSet,
    attempt: &Attempt,
) -> Result<GateDecision> {
    if !state.participants.contains(&attempt.sender) {
        return Err(Error::UnknownAgent(attempt.sender.to_string()));
    }
    let ids_with = |kind: DeonticKind| -> Vec<String> {
        state
            .active
            .iter()
            .filter(|n| n.deontic == kind && n.targets.contains(&attempt.sender))
            .map(|n| n.norm_id.clone())
            .collect()
    };
    let obligations = ids_with(DeonticKind::Obligation);
    if !obligations.is_empty() {
        return Ok(GateDecision {
            verdict: Verdict::Allow,
            justification: obligations,
        });
    }
    let prohibitions = ids_with(DeonticKind::Prohibition);
    if !prohibitions.is_empty() {
        return Ok(GateDecision {
            verdict: Verdict::Deny,
            justification: prohibitions,
        });
    }
    let permissions = ids_with(DeonticKind::Permission);
    Ok(GateDecision {
        verdict: Verdict::Allow,
        justification: permissions,
    })
}

struct EvalCtx<'a> {
    event: &'a Event,
    state: &'a ConversationState,
}

impl EvalCtx<'_> {
    fn expected(&self) -> Option<&AgentId> {
        self.state.stimulus_expected.as_ref()
    }

    fn matches(&self, pattern: &EventPattern) -> bool {
        if let Some(role) = pattern.sender_role {
            if self.event.role != role {
                return false;
            }
        }
        pattern.conditions.iter().all(|c| self.condition(c))
    }

    fn condition(&self, cond: &Condition) -> bool {
        match cond {
            Condition::SenderRole(r) => self.event.role == *r,
            Condition::MentionsEmpty => self.event.mentions.is_empty(),
            Condition::MentionsPresent => !self.event.mentions.is_empty(),
            Condition::MentionsContains(a) => self.event.mentions.contains(a),
            Condition::Replied => self.state.slot_replied,
            Condition::ExpectedPresent => self.expected().is_some(),
            Condition::ExpectedAbsent => self.expected().is_none(),
            Condition::ExpectedIsSender => self.expected() == Some(&self.event.sender),
            Condition::ExpectedIs(a) => self.expected() == Some(a),
            Condition::ExpectedRole(r) => {
                self.expected()
                    .and_then(|a| self.state.participants.role_of(a))
                    == Some(*r)
            }
        }
    }

    fn resolve(&self, selector: &Selector, granted: &BTreeSet<AgentId>) -> BTreeSet<AgentId> {
        let participants = &self.state.participants;
        match selector {
            Selector::Sender => [self.event.sender.clone()].into(),
            Selector::LastSender => self.state.prev_sender.iter().cloned().collect(),
            Selector::Receivers => self.event.mentions.iter().cloned().collect(),
            Selector::ExpectedAgent => self.expected().cloned().into_iter().collect(),
            Selector::RoleUser => participants
                .iter()
                .filter(|(_, r)| *r == Role::User)
                .map(|(a, _)| a.clone())
                .collect(),
            Selector::RoleBot => participants.bots().cloned().collect(),
            Selector::Others => participants
                .bots()
                .filter(|b| !granted.contains(b) && **b != self.event.sender)
                .cloned()
                .collect(),
        }
    }
}
