//! Syntax tree for the conversation-rules language.

use serde::{Deserialize, Serialize};

use crate::corpus::{AgentId, Role};

/// The three norm kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeonticKind {
    Obligation,
    Permission,
    Prohibition,
}

/// A single trigger condition, evaluated against an accepted message and the
/// conversation bookkeeping after that message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Condition {
    SenderRole(Role),
    MentionsEmpty,
    MentionsPresent,
    MentionsContains(AgentId),
    Replied,
    ExpectedPresent,
    ExpectedAbsent,
    ExpectedIsSender,
    ExpectedIs(AgentId),
    ExpectedRole(Role),
}

/// Event pattern: optional sender-role restriction plus a conjunction of
/// conditions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventPattern {
    pub sender_role: Option<Role>,
    pub conditions: Vec<Condition>,
}

impl EventPattern {
    /// All atoms of the pattern, with the sender-role restriction folded in.
    pub fn atoms(&self) -> Vec<Condition> {
        let mut out = Vec::with_capacity(self.conditions.len() + 1);
        if let Some(r) = self.sender_role {
            out.push(Condition::SenderRole(r));
        }
        out.extend(self.conditions.iter().cloned());
        out
    }
}

/// Who a deontic statement binds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    /// The sender of the triggering message.
    Sender,
    /// The sender of the message before the triggering one.
    LastSender,
    /// The agents mentioned in the triggering message.
    Receivers,
    /// The externally supplied expected replier of the open stimulus.
    ExpectedAgent,
    RoleUser,
    RoleBot,
    /// Bot-role participants not granted by the same activation group and
    /// not the sender.
    Others,
}

/// When an activated norm instance stops applying.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Expiry {
    /// Lives until the next accepted message.
    #[default]
    NextAcceptedMessage,
    /// Lives until an obliged agent of its activation group speaks or the
    /// open stimulus is answered by a bot reply.
    ReplyCompleted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeonticStatement {
    pub deontic: DeonticKind,
    pub selector: Selector,
    pub expiry: Expiry,
}

/// One named norm: a trigger and the deontic statements it activates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormSpec {
    pub id: String,
    pub trigger: EventPattern,
    pub statements: Vec<DeonticStatement>,
}

/// One named FSA edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionSpec {
    pub id: String,
    pub from_state: String,
    pub to_state: String,
    pub trigger: EventPattern,
}

/// A parsed, resolved ruleset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    pub name: String,
    pub states: Vec<String>,
    pub initial: String,
    pub norms: Vec<NormSpec>,
    pub transitions: Vec<TransitionSpec>,
    /// When set, an accepted message with no matching transition is a
    /// configuration error instead of a self-loop.
    pub total_transitions: bool,
}

impl RuleSet {
    pub fn norm_ids(&self) -> impl Iterator<Item = &str> {
        self.norms.iter().map(|n| n.id.as_str())
    }
}
