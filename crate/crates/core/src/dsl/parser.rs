//! Recursive-descent parser and static validation for rulesets.

use std::collections::BTreeSet;

use crate::corpus::{AgentId, Role};
use crate::error::{Error, Result};

use super::ast::*;
use super::lexer::{tokenize, Token, TokenKind};

pub fn parse_ruleset(source: &str) -> Result<RuleSet> {
    let tokens = tokenize(source)?;
    let mut p = Parser { tokens, pos: 0 };
    let rs = p.ruleset()?;
    validate(&rs)?;
    Ok(rs)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, tok: &Token, msg: impl Into<String>) -> Result<T> {
        Err(Error::Dsl {
            line: tok.line,
            col: tok.col,
            msg: msg.into(),
        })
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> Result<Token> {
        let t = self.next();
        if t.kind == kind {
            Ok(t)
        } else {
            self.err(&t, format!("expected {what}"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Token)> {
        let t = self.next();
        match &t.kind {
            TokenKind::Ident(s) => Ok((s.clone(), t.clone())),
            _ => self.err(&t, format!("expected {what}")),
        }
    }

    fn keyword(&mut self, word: &str) -> Result<Token> {
        let t = self.next();
        match &t.kind {
            TokenKind::Ident(s) if s == word => Ok(t.clone()),
            _ => self.err(&t, format!("expected keyword '{word}'")),
        }
    }

    fn peek_word(&self) -> Option<&str> {
        match &self.peek().kind {
            TokenKind::Ident(s) => Some(s.as_str()),
            _ => None,
        }
    }

    fn role(&mut self) -> Result<Role> {
        let (word, tok) = self.ident("role name")?;
        match word.as_str() {
            "user" => Ok(Role::User),
            "bot" => Ok(Role::Bot),
            other => self.err(&tok, format!("unknown role {other}, expected user or bot")),
        }
    }

    fn ruleset(&mut self) -> Result<RuleSet> {
        self.keyword("ruleset")?;
        let (name, _) = self.ident("ruleset name")?;
        self.expect(TokenKind::LBrace, "'{'")?;

        let mut states = Vec::new();
        let mut initial = None;
        let mut norms: Vec<NormSpec> = Vec::new();
        let mut transitions: Vec<TransitionSpec> = Vec::new();
        let mut total_transitions = false;

        loop {
            let t = self.peek().clone();
            match &t.kind {
                TokenKind::RBrace => {
                    self.next();
                    break;
                }
                TokenKind::Ident(word) => match word.as_str() {
                    "roles" => {
                        self.next();
                        // informational: the language only knows user and bot
                        self.role()?;
                        while self.peek().kind == TokenKind::Comma {
                            self.next();
                            self.role()?;
                        }
                        self.expect(TokenKind::Semi, "';'")?;
                    }
                    "states" => {
                        self.next();
                        let (s, _) = self.ident("state name")?;
                        states.push(s);
                        while self.peek().kind == TokenKind::Comma {
                            self.next();
                            let (s, _) = self.ident("state name")?;
                            states.push(s);
                        }
                        self.expect(TokenKind::Semi, "';'")?;
                    }
                    "initial" => {
                        self.next();
                        let (s, _) = self.ident("state name")?;
                        initial = Some(s);
                        self.expect(TokenKind::Semi, "';'")?;
                    }
                    "total" => {
                        self.next();
                        self.keyword("transitions")?;
                        self.expect(TokenKind::Semi, "';'")?;
                        total_transitions = true;
                    }
                    "norm" => norms.push(self.norm()?),
                    "transition" => transitions.push(self.transition()?),
                    other => return self.err(&t, format!("unexpected '{other}' in ruleset body")),
                },
                _ => return self.err(&t, "unexpected token in ruleset body"),
            }
        }

        let initial = initial.ok_or(Error::Dsl {
            line: 1,
            col: 1,
            msg: format!("ruleset {name} declares no initial state"),
        })?;
        Ok(RuleSet {
            name,
            states,
            initial,
            norms,
            transitions,
            total_transitions,
        })
    }

    fn norm(&mut self) -> Result<NormSpec> {
        self.keyword("norm")?;
        let (id, _) = self.ident("norm id")?;
        let trigger = self.trigger()?;
        self.expect(TokenKind::LBrace, "'{'")?;
        let mut statements = Vec::new();
        while self.peek().kind != TokenKind::RBrace {
            statements.push(self.statement()?);
        }
        self.expect(TokenKind::RBrace, "'}'")?;
        if statements.is_empty() {
            return Err(Error::Dsl {
                line: 0,
                col: 0,
                msg: format!("norm {id} has no deontic statements"),
            });
        }
        Ok(NormSpec {
            id,
            trigger,
            statements,
        })
    }

    fn trigger(&mut self) -> Result<EventPattern> {
        self.keyword("on")?;
        self.keyword("message")?;
        self.expect(TokenKind::LParen, "'('")?;
        let mut pattern = EventPattern::default();
        if self.peek().kind != TokenKind::RParen {
            // only the sender-role restriction may appear inside message()
            self.keyword("role")?;
            self.expect(TokenKind::LParen, "'('")?;
            self.keyword("sender")?;
            self.expect(TokenKind::RParen, "')'")?;
            self.expect(TokenKind::Eq, "'='")?;
            pattern.sender_role = Some(self.role()?);
        }
        self.expect(TokenKind::RParen, "')'")?;
        if self.peek_word() == Some("where") {
            self.next();
            pattern.conditions.push(self.condition()?);
            while self.peek_word() == Some("and") {
                self.next();
                pattern.conditions.push(self.condition()?);
            }
        }
        Ok(pattern)
    }

    fn condition(&mut self) -> Result<Condition> {
        let (word, tok) = self.ident("condition")?;
        match word.as_str() {
            "replied" => Ok(Condition::Replied),
            "role" => {
                self.expect(TokenKind::LParen, "'('")?;
                let (subject, stok) = self.ident("sender or expected")?;
                self.expect(TokenKind::RParen, "')'")?;
                self.expect(TokenKind::Eq, "'='")?;
                let role = self.role()?;
                match subject.as_str() {
                    "sender" => Ok(Condition::SenderRole(role)),
                    "expected" => Ok(Condition::ExpectedRole(role)),
                    other => self.err(
                        &stok,
                        format!("role() takes sender or expected, got {other}"),
                    ),
                }
            }
            "mentions" => {
                self.expect(TokenKind::Dot, "'.'")?;
                let (what, wtok) = self.ident("empty, present or contains")?;
                match what.as_str() {
                    "empty" => Ok(Condition::MentionsEmpty),
                    "present" => Ok(Condition::MentionsPresent),
                    "contains" => {
                        self.expect(TokenKind::LParen, "'('")?;
                        let (agent, _) = self.ident("agent name")?;
                        self.expect(TokenKind::RParen, "')'")?;
                        Ok(Condition::MentionsContains(AgentId::new(agent)))
                    }
                    other => self.err(&wtok, format!("unknown mentions predicate {other}")),
                }
            }
            "expected" => match self.peek().kind.clone() {
                TokenKind::Dot => {
                    self.next();
                    let (what, wtok) = self.ident("present or absent")?;
                    match what.as_str() {
                        "present" => Ok(Condition::ExpectedPresent),
                        "absent" => Ok(Condition::ExpectedAbsent),
                        other => self.err(&wtok, format!("unknown expected predicate {other}")),
                    }
                }
                TokenKind::Eq => {
                    self.next();
                    let (rhs, _) = self.ident("agent name or sender")?;
                    if rhs == "sender" {
                        Ok(Condition::ExpectedIsSender)
                    } else {
                        Ok(Condition::ExpectedIs(AgentId::new(rhs)))
                    }
                }
                _ => self.err(&tok, "expected '.' or '=' after expected"),
            },
            other => self.err(&tok, format!("unknown condition {other}")),
        }
    }

    fn statement(&mut self) -> Result<DeonticStatement> {
        let (word, tok) = self.ident("oblige, permit or prohibit")?;
        let deontic = match word.as_str() {
            "oblige" => DeonticKind::Obligation,
            "permit" => DeonticKind::Permission,
            "prohibit" => DeonticKind::Prohibition,
            other => return self.err(&tok, format!("unknown deontic verb {other}")),
        };
        let selector = self.selector()?;
        let expiry = if self.peek_word() == Some("until") {
            self.next();
            let (when, wtok) = self.ident("reply or next")?;
            match when.as_str() {
                "reply" => Expiry::ReplyCompleted,
                "next" => Expiry::NextAcceptedMessage,
                other => return self.err(&wtok, format!("unknown expiry {other}")),
            }
        } else {
            Expiry::NextAcceptedMessage
        };
        self.expect(TokenKind::Semi, "';'")?;
        Ok(DeonticStatement {
            deontic,
            selector,
            expiry,
        })
    }

    fn selector(&mut self) -> Result<Selector> {
        let t = self.next();
        match &t.kind {
            TokenKind::Dollar => {
                let (word, wtok) = self.ident("sender, last_sender or receivers")?;
                match word.as_str() {
                    "sender" => Ok(Selector::Sender),
                    "last_sender" => Ok(Selector::LastSender),
                    "receivers" => Ok(Selector::Receivers),
                    other => self.err(&wtok, format!("unknown variable ${other}")),
                }
            }
            TokenKind::Ident(word) => match word.as_str() {
                "expected_agent" => Ok(Selector::ExpectedAgent),
                "others" => Ok(Selector::Others),
                "role" => {
                    self.expect(TokenKind::LParen, "'('")?;
                    let role = self.role()?;
                    self.expect(TokenKind::RParen, "')'")?;
                    Ok(match role {
                        Role::User => Selector::RoleUser,
                        Role::Bot => Selector::RoleBot,
                    })
                }
                other => self.err(&t, format!("unknown selector {other}")),
            },
            _ => self.err(&t, "expected a selector"),
        }
    }

    fn transition(&mut self) -> Result<TransitionSpec> {
        self.keyword("transition")?;
        let (id, _) = self.ident("transition id")?;
        self.expect(TokenKind::Colon, "':'")?;
        let (from_state, _) = self.ident("state name")?;
        self.expect(TokenKind::Arrow, "'->'")?;
        let (to_state, _) = self.ident("state name")?;
        let trigger = self.trigger()?;
        self.expect(TokenKind::Semi, "';'")?;
        Ok(TransitionSpec {
            id,
            from_state,
            to_state,
            trigger,
        })
    }
}

// ---------------------------------------------------------------------------
// Static validation
// ---------------------------------------------------------------------------

fn validate(rs: &RuleSet) -> Result<()> {
    let states: BTreeSet<&str> = rs.states.iter().map(|s| s.as_str()).collect();
    if states.len() != rs.states.len() {
        return Err(dsl_err(format!(
            "ruleset {} declares duplicate states",
            rs.name
        )));
    }
    if !states.contains(rs.initial.as_str()) {
        return Err(dsl_err(format!(
            "initial state {} is not declared in ruleset {}",
            rs.initial, rs.name
        )));
    }

    let mut norm_ids = BTreeSet::new();
    for n in &rs.norms {
        if !norm_ids.insert(n.id.as_str()) {
            return Err(dsl_err(format!("duplicate norm id {}", n.id)));
        }
    }
    let mut transition_ids = BTreeSet::new();
    for t in &rs.transitions {
        if !transition_ids.insert(t.id.as_str()) {
            return Err(dsl_err(format!("duplicate transition id {}", t.id)));
        }
        for state in [&t.from_state, &t.to_state] {
            if !states.contains(state.as_str()) {
                return Err(dsl_err(format!(
                    "transition {} references undeclared state {state}",
                    t.id
                )));
            }
        }
    }

    // At most one transition may match any event: every pair sharing a source
    // state must be provably disjoint from its conditions alone.
    for (i, a) in rs.transitions.iter().enumerate() {
        for b in rs.transitions.iter().skip(i + 1) {
            if a.from_state == b.from_state && !provably_disjoint(&a.trigger, &b.trigger) {
                return Err(dsl_err(format!(
                    "transitions {} and {} from state {} can match the same event",
                    a.id, b.id, a.from_state
                )));
            }
        }
    }
    Ok(())
}

fn dsl_err(msg: String) -> Error {
    Error::Dsl {
        line: 0,
        col: 0,
        msg,
    }
}

fn provably_disjoint(a: &EventPattern, b: &EventPattern) -> bool {
    a.atoms()
        .iter()
        .any(|ca| b.atoms().iter().any(|cb| contradicts(ca, cb)))
}

fn contradicts(a: &Condition, b: &Condition) -> bool {
    use Condition::*;
    match (a, b) {
        (SenderRole(x), SenderRole(y)) => x != y,
        (MentionsEmpty, MentionsPresent) | (MentionsPresent, MentionsEmpty) => true,
        (MentionsEmpty, MentionsContains(_)) | (MentionsContains(_), MentionsEmpty) => true,
        (ExpectedAbsent, ExpectedPresent) | (ExpectedPresent, ExpectedAbsent) => true,
        (ExpectedAbsent, ExpectedIs(_)) | (ExpectedIs(_), ExpectedAbsent) => true,
        (ExpectedAbsent, ExpectedIsSender) | (ExpectedIsSender, ExpectedAbsent) => true,
        (ExpectedAbsent, ExpectedRole(_)) | (ExpectedRole(_), ExpectedAbsent) => true,
        (ExpectedIs(x), ExpectedIs(y)) => x != y,
        (ExpectedRole(x), ExpectedRole(y)) => x != y,
        _ => false,
    }
}
