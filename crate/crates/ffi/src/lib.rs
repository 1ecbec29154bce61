//! C ABI over the conversation-rules engine: parse a ruleset, feed accepted
//! messages into a conversation, and ask allow/deny for attempts.
//!
//! Handles are opaque and single-threaded; every function returns a
//! [`TgStatus`] (or null on constructor failure) and the last error message
//! is retrievable per thread via [`tg_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};

use turngate::corpus::{extract_mentions, AgentId, Inventory, Role};
use turngate::dsl::{
    apply_event, gate, parse_ruleset, reset_conversation, Attempt, ConversationState, Event,
    RuleSet, Verdict,
};

/// Result codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TgStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    UnknownAgent = 4,
    InvalidState = 5,
    BufferTooSmall = 6,
    RuntimeError = 7,
}

/// Participant roles.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TgRole {
    User = 0,
    Bot = 1,
}

/// Gate verdicts.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TgVerdict {
    Allow = 0,
    Deny = 1,
}

/// Opaque parsed ruleset.
pub struct TgRuleset {
    rules: RuleSet,
}

/// Opaque conversation. Participants are registered first; the rule state
/// starts on the first event or gate query and is fixed from then on.
pub struct TgConversation {
    rules_name: String,
    participants: Vec<(AgentId, Role)>,
    state: Option<(Inventory, ConversationState)>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn required<'a, T>(ptr: *const T) -> Result<&'a T, TgStatus> {
    if ptr.is_null() {
        set_error("null argument");
        Err(TgStatus::NullArgument)
    } else {
        Ok(unsafe { &*ptr })
    }
}

fn required_mut<'a, T>(ptr: *mut T) -> Result<&'a mut T, TgStatus> {
    if ptr.is_null() {
        set_error("null argument");
        Err(TgStatus::NullArgument)
    } else {
        Ok(unsafe { &mut *ptr })
    }
}

fn required_str<'a>(ptr: *const c_char) -> Result<&'a str, TgStatus> {
    if ptr.is_null() {
        set_error("null argument");
        return Err(TgStatus::NullArgument);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        TgStatus::InvalidUtf8
    })
}

fn optional_str<'a>(ptr: *const c_char) -> Result<Option<&'a str>, TgStatus> {
    if ptr.is_null() {
        Ok(None)
    } else {
        required_str(ptr).map(Some)
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the calling thread's last error message into `buf`. Returns the
/// number of bytes the full message needs, including the terminator; the
/// copy is truncated if `len` is smaller.
///
/// # Safety
/// `buf` must point to at least `len` writable bytes, or be null (size
/// query).
#[no_mangle]
pub unsafe extern "C" fn tg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            // always terminate
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Parse conversation-rules source into a ruleset handle, or null on error
/// (see [`tg_last_error`]). Free with [`tg_ruleset_free`].
///
/// # Safety
/// `source` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tg_ruleset_parse(source: *const c_char) -> *mut TgRuleset {
    let Ok(source) = required_str(source) else {
        return std::ptr::null_mut();
    };
    match parse_ruleset(source) {
        Ok(rules) => Box::into_raw(Box::new(TgRuleset { rules })),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Number of norms in the ruleset.
///
/// # Safety
/// `rules` must be a live handle from [`tg_ruleset_parse`].
#[no_mangle]
pub unsafe extern "C" fn tg_ruleset_norm_count(rules: *const TgRuleset) -> usize {
    required(rules).map(|r| r.rules.norms.len()).unwrap_or(0)
}

/// Number of transitions in the ruleset.
///
/// # Safety
/// `rules` must be a live handle from [`tg_ruleset_parse`].
#[no_mangle]
pub unsafe extern "C" fn tg_ruleset_transition_count(rules: *const TgRuleset) -> usize {
    required(rules)
        .map(|r| r.rules.transitions.len())
        .unwrap_or(0)
}

/// # Safety
/// `rules` must come from [`tg_ruleset_parse`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tg_ruleset_free(rules: *mut TgRuleset) {
    if !rules.is_null() {
        drop(Box::from_raw(rules));
    }
}

/// Create an empty conversation bound to a ruleset. Free with
/// [`tg_conversation_free`].
///
/// # Safety
/// `rules` must be a live handle from [`tg_ruleset_parse`].
#[no_mangle]
pub unsafe extern "C" fn tg_conversation_new(rules: *const TgRuleset) -> *mut TgConversation {
    let Ok(rules) = required(rules) else {
        return std::ptr::null_mut();
    };
    Box::into_raw(Box::new(TgConversation {
        rules_name: rules.rules.name.clone(),
        participants: Vec::new(),
        state: None,
    }))
}

/// Register a participant. Must happen before the first event or gate call.
///
/// # Safety
/// `conv` must be a live handle; `name` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tg_conversation_add_participant(
    conv: *mut TgConversation,
    name: *const c_char,
    role: TgRole,
) -> TgStatus {
    let conv = match required_mut(conv) {
        Ok(c) => c,
        Err(s) => return s,
    };
    let name = match required_str(name) {
        Ok(n) => n,
        Err(s) => return s,
    };
    if conv.state.is_some() {
        set_error("participants are fixed once the conversation has started");
        return TgStatus::InvalidState;
    }
    let role = match role {
        TgRole::User => Role::User,
        TgRole::Bot => Role::Bot,
    };
    conv.participants.push((AgentId::from(name), role));
    TgStatus::Ok
}

fn started<'a>(
    conv: &'a mut TgConversation,
    rules: &RuleSet,
) -> Result<&'a mut (Inventory, ConversationState), TgStatus> {
    if conv.rules_name != rules.name {
        set_error("conversation was created for a different ruleset");
        return Err(TgStatus::InvalidState);
    }
    if conv.state.is_none() {
        let inventory = Inventory::new(conv.participants.clone()).map_err(|e| {
            set_error(&e.to_string());
            TgStatus::InvalidState
        })?;
        let state = reset_conversation(rules, &inventory);
        conv.state = Some((inventory, state));
    }
    Ok(conv.state.as_mut().expect("just started"))
}

/// Accept a message into the conversation: expires and activates norms and
/// advances the phase state. `expected` may be null.
///
/// # Safety
/// `conv` and `rules` must be live handles; `sender` and `text` valid
/// NUL-terminated strings; `expected` null or a valid string.
#[no_mangle]
pub unsafe extern "C" fn tg_apply_event(
    conv: *mut TgConversation,
    rules: *const TgRuleset,
    sender: *const c_char,
    text: *const c_char,
    expected: *const c_char,
) -> TgStatus {
    let conv = match required_mut(conv) {
        Ok(c) => c,
        Err(s) => return s,
    };
    let rules = match required(rules) {
        Ok(r) => r,
        Err(s) => return s,
    };
    let sender = match required_str(sender) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let text = match required_str(text) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let expected = match optional_str(expected) {
        Ok(e) => e,
        Err(s) => return s,
    };
    let (inventory, state) = match started(conv, &rules.rules) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let sender = AgentId::from(sender);
    let Some(role) = inventory.role_of(&sender) else {
        set_error(&format!("unknown agent: {sender}"));
        return TgStatus::UnknownAgent;
    };
    let event = Event {
        sender,
        role,
        mentions: extract_mentions(text, inventory),
        expected: expected.map(AgentId::from),
    };
    match apply_event(state, &rules.rules, &event) {
        Ok(next) => {
            *state = next;
            TgStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            TgStatus::RuntimeError
        }
    }
}

/// Gate an attempted message without mutating the conversation.
///
/// On success writes the verdict to `verdict_out` and, when
/// `justification_buf` is non-null, the deciding norm ids as a
/// NUL-terminated JSON array (truncation yields
/// [`TgStatus::BufferTooSmall`]).
///
/// # Safety
/// `conv` and `rules` must be live handles; `sender` and `text` valid
/// NUL-terminated strings; `verdict_out` a valid pointer;
/// `justification_buf` null or `justification_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn tg_gate(
    conv: *mut TgConversation,
    rules: *const TgRuleset,
    sender: *const c_char,
    text: *const c_char,
    verdict_out: *mut TgVerdict,
    justification_buf: *mut c_char,
    justification_len: usize,
) -> TgStatus {
    let conv = match required_mut(conv) {
        Ok(c) => c,
        Err(s) => return s,
    };
    let rules = match required(rules) {
        Ok(r) => r,
        Err(s) => return s,
    };
    let sender = match required_str(sender) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let text = match required_str(text) {
        Ok(t) => t,
        Err(s) => return s,
    };
    if verdict_out.is_null() {
        set_error("null verdict_out");
        return TgStatus::NullArgument;
    }
    let (inventory, state) = match started(conv, &rules.rules) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let sender = AgentId::from(sender);
    let Some(role) = inventory.role_of(&sender) else {
        set_error(&format!("unknown agent: {sender}"));
        return TgStatus::UnknownAgent;
    };
    let attempt = Attempt {
        sender,
        role,
        mentions: extract_mentions(text, inventory),
    };
    let decision = match gate(state, &rules.rules, &attempt) {
        Ok(d) => d,
        Err(e) => {
            set_error(&e.to_string());
            return TgStatus::RuntimeError;
        }
    };
    *verdict_out = match decision.verdict {
        Verdict::Allow => TgVerdict::Allow,
        Verdict::Deny => TgVerdict::Deny,
    };
    if !justification_buf.is_null() {
        let json = serde_json::to_string(&decision.justification).unwrap_or_default();
        let bytes = json.as_bytes();
        if bytes.len() + 1 > justification_len {
            set_error("justification buffer too small");
            return TgStatus::BufferTooSmall;
        }
        std::ptr::copy_nonoverlapping(
            bytes.as_ptr() as *const c_char,
            justification_buf,
            bytes.len(),
        );
        *justification_buf.add(bytes.len()) = 0;
    }
    TgStatus::Ok
}

/// Reset the conversation to the ruleset's initial state, keeping the
/// participant roster.
///
/// # Safety
/// `conv` and `rules` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn tg_conversation_reset(
    conv: *mut TgConversation,
    rules: *const TgRuleset,
) -> TgStatus {
    let conv = match required_mut(conv) {
        Ok(c) => c,
        Err(s) => return s,
    };
    let rules = match required(rules) {
        Ok(r) => r,
        Err(s) => return s,
    };
    if let Some((inventory, state)) = conv.state.as_mut() {
        *state = reset_conversation(&rules.rules, inventory);
    }
    TgStatus::Ok
}

/// # Safety
/// `conv` must come from [`tg_conversation_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tg_conversation_free(conv: *mut TgConversation) {
    if !conv.is_null() {
        drop(Box::from_raw(conv));
    }
}
