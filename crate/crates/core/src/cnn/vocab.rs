//! Vocabulary and token-sequence encoding for the text classifier.

use std::collections::HashMap;

use crate::corpus::AgentId;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_INDEX: u32 = 0;
pub const UNK_INDEX: u32 = 1;

/// Token-to-index map with reserved padding and unknown entries. Indices are
/// dense and stable in first-seen order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from raw input texts: lowercased whitespace tokens, every
    /// distinct token gets an index.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Vocabulary {
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        vocab.index.insert(PAD_TOKEN.to_string(), PAD_INDEX);
        vocab.index.insert(UNK_TOKEN.to_string(), UNK_INDEX);
        for text in texts {
            for token in tokens_of(text) {
                if !vocab.index.contains_key(&token) {
                    let idx = vocab.tokens.len() as u32;
                    vocab.index.insert(token.clone(), idx);
                    vocab.tokens.push(token);
                }
            }
        }
        vocab
    }

    /// Rebuild from a serialized token list (manifest order).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    /// Encode a text into a fixed-length index sequence: lowercase whitespace
    /// tokens, truncating the oldest tokens when over `max_len`, padding the
    /// tail with the padding index.
    pub fn encode(&self, text: &str, max_len: usize) -> TokenSequence {
        let tokens: Vec<String> = tokens_of(text).collect();
        let start = tokens.len().saturating_sub(max_len);
        let mut indices: Vec<u32> = tokens[start..].iter().map(|t| self.lookup(t)).collect();
        let len = indices.len();
        indices.resize(max_len, PAD_INDEX);
        TokenSequence { indices, len }
    }

    /// Number of unknown-token hits when encoding `text`.
    pub fn unknown_hits(&self, text: &str) -> usize {
        tokens_of(text)
            .filter(|t| !self.index.contains_key(t))
            .count()
    }
}

fn tokens_of(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|t| t.to_lowercase())
}

/// A fixed-length encoded input. `len` is the number of real (non-padding)
/// leading positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub indices: Vec<u32>,
    pub len: usize,
}

/// Raw classifier input for predicting the speaker after `cur`:
/// `sender(t-1) text(t-1) sender(t) text(t)`, single-space joined, with the
/// previous turn omitted when absent and empty texts contributing nothing.
pub fn build_input_text(prev: Option<(&AgentId, &str)>, cur: (&AgentId, &str)) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(4);
    if let Some((sender, text)) = prev {
        parts.push(sender.as_str());
        if !text.is_empty() {
            parts.push(text);
        }
    }
    parts.push(cur.0.as_str());
    if !cur.1.is_empty() {
        parts.push(cur.1);
    }
    parts.join(" ")
}
