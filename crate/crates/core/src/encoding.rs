//! Sender-history encoders: one-hot vectors, lookback-window states and the
//! transition events consumed by the smoothed MLE learner.

use crate::corpus::{AgentId, Dialogue, Inventory};
use crate::error::{Error, Result};

/// Length-n binary vector with exactly one bit set, identifying a sender by
/// its canonical inventory position.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OneHotVector {
    bits: Vec<bool>,
}

impl OneHotVector {
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Index of the single set bit.
    pub fn hot_index(&self) -> usize {
        self.bits.iter().position(|b| *b).expect("one bit set")
    }
}

/// Concatenation of `window` one-hot blocks, most recent sender first.
/// All-zero blocks are pre-dialogue padding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowedState {
    bits: Vec<bool>,
    window: usize,
    n: usize,
}

impl WindowedState {
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sender index of block `k` (0 = most recent), `None` for padding.
    pub fn block_index(&self, k: usize) -> Option<usize> {
        let block = &self.bits[k * self.n..(k + 1) * self.n];
        block.iter().position(|b| *b)
    }

    /// Compact hex encoding of the bit vector (bit 0 is the MSB of the first
    /// hex digit), used as the serialized transition-table key.
    pub fn hex_key(&self) -> String {
        let mut bytes = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, b) in self.bits.iter().enumerate() {
            if *b {
                bytes[i / 8] |= 1 << (7 - (i % 8));
            }
        }
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Inverse of [`hex_key`](Self::hex_key) given the window geometry.
    pub fn from_hex_key(key: &str, window: usize, n: usize) -> Result<Self> {
        let expected_bytes = (window * n).div_ceil(8);
        if key.len() != expected_bytes * 2 {
            return Err(Error::Corrupt(format!(
                "state key {key} has wrong length for window {window} x {n} agents"
            )));
        }
        let mut bytes = Vec::with_capacity(expected_bytes);
        for i in 0..expected_bytes {
            let byte = u8::from_str_radix(&key[i * 2..i * 2 + 2], 16)
                .map_err(|_| Error::Corrupt(format!("bad hex in state key {key}")))?;
            bytes.push(byte);
        }
        let bits = (0..window * n)
            .map(|i| bytes[i / 8] & (1 << (7 - (i % 8))) != 0)
            .collect();
        Ok(WindowedState { bits, window, n })
    }
}

/// One observed `state -> next sender` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionEvent {
    from_state: WindowedState,
    pub to_sender: AgentId,
}

impl TransitionEvent {
    pub fn new(from_state: WindowedState, to_sender: AgentId) -> Self {
        TransitionEvent {
            from_state,
            to_sender,
        }
    }

    pub fn from_state(&self) -> &WindowedState {
        &self.from_state
    }
}

/// One-hot encode `sender` against the canonical inventory order.
pub fn one_hot(sender: &AgentId, inventory: &Inventory) -> Result<OneHotVector> {
    let idx = inventory
        .index_of(sender)
        .ok_or_else(|| Error::UnknownAgent(sender.to_string()))?;
    let mut bits = vec![false; inventory.len()];
    bits[idx] = true;
    Ok(OneHotVector { bits })
}

/// Windowed state over the last `window` senders of `history`, most recent
/// first; missing history becomes all-zero padding blocks.
pub fn window_state(
    history: &[AgentId],
    window: usize,
    inventory: &Inventory,
) -> Result<WindowedState> {
    if window < 1 {
        return Err(Error::InvalidArgument(
            "lookback window must be at least 1".into(),
        ));
    }
    let n = inventory.len();
    let mut bits = vec![false; window * n];
    for k in 0..window {
        if k + 1 > history.len() {
            break; // padding
        }
        let sender = &history[history.len() - 1 - k];
        let idx = inventory
            .index_of(sender)
            .ok_or_else(|| Error::UnknownAgent(sender.to_string()))?;
        bits[k * n + idx] = true;
    }
    Ok(WindowedState { bits, window, n })
}

/// Transition events of a dialogue: one per turn index `t` in `[1, T-1]`,
/// pairing the window over senders up to `t` with the sender at `t+1`.
/// Distractor turns contribute neither state nor target.
pub fn transitions_from_dialogue(
    dialogue: &Dialogue,
    window: usize,
    inventory: &Inventory,
) -> Result<Vec<TransitionEvent>> {
    let senders = dialogue.genuine_senders();
    transitions_from_senders(&senders, window, inventory)
}

pub fn transitions_from_senders(
    senders: &[AgentId],
    window: usize,
    inventory: &Inventory,
) -> Result<Vec<TransitionEvent>> {
    if senders.len() < 2 {
        return Ok(Vec::new());
    }
    let mut events = Vec::with_capacity(senders.len() - 1);
    for t in 1..senders.len() {
        let state = window_state(&senders[..t], window, inventory)?;
        events.push(TransitionEvent::new(state, senders[t].clone()));
    }
    Ok(events)
}
