//! Dialogue corpus loading, validation, splitting, error augmentation and
//! statistics.
//!
//! A corpus is stored as UTF-8 JSON Lines: an optional header line declaring
//! the agent inventory followed by one dialogue object per line. Agent
//! mentions are never serialized; they are re-derived from utterance text on
//! load.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symbolic identity of a conversation participant, e.g. `user` or
/// `hotel_bot`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(name: impl Into<String>) -> Self {
        AgentId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Bot,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::User => f.write_str("user"),
            Role::Bot => f.write_str("bot"),
        }
    }
}

/// One message in a dialogue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub sender: AgentId,
    pub role: Role,
    pub text: String,
    /// Agents whose name occurs as a whole token in `text`; derived on load.
    pub mentions: Vec<AgentId>,
    pub is_distractor: bool,
    /// Groups candidate replies to the same user stimulus.
    pub slot: Option<u32>,
}

impl Utterance {
    pub fn new(sender: impl Into<AgentId>, role: Role, text: impl Into<String>) -> Self {
        Utterance {
            sender: sender.into(),
            role,
            text: text.into(),
            mentions: Vec::new(),
            is_distractor: false,
            slot: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Utterance>,
}

impl Dialogue {
    /// Senders of genuine (non-distractor) turns, in order.
    pub fn genuine_senders(&self) -> Vec<AgentId> {
        self.turns
            .iter()
            .filter(|t| !t.is_distractor)
            .map(|t| t.sender.clone())
            .collect()
    }

    pub fn genuine_turns(&self) -> impl Iterator<Item = &Utterance> {
        self.turns.iter().filter(|t| !t.is_distractor)
    }
}

/// The agent inventory of a corpus, kept in canonical (lexicographic) order
/// so one-hot positions are stable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventory {
    agents: Vec<(AgentId, Role)>,
}

impl Inventory {
    pub fn new(mut agents: Vec<(AgentId, Role)>) -> Result<Self> {
        agents.sort_by(|a, b| a.0.cmp(&b.0));
        agents.dedup();
        for w in agents.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Validation(format!(
                    "agent {} declared with two roles",
                    w[0].0
                )));
            }
        }
        for (id, _) in &agents {
            if id.as_str().is_empty() {
                return Err(Error::Validation("empty agent name".into()));
            }
        }
        Ok(Inventory { agents })
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(AgentId, Role)> {
        self.agents.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &AgentId> {
        self.agents.iter().map(|(id, _)| id)
    }

    pub fn index_of(&self, agent: &AgentId) -> Option<usize> {
        self.agents.iter().position(|(id, _)| id == agent)
    }

    pub fn agent_at(&self, idx: usize) -> &AgentId {
        &self.agents[idx].0
    }

    pub fn role_of(&self, agent: &AgentId) -> Option<Role> {
        self.agents
            .iter()
            .find(|(id, _)| id == agent)
            .map(|(_, r)| *r)
    }

    pub fn contains(&self, agent: &AgentId) -> bool {
        self.index_of(agent).is_some()
    }

    pub fn bots(&self) -> impl Iterator<Item = &AgentId> {
        self.agents
            .iter()
            .filter(|(_, r)| *r == Role::Bot)
            .map(|(id, _)| id)
    }

    pub fn user(&self) -> Option<&AgentId> {
        self.agents
            .iter()
            .find(|(_, r)| *r == Role::User)
            .map(|(id, _)| id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    pub inventory: Inventory,
}

impl Corpus {
    /// Number of agents, `n` in the encoders and predictors.
    pub fn n(&self) -> usize {
        self.inventory.len()
    }

    pub fn has_distractors(&self) -> bool {
        self.dialogues
            .iter()
            .any(|d| d.turns.iter().any(|t| t.is_distractor))
    }

    pub fn utterance_count(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }
}

// ---------------------------------------------------------------------------
// Mentions
// ---------------------------------------------------------------------------

/// Agents whose name occurs in `text` as a case-insensitive whole token, in
/// order of first occurrence, deduplicated.
pub fn extract_mentions(text: &str, inventory: &Inventory) -> Vec<AgentId> {
    let lowered: BTreeMap<String, AgentId> = inventory
        .names()
        .map(|id| (id.as_str().to_lowercase(), id.clone()))
        .collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for token in text
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
    {
        let key = token.to_lowercase();
        if let Some(id) = lowered.get(&key) {
            if seen.insert(id.clone()) {
                out.push(id.clone());
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// JSON Lines format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    agents: Vec<HeaderAgent>,
}

#[derive(Serialize, Deserialize)]
struct HeaderAgent {
    name: String,
    role: Role,
}

#[derive(Serialize, Deserialize)]
struct DialogueLine {
    id: String,
    turns: Vec<TurnLine>,
}

#[derive(Serialize, Deserialize)]
struct TurnLine {
    sender: String,
    role: Role,
    text: String,
    #[serde(default)]
    distractor: bool,
    #[serde(default)]
    slot: Option<u32>,
}

/// Load and validate a corpus from a JSON Lines file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_corpus_from(BufReader::new(file))
}

/// Load a corpus from any reader; line numbers in errors are 1-based.
pub fn load_corpus_from(reader: impl BufRead) -> Result<Corpus> {
    let mut header: Option<HeaderLine> = None;
    let mut raw_dialogues: Vec<(usize, DialogueLine)> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 {
            if let Ok(h) = serde_json::from_str::<HeaderLine>(&line) {
                header = Some(h);
                continue;
            }
        }
        let dl: DialogueLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        raw_dialogues.push((line_no, dl));
    }

    if raw_dialogues.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no dialogues found".into(),
        });
    }

    // Inventory: header agents plus every observed sender.
    let mut agents: BTreeMap<String, Role> = BTreeMap::new();
    if let Some(h) = &header {
        for a in &h.agents {
            agents.insert(a.name.clone(), a.role);
        }
    }
    for (line_no, dl) in &raw_dialogues {
        for t in &dl.turns {
            match agents.get(&t.sender) {
                None => {
                    if header.is_some() {
                        return Err(Error::Validation(format!(
                            "dialogue {} (line {}): sender {} not in declared agent inventory",
                            dl.id, line_no, t.sender
                        )));
                    }
                    agents.insert(t.sender.clone(), t.role);
                }
                Some(role) => {
                    if *role != t.role {
                        return Err(Error::Validation(format!(
                            "dialogue {} (line {}): sender {} appears with conflicting roles",
                            dl.id, line_no, t.sender
                        )));
                    }
                }
            }
        }
    }

    let inventory = Inventory::new(
        agents
            .into_iter()
            .map(|(name, role)| (AgentId::new(name), role))
            .collect(),
    )?;

    let mut dialogues = Vec::with_capacity(raw_dialogues.len());
    for (_, dl) in raw_dialogues {
        let turns = dl
            .turns
            .into_iter()
            .map(|t| {
                let mentions = extract_mentions(&t.text, &inventory);
                Utterance {
                    sender: AgentId::new(t.sender),
                    role: t.role,
                    text: t.text,
                    mentions,
                    is_distractor: t.distractor,
                    slot: t.slot,
                }
            })
            .collect();
        dialogues.push(Dialogue { id: dl.id, turns });
    }

    let corpus = Corpus {
        dialogues,
        inventory,
    };
    validate(&corpus)?;
    Ok(corpus)
}

fn validate(corpus: &Corpus) -> Result<()> {
    let users: Vec<_> = corpus
        .inventory
        .iter()
        .filter(|(_, r)| *r == Role::User)
        .collect();
    if users.len() != 1 {
        return Err(Error::Validation(format!(
            "corpus must contain exactly one user-role agent, found {}",
            users.len()
        )));
    }
    let clean = !corpus.has_distractors();
    for d in &corpus.dialogues {
        if d.turns.is_empty() {
            return Err(Error::Validation(format!("dialogue {} is empty", d.id)));
        }
        if d.turns[0].role != Role::User {
            return Err(Error::Validation(format!(
                "dialogue {}: first turn must have user role",
                d.id
            )));
        }
        for (i, t) in d.turns.iter().enumerate() {
            if !corpus.inventory.contains(&t.sender) {
                return Err(Error::Validation(format!(
                    "dialogue {} turn {}: sender {} not in agent inventory",
                    d.id, i, t.sender
                )));
            }
            if t.is_distractor && t.slot.is_none() {
                return Err(Error::Validation(format!(
                    "dialogue {} turn {}: distractor without slot",
                    d.id, i
                )));
            }
        }
        if clean {
            // Only clean multibotwoz-style data guarantees this; augmented
            // corpora legitimately stack bot candidates.
            for (i, w) in d.turns.windows(2).enumerate() {
                if w[0].role == Role::Bot && w[1].role == Role::Bot {
                    return Err(Error::Validation(format!(
                        "dialogue {} turns {}-{}: bot turn follows bot turn in clean corpus",
                        d.id,
                        i,
                        i + 1
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Serialize a corpus back to JSON Lines, header first. `distractor` and
/// `slot` are always emitted.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    write_corpus(corpus, &mut file).map_err(|e| Error::io(path, e))
}

pub fn write_corpus(corpus: &Corpus, out: &mut impl Write) -> std::io::Result<()> {
    let header = HeaderLine {
        agents: corpus
            .inventory
            .iter()
            .map(|(id, role)| HeaderAgent {
                name: id.as_str().to_string(),
                role: *role,
            })
            .collect(),
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    for d in &corpus.dialogues {
        let dl = DialogueLine {
            id: d.id.clone(),
            turns: d
                .turns
                .iter()
                .map(|t| TurnLine {
                    sender: t.sender.as_str().to_string(),
                    role: t.role,
                    text: t.text.clone(),
                    distractor: t.is_distractor,
                    slot: t.slot,
                })
                .collect(),
        };
        serde_json::to_writer(&mut *out, &dl)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

// ---------------------------------------------------------------------------
// Split
// ---------------------------------------------------------------------------

/// Positional train/test split: the first `floor(ratio * D)` dialogues in
/// corpus order go to train, the remainder to test. Both halves keep the full
/// agent inventory so encodings stay aligned.
pub fn split_train_test(corpus: &Corpus, ratio: f64) -> Result<(Corpus, Corpus)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let cut = (ratio * corpus.dialogues.len() as f64).floor() as usize;
    let train = Corpus {
        dialogues: corpus.dialogues[..cut].to_vec(),
        inventory: corpus.inventory.clone(),
    };
    let test = Corpus {
        dialogues: corpus.dialogues[cut..].to_vec(),
        inventory: corpus.inventory.clone(),
    };
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Error augmentation
// ---------------------------------------------------------------------------

/// Fraction of leading dialogues whose genuine bot replies form the distractor
/// text pools; matches the train side of the standard 70/30 split.
pub const DISTRACTOR_POOL_RATIO: f64 = 0.7;

/// Inject dialogue errors: every genuine bot reply to a user utterance gains
/// one distractor reply from each other bot, all sharing a slot index with
/// the genuine reply. Distractor text is drawn (seeded, uniform) from the
/// distractor bot's own pool of genuine replies in the leading
/// `DISTRACTOR_POOL_RATIO` portion of the corpus.
pub fn augment_with_errors(corpus: &Corpus, seed: u64) -> Result<Corpus> {
    if corpus.has_distractors() {
        return Err(Error::InvalidArgument(
            "corpus is already augmented with distractors".into(),
        ));
    }

    // Reply pools per bot, from the training portion only.
    let pool_cut = (DISTRACTOR_POOL_RATIO * corpus.dialogues.len() as f64).floor() as usize;
    let mut pools: BTreeMap<AgentId, Vec<&str>> = corpus
        .inventory
        .bots()
        .map(|b| (b.clone(), Vec::new()))
        .collect();
    for d in &corpus.dialogues[..pool_cut] {
        for (i, t) in d.turns.iter().enumerate() {
            if t.role == Role::Bot && i > 0 && d.turns[i - 1].role == Role::User {
                pools
                    .get_mut(&t.sender)
                    .expect("bot in inventory")
                    .push(&t.text);
            }
        }
    }
    for (bot, pool) in &pools {
        if pool.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "bot {bot} has an empty reply pool in the training portion"
            )));
        }
    }

    let bots: Vec<AgentId> = corpus.inventory.bots().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dialogues = Vec::with_capacity(corpus.dialogues.len());

    for d in &corpus.dialogues {
        let mut turns = Vec::with_capacity(d.turns.len());
        let mut next_slot: u32 = 0;
        for (i, t) in d.turns.iter().enumerate() {
            let is_reply = t.role == Role::Bot && i > 0 && d.turns[i - 1].role == Role::User;
            if !is_reply {
                turns.push(t.clone());
                continue;
            }
            let slot = next_slot;
            next_slot += 1;
            let mut genuine = t.clone();
            genuine.slot = Some(slot);
            turns.push(genuine);
            for bot in bots.iter().filter(|b| **b != t.sender) {
                let pool = &pools[bot];
                let text = pool[rng.random_range(0..pool.len())].to_string();
                let mentions = extract_mentions(&text, &corpus.inventory);
                turns.push(Utterance {
                    sender: bot.clone(),
                    role: Role::Bot,
                    text,
                    mentions,
                    is_distractor: true,
                    slot: Some(slot),
                });
            }
        }
        dialogues.push(Dialogue {
            id: d.id.clone(),
            turns,
        });
    }

    Ok(Corpus {
        dialogues,
        inventory: corpus.inventory.clone(),
    })
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub utterances: usize,
    pub dialogues: usize,
    pub per_agent: BTreeMap<String, usize>,
    pub avg_agents_per_dialogue: f64,
    pub avg_utterances_per_dialogue: f64,
    pub avg_utterance_words: f64,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut per_agent: BTreeMap<String, usize> = BTreeMap::new();
    let mut words = 0usize;
    let mut utterances = 0usize;
    let mut agents_sum = 0usize;
    for d in &corpus.dialogues {
        let mut seen: BTreeSet<&AgentId> = BTreeSet::new();
        for t in &d.turns {
            utterances += 1;
            words += t.text.split_whitespace().count();
            *per_agent.entry(t.sender.as_str().to_string()).or_insert(0) += 1;
            seen.insert(&t.sender);
        }
        agents_sum += seen.len();
    }
    let dcount = corpus.dialogues.len();
    CorpusStats {
        utterances,
        dialogues: dcount,
        per_agent,
        avg_agents_per_dialogue: agents_sum as f64 / dcount.max(1) as f64,
        avg_utterances_per_dialogue: utterances as f64 / dcount.max(1) as f64,
        avg_utterance_words: words as f64 / utterances.max(1) as f64,
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dialogues:                {}", self.dialogues)?;
        writeln!(f, "utterances:               {}", self.utterances)?;
        writeln!(
            f,
            "avg agents/dialogue:      {:.2}",
            self.avg_agents_per_dialogue
        )?;
        writeln!(
            f,
            "avg utterances/dialogue:  {:.2}",
            self.avg_utterances_per_dialogue
        )?;
        writeln!(
            f,
            "avg utterance length:     {:.2} words",
            self.avg_utterance_words
        )?;
        writeln!(f, "per-agent utterances:")?;
        for (agent, count) in &self.per_agent {
            writeln!(f, "  {agent:<18} {count}")?;
        }
        Ok(())
    }
}
