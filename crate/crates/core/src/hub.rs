//! Communication-hub service: scripted connectors exchange newline-delimited
//! JSON frames over TCP, and every submitted message passes through the
//! governance gate before it is broadcast to the conversation.
//!
//! Wire protocol, one JSON object per line:
//!   connector -> hub:  {"conv": "c1", "sender": "user", "text": "..."}
//!   hub -> submitter:  {"type": "verdict", "conv", "seq", "sender",
//!                       "verdict": "allow"|"deny", "justification": [...],
//!                       "expected": "train_bot"|null}
//!   hub -> everyone:   {"type": "broadcast", "conv", "seq", "sender", "text"}
//!
//! Denied messages are acknowledged with their justification and are not
//! broadcast. A connection joins a conversation implicitly by submitting to
//! it; per-conversation processing is serialized so verdicts follow arrival
//! order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::cnn;
use crate::corpus::{AgentId, Inventory, Role};
use crate::dsl::{parse_ruleset, RuleSet, Verdict};
use crate::error::{Error, Result};
use crate::hybrid::CascadeConfig;

pub use crate::hybrid::{replay_transcript, Governor, HubVerdict, Predictors};

/// Hub configuration file (JSON).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HubConfig {
    /// Listen address, overridable with the TURNGATE_LISTEN variable.
    pub listen: String,
    pub ruleset_path: String,
    /// Participants and their roles.
    pub agents: Vec<HubAgent>,
    /// Optional predictor block; without it events carry no expectation.
    pub predictors: Option<PredictorPaths>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HubAgent {
    pub name: String,
    pub role: Role,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictorPaths {
    pub cnn_model: String,
    pub mle_table: String,
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub default_agent: String,
}

impl HubConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Config(e.to_string()))
    }

    /// Effective listen address after the environment override.
    pub fn listen_addr(&self) -> String {
        std::env::var("TURNGATE_LISTEN").unwrap_or_else(|_| self.listen.clone())
    }
}

#[derive(Debug, Deserialize)]
struct InboundFrame {
    conv: String,
    sender: String,
    text: String,
}

#[derive(Debug, Serialize)]
struct VerdictFrame<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    conv: &'a str,
    seq: u64,
    sender: &'a str,
    verdict: Verdict,
    justification: &'a [String],
    expected: Option<&'a str>,
}

#[derive(Debug, Serialize)]
struct BroadcastFrame<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    conv: &'a str,
    seq: u64,
    sender: &'a str,
    text: &'a str,
}

#[derive(Debug, Serialize)]
struct ErrorFrame<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    error: &'a str,
}

struct ConversationEntry {
    governor: Governor,
    members: Vec<(u64, TcpStream)>,
}

struct Shared {
    rules: RuleSet,
    inventory: Inventory,
    config: HubConfig,
    conversations: Mutex<HashMap<String, ConversationEntry>>,
    shutdown: AtomicBool,
}

/// A running hub service.
pub struct HubServer {
    pub addr: std::net::SocketAddr,
    shared: Arc<Shared>,
    accept_thread: Option<std::thread::JoinHandle<()>>,
}

fn load_predictors(paths: &PredictorPaths, inventory: &Inventory) -> Result<Predictors> {
    let (cnn, vocab, classes) = cnn::load_model(&paths.cnn_model)?;
    cnn::verify_classes(&classes, inventory)?;
    let table = crate::predictors::load_table(&paths.mle_table, inventory)?;
    Ok(Predictors {
        cnn,
        vocab,
        table,
        window: paths.window,
        cascade: CascadeConfig::new(paths.k1, paths.k2, paths.default_agent.as_str()),
    })
}

/// Bind and serve. Every connection may submit for any conversation; one
/// governor per conversation is created lazily and all its traffic is
/// processed under its lock, preserving arrival order.
pub fn serve(config: HubConfig) -> Result<HubServer> {
    let rules = parse_ruleset(
        &std::fs::read_to_string(&config.ruleset_path)
            .map_err(|e| Error::io(&config.ruleset_path, e))?,
    )?;
    let inventory = Inventory::new(
        config
            .agents
            .iter()
            .map(|a| (AgentId::from(a.name.as_str()), a.role))
            .collect(),
    )?;
    // fail fast on unloadable models
    if let Some(paths) = &config.predictors {
        load_predictors(paths, &inventory)?;
    }

    let listener = TcpListener::bind(config.listen_addr())
        .map_err(|e| Error::Config(format!("bind {}: {e}", config.listen_addr())))?;
    let addr = listener
        .local_addr()
        .map_err(|e| Error::Config(e.to_string()))?;

    let shared = Arc::new(Shared {
        rules,
        inventory,
        config,
        conversations: Mutex::new(HashMap::new()),
        shutdown: AtomicBool::new(false),
    });

    let accept_shared = Arc::clone(&shared);
    let accept_thread = std::thread::spawn(move || {
        let mut conn_id = 0u64;
        for stream in listener.incoming() {
            if accept_shared.shutdown.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            conn_id += 1;
            let shared = Arc::clone(&accept_shared);
            let id = conn_id;
            std::thread::spawn(move || {
                let _ = handle_connection(shared, stream, id);
            });
        }
    });

    Ok(HubServer {
        addr,
        shared,
        accept_thread: Some(accept_thread),
    })
}

impl HubServer {
    /// Stop accepting and drop conversation state.
    pub fn shutdown(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        // unblock the acceptor
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HubServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn handle_connection(shared: Arc<Shared>, stream: TcpStream, conn_id: u64) -> std::io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: InboundFrame = match serde_json::from_str(&line) {
            Ok(f) => f,
            Err(e) => {
                let mut out = stream.try_clone()?;
                send_json(
                    &mut out,
                    &ErrorFrame {
                        kind: "error",
                        error: &format!("bad frame: {e}"),
                    },
                )?;
                continue;
            }
        };

        let mut conversations = shared.conversations.lock().expect("hub lock");
        let entry = match conversations.entry(frame.conv.clone()) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(v) => {
                let predictors = shared.config.predictors.as_ref().map(|paths| {
                    load_predictors(paths, &shared.inventory).expect("validated at startup")
                });
                v.insert(ConversationEntry {
                    governor: Governor::new(
                        shared.rules.clone(),
                        shared.inventory.clone(),
                        predictors,
                    ),
                    members: Vec::new(),
                })
            }
        };
        if !entry.members.iter().any(|(id, _)| *id == conn_id) {
            entry.members.push((conn_id, stream.try_clone()?));
        }

        match entry.governor.submit(&frame.sender, &frame.text) {
            Ok(verdict) => {
                let vframe = VerdictFrame {
                    kind: "verdict",
                    conv: &frame.conv,
                    seq: verdict.seq,
                    sender: &verdict.sender,
                    verdict: verdict.decision.verdict,
                    justification: &verdict.decision.justification,
                    expected: verdict.expected.as_deref(),
                };
                let mut out = stream.try_clone()?;
                send_json(&mut out, &vframe)?;
                if verdict.decision.verdict == Verdict::Allow {
                    let bframe = BroadcastFrame {
                        kind: "broadcast",
                        conv: &frame.conv,
                        seq: verdict.seq,
                        sender: &verdict.sender,
                        text: &frame.text,
                    };
                    entry.members.retain(|(_, member)| {
                        let mut m = match member.try_clone() {
                            Ok(m) => m,
                            Err(_) => return false,
                        };
                        send_json(&mut m, &bframe).is_ok()
                    });
                }
            }
            Err(e) => {
                let mut out = stream.try_clone()?;
                send_json(
                    &mut out,
                    &ErrorFrame {
                        kind: "error",
                        error: &e.to_string(),
                    },
                )?;
            }
        }
    }
    Ok(())
}

fn send_json<T: Serialize>(stream: &mut TcpStream, value: &T) -> std::io::Result<()> {
    let mut bytes = serde_json::to_vec(value)?;
    bytes.push(b'\n');
    stream.write_all(&bytes)
}
