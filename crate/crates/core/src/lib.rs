//! Turn-taking governance for multi-bot group chats.
//!
//! The crate couples two next-speaker predictors (a windowed transition
//! model and a convolutional text classifier) with a deontic rule engine
//! that allows or denies each attempted message. It also ships the corpus
//! tooling, a synthetic corpus simulator, the evaluation harness that
//! scores all of it, and a small hub service that routes live messages
//! through the gate.

pub mod cnn;
pub mod corpus;
pub mod dsl;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod hub;
pub mod hybrid;
pub mod predictors;
pub mod synth;

pub use error::{Error, Result};
