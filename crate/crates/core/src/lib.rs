//! Unsupervised conversation disentanglement.
//!
//! Two classifiers view an interleaved chat log from complementary angles:
//!
//! - a message-pair classifier ([`pair_model`]) scores whether two messages
//!   belong to the same session;
//! - a session classifier ([`session_model`]) scores whether a message
//!   continues a session, and disentangles a whole conversation end to end.
//!
//! Both start from heuristic pseudo-labels built from speaker identities.
//! [`cotrain`] then alternates: the session classifier is refined with
//! REINFORCE using rewards from the pair classifier and speaker identity, and
//! confident pairs harvested from its predicted sessions are fed back to the
//! pair classifier. [`metrics`] holds the evaluation suite and [`respsel`] the
//! downstream response-selection model.

pub mod assignment;
pub mod config;
pub mod corpus;
pub mod cotrain;
pub mod encoder;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod pair_model;
pub mod respsel;
pub mod session_model;
pub mod stopwords;
pub mod train;
pub mod two_step;
pub mod vocab;

pub use corpus::{Conversation, Corpus, Message, Partition};
pub use error::{Error, Result};
