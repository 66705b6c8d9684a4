//! Conversations, messages and session partitions.

mod io;
mod partition;
pub mod synth;

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

pub use io::{
    load_corpus, load_partitions, read_corpus, read_partitions, write_corpus, write_partitions,
    PartitionRecord,
};
pub use partition::Partition;
pub use synth::{generate_synthetic, SynthConfig, TopicReplyGenerator};

/// Lowercases, splits on whitespace and strips punctuation surrounding each
/// token. Tokens that are pure punctuation disappear.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub id: String,
    pub speaker: String,
    /// Original text as ingested; written back verbatim.
    pub text: String,
    pub tokens: Vec<String>,
    pub position: usize,
}

impl Message {
    pub fn new(
        id: impl Into<String>,
        speaker: impl Into<String>,
        text: impl Into<String>,
        position: usize,
    ) -> Result<Self> {
        let text = text.into();
        let id = id.into();
        let tokens = tokenize(&text);
        if tokens.is_empty() {
            return Err(Error::invalid(format!("message {id} has no tokens")));
        }
        Ok(Message {
            id,
            speaker: speaker.into(),
            text,
            tokens,
            position,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conversation {
    pub conv_id: String,
    pub messages: Vec<Message>,
    pub gold: Option<Partition>,
}

impl Conversation {
    /// Builds a conversation, checking that positions run `0..n` and that the
    /// gold partition, if any, covers every message.
    pub fn new(
        conv_id: impl Into<String>,
        messages: Vec<Message>,
        gold: Option<Partition>,
    ) -> Result<Self> {
        let conv_id = conv_id.into();
        for (i, m) in messages.iter().enumerate() {
            if m.position != i {
                return Err(Error::invalid(format!(
                    "conversation {conv_id}: message {} has position {} but sits at index {i}",
                    m.id, m.position
                )));
            }
        }
        if let Some(g) = &gold {
            if g.len() != messages.len() {
                return Err(Error::invalid(format!(
                    "conversation {conv_id}: gold covers {} of {} messages",
                    g.len(),
                    messages.len()
                )));
            }
        }
        Ok(Conversation {
            conv_id,
            messages,
            gold,
        })
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn gold(&self) -> Result<&Partition> {
        self.gold
            .as_ref()
            .ok_or_else(|| Error::MissingGold(self.conv_id.clone()))
    }

    /// Copy of this conversation without the messages at `drop`, positions renumbered.
    pub fn without(&self, drop: &[usize]) -> Conversation {
        let keep: Vec<usize> = (0..self.len()).filter(|i| !drop.contains(i)).collect();
        let messages = keep
            .iter()
            .enumerate()
            .map(|(new_pos, &old)| Message {
                position: new_pos,
                ..self.messages[old].clone()
            })
            .collect();
        Conversation {
            conv_id: self.conv_id.clone(),
            messages,
            gold: self.gold.as_ref().map(|g| g.restrict(&keep)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub conversations: Vec<Conversation>,
}

impl Corpus {
    pub fn new(conversations: Vec<Conversation>) -> Self {
        Corpus { conversations }
    }

    pub fn len(&self) -> usize {
        self.conversations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conversations.is_empty()
    }

    pub fn message_count(&self) -> usize {
        self.conversations.iter().map(|c| c.len()).sum()
    }

    pub fn has_gold(&self) -> bool {
        self.conversations.iter().all(|c| c.gold.is_some())
    }

    pub fn golds(&self) -> Result<Vec<Partition>> {
        self.conversations
            .iter()
            .map(|c| c.gold().cloned())
            .collect()
    }

    pub fn index_by_id(&self) -> HashMap<&str, usize> {
        self.conversations
            .iter()
            .enumerate()
            .map(|(i, c)| (c.conv_id.as_str(), i))
            .collect()
    }
}

/// Fraction of (speaker, conversation) pairs whose speaker posts in two or
/// more gold sessions of that conversation.
pub fn speaker_multisession_rate(corpus: &Corpus) -> Result<f64> {
    let mut pairs = 0usize;
    let mut multi = 0usize;
    for conv in &corpus.conversations {
        let gold = conv.gold()?;
        let mut sessions: HashMap<&str, HashSet<usize>> = HashMap::new();
        for m in &conv.messages {
            sessions
                .entry(m.speaker.as_str())
                .or_default()
                .insert(gold.session_of(m.position));
        }
        pairs += sessions.len();
        multi += sessions.values().filter(|s| s.len() >= 2).count();
    }
    if pairs == 0 {
        return Ok(0.0);
    }
    Ok(multi as f64 / pairs as f64)
}
