use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Message};

pub const UNKNOWN: u32 = 0;

/// Word list with index 0 reserved for unknown tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32 + 1))
            .collect();
        Vocab { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    /// Every distinct token of the corpus, sorted.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let words: BTreeSet<&str> = corpus
            .conversations
            .iter()
            .flat_map(|c| &c.messages)
            .flat_map(|m| m.tokens.iter().map(String::as_str))
            .collect();
        Vocab::from(words.into_iter().map(str::to_string).collect::<Vec<_>>())
    }

    /// Number of rows an embedding table needs, unknown slot included.
    pub fn size(&self) -> usize {
        self.words.len() + 1
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNKNOWN)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn message_ids(&self, m: &Message) -> Vec<u32> {
        self.ids(&m.tokens)
    }

    /// Token ids for every message of every conversation.
    pub fn index_corpus(&self, corpus: &Corpus) -> Vec<Vec<Vec<u32>>> {
        corpus
            .conversations
            .iter()
            .map(|c| c.messages.iter().map(|m| self.message_ids(m)).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_maps_to_zero() {
        let v = Vocab::from(vec!["b".to_string(), "a".to_string()]);
        assert_eq!(v.size(), 3);
        assert_eq!(v.id("b"), 1);
        assert_eq!(v.id("zzz"), UNKNOWN);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"["b","a"]"#);
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }
}
