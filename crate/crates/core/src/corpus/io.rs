use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Conversation, Corpus, Message, Partition};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct RawConversation {
    conv_id: String,
    messages: Vec<RawMessage>,
}

#[derive(Serialize, Deserialize)]
struct RawMessage {
    id: String,
    speaker: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    session: Option<i64>,
}

/// One line of a partition file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionRecord {
    pub conv_id: String,
    pub assignment: Vec<usize>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    read_corpus(open(path)?)
}

/// Reads corpus JSONL. Blank lines are skipped. Gold labels are attached when
/// every message of a conversation carries a `session` field; arbitrary
/// integer labels are renumbered by first appearance.
pub fn read_corpus(reader: impl Read) -> Result<Corpus> {
    let mut conversations = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let raw: RawConversation =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let labelled = raw.messages.iter().filter(|m| m.session.is_some()).count();
        if labelled != 0 && labelled != raw.messages.len() {
            return Err(parse_err(format!(
                "conversation {} labels {labelled} of {} messages with a session",
                raw.conv_id,
                raw.messages.len()
            )));
        }
        let gold = (labelled > 0 && labelled == raw.messages.len()).then(|| {
            let labels: Vec<i64> = raw.messages.iter().filter_map(|m| m.session).collect();
            Partition::from_labels(&labels)
        });
        let messages = raw
            .messages
            .into_iter()
            .enumerate()
            .map(|(pos, m)| Message::new(m.id, m.speaker, m.text, pos))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| parse_err(e.to_string()))?;
        let conv = Conversation::new(raw.conv_id, messages, gold)
            .map_err(|e| parse_err(e.to_string()))?;
        conversations.push(conv);
    }
    Ok(Corpus::new(conversations))
}

pub fn write_corpus(corpus: &Corpus, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for conv in &corpus.conversations {
        let raw = RawConversation {
            conv_id: conv.conv_id.clone(),
            messages: conv
                .messages
                .iter()
                .map(|m| RawMessage {
                    id: m.id.clone(),
                    speaker: m.speaker.clone(),
                    text: m.text.clone(),
                    session: conv.gold.as_ref().map(|g| g.session_of(m.position) as i64),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &raw)?;
        w.write_all(b"\n").map_err(|e| Error::io("<corpus>", e))?;
    }
    w.flush().map_err(|e| Error::io("<corpus>", e))
}

pub fn load_partitions(path: impl AsRef<Path>) -> Result<Vec<PartitionRecord>> {
    let path = path.as_ref();
    read_partitions(open(path)?)
}

pub fn read_partitions(reader: impl Read) -> Result<Vec<PartitionRecord>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PartitionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        Partition::new(rec.assignment.clone()).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_partitions<'a>(
    records: impl IntoIterator<Item = (&'a str, &'a Partition)>,
    writer: impl Write,
) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for (conv_id, p) in records {
        let rec = PartitionRecord {
            conv_id: conv_id.to_string(),
            assignment: p.labels().to_vec(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io("<partitions>", e))?;
    }
    w.flush().map_err(|e| Error::io("<partitions>", e))
}
