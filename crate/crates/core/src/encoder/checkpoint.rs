use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EncoderParams;
use crate::error::{Error, Result};
use crate::vocab::Vocab;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "disentangle-checkpoint";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Pair,
    Session,
    Respsel,
}

/// JSON checkpoint. Parameters are 64-bit floats written in shortest
/// round-trip form, so save/load is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub vocab: Vocab,
    pub encoder: EncoderParams,
}

impl Checkpoint {
    pub fn new(kind: ModelKind, vocab: Vocab, encoder: EncoderParams) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            kind,
            vocab,
            encoder,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        ckpt.check()?;
        Ok(ckpt)
    }

    pub fn check(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        if self.vocab.size() != self.encoder.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} rows but encoder expects {}",
                self.vocab.size(),
                self.encoder.vocab_size
            )));
        }
        self.encoder.validate()
    }

    pub fn expect_kind(self, kind: ModelKind) -> Result<Self> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.kind
            )));
        }
        Ok(self)
    }
}
