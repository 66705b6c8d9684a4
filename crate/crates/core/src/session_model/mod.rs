//! Session classifier: `p_t(T, m) = σ(v_T · v_m)` with `v_T` the
//! self-attention pooling of the session's message vectors, plus the
//! end-to-end disentangler that applies it message by message.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Corpus, Message, Partition};
use crate::cotrain::{Episode, SessionChoice, Step};
use crate::encoder::{
    bce_with_logit, dot, log_sigmoid, probability, sigmoid, Checkpoint, EncoderParams, Graph,
    GradientTape, ModelKind,
};
use crate::error::{Error, Result};
use crate::pair_model::{speaker_positions, CrossConversationSampler, MsgRef};
use crate::train::{fit, BatchStats, TrainConfig, TrainReport};
use crate::vocab::Vocab;

/// Ratio of negatives to positives in the session pseudo data (460K : 1,158K).
pub const DEFAULT_SESSION_NEGATIVE_RATIO: f64 = 2.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SessionModel {
    pub vocab: Vocab,
    pub encoder: EncoderParams,
}

impl SessionModel {
    pub fn new(vocab: Vocab, dim: usize, seed: u64) -> Self {
        let encoder = EncoderParams::init(vocab.size(), dim, seed);
        SessionModel { vocab, encoder }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let ckpt = ckpt.expect_kind(ModelKind::Session)?;
        Ok(SessionModel {
            vocab: ckpt.vocab,
            encoder: ckpt.encoder,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(ModelKind::Session, self.vocab.clone(), self.encoder.clone())
    }

    pub fn session_prob(&self, context: &[&Message], m: &Message) -> Result<f64> {
        if context.is_empty() {
            return Err(Error::invalid("session context is empty"));
        }
        let vs = context
            .iter()
            .map(|c| self.encoder.encode_message(&self.vocab.message_ids(c)))
            .collect::<Result<Vec<_>>>()?;
        let vm = self.encoder.encode_message(&self.vocab.message_ids(m))?;
        let session = self.encoder.encode_session(&vs)?;
        Ok(probability(dot(&session.out, &vm)))
    }

    pub fn encode_conversation(&self, conv: &Conversation) -> Vec<Vec<f64>> {
        conv.messages
            .iter()
            .map(|m| self.encoder.message_forward(&self.vocab.message_ids(m)).out)
            .collect()
    }

    /// Logit of "message `cand` belongs to the session over `members`".
    pub(crate) fn logit_from_vectors(&self, vectors: &[Vec<f64>], members: &[usize], cand: usize) -> f64 {
        let refs: Vec<&[f64]> = members.iter().map(|&j| vectors[j].as_slice()).collect();
        dot(&self.encoder.session_forward(&refs).out, &vectors[cand])
    }

    /// Argmax disentanglement of one conversation.
    pub fn disentangle(&self, conv: &Conversation) -> Partition {
        disentangle_e2e(self, conv, DecodeMode::Argmax).0
    }
}

/// One D_t instance: the first `context_len` messages of conversation `conv`
/// as session context, and a candidate message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInstance {
    pub conv: usize,
    pub context_len: usize,
    pub candidate: (usize, usize),
    pub label: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionDataset {
    pub instances: Vec<SessionInstance>,
}

impl SessionDataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.instances.iter().filter(|i| i.label).count()
    }

    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        for inst in &self.instances {
            let conv = corpus
                .conversations
                .get(inst.conv)
                .ok_or_else(|| Error::invalid(format!("unknown conversation index {}", inst.conv)))?;
            if inst.context_len == 0 || inst.context_len > conv.len() {
                return Err(Error::invalid(format!(
                    "context length {} invalid for conversation {}",
                    inst.context_len, conv.conv_id
                )));
            }
            let (c, p) = inst.candidate;
            if corpus.conversations.get(c).map_or(true, |cc| p >= cc.len()) {
                return Err(Error::invalid(format!("dangling candidate {c}/{p}")));
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, corpus: &Corpus, writer: impl std::io::Write) -> Result<()> {
        use std::io::Write as _;
        let mut w = std::io::BufWriter::new(writer);
        for inst in &self.instances {
            let rec = RawSessionInstance {
                conv_id: corpus.conversations[inst.conv].conv_id.clone(),
                context_len: inst.context_len,
                cand_conv_id: corpus.conversations[inst.candidate.0].conv_id.clone(),
                cand_pos: inst.candidate.1,
                label: u8::from(inst.label),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io("<sessions>", e))?;
        }
        w.flush().map_err(|e| Error::io("<sessions>", e))
    }

    pub fn read_jsonl(corpus: &Corpus, reader: impl std::io::Read) -> Result<Self> {
        use std::io::BufRead;
        let by_id = corpus.index_by_id();
        let mut ds = SessionDataset::default();
        for (idx, line) in std::io::BufReader::new(reader).lines().enumerate() {
            let err = |message: String| Error::Parse {
                line: idx + 1,
                message,
            };
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawSessionInstance =
                serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            let find = |id: &str| {
                by_id
                    .get(id)
                    .copied()
                    .ok_or_else(|| err(format!("unknown conversation {id}")))
            };
            if raw.label > 1 {
                return Err(err(format!("label must be 0 or 1, got {}", raw.label)));
            }
            ds.instances.push(SessionInstance {
                conv: find(&raw.conv_id)?,
                context_len: raw.context_len,
                candidate: (find(&raw.cand_conv_id)?, raw.cand_pos),
                label: raw.label == 1,
            });
        }
        ds.validate(corpus)?;
        Ok(ds)
    }
}

#[derive(Serialize, Deserialize)]
struct RawSessionInstance {
    conv_id: String,
    context_len: usize,
    cand_conv_id: String,
    cand_pos: usize,
    label: u8,
}

/// Session pseudo data. Each non-first message of a speaker is a positive
/// with everything before it as context; negatives pair a whole conversation
/// with a message from a different one.
pub fn build_pseudo_sessions(
    corpus: &Corpus,
    negatives_per_positive: f64,
    seed: u64,
) -> Result<SessionDataset> {
    if !(negatives_per_positive >= 0.0) {
        return Err(Error::Config("negatives_per_positive must be non-negative".into()));
    }
    let sampler = CrossConversationSampler::new(corpus)?;
    let mut ds = SessionDataset::default();
    for (c, conv) in corpus.conversations.iter().enumerate() {
        let mut positives: Vec<usize> = speaker_positions(conv)
            .into_iter()
            .flat_map(|ps| ps.into_iter().skip(1))
            .collect();
        positives.sort_unstable();
        ds.instances.extend(positives.into_iter().map(|p| SessionInstance {
            conv: c,
            context_len: p,
            candidate: (c, p),
            label: true,
        }));
    }
    let n_neg = (ds.instances.len() as f64 * negatives_per_positive).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_neg {
        let (c, m) = sampler.sample_conversation_and_message(&mut rng);
        let MsgRef::Corpus { conv, pos } = m else {
            unreachable!("sampler only returns corpus messages")
        };
        ds.instances.push(SessionInstance {
            conv: c,
            context_len: corpus.conversations[c].len(),
            candidate: (conv, pos),
            label: false,
        });
    }
    Ok(ds)
}

pub(crate) fn session_batch_grad(
    params: &EncoderParams,
    ds: &SessionDataset,
    ids: &[Vec<Vec<u32>>],
    batch: &[usize],
    tape: &mut GradientTape,
) -> BatchStats {
    let mut graph: Graph<(usize, usize)> = Graph::new(params);
    let mut stats = BatchStats::default();
    for &k in batch {
        let inst = &ds.instances[k];
        let members: Vec<usize> = (0..inst.context_len)
            .map(|p| graph.message((inst.conv, p), &ids[inst.conv][p]))
            .collect();
        let (cc, cp) = inst.candidate;
        let cand = graph.message((cc, cp), &ids[cc][cp]);
        let (x, act) = graph.session_logit(&members, cand);
        let y = f64::from(u8::from(inst.label));
        stats.loss += bce_with_logit(x, y);
        stats.correct += usize::from((sigmoid(x) >= 0.5) == inst.label);
        stats.count += 1;
        graph.backward_session_logit(&members, cand, &act, sigmoid(x) - y, tape);
    }
    graph.finish(tape);
    stats
}

/// Mean cross-entropy over the dataset, forward only.
pub fn session_dataset_loss(model: &SessionModel, corpus: &Corpus, ds: &SessionDataset) -> f64 {
    let ids = model.vocab.index_corpus(corpus);
    let enc = &model.encoder;
    let total: f64 = ds
        .instances
        .iter()
        .map(|inst| {
            let vs: Vec<Vec<f64>> = (0..inst.context_len)
                .map(|p| enc.message_forward(&ids[inst.conv][p]).out)
                .collect();
            let (cc, cp) = inst.candidate;
            let vm = enc.message_forward(&ids[cc][cp]).out;
            let session = enc.encode_session(&vs).expect("non-empty context");
            bce_with_logit(dot(&session.out, &vm), f64::from(u8::from(inst.label)))
        })
        .sum();
    total / ds.len().max(1) as f64
}

/// Mean cross-entropy over the dataset and its gradient.
pub fn session_loss_gradient(
    model: &SessionModel,
    corpus: &Corpus,
    ds: &SessionDataset,
) -> (f64, GradientTape) {
    let ids = model.vocab.index_corpus(corpus);
    let mut tape = GradientTape::for_params(&model.encoder);
    let all: Vec<usize> = (0..ds.len()).collect();
    let stats = session_batch_grad(&model.encoder, ds, &ids, &all, &mut tape);
    let n = stats.count.max(1) as f64;
    tape.scale(1.0 / n);
    (stats.loss / n, tape)
}

/// Initialises the session classifier on its pseudo data.
pub fn train_session_init(
    model: &mut SessionModel,
    corpus: &Corpus,
    dataset: &SessionDataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    let pos = dataset.positives();
    if pos == 0 || pos == dataset.len() {
        return Err(Error::invalid("session training needs both positive and negative instances"));
    }
    dataset.validate(corpus)?;
    let ids = model.vocab.index_corpus(corpus);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); corpus.len()];
    for (k, inst) in dataset.instances.iter().enumerate() {
        groups[inst.conv].push(k);
    }
    groups.retain(|g| !g.is_empty());
    fit(&mut model.encoder, &groups, config, |params, batch, tape| {
        session_batch_grad(params, dataset, &ids, batch, tape)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Open a new session when `p_t(C_i, m_i) < 0.5`, else join the best
    /// session (lowest index on ties).
    Argmax,
    /// Sample both decisions; records an [`Episode`].
    Sample { seed: u64 },
}

/// Runs the sequential session-assignment procedure over `n` messages.
///
/// `logit(members, i)` must return `v_T · v_{m_i}` for the session formed by
/// the message positions in `members`. The first message always opens
/// session 1 without consulting the policy.
pub fn assign_sessions(
    n: usize,
    mut logit: impl FnMut(&[usize], usize) -> f64,
    mode: DecodeMode,
) -> (Partition, Option<Vec<Step>>) {
    let mut labels: Vec<usize> = Vec::with_capacity(n);
    let mut sessions: Vec<Vec<usize>> = Vec::new();
    let mut steps = Vec::new();
    let mut rng = match mode {
        DecodeMode::Sample { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        DecodeMode::Argmax => None,
    };
    for i in 0..n {
        if sessions.is_empty() {
            sessions.push(vec![i]);
            labels.push(1);
            continue;
        }
        let context: Vec<usize> = (0..i).collect();
        let x_new = logit(&context, i);
        let p_join = sigmoid(x_new);
        let joined = match rng.as_mut() {
            None => p_join >= 0.5,
            Some(r) => r.gen::<f64>() < p_join,
        };
        let log_prob_new = if joined {
            log_sigmoid(x_new)
        } else {
            log_sigmoid(-x_new)
        };
        if !joined {
            sessions.push(vec![i]);
            labels.push(sessions.len());
            steps.push(Step::new(i, false, p_join, log_prob_new, None));
            continue;
        }
        let logits: Vec<f64> = sessions.iter().map(|s| logit(s, i)).collect();
        let k = match rng.as_mut() {
            None => {
                let mut best = 0;
                for (k, &x) in logits.iter().enumerate() {
                    if x > logits[best] {
                        best = k;
                    }
                }
                best
            }
            Some(r) => {
                let total: f64 = logits.iter().map(|&x| sigmoid(x)).sum();
                let mut u = r.gen::<f64>() * total;
                let mut pick = logits.len() - 1;
                for (k, &x) in logits.iter().enumerate() {
                    u -= sigmoid(x);
                    if u < 0.0 {
                        pick = k;
                        break;
                    }
                }
                pick
            }
        };
        let choice = SessionChoice::from_logits(k, &logits);
        sessions[k].push(i);
        labels.push(k + 1);
        steps.push(Step::new(i, true, p_join, log_prob_new, Some(choice)));
    }
    let partition = Partition::new(labels).expect("sessions are opened in order");
    let trace = rng.map(|_| steps);
    (partition, trace)
}

/// End-to-end disentanglement with the session classifier. In sample mode
/// the returned episode has zero rewards; see [`crate::cotrain::run_episode`].
pub fn disentangle_e2e(
    model: &SessionModel,
    conv: &Conversation,
    mode: DecodeMode,
) -> (Partition, Option<Episode>) {
    let vectors = model.encode_conversation(conv);
    let (partition, steps) = assign_sessions(
        conv.len(),
        |members, i| model.logit_from_vectors(&vectors, members, i),
        mode,
    );
    let episode = steps.map(|steps| Episode {
        conv_id: conv.conv_id.clone(),
        steps,
        partition: partition.clone(),
    });
    (partition, episode)
}

#[cfg(test)]
mod tests;
