//! Multi-party response selection on top of disentangled sessions.
//!
//! Each session is pooled with self-attention into `v_{T^k}`; the candidate
//! attends over sessions with `s_k = v_{T^k} · v_m`, `w = softmax(s)`,
//! `v_C = Σ w_k v_{T^k}`, and is scored `S = v_C · v_m`. The flat variant
//! treats the whole context as one session.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Corpus, Message, Partition};
use crate::encoder::{
    bce_with_logit, dot, sigmoid, softmax, Checkpoint, EncoderParams, Graph, GradientTape,
    ModelKind,
};
use crate::error::{Error, Result};
use crate::metrics::{hits_at_k, mrr, ranked_flags};
use crate::pair_model::{CrossConversationSampler, MsgRef};
use crate::train::{fit, BatchStats, TrainConfig, TrainReport};
use crate::vocab::Vocab;

pub const DEFAULT_CANDIDATES: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct RespselModel {
    pub vocab: Vocab,
    pub encoder: EncoderParams,
}

/// Score and its intermediate values for one candidate.
#[derive(Clone, Debug)]
pub struct SessionAttention {
    pub session_scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
    pub score: f64,
}

/// Attention over session vectors for candidate vector `vm`.
pub fn attend(sessions: &[&[f64]], vm: &[f64]) -> SessionAttention {
    let session_scores: Vec<f64> = sessions.iter().map(|v| dot(v, vm)).collect();
    let weights = softmax(&session_scores);
    let mut context = vec![0.0; vm.len()];
    for (v, &w) in sessions.iter().zip(&weights) {
        for (c, x) in context.iter_mut().zip(v.iter()) {
            *c += w * x;
        }
    }
    let score = dot(&context, vm);
    SessionAttention {
        session_scores,
        weights,
        context,
        score,
    }
}

impl RespselModel {
    pub fn new(vocab: Vocab, dim: usize, seed: u64) -> Self {
        let encoder = EncoderParams::init(vocab.size(), dim, seed);
        RespselModel { vocab, encoder }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let ckpt = ckpt.expect_kind(ModelKind::Respsel)?;
        Ok(RespselModel {
            vocab: ckpt.vocab,
            encoder: ckpt.encoder,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(ModelKind::Respsel, self.vocab.clone(), self.encoder.clone())
    }

    fn session_vector(&self, session: &[&Message]) -> Result<Vec<f64>> {
        if session.is_empty() {
            return Err(Error::invalid("empty session"));
        }
        let vs = session
            .iter()
            .map(|m| self.encoder.encode_message(&self.vocab.message_ids(m)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.encoder.encode_session(&vs)?.out)
    }

    pub fn score_response(&self, sessions: &[Vec<&Message>], candidate: &Message) -> Result<f64> {
        if sessions.is_empty() {
            return Err(Error::invalid("no sessions to score against"));
        }
        let vs = sessions
            .iter()
            .map(|s| self.session_vector(s))
            .collect::<Result<Vec<_>>>()?;
        let vm = self.encoder.encode_message(&self.vocab.message_ids(candidate))?;
        let refs: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
        Ok(attend(&refs, &vm).score)
    }

    pub fn score_flat(&self, conv: &Conversation, candidate: &Message) -> Result<f64> {
        let all: Vec<&Message> = conv.messages.iter().collect();
        self.score_response(&[all], candidate)
    }

    /// Scores every candidate of an instance with the sessions of `partition`.
    pub fn score_candidates(&self, inst: &RespSelInstance, partition: &Partition) -> Result<Vec<f64>> {
        check_partition(inst, partition)?;
        let vectors = inst
            .context
            .messages
            .iter()
            .map(|m| self.encoder.encode_message(&self.vocab.message_ids(m)))
            .collect::<Result<Vec<_>>>()?;
        let sessions: Vec<Vec<f64>> = partition
            .sessions()
            .iter()
            .map(|s| {
                let refs: Vec<&[f64]> = s.iter().map(|&j| vectors[j].as_slice()).collect();
                self.encoder.session_forward(&refs).out
            })
            .collect();
        let refs: Vec<&[f64]> = sessions.iter().map(Vec::as_slice).collect();
        inst.candidates
            .iter()
            .map(|c| {
                let vm = self.encoder.encode_message(&self.vocab.message_ids(c))?;
                Ok(attend(&refs, &vm).score)
            })
            .collect()
    }
}

fn check_partition(inst: &RespSelInstance, partition: &Partition) -> Result<()> {
    if partition.len() != inst.context.len() || partition.is_empty() {
        return Err(Error::Mismatch(format!(
            "partition covers {} messages, context of {} has {}",
            partition.len(),
            inst.context.conv_id,
            inst.context.len()
        )));
    }
    Ok(())
}

/// Which sessions feed the scorer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionSource {
    /// The whole context as one session.
    None,
    Predicted,
    Gold,
}

impl std::str::FromStr for PartitionSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PartitionSource::None),
            "predicted" => Ok(PartitionSource::Predicted),
            "gold" => Ok(PartitionSource::Gold),
            _ => Err(Error::Config(format!("unknown partition source {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RespSelInstance {
    /// The conversation with the held-out response removed.
    pub context: Conversation,
    /// Position of the held-out response in the original conversation.
    pub held_out: usize,
    pub candidates: Vec<Message>,
    pub gold_index: usize,
}

/// One instance per conversation: the last message of a random gold session
/// with at least two messages is held out as the gold response, and
/// `n_candidates − 1` distractors are drawn from other conversations. The
/// gold slot is random. Conversations without such a session are skipped.
pub fn build_respsel_dataset(
    corpus: &Corpus,
    n_candidates: usize,
    seed: u64,
) -> Result<Vec<RespSelInstance>> {
    if n_candidates < 2 {
        return Err(Error::Config("response selection needs at least two candidates".into()));
    }
    let sampler = CrossConversationSampler::new(corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (c, conv) in corpus.conversations.iter().enumerate() {
        let gold = conv.gold()?;
        let eligible: Vec<Vec<usize>> = gold.sessions().into_iter().filter(|s| s.len() >= 2).collect();
        if eligible.is_empty() {
            continue;
        }
        let session = &eligible[rng.gen_range(0..eligible.len())];
        let held_out = *session.last().expect("non-empty session");
        let mut candidates = Vec::with_capacity(n_candidates);
        while candidates.len() < n_candidates - 1 {
            if let MsgRef::Corpus { conv, pos } = sampler.sample_outside(c, &mut rng) {
                candidates.push(corpus.conversations[conv].messages[pos].clone());
            }
        }
        let gold_index = rng.gen_range(0..n_candidates);
        candidates.insert(gold_index, conv.messages[held_out].clone());
        out.push(RespSelInstance {
            context: conv.without(&[held_out]),
            held_out,
            candidates,
            gold_index,
        });
    }
    if out.is_empty() {
        return Err(Error::invalid("no conversation has a session with two or more messages"));
    }
    Ok(out)
}

/// Sessions for each instance under a partition source. `predicted` is
/// consulted only for [`PartitionSource::Predicted`] and must be aligned
/// with `instances`.
pub fn instance_partitions(
    instances: &[RespSelInstance],
    source: PartitionSource,
    predicted: Option<&[Partition]>,
) -> Result<Vec<Partition>> {
    match source {
        PartitionSource::None => Ok(instances.iter().map(|i| Partition::single(i.context.len())).collect()),
        PartitionSource::Gold => instances.iter().map(|i| i.context.gold().cloned()).collect(),
        PartitionSource::Predicted => {
            let p = predicted.ok_or_else(|| Error::Config("predicted partitions required".into()))?;
            if p.len() != instances.len() {
                return Err(Error::Mismatch(format!(
                    "{} predicted partitions for {} instances",
                    p.len(),
                    instances.len()
                )));
            }
            Ok(p.to_vec())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Key {
    Context(usize, usize),
    Candidate(usize, usize),
}

struct Indexed {
    context: Vec<Vec<Vec<u32>>>,
    candidates: Vec<Vec<Vec<u32>>>,
    sessions: Vec<Vec<Vec<usize>>>,
}

impl Indexed {
    fn new(vocab: &Vocab, instances: &[RespSelInstance], partitions: &[Partition]) -> Self {
        Indexed {
            context: instances
                .iter()
                .map(|i| i.context.messages.iter().map(|m| vocab.message_ids(m)).collect())
                .collect(),
            candidates: instances
                .iter()
                .map(|i| i.candidates.iter().map(|m| vocab.message_ids(m)).collect())
                .collect(),
            sessions: partitions.iter().map(Partition::sessions).collect(),
        }
    }
}

fn respsel_batch_grad(
    params: &EncoderParams,
    ix: &Indexed,
    instances: &[RespSelInstance],
    batch: &[usize],
    tape: &mut GradientTape,
) -> BatchStats {
    let mut graph: Graph<Key> = Graph::new(params);
    let mut stats = BatchStats::default();
    for &k in batch {
        let sessions: Vec<Vec<usize>> = ix.sessions[k]
            .iter()
            .map(|s| s.iter().map(|&p| graph.message(Key::Context(k, p), &ix.context[k][p])).collect())
            .collect();
        let acts: Vec<_> = sessions.iter().map(|s| graph.session(s)).collect();
        let mut d_sessions: Vec<Vec<f64>> = vec![vec![0.0; params.dim]; sessions.len()];
        for (j, ids) in ix.candidates[k].iter().enumerate() {
            let cand = graph.message(Key::Candidate(k, j), ids);
            let vm = graph.vector(cand).to_vec();
            let refs: Vec<&[f64]> = acts.iter().map(|a| a.out.as_slice()).collect();
            let att = attend(&refs, &vm);
            let label = j == instances[k].gold_index;
            let y = f64::from(u8::from(label));
            stats.loss += bce_with_logit(att.score, y);
            stats.count += 1;
            stats.correct += usize::from((sigmoid(att.score) >= 0.5) == label);
            let g = sigmoid(att.score) - y;
            // dS/ds_k = w_k (s_k − S)
            let ds: Vec<f64> = att
                .weights
                .iter()
                .zip(&att.session_scores)
                .map(|(w, s)| w * (s - att.score))
                .collect();
            let mut d_vm = att.context.clone();
            for (k2, r) in refs.iter().enumerate() {
                for (d, x) in d_vm.iter_mut().zip(r.iter()) {
                    *d += ds[k2] * x;
                }
                let coef = g * (att.weights[k2] + ds[k2]);
                for (d, x) in d_sessions[k2].iter_mut().zip(&vm) {
                    *d += coef * x;
                }
            }
            graph.add_grad(cand, &d_vm, g);
        }
        for ((s, act), d) in sessions.iter().zip(&acts).zip(&d_sessions) {
            graph.backward_session(s, act, d, tape);
        }
    }
    graph.finish(tape);
    stats
}

/// Binary cross-entropy on `σ(S)` over every candidate of every instance,
/// with sessions taken from `partitions`.
pub fn train_respsel(
    model: &mut RespselModel,
    instances: &[RespSelInstance],
    partitions: &[Partition],
    config: &TrainConfig,
) -> Result<TrainReport> {
    if instances.len() != partitions.len() {
        return Err(Error::Mismatch(format!(
            "{} partitions for {} instances",
            partitions.len(),
            instances.len()
        )));
    }
    for (i, p) in instances.iter().zip(partitions) {
        check_partition(i, p)?;
    }
    let ix = Indexed::new(&model.vocab, instances, partitions);
    let groups: Vec<Vec<usize>> = (0..instances.len()).map(|i| vec![i]).collect();
    fit(&mut model.encoder, &groups, config, |params, batch, tape| {
        respsel_batch_grad(params, &ix, instances, batch, tape)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RespselReport {
    pub hits_at_1: f64,
    pub hits_at_2: f64,
    pub hits_at_5: f64,
    pub mrr: f64,
    pub instances: usize,
}

/// Ranks candidates by score (ties by candidate order) and reports
/// Hits@{1,2,5} and MRR, ×100.
pub fn evaluate_respsel(
    model: &RespselModel,
    instances: &[RespSelInstance],
    partitions: &[Partition],
) -> Result<RespselReport> {
    if instances.len() != partitions.len() {
        return Err(Error::Mismatch("partitions and instances differ in length".into()));
    }
    let ranked = instances
        .iter()
        .zip(partitions)
        .map(|(inst, p)| ranked_flags(&model.score_candidates(inst, p)?, inst.gold_index))
        .collect::<Result<Vec<_>>>()?;
    Ok(RespselReport {
        hits_at_1: hits_at_k(&ranked, 1)?,
        hits_at_2: hits_at_k(&ranked, 2)?,
        hits_at_5: hits_at_k(&ranked, 5)?,
        mrr: mrr(&ranked)?,
        instances: instances.len(),
    })
}

#[derive(Serialize, Deserialize)]
struct RawInstance {
    conv_id: String,
    held_out: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    partition: Option<Vec<usize>>,
    candidates: Vec<String>,
    gold_index: usize,
}

pub fn write_respsel_dataset(
    instances: &[RespSelInstance],
    partitions: Option<&[Partition]>,
    writer: impl Write,
) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for (k, inst) in instances.iter().enumerate() {
        let raw = RawInstance {
            conv_id: inst.context.conv_id.clone(),
            held_out: inst.held_out,
            partition: partitions.map(|p| p[k].labels().to_vec()),
            candidates: inst.candidates.iter().map(|m| m.text.clone()).collect(),
            gold_index: inst.gold_index,
        };
        serde_json::to_writer(&mut w, &raw)?;
        w.write_all(b"\n").map_err(|e| Error::io("<respsel>", e))?;
    }
    w.flush().map_err(|e| Error::io("<respsel>", e))
}

/// Reads instances written by [`write_respsel_dataset`], resolving contexts
/// against `corpus`. Returns the stored partitions when every line has one.
pub fn read_respsel_dataset(
    corpus: &Corpus,
    reader: impl Read,
) -> Result<(Vec<RespSelInstance>, Option<Vec<Partition>>)> {
    let by_id = corpus.index_by_id();
    let mut instances = Vec::new();
    let mut partitions = Vec::new();
    let mut all_partitions = true;
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let err = |message: String| Error::Parse {
            line: idx + 1,
            message,
        };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawInstance = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let conv = by_id
            .get(raw.conv_id.as_str())
            .map(|&c| &corpus.conversations[c])
            .ok_or_else(|| err(format!("unknown conversation {}", raw.conv_id)))?;
        if raw.held_out >= conv.len() || conv.len() < 2 {
            return Err(err(format!("held-out position {} invalid", raw.held_out)));
        }
        if raw.candidates.len() < 2 || raw.gold_index >= raw.candidates.len() {
            return Err(err("need at least two candidates and a valid gold index".into()));
        }
        let candidates = raw
            .candidates
            .iter()
            .enumerate()
            .map(|(j, t)| Message::new(format!("{}-cand{j}", raw.conv_id), "", t.as_str(), j))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| err(e.to_string()))?;
        let context = conv.without(&[raw.held_out]);
        match raw.partition {
            Some(labels) => {
                let p = Partition::new(labels).map_err(|e| err(e.to_string()))?;
                if p.len() != context.len() {
                    return Err(err("partition does not cover the context".into()));
                }
                partitions.push(p);
            }
            None => all_partitions = false,
        }
        instances.push(RespSelInstance {
            context,
            held_out: raw.held_out,
            candidates,
            gold_index: raw.gold_index,
        });
    }
    Ok((instances, all_partitions.then_some(partitions).filter(|p| !p.is_empty())))
}
