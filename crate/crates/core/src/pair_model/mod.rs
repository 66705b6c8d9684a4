//! Message-pair classifier: `p(a, b) = σ(v_a · v_b)`, the probability that two
//! messages belong to the same session.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Corpus, Message, TopicReplyGenerator};
use crate::encoder::{
    bce_with_logit, dot, probability, sigmoid, Checkpoint, EncoderParams, Graph, GradientTape,
    ModelKind,
};
use crate::error::{Error, Result};
use crate::train::{fit, BatchStats, TrainConfig, TrainReport};
use crate::vocab::Vocab;

/// Ratio of retrieved negatives to positives (937K : 2,184K).
pub const DEFAULT_PAIR_NEGATIVE_RATIO: f64 = 2.33;

#[derive(Clone, Debug, PartialEq)]
pub struct PairModel {
    pub vocab: Vocab,
    pub encoder: EncoderParams,
}

impl PairModel {
    pub fn new(vocab: Vocab, dim: usize, seed: u64) -> Self {
        let encoder = EncoderParams::init(vocab.size(), dim, seed);
        PairModel { vocab, encoder }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let ckpt = ckpt.expect_kind(ModelKind::Pair)?;
        Ok(PairModel {
            vocab: ckpt.vocab,
            encoder: ckpt.encoder,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(ModelKind::Pair, self.vocab.clone(), self.encoder.clone())
    }

    pub fn encode(&self, m: &Message) -> Result<Vec<f64>> {
        self.encoder.encode_message(&self.vocab.message_ids(m))
    }

    pub fn pair_prob(&self, a: &Message, b: &Message) -> Result<f64> {
        Ok(probability(dot(&self.encode(a)?, &self.encode(b)?)))
    }

    /// Message vectors of a whole conversation.
    pub fn encode_conversation(&self, conv: &Conversation) -> Vec<Vec<f64>> {
        conv.messages
            .iter()
            .map(|m| self.encoder.message_forward(&self.vocab.message_ids(m)).out)
            .collect()
    }

    /// Symmetric matrix of pair probabilities; the diagonal is left at 0.
    pub fn prob_matrix(&self, conv: &Conversation) -> Vec<Vec<f64>> {
        prob_matrix_from_vectors(&self.encode_conversation(conv))
    }
}

pub fn prob_matrix_from_vectors(vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = vs.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..i {
            let p = probability(dot(&vs[i], &vs[j]));
            out[i][j] = p;
            out[j][i] = p;
        }
    }
    out
}

/// A message inside a corpus, or one owned by the dataset (generated replies).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MsgRef {
    Corpus { conv: usize, pos: usize },
    Extra(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSource {
    Ret,
    Gen,
    Harvested,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairInstance {
    pub a: MsgRef,
    pub b: MsgRef,
    pub label: bool,
    pub src: PairSource,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairDataset {
    pub instances: Vec<PairInstance>,
    /// Messages referenced by [`MsgRef::Extra`].
    pub extra: Vec<Message>,
}

impl PairDataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.instances.iter().filter(|i| i.label).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    pub fn count_source(&self, src: PairSource) -> usize {
        self.instances.iter().filter(|i| i.src == src).count()
    }

    pub fn message<'a>(&'a self, corpus: &'a Corpus, r: MsgRef) -> &'a Message {
        match r {
            MsgRef::Corpus { conv, pos } => &corpus.conversations[conv].messages[pos],
            MsgRef::Extra(i) => &self.extra[i],
        }
    }

    /// Appends `other`, re-basing its extra-message references.
    pub fn extend(&mut self, other: PairDataset) {
        let base = self.extra.len();
        let shift = |r: MsgRef| match r {
            MsgRef::Extra(i) => MsgRef::Extra(i + base),
            c => c,
        };
        self.extra.extend(other.extra);
        self.instances
            .extend(other.instances.into_iter().map(|inst| PairInstance {
                a: shift(inst.a),
                b: shift(inst.b),
                ..inst
            }));
    }

    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        for inst in &self.instances {
            if inst.a == inst.b {
                return Err(Error::invalid(format!("pair {:?} pairs a message with itself", inst.a)));
            }
            for r in [inst.a, inst.b] {
                let ok = match r {
                    MsgRef::Corpus { conv, pos } => corpus
                        .conversations
                        .get(conv)
                        .is_some_and(|c| pos < c.len()),
                    MsgRef::Extra(i) => i < self.extra.len(),
                };
                if !ok {
                    return Err(Error::invalid(format!("dangling message reference {r:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, corpus: &Corpus, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for inst in &self.instances {
            let rec = RawPair {
                a: self.raw_ref(corpus, inst.a),
                b: self.raw_ref(corpus, inst.b),
                label: u8::from(inst.label),
                src: inst.src,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io("<pairs>", e))?;
        }
        w.flush().map_err(|e| Error::io("<pairs>", e))
    }

    fn raw_ref(&self, corpus: &Corpus, r: MsgRef) -> RawRef {
        match r {
            MsgRef::Corpus { conv, pos } => RawRef::Corpus {
                conv_id: corpus.conversations[conv].conv_id.clone(),
                pos,
            },
            MsgRef::Extra(i) => RawRef::Text {
                text: self.extra[i].text.clone(),
                speaker: self.extra[i].speaker.clone(),
            },
        }
    }

    pub fn read_jsonl(corpus: &Corpus, reader: impl Read) -> Result<Self> {
        let by_id = corpus.index_by_id();
        let mut ds = PairDataset::default();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawPair = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            if raw.label > 1 {
                return Err(err(format!("label must be 0 or 1, got {}", raw.label)));
            }
            let mut resolve = |r: RawRef| -> Result<MsgRef> {
                match r {
                    RawRef::Corpus { conv_id, pos } => {
                        let conv = *by_id
                            .get(conv_id.as_str())
                            .ok_or_else(|| err(format!("unknown conversation {conv_id}")))?;
                        Ok(MsgRef::Corpus { conv, pos })
                    }
                    RawRef::Text { text, speaker } => {
                        let k = ds.extra.len();
                        let m = Message::new(format!("extra-{k}"), speaker, text, 0)
                            .map_err(|e| err(e.to_string()))?;
                        ds.extra.push(m);
                        Ok(MsgRef::Extra(k))
                    }
                }
            };
            let a = resolve(raw.a)?;
            let b = resolve(raw.b)?;
            ds.instances.push(PairInstance {
                a,
                b,
                label: raw.label == 1,
                src: raw.src,
            });
        }
        ds.validate(corpus)?;
        Ok(ds)
    }
}

#[derive(Serialize, Deserialize)]
struct RawPair {
    a: RawRef,
    b: RawRef,
    label: u8,
    src: PairSource,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawRef {
    Corpus { conv_id: String, pos: usize },
    Text { text: String, speaker: String },
}

/// Uniform sampler over ordered message pairs drawn from two different
/// conversations.
pub(crate) struct CrossConversationSampler {
    offsets: Vec<usize>,
    total: usize,
}

impl CrossConversationSampler {
    pub(crate) fn new(corpus: &Corpus) -> Result<Self> {
        if corpus.len() < 2 {
            return Err(Error::invalid(
                "negative sampling needs at least two conversations",
            ));
        }
        let mut offsets = Vec::with_capacity(corpus.len() + 1);
        let mut total = 0;
        for c in &corpus.conversations {
            offsets.push(total);
            total += c.len();
        }
        offsets.push(total);
        Ok(CrossConversationSampler { offsets, total })
    }

    fn locate(&self, g: usize) -> (usize, usize) {
        let conv = self.offsets.partition_point(|&o| o <= g) - 1;
        (conv, g - self.offsets[conv])
    }

    pub(crate) fn conv_len(&self, conv: usize) -> usize {
        self.offsets[conv + 1] - self.offsets[conv]
    }

    /// A uniformly random message, then a uniformly random message from any
    /// other conversation.
    pub(crate) fn sample(&self, rng: &mut ChaCha8Rng) -> (MsgRef, MsgRef) {
        loop {
            let (c1, p1) = self.locate(rng.gen_range(0..self.total));
            let others = self.total - self.conv_len(c1);
            if others == 0 {
                continue;
            }
            let mut g = rng.gen_range(0..others);
            if g >= self.offsets[c1] {
                g += self.conv_len(c1);
            }
            let (c2, p2) = self.locate(g);
            return (
                MsgRef::Corpus { conv: c1, pos: p1 },
                MsgRef::Corpus { conv: c2, pos: p2 },
            );
        }
    }

    /// A uniformly random conversation and a uniformly random message from
    /// any other conversation.
    pub(crate) fn sample_conversation_and_message(&self, rng: &mut ChaCha8Rng) -> (usize, MsgRef) {
        let n_convs = self.offsets.len() - 1;
        loop {
            let c1 = rng.gen_range(0..n_convs);
            if self.total > self.conv_len(c1) {
                return (c1, self.sample_outside(c1, rng));
            }
        }
    }

    /// A uniformly random message outside conversation `conv`, which must not
    /// hold every message of the corpus.
    pub(crate) fn sample_outside(&self, conv: usize, rng: &mut ChaCha8Rng) -> MsgRef {
        let mut g = rng.gen_range(0..self.total - self.conv_len(conv));
        if g >= self.offsets[conv] {
            g += self.conv_len(conv);
        }
        let (c, pos) = self.locate(g);
        MsgRef::Corpus { conv: c, pos }
    }
}

/// Positions of each speaker's messages, speakers in order of first message.
pub(crate) fn speaker_positions(conv: &Conversation) -> Vec<Vec<usize>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for m in &conv.messages {
        let next = index.len();
        let k = *index.entry(m.speaker.as_str()).or_insert(next);
        if k == out.len() {
            out.push(Vec::new());
        }
        out[k].push(m.position);
    }
    out
}

/// Retrieved pseudo pairs: every same-speaker pair within a conversation is a
/// positive; negatives pair messages from different conversations, drawn
/// uniformly, `negatives_per_positive` per positive (rounded).
pub fn build_pseudo_pairs_ret(
    corpus: &Corpus,
    negatives_per_positive: f64,
    seed: u64,
) -> Result<PairDataset> {
    if !(negatives_per_positive >= 0.0) {
        return Err(Error::Config("negatives_per_positive must be non-negative".into()));
    }
    let sampler = CrossConversationSampler::new(corpus)?;
    let mut ds = PairDataset::default();
    for (c, conv) in corpus.conversations.iter().enumerate() {
        for positions in speaker_positions(conv) {
            for (k, &i) in positions.iter().enumerate() {
                for &j in &positions[k + 1..] {
                    ds.instances.push(PairInstance {
                        a: MsgRef::Corpus { conv: c, pos: i },
                        b: MsgRef::Corpus { conv: c, pos: j },
                        label: true,
                        src: PairSource::Ret,
                    });
                }
            }
        }
    }
    let n_neg = (ds.instances.len() as f64 * negatives_per_positive).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_neg {
        let (a, b) = sampler.sample(&mut rng);
        ds.instances.push(PairInstance {
            a,
            b,
            label: false,
            src: PairSource::Ret,
        });
    }
    Ok(ds)
}

/// Produces a direct on-topic reply to a message.
pub trait ReplyGenerator {
    fn reply(&mut self, message: &Message) -> Result<String>;
}

impl ReplyGenerator for TopicReplyGenerator {
    fn reply(&mut self, message: &Message) -> Result<String> {
        Ok(self.reply_tokens(&message.tokens)?.join(" "))
    }
}

/// Adds `(message, generated reply)` positives for `n_messages` corpus
/// messages picked at random without replacement. Generator failures are
/// logged and skipped.
pub fn augment_generated(
    dataset: &PairDataset,
    corpus: &Corpus,
    generator: &mut dyn ReplyGenerator,
    n_messages: usize,
    seed: u64,
) -> PairDataset {
    let mut out = dataset.clone();
    let all: Vec<(usize, usize)> = corpus
        .conversations
        .iter()
        .enumerate()
        .flat_map(|(c, conv)| (0..conv.len()).map(move |p| (c, p)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, all.len(), n_messages.min(all.len()));
    for g in picks.iter() {
        let (conv, pos) = all[g];
        let source = &corpus.conversations[conv].messages[pos];
        let reply = generator
            .reply(source)
            .and_then(|text| Message::new(format!("gen-{}", out.extra.len()), "generated", text, 0));
        match reply {
            Ok(m) => {
                out.extra.push(m);
                out.instances.push(PairInstance {
                    a: MsgRef::Corpus { conv, pos },
                    b: MsgRef::Extra(out.extra.len() - 1),
                    label: true,
                    src: PairSource::Gen,
                });
            }
            Err(e) => log::warn!("reply generation failed for {}: {e}", source.id),
        }
    }
    out
}

/// Token ids for every corpus message and every extra message of a dataset.
pub(crate) struct IndexedPairs {
    pub corpus: Vec<Vec<Vec<u32>>>,
    pub extra: Vec<Vec<u32>>,
}

impl IndexedPairs {
    pub(crate) fn new(vocab: &Vocab, corpus: &Corpus, ds: &PairDataset) -> Self {
        IndexedPairs {
            corpus: vocab.index_corpus(corpus),
            extra: ds.extra.iter().map(|m| vocab.message_ids(m)).collect(),
        }
    }

    pub(crate) fn ids(&self, r: MsgRef) -> &[u32] {
        match r {
            MsgRef::Corpus { conv, pos } => &self.corpus[conv][pos],
            MsgRef::Extra(i) => &self.extra[i],
        }
    }
}

/// Summed cross-entropy of `batch` with gradients added to `tape`.
pub(crate) fn pair_batch_grad(
    params: &EncoderParams,
    ds: &PairDataset,
    ids: &IndexedPairs,
    batch: &[usize],
    tape: &mut GradientTape,
) -> BatchStats {
    let mut graph: Graph<MsgRef> = Graph::new(params);
    let mut stats = BatchStats::default();
    for &k in batch {
        let inst = &ds.instances[k];
        let a = graph.message(inst.a, ids.ids(inst.a));
        let b = graph.message(inst.b, ids.ids(inst.b));
        let x = graph.pair_logit(a, b);
        let y = f64::from(u8::from(inst.label));
        stats.loss += bce_with_logit(x, y);
        stats.correct += usize::from((sigmoid(x) >= 0.5) == inst.label);
        stats.count += 1;
        graph.backward_pair_logit(a, b, sigmoid(x) - y);
    }
    graph.finish(tape);
    stats
}

/// Mean cross-entropy over the whole dataset, forward only.
pub fn pair_dataset_loss(model: &PairModel, corpus: &Corpus, ds: &PairDataset) -> f64 {
    let ids = IndexedPairs::new(&model.vocab, corpus, ds);
    let total: f64 = ds
        .instances
        .iter()
        .map(|inst| {
            let va = model.encoder.message_forward(ids.ids(inst.a)).out;
            let vb = model.encoder.message_forward(ids.ids(inst.b)).out;
            bce_with_logit(dot(&va, &vb), f64::from(u8::from(inst.label)))
        })
        .sum();
    total / ds.len().max(1) as f64
}

/// Mean cross-entropy over the dataset and its gradient.
pub fn pair_loss_gradient(model: &PairModel, corpus: &Corpus, ds: &PairDataset) -> (f64, GradientTape) {
    let ids = IndexedPairs::new(&model.vocab, corpus, ds);
    let mut tape = GradientTape::for_params(&model.encoder);
    let all: Vec<usize> = (0..ds.len()).collect();
    let stats = pair_batch_grad(&model.encoder, ds, &ids, &all, &mut tape);
    let n = stats.count.max(1) as f64;
    tape.scale(1.0 / n);
    (stats.loss / n, tape)
}

fn group_key(inst: &PairInstance) -> Option<usize> {
    match (inst.a, inst.b) {
        (MsgRef::Corpus { conv, .. }, _) | (_, MsgRef::Corpus { conv, .. }) => Some(conv),
        _ => None,
    }
}

/// Mini-batch Adam on binary cross-entropy.
pub fn train_pair(
    model: &mut PairModel,
    corpus: &Corpus,
    dataset: &PairDataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    let pos = dataset.positives();
    if pos == 0 || pos == dataset.len() {
        return Err(Error::invalid("pair training needs both positive and negative instances"));
    }
    dataset.validate(corpus)?;
    let ids = IndexedPairs::new(&model.vocab, corpus, dataset);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); corpus.len() + 1];
    for (k, inst) in dataset.instances.iter().enumerate() {
        groups[group_key(inst).unwrap_or(corpus.len())].push(k);
    }
    groups.retain(|g| !g.is_empty());
    fit(&mut model.encoder, &groups, config, |params, batch, tape| {
        pair_batch_grad(params, dataset, &ids, batch, tape)
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfScores {
    /// Precision, recall and F1 from counts; each is 0 when undefined.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        PrfScores {
            precision,
            recall,
            f1,
        }
    }

    pub fn from_predictions(predicted: &[bool], gold: &[bool]) -> Self {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for (&p, &g) in predicted.iter().zip(gold) {
            match (p, g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        PrfScores::from_counts(tp, fp, fn_)
    }
}

/// Positive-class precision/recall/F1 at threshold 0.5.
pub fn eval_pair_f1(model: &PairModel, corpus: &Corpus, labelled: &PairDataset) -> PrfScores {
    let ids = IndexedPairs::new(&model.vocab, corpus, labelled);
    let mut cache: HashMap<MsgRef, Vec<f64>> = HashMap::new();
    let mut vec_of = |r: MsgRef| -> Vec<f64> {
        cache
            .entry(r)
            .or_insert_with(|| model.encoder.message_forward(ids.ids(r)).out)
            .clone()
    };
    let mut predicted = Vec::with_capacity(labelled.len());
    let mut gold = Vec::with_capacity(labelled.len());
    for inst in &labelled.instances {
        let x = dot(&vec_of(inst.a), &vec_of(inst.b));
        predicted.push(sigmoid(x) >= 0.5);
        gold.push(inst.label);
    }
    PrfScores::from_predictions(&predicted, &gold)
}

/// Every within-conversation message pair labelled by the gold partition.
pub fn gold_pairs(corpus: &Corpus) -> Result<PairDataset> {
    let mut ds = PairDataset::default();
    for (c, conv) in corpus.conversations.iter().enumerate() {
        let gold = conv.gold()?;
        for j in 0..conv.len() {
            for i in 0..j {
                ds.instances.push(PairInstance {
                    a: MsgRef::Corpus { conv: c, pos: i },
                    b: MsgRef::Corpus { conv: c, pos: j },
                    label: gold.same_session(i, j),
                    src: PairSource::Ret,
                });
            }
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests;
