//! Seeded generator of interleaved multi-session conversations with gold
//! partitions.
//!
//! The vocabulary is split into disjoint topic word sets plus a shared
//! background (function words first, then filler). Each session of a
//! conversation picks a distinct topic and its own speakers; its messages draw
//! mostly topic words. Sessions are interleaved by a uniformly random merge
//! that keeps each session's internal order.

use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{Conversation, Corpus, Message, Partition};
use crate::error::{Error, Result};
use crate::stopwords::STOPWORDS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_conversations: usize,
    /// Inclusive range of sessions per conversation.
    pub session_count_range: (usize, usize),
    pub messages_per_session_range: (usize, usize),
    pub speakers_per_session_range: (usize, usize),
    pub message_length_range: (usize, usize),
    pub vocab_size: usize,
    pub n_topics: usize,
    pub topic_words_per_session: usize,
    /// Probability that a token is drawn from the session topic rather than
    /// the background.
    pub topic_ratio: f64,
    /// Probability that a speaker also posts in a second session.
    pub speaker_violation_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_conversations: 1000,
            session_count_range: (2, 4),
            messages_per_session_range: (3, 8),
            speakers_per_session_range: (2, 3),
            message_length_range: (4, 12),
            vocab_size: 400,
            n_topics: 12,
            topic_words_per_session: 16,
            topic_ratio: 0.8,
            speaker_violation_rate: 0.06,
            seed: 0,
        }
    }
}

fn check_range(name: &str, (lo, hi): (usize, usize)) -> Result<()> {
    if lo == 0 || lo > hi {
        return Err(Error::Config(format!("{name} must satisfy 1 <= min <= max, got {lo}..={hi}")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("session_count_range", self.session_count_range)?;
        check_range("messages_per_session_range", self.messages_per_session_range)?;
        check_range("speakers_per_session_range", self.speakers_per_session_range)?;
        check_range("message_length_range", self.message_length_range)?;
        for (name, p) in [
            ("topic_ratio", self.topic_ratio),
            ("speaker_violation_rate", self.speaker_violation_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.topic_words_per_session == 0 {
            return Err(Error::Config("topic_words_per_session must be positive".into()));
        }
        if self.n_topics < self.session_count_range.1 {
            return Err(Error::Config(format!(
                "{} topics cannot give {} sessions distinct topics",
                self.n_topics, self.session_count_range.1
            )));
        }
        let topic_words = self.n_topics * self.topic_words_per_session;
        if self.vocab_size <= topic_words {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no background words after {} topics of {} words",
                self.vocab_size, self.n_topics, self.topic_words_per_session
            )));
        }
        Ok(())
    }
}

/// Word inventory implied by a [`SynthConfig`].
#[derive(Clone, Debug)]
pub struct SynthVocab {
    pub background: Vec<String>,
    pub topics: Vec<Vec<String>>,
}

impl SynthVocab {
    pub fn new(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let topics: Vec<Vec<String>> = (0..config.n_topics)
            .map(|t| {
                (0..config.topic_words_per_session)
                    .map(|k| format!("t{t}w{k}"))
                    .collect()
            })
            .collect();
        let n_background = config.vocab_size - config.n_topics * config.topic_words_per_session;
        let background = STOPWORDS
            .iter()
            .map(|s| s.to_string())
            .chain((0..).map(|i| format!("bg{i}")))
            .take(n_background)
            .collect();
        Ok(SynthVocab { background, topics })
    }

    fn sample_message(
        &self,
        rng: &mut ChaCha8Rng,
        topic: usize,
        config: &SynthConfig,
    ) -> Vec<String> {
        let (lo, hi) = config.message_length_range;
        let len = rng.gen_range(lo..=hi);
        (0..len)
            .map(|_| {
                if rng.gen_bool(config.topic_ratio) {
                    self.topics[topic].choose(rng).unwrap().clone()
                } else {
                    self.background.choose(rng).unwrap().clone()
                }
            })
            .collect()
    }
}

struct SessionPlan {
    topic: usize,
    /// Speaker of each message in session order (speaker indices within the conversation).
    speakers: Vec<usize>,
}

/// Generates a corpus with gold partitions. Deterministic in the config,
/// including its seed.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Corpus> {
    let vocab = SynthVocab::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let conversations = (0..config.n_conversations)
        .map(|c| generate_conversation(&vocab, config, &mut rng, &format!("s{}-{c:05}", config.seed)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus::new(conversations))
}

fn generate_conversation(
    vocab: &SynthVocab,
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
    conv_id: &str,
) -> Result<Conversation> {
    let (klo, khi) = config.session_count_range;
    let k = rng.gen_range(klo..=khi);
    let topics = index::sample(rng, config.n_topics, k).into_vec();

    // Message counts and dedicated speakers per session.
    let mut sizes = Vec::with_capacity(k);
    let mut own: Vec<Vec<usize>> = Vec::with_capacity(k);
    let mut n_speakers = 0;
    for _ in 0..k {
        let (mlo, mhi) = config.messages_per_session_range;
        let n = rng.gen_range(mlo..=mhi);
        let (slo, shi) = config.speakers_per_session_range;
        let s = rng.gen_range(slo..=shi).min(n);
        own.push((n_speakers..n_speakers + s).collect());
        n_speakers += s;
        sizes.push(n);
    }

    // Speakers that also post in a second session.
    let mut participants = own.clone();
    if k >= 2 {
        for a in 0..k {
            for &sp in &own[a] {
                if !rng.gen_bool(config.speaker_violation_rate) {
                    continue;
                }
                let mut b = rng.gen_range(0..k - 1);
                if b >= a {
                    b += 1;
                }
                if participants[b].len() < sizes[b] {
                    participants[b].push(sp);
                }
            }
        }
    }

    let plans: Vec<SessionPlan> = (0..k)
        .map(|s| {
            let mut speakers = participants[s].clone();
            while speakers.len() < sizes[s] {
                speakers.push(*own[s].choose(rng).unwrap());
            }
            speakers.shuffle(rng);
            SessionPlan {
                topic: topics[s],
                speakers,
            }
        })
        .collect();

    // Speaker names carry no session information.
    let mut names: Vec<usize> = (0..n_speakers).collect();
    names.shuffle(rng);

    let mut remaining: Vec<usize> = sizes.clone();
    let mut cursor = vec![0usize; k];
    let total: usize = sizes.iter().sum();
    let mut messages = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for pos in 0..total {
        let left: usize = remaining.iter().sum();
        let mut pick = rng.gen_range(0..left);
        let mut s = 0;
        while pick >= remaining[s] {
            pick -= remaining[s];
            s += 1;
        }
        remaining[s] -= 1;
        let speaker = plans[s].speakers[cursor[s]];
        cursor[s] += 1;
        let tokens = vocab.sample_message(rng, plans[s].topic, config);
        messages.push(Message::new(
            format!("{conv_id}-{pos}"),
            format!("u{}", names[speaker]),
            tokens.join(" "),
            pos,
        )?);
        labels.push(s);
    }
    Conversation::new(conv_id, messages, Some(Partition::from_labels(&labels)))
}

/// Reply generator backed by the synthetic topic model: infers a message's
/// dominant topic from its words and samples a fresh on-topic message.
pub struct TopicReplyGenerator {
    vocab: SynthVocab,
    config: SynthConfig,
    topic_of: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl TopicReplyGenerator {
    pub fn new(config: &SynthConfig, seed: u64) -> Result<Self> {
        let vocab = SynthVocab::new(config)?;
        let topic_of = vocab
            .topics
            .iter()
            .enumerate()
            .flat_map(|(t, words)| words.iter().map(move |w| (w.clone(), t)))
            .collect();
        Ok(TopicReplyGenerator {
            vocab,
            config: config.clone(),
            topic_of,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn reply_tokens(&mut self, tokens: &[String]) -> Result<Vec<String>> {
        let mut counts = vec![0usize; self.vocab.topics.len()];
        for t in tokens {
            if let Some(&topic) = self.topic_of.get(t) {
                counts[topic] += 1;
            }
        }
        let (best, &n) = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("at least one topic");
        if n == 0 {
            return Err(Error::invalid("message carries no topic words"));
        }
        let mut reply = self.vocab.sample_message(&mut self.rng, best, &self.config);
        // Echo one of the source's own topic words so the pair always overlaps.
        let echoes: Vec<&String> = tokens.iter().filter(|t| self.topic_of.get(*t) == Some(&best)).collect();
        let slot = self.rng.gen_range(0..reply.len());
        reply[slot] = echoes.choose(&mut self.rng).expect("dominant topic occurs").to_string();
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{speaker_multisession_rate, write_corpus};

    fn topic_of(tok: &str) -> Option<usize> {
        let (t, w) = tok.strip_prefix('t')?.split_once('w')?;
        w.parse::<usize>().ok()?;
        t.parse().ok()
    }

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_conversations: 50,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn single_session_range_gives_single_session_gold() {
        let cfg = SynthConfig {
            session_count_range: (1, 1),
            ..small(3)
        };
        let corpus = generate_synthetic(&cfg).unwrap();
        for c in &corpus.conversations {
            assert_eq!(c.gold.as_ref().unwrap().session_count(), 1);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let render = |seed| {
            let mut out = Vec::new();
            write_corpus(&generate_synthetic(&small(seed)).unwrap(), &mut out).unwrap();
            out
        };
        assert_eq!(render(11), render(11));
        assert_ne!(render(11), render(12));
    }

    #[test]
    fn vocab_too_small_is_config_error() {
        let cfg = SynthConfig {
            vocab_size: 100,
            n_topics: 10,
            topic_words_per_session: 10,
            ..small(0)
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        let cfg = SynthConfig {
            n_topics: 3,
            ..small(0)
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn gold_is_canonical_and_sessions_keep_topics() {
        let corpus = generate_synthetic(&small(5)).unwrap();
        for c in &corpus.conversations {
            let gold = c.gold.as_ref().unwrap();
            assert_eq!(gold, &gold.canonical());
            let k = gold.session_count();
            assert!((2..=4).contains(&k));
            // one topic per session, distinct across sessions
            let mut session_topic = vec![None; k];
            for m in &c.messages {
                if let Some(t) = m.tokens.iter().find_map(|t| topic_of(t)) {
                    let slot = &mut session_topic[gold.session_of(m.position) - 1];
                    assert!(slot.is_none() || slot.as_ref() == Some(&t));
                    *slot = Some(t);
                }
            }
        }
    }

    #[test]
    fn violation_rate_zero_gives_clean_speakers() {
        let cfg = SynthConfig {
            speaker_violation_rate: 0.0,
            ..small(9)
        };
        let corpus = generate_synthetic(&cfg).unwrap();
        assert_eq!(speaker_multisession_rate(&corpus).unwrap(), 0.0);
    }

    #[test]
    fn reply_generator_stays_on_topic() {
        let cfg = small(1);
        let mut gen = TopicReplyGenerator::new(&cfg, 4).unwrap();
        let reply = gen
            .reply_tokens(&["t3w1".into(), "the".into(), "t3w5".into()])
            .unwrap();
        assert!(reply.iter().all(|t| topic_of(t).map_or(true, |topic| topic == 3)));
        assert!(reply.iter().any(|t| t == "t3w1" || t == "t3w5"));
        assert!(gen.reply_tokens(&["the".into()]).is_err());
    }
}
