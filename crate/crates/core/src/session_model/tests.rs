use std::collections::HashMap;

use super::*;
use crate::corpus::test_util::conv;
use crate::corpus::{generate_synthetic, SynthConfig};
use crate::encoder::gradcheck::{max_relative_error, numeric_gradient};

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Model over single-token messages whose encoder maps token `w` to exactly
/// `vectors[w]` (identity projection, zero bias, uniform attention).
fn rigged(vectors: &[(&str, Vec<f64>)]) -> (SessionModel, Conversation) {
    let d = vectors[0].1.len();
    let msgs: Vec<(&str, &str)> = vectors.iter().map(|(w, _)| ("s", *w)).collect();
    let conversation = conv("r", &msgs, None);
    let vocab = Vocab::from_corpus(&Corpus::new(vec![conversation.clone()]));
    let mut enc = EncoderParams::zeros(vocab.size(), d);
    for o in 0..d {
        enc.projection[o * d + o] = 1.0;
    }
    for (w, v) in vectors {
        let id = vocab.id(w) as usize;
        for (k, x) in v.iter().enumerate() {
            enc.embedding[id * d + k] = x.atanh();
        }
    }
    (
        SessionModel {
            vocab,
            encoder: enc,
        },
        conversation,
    )
}

#[test]
fn zero_session_vector_gives_one_half() {
    let (model, c) = rigged(&[("a", vec![0.0, 0.0]), ("b", vec![0.3, 0.1])]);
    let p = model.session_prob(&[&c.messages[0]], &c.messages[1]).unwrap();
    assert_eq!(p, 0.5);
}

#[test]
fn unit_vector_single_message_session() {
    let (model, c) = rigged(&[("a", vec![0.6, 0.8]), ("b", vec![0.6, 0.8])]);
    let p = model.session_prob(&[&c.messages[0]], &c.messages[1]).unwrap();
    assert!((p - 0.731_059).abs() < 1e-6, "{p}");
}

#[test]
fn identical_session_ignores_length() {
    let (model, c) = rigged(&[
        ("a", vec![0.5, -0.2]),
        ("b", vec![0.5, -0.2]),
        ("x", vec![0.5, -0.2]),
        ("y", vec![0.5, -0.2]),
    ]);
    let s = 0.25 + 0.04;
    let m = &c.messages;
    for n in 1..=3 {
        let ctx: Vec<&Message> = m[..n].iter().collect();
        let p = model.session_prob(&ctx, &m[3]).unwrap();
        assert!((p - sigmoid(s)).abs() < 1e-12);
    }
    assert!(model.session_prob(&[], &m[0]).is_err());
}

fn fixture() -> Corpus {
    Corpus::new(vec![
        conv(
            "f",
            &[
                ("a", "m0"),
                ("b", "m1"),
                ("c", "m2"),
                ("b", "m3"),
                ("b", "m4"),
                ("c", "m5"),
            ],
            None,
        ),
        conv("g", &[("d", "n0"), ("e", "n1")], None),
    ])
}

#[test]
fn positives_follow_speaker_repeats() {
    let corpus = fixture();
    let ds = build_pseudo_sessions(&corpus, 2.5, 0).unwrap();
    let pos: Vec<(usize, usize, (usize, usize))> = ds
        .instances
        .iter()
        .filter(|i| i.label)
        .map(|i| (i.conv, i.context_len, i.candidate))
        .collect();
    // Speaker c at 2 and 5: one positive with context 0..4. Speaker b at
    // 1, 3, 4: two positives.
    assert_eq!(pos, vec![(0, 3, (0, 3)), (0, 4, (0, 4)), (0, 5, (0, 5))]);
    let negs: Vec<&SessionInstance> = ds.instances.iter().filter(|i| !i.label).collect();
    assert_eq!(negs.len(), 8);
    for n in negs {
        assert_ne!(n.conv, n.candidate.0);
        assert_eq!(n.context_len, corpus.conversations[n.conv].len());
    }
}

#[test]
fn unique_speakers_give_no_positives() {
    let corpus = Corpus::new(vec![
        conv("p", &[("a", "x"), ("b", "y")], None),
        conv("q", &[("c", "z")], None),
    ]);
    let ds = build_pseudo_sessions(&corpus, 2.5, 0).unwrap();
    assert_eq!(ds.positives(), 0);
    assert!(ds.is_empty());
}

#[test]
fn single_conversation_is_rejected() {
    let corpus = Corpus::new(vec![conv("p", &[("a", "x"), ("a", "y")], None)]);
    assert!(build_pseudo_sessions(&corpus, 2.5, 0).is_err());
}

#[test]
fn session_jsonl_round_trip() {
    let corpus = fixture();
    let ds = build_pseudo_sessions(&corpus, 2.5, 3).unwrap();
    let mut buf = Vec::new();
    ds.write_jsonl(&corpus, &mut buf).unwrap();
    assert_eq!(SessionDataset::read_jsonl(&corpus, buf.as_slice()).unwrap(), ds);
    assert!(SessionDataset::read_jsonl(&corpus, &b"{\"bad\": 1}\n"[..]).is_err());
}

fn synth(seed: u64, n: usize, violation: f64) -> Corpus {
    generate_synthetic(&SynthConfig {
        n_conversations: n,
        speaker_violation_rate: violation,
        topic_ratio: 1.0,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let corpus = synth(1, 8, 0.06);
    let ds = build_pseudo_sessions(&corpus, 2.5, 0).unwrap();
    let mut model = SessionModel::new(Vocab::from_corpus(&corpus), 8, 0);
    let before = model.clone();
    let cfg = TrainConfig {
        epochs: 2,
        lr: 0.0,
        batch_size: 8,
        seed: 0,
    };
    train_session_init(&mut model, &corpus, &ds, &cfg).unwrap();
    assert_eq!(model, before);
}

#[test]
fn separable_session_data_is_learned() {
    // Clean speakers and pure topic messages: positives always continue the
    // speaker's own topic, negatives come from other conversations.
    let corpus = synth(2, 30, 0.0);
    let ds = build_pseudo_sessions(&corpus, 1.0, 1).unwrap();
    let mut model = SessionModel::new(Vocab::from_corpus(&corpus), 16, 0);
    let cfg = TrainConfig {
        epochs: 20,
        lr: 0.01,
        batch_size: 16,
        seed: 1,
    };
    let report = train_session_init(&mut model, &corpus, &ds, &cfg).unwrap();
    assert!(report.final_accuracy >= 0.9, "accuracy {}", report.final_accuracy);
}

#[test]
fn full_batch_small_step_lowers_loss() {
    let corpus = synth(3, 10, 0.0);
    let ds = build_pseudo_sessions(&corpus, 2.5, 1).unwrap();
    let mut model = SessionModel::new(Vocab::from_corpus(&corpus), 8, 2);
    let before = session_dataset_loss(&model, &corpus, &ds);
    let cfg = TrainConfig {
        epochs: 1,
        lr: 1e-3,
        batch_size: ds.len(),
        seed: 0,
    };
    train_session_init(&mut model, &corpus, &ds, &cfg).unwrap();
    assert!(session_dataset_loss(&model, &corpus, &ds) <= before);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let corpus = fixture();
    let ds = build_pseudo_sessions(&corpus, 2.5, 2).unwrap();
    for seed in 0..5 {
        let mut model = SessionModel::new(Vocab::from_corpus(&corpus), 3, seed);
        model.encoder.embedding.iter_mut().for_each(|x| *x *= 8.0);
        model.encoder.attn_w.iter_mut().for_each(|x| *x *= 3.0);
        let (loss, analytic) = session_loss_gradient(&model, &corpus, &ds);
        assert!((loss - session_dataset_loss(&model, &corpus, &ds)).abs() < 1e-12);
        let numeric = numeric_gradient(&model.encoder, 1e-5, |p| {
            let m = SessionModel {
                vocab: model.vocab.clone(),
                encoder: p.clone(),
            };
            session_dataset_loss(&m, &corpus, &ds)
        });
        let err = max_relative_error(&analytic, &numeric, 1e-6);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn single_message_is_one_session() {
    let (model, c) = rigged(&[("a", vec![0.1, 0.2])]);
    assert_eq!(disentangle_e2e(&model, &c, DecodeMode::Argmax).0.labels(), &[1]);
    let (p, ep) = disentangle_e2e(&model, &c, DecodeMode::Sample { seed: 1 });
    assert_eq!(p.labels(), &[1]);
    assert!(ep.unwrap().steps.is_empty());
}

#[test]
fn low_probability_opens_every_session() {
    let x = logit(0.1);
    let (p, _) = assign_sessions(6, |_, _| x, DecodeMode::Argmax);
    assert_eq!(p, Partition::singletons(6));
}

#[test]
fn rigged_encoder_three_message_trace() {
    // v0 = v1 = (a, a, a, a) with 4a² = logit(0.9); v2 = −(b, b, b, b) with
    // 4ab = −logit(0.3).
    let a = (logit(0.9) / 4.0).sqrt();
    let b = -logit(0.3) / (4.0 * a);
    let (model, c) = rigged(&[("x", vec![a; 4]), ("y", vec![a; 4]), ("z", vec![-b; 4])]);
    let m = &c.messages;
    let p1 = model.session_prob(&[&m[0]], &m[1]).unwrap();
    let p2 = model.session_prob(&[&m[0], &m[1]], &m[2]).unwrap();
    assert!((p1 - 0.9).abs() < 1e-9 && (p2 - 0.3).abs() < 1e-9, "{p1} {p2}");
    assert_eq!(model.disentangle(&c).labels(), &[1, 1, 2]);
}

/// Scripted logits keyed by `(members, message)`.
fn scripted(table: &[(&[usize], usize, f64)]) -> impl FnMut(&[usize], usize) -> f64 {
    let map: HashMap<(Vec<usize>, usize), f64> = table
        .iter()
        .map(|(m, i, p)| ((m.to_vec(), *i), logit(*p)))
        .collect();
    move |members: &[usize], i: usize| {
        *map
            .get(&(members.to_vec(), i))
            .unwrap_or_else(|| panic!("unscripted query {members:?} -> {i}"))
    }
}

#[test]
fn scripted_five_message_trace() {
    let f = scripted(&[
        (&[0], 1, 0.2),
        (&[0, 1], 2, 0.8),
        (&[0], 2, 0.3),
        (&[1], 2, 0.7),
        (&[0, 1, 2], 3, 0.6),
        (&[0], 3, 0.5),
        (&[1, 2], 3, 0.5),
        (&[0, 1, 2, 3], 4, 0.5),
        (&[0, 3], 4, 0.9),
        (&[1, 2], 4, 0.4),
    ]);
    let (p, _) = assign_sessions(5, f, DecodeMode::Argmax);
    // m1 opens session 2, m2 prefers session 2, m3 ties and takes the older
    // session, m4 sits exactly at 0.5 and joins.
    assert_eq!(p.labels(), &[1, 2, 2, 1, 1]);
}

fn hashed_logit(seed: u64) -> impl FnMut(&[usize], usize) -> f64 {
    move |members: &[usize], i: usize| {
        let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
        for &m in members.iter().chain(std::iter::once(&i)) {
            h = (h ^ m as u64).wrapping_mul(0x100_0000_01B3);
            h ^= h >> 29;
        }
        (h % 2001) as f64 / 250.0 - 4.0
    }
}

#[test]
fn near_certain_join_has_vanishing_log_probs() {
    let (p, steps) = assign_sessions(2, |_, _| 40.0, DecodeMode::Sample { seed: 0 });
    assert_eq!(p.labels(), &[1, 1]);
    let step = &steps.unwrap()[0];
    assert!(step.joined);
    assert!(step.log_prob() <= 0.0 && step.log_prob() > -1e-12);
}

proptest::proptest! {
    #[test]
    fn outputs_are_valid_partitions(seed in 0u64..5000, n in 1usize..12, sample in proptest::bool::ANY) {
        let mode = if sample { DecodeMode::Sample { seed } } else { DecodeMode::Argmax };
        let (p, steps) = assign_sessions(n, hashed_logit(seed), mode);
        proptest::prop_assert_eq!(p.len(), n);
        proptest::prop_assert_eq!(&p.canonical(), &p);
        proptest::prop_assert_eq!(p.labels()[0], 1);
        let z: Vec<usize> = (0..n).map(|i| p.sessions_before(i)).collect();
        proptest::prop_assert!(z.windows(2).all(|w| w[0] <= w[1]));
        match steps {
            None => proptest::prop_assert!(!sample),
            Some(steps) => {
                proptest::prop_assert_eq!(steps.len(), n - 1);
                for s in &steps {
                    proptest::prop_assert_eq!(s.target.is_some(), s.joined);
                    proptest::prop_assert!(s.log_prob_new.is_finite() && s.log_prob_new <= 0.0);
                    if let Some(t) = &s.target {
                        let total: f64 = t.probs.iter().sum();
                        proptest::prop_assert!((total - 1.0).abs() < 1e-12);
                        proptest::prop_assert!(t.log_prob.is_finite() && t.log_prob <= 0.0);
                        proptest::prop_assert_eq!(p.labels()[s.position], t.session + 1);
                    }
                }
                let (again, _) = assign_sessions(n, hashed_logit(seed), mode);
                proptest::prop_assert_eq!(again, p);
            }
        }
    }
}

#[test]
fn argmax_is_deterministic_on_a_trained_model() {
    let corpus = synth(4, 6, 0.06);
    let model = SessionModel::new(Vocab::from_corpus(&corpus), 8, 7);
    for c in &corpus.conversations {
        assert_eq!(model.disentangle(c), model.disentangle(c));
        let (p, ep) = disentangle_e2e(&model, c, DecodeMode::Sample { seed: 3 });
        let (q, ep2) = disentangle_e2e(&model, c, DecodeMode::Sample { seed: 3 });
        assert_eq!(p, q);
        assert_eq!(ep, ep2);
    }
}
