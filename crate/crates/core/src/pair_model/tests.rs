use super::*;
use crate::corpus::test_util::conv;
use crate::corpus::{generate_synthetic, SynthConfig};
use crate::encoder::gradcheck::{max_relative_error, numeric_gradient};

fn two_convs() -> Corpus {
    Corpus::new(vec![
        conv(
            "x",
            &[
                ("a", "red apple"),
                ("b", "blue sky"),
                ("a", "green apple"),
                ("c", "grey cloud"),
                ("a", "ripe apple"),
                ("b", "clear sky"),
            ],
            Some(&[1, 2, 1, 2, 1, 2]),
        ),
        conv("y", &[("d", "fast car"), ("e", "slow boat"), ("f", "big plane")], Some(&[1, 2, 3])),
    ])
}

fn small_synth(seed: u64, n: usize) -> Corpus {
    generate_synthetic(&SynthConfig {
        n_conversations: n,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn zero_encoder_gives_one_half() {
    let corpus = two_convs();
    let mut model = PairModel::new(Vocab::from_corpus(&corpus), 4, 0);
    model.encoder = EncoderParams::zeros(model.vocab.size(), 4);
    let m = &corpus.conversations[0].messages;
    assert_eq!(model.pair_prob(&m[0], &m[1]).unwrap(), 0.5);
}

#[test]
fn dot_two_gives_known_probability() {
    assert!((probability(2.0) - 0.880_797).abs() < 1e-6);
}

#[test]
fn pair_prob_is_exactly_symmetric() {
    let corpus = small_synth(3, 5);
    let model = PairModel::new(Vocab::from_corpus(&corpus), 16, 1);
    for c in &corpus.conversations {
        for a in &c.messages {
            for b in &c.messages {
                let p = model.pair_prob(a, b).unwrap();
                assert_eq!(p.to_bits(), model.pair_prob(b, a).unwrap().to_bits());
                assert!(p > 0.0 && p < 1.0);
            }
        }
    }
}

#[test]
fn prob_matrix_matches_pair_prob() {
    let corpus = two_convs();
    let model = PairModel::new(Vocab::from_corpus(&corpus), 8, 5);
    let conv = &corpus.conversations[0];
    let m = model.prob_matrix(conv);
    assert_eq!(m[2][4], model.pair_prob(&conv.messages[2], &conv.messages[4]).unwrap());
    assert_eq!(m[4][2], m[2][4]);
}

#[test]
fn retrieved_pairs_enumerate_same_speaker_pairs() {
    let corpus = two_convs();
    let ds = build_pseudo_pairs_ret(&corpus, 2.0, 7).unwrap();
    let mut pos: Vec<(MsgRef, MsgRef)> = ds
        .instances
        .iter()
        .filter(|i| i.label)
        .map(|i| (i.a, i.b))
        .collect();
    pos.sort();
    let r = |pos| MsgRef::Corpus { conv: 0, pos };
    // Speaker a at 0, 2, 4 gives C(3, 2) = 3; speaker b at 1, 5 gives 1.
    assert_eq!(pos, vec![(r(0), r(2)), (r(0), r(4)), (r(1), r(5)), (r(2), r(4))]);
    assert_eq!(ds.negatives(), 8);
    for inst in ds.instances.iter().filter(|i| !i.label) {
        let (MsgRef::Corpus { conv: c1, .. }, MsgRef::Corpus { conv: c2, .. }) = (inst.a, inst.b) else {
            panic!("negatives reference corpus messages")
        };
        assert_ne!(c1, c2);
    }
    assert_eq!(ds.count_source(PairSource::Ret), ds.len());
}

#[test]
fn unique_speakers_give_no_positives() {
    let corpus = Corpus::new(vec![
        conv("p", &[("a", "one"), ("b", "two")], None),
        conv("q", &[("c", "three")], None),
    ]);
    assert_eq!(build_pseudo_pairs_ret(&corpus, 2.33, 0).unwrap().positives(), 0);
}

#[test]
fn single_conversation_cannot_give_negatives() {
    let corpus = Corpus::new(vec![conv("p", &[("a", "one"), ("a", "two")], None)]);
    assert!(build_pseudo_pairs_ret(&corpus, 2.33, 0).is_err());
}

#[test]
fn pseudo_pairs_are_deterministic() {
    let corpus = small_synth(1, 20);
    let a = build_pseudo_pairs_ret(&corpus, 2.33, 9).unwrap();
    let b = build_pseudo_pairs_ret(&corpus, 2.33, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.negatives(), (a.positives() as f64 * 2.33).round() as usize);
}

#[test]
fn jsonl_round_trip() {
    let corpus = small_synth(2, 6);
    let ds = build_pseudo_pairs_ret(&corpus, 1.0, 3).unwrap();
    let mut gen = TopicReplyGenerator::new(&SynthConfig::default(), 4).unwrap();
    let ds = augment_generated(&ds, &corpus, &mut gen, 5, 1);
    let mut buf = Vec::new();
    ds.write_jsonl(&corpus, &mut buf).unwrap();
    let back = PairDataset::read_jsonl(&corpus, buf.as_slice()).unwrap();
    assert_eq!(back.instances, ds.instances);
    assert_eq!(back.extra.len(), ds.extra.len());
    for (a, b) in back.extra.iter().zip(&ds.extra) {
        assert_eq!(a.text, b.text);
    }
}

#[test]
fn augmenting_nothing_leaves_dataset_unchanged() {
    let corpus = small_synth(2, 4);
    let ds = build_pseudo_pairs_ret(&corpus, 1.0, 3).unwrap();
    let mut gen = TopicReplyGenerator::new(&SynthConfig::default(), 4).unwrap();
    assert_eq!(augment_generated(&ds, &corpus, &mut gen, 0, 1), ds);
}

#[test]
fn generated_replies_share_topic_words() {
    let config = SynthConfig::default();
    let corpus = small_synth(5, 10);
    let mut gen = TopicReplyGenerator::new(&config, 4).unwrap();
    let ds = augment_generated(&PairDataset::default(), &corpus, &mut gen, 40, 2);
    assert!(ds.count_source(PairSource::Gen) > 0);
    for inst in &ds.instances {
        assert!(inst.label);
        let a = ds.message(&corpus, inst.a);
        let b = ds.message(&corpus, inst.b);
        let shared = a
            .tokens
            .iter()
            .filter(|t| is_topic_word(t) && b.tokens.contains(t))
            .count();
        assert!(shared >= 1, "{:?} / {:?}", a.tokens, b.tokens);
    }
}

fn is_topic_word(t: &str) -> bool {
    t.strip_prefix('t')
        .and_then(|r| r.split_once('w'))
        .is_some_and(|(a, b)| a.parse::<usize>().is_ok() && b.parse::<usize>().is_ok())
}

struct Failing;

impl ReplyGenerator for Failing {
    fn reply(&mut self, _: &Message) -> Result<String> {
        Err(Error::invalid("no reply"))
    }
}

#[test]
fn generator_failures_are_skipped() {
    let corpus = two_convs();
    let ds = build_pseudo_pairs_ret(&corpus, 1.0, 0).unwrap();
    assert_eq!(augment_generated(&ds, &corpus, &mut Failing, 5, 0), ds);
}

#[test]
fn extend_rebases_extra_references() {
    let corpus = small_synth(2, 4);
    let mut gen = TopicReplyGenerator::new(&SynthConfig::default(), 4).unwrap();
    let a = augment_generated(&PairDataset::default(), &corpus, &mut gen, 3, 1);
    let b = augment_generated(&PairDataset::default(), &corpus, &mut gen, 2, 2);
    let mut all = a.clone();
    all.extend(b.clone());
    assert_eq!(all.extra.len(), 5);
    assert_eq!(all.instances[3].b, MsgRef::Extra(3));
    assert_eq!(all.message(&corpus, all.instances[4].b).text, b.extra[1].text);
    all.validate(&corpus).unwrap();
}

#[test]
fn single_label_dataset_is_rejected() {
    let corpus = two_convs();
    let mut ds = build_pseudo_pairs_ret(&corpus, 0.0, 0).unwrap();
    let mut model = PairModel::new(Vocab::from_corpus(&corpus), 4, 0);
    let cfg = TrainConfig {
        epochs: 1,
        lr: 0.01,
        batch_size: 4,
        seed: 0,
    };
    assert!(train_pair(&mut model, &corpus, &ds, &cfg).is_err());
    ds.instances.clear();
    assert!(train_pair(&mut model, &corpus, &ds, &cfg).is_err());
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let corpus = small_synth(4, 10);
    let ds = build_pseudo_pairs_ret(&corpus, 2.33, 0).unwrap();
    let mut model = PairModel::new(Vocab::from_corpus(&corpus), 8, 0);
    let before = model.clone();
    let cfg = TrainConfig {
        epochs: 2,
        lr: 0.0,
        batch_size: 16,
        seed: 0,
    };
    train_pair(&mut model, &corpus, &ds, &cfg).unwrap();
    assert_eq!(model, before);
}

/// Pairs labelled by gold sessions of a clean synthetic corpus: positives
/// share a topic, negatives do not.
fn separable(seed: u64) -> (Corpus, PairDataset) {
    let corpus = generate_synthetic(&SynthConfig {
        n_conversations: 20,
        speaker_violation_rate: 0.0,
        topic_ratio: 1.0,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let all = gold_pairs(&corpus).unwrap();
    let pos: Vec<_> = all.instances.iter().filter(|i| i.label).take(100).cloned().collect();
    let neg: Vec<_> = all.instances.iter().filter(|i| !i.label).take(100).cloned().collect();
    let ds = PairDataset {
        instances: pos.into_iter().chain(neg).collect(),
        extra: Vec::new(),
    };
    (corpus, ds)
}

#[test]
fn separable_pairs_are_learned() {
    let (corpus, ds) = separable(11);
    assert_eq!(ds.len(), 200);
    let mut model = PairModel::new(Vocab::from_corpus(&corpus), 16, 0);
    let cfg = TrainConfig {
        epochs: 20,
        lr: 0.01,
        batch_size: 16,
        seed: 1,
    };
    let report = train_pair(&mut model, &corpus, &ds, &cfg).unwrap();
    assert_eq!(report.epoch_losses.len(), 20);
    assert!(report.final_accuracy >= 0.95, "accuracy {}", report.final_accuracy);
    assert!(eval_pair_f1(&model, &corpus, &ds).f1 >= 0.95);
}

#[test]
fn full_batch_small_step_lowers_loss() {
    let (corpus, ds) = separable(12);
    let mut model = PairModel::new(Vocab::from_corpus(&corpus), 8, 3);
    let before = pair_dataset_loss(&model, &corpus, &ds);
    let cfg = TrainConfig {
        epochs: 1,
        lr: 1e-3,
        batch_size: ds.len(),
        seed: 0,
    };
    train_pair(&mut model, &corpus, &ds, &cfg).unwrap();
    let after = pair_dataset_loss(&model, &corpus, &ds);
    assert!(after <= before, "{after} > {before}");
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let corpus = two_convs();
    let ds = build_pseudo_pairs_ret(&corpus, 2.0, 1).unwrap();
    for seed in 0..5 {
        let mut model = PairModel::new(Vocab::from_corpus(&corpus), 3, seed);
        model.encoder.embedding.iter_mut().for_each(|x| *x *= 8.0);
        let (loss, analytic) = pair_loss_gradient(&model, &corpus, &ds);
        assert!((loss - pair_dataset_loss(&model, &corpus, &ds)).abs() < 1e-12);
        let numeric = numeric_gradient(&model.encoder, 1e-5, |p| {
            let m = PairModel {
                vocab: model.vocab.clone(),
                encoder: p.clone(),
            };
            pair_dataset_loss(&m, &corpus, &ds)
        });
        let err = max_relative_error(&analytic, &numeric, 1e-6);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn f1_conventions() {
    let gold = [true, false, true, false];
    assert_eq!(PrfScores::from_predictions(&gold, &gold).f1, 1.0);
    assert_eq!(PrfScores::from_predictions(&[false; 4], &gold).f1, 0.0);
    let s = PrfScores::from_counts(1, 1, 1);
    assert!((s.f1 - 0.5).abs() < 1e-15);
}

#[test]
fn gold_pairs_cover_every_pair() {
    let corpus = two_convs();
    let ds = gold_pairs(&corpus).unwrap();
    assert_eq!(ds.len(), 15 + 3);
    assert_eq!(ds.positives(), 3 + 3);
}

#[test]
fn checkpoint_kind_is_enforced() {
    let corpus = two_convs();
    let model = PairModel::new(Vocab::from_corpus(&corpus), 4, 0);
    let back = PairModel::from_checkpoint(model.to_checkpoint()).unwrap();
    assert_eq!(back, model);
    let wrong = Checkpoint::new(ModelKind::Session, model.vocab.clone(), model.encoder.clone());
    assert!(PairModel::from_checkpoint(wrong).is_err());
}
