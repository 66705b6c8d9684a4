use super::*;
use proptest::prelude::*;

fn p(labels: &[usize]) -> Partition {
    Partition::new(labels.to_vec()).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

#[test]
fn identical_partitions_score_maximum() {
    let a = p(&[1, 2, 1, 3, 2, 3]);
    assert_eq!(nmi(&a, &a).unwrap(), 1.0);
    assert_eq!(one_to_one(&a, &a).unwrap(), 100.0);
    assert_eq!(loc3(&a, &a).unwrap(), 100.0);
    assert!(close(shen_f(&a, &a).unwrap(), 100.0));
    assert_eq!(session_count_mse(&[a.clone()], &[a]).unwrap(), 0.0);
}

#[test]
fn nmi_conventions() {
    assert_eq!(nmi(&Partition::singletons(4), &Partition::single(4)).unwrap(), 0.0);
    assert_eq!(nmi(&Partition::single(4), &Partition::single(4)).unwrap(), 1.0);
    assert!(close(nmi(&p(&[1, 1, 2, 2]), &p(&[1, 2, 1, 2])).unwrap(), 0.0));
}

#[test]
fn one_to_one_hand_case() {
    assert!(close(one_to_one(&p(&[1, 1, 2, 2]), &p(&[1, 1, 1, 2])).unwrap(), 75.0));
}

#[test]
fn loc3_hand_case() {
    // Pairs (i, j) with 1 <= i - j <= 3 over 4 messages: six pairs.
    // pred [1,2,1,2] same: (2,0), (3,1); gold [1,1,2,2] same: (1,0), (3,2).
    // Agreements: (3,0) both different, (2,1) both different.
    assert!(close(loc3(&p(&[1, 2, 1, 2]), &p(&[1, 1, 2, 2])).unwrap(), 100.0 * 2.0 / 6.0));
    assert_eq!(loc3(&p(&[1]), &p(&[1])).unwrap(), 100.0);
}

#[test]
fn shen_f_one_big_session() {
    let gold = p(&[1, 1, 1, 2, 2, 2]);
    assert!(close(shen_f(&Partition::single(6), &gold).unwrap(), 200.0 / 3.0));
}

#[test]
fn mse_cases() {
    let preds = [p(&[1, 2, 3]), p(&[1, 2])];
    let golds = [p(&[1, 2, 2]), p(&[1, 2])];
    assert!(close(session_count_mse(&preds, &golds).unwrap(), 0.5));
    assert!(session_count_mse(&preds[..1], &golds).is_err());
}

#[test]
fn mismatched_lengths_are_errors() {
    assert!(nmi(&p(&[1, 1]), &p(&[1])).is_err());
    assert!(one_to_one(&p(&[1, 1]), &p(&[1])).is_err());
    assert!(loc3(&p(&[1, 1]), &p(&[1])).is_err());
    assert!(shen_f(&p(&[1, 1]), &p(&[1])).is_err());
}

#[test]
fn ranking_metrics() {
    let first = vec![vec![true, false, false]; 4];
    assert_eq!(hits_at_k(&first, 1).unwrap(), 100.0);
    assert_eq!(mrr(&first).unwrap(), 100.0);
    let mut second = vec![false; 10];
    second[1] = true;
    let second = vec![second; 3];
    assert_eq!(hits_at_k(&second, 1).unwrap(), 0.0);
    assert_eq!(hits_at_k(&second, 2).unwrap(), 100.0);
    assert!(close(mrr(&second).unwrap(), 50.0));
    assert!(hits_at_k(&[vec![false, false]], 1).is_err());
    assert!(mrr(&[vec![true, true]]).is_err());
}

#[test]
fn gold_rank_breaks_ties_by_candidate_order() {
    assert_eq!(gold_rank(&[0.5, 0.5, 0.1], 0).unwrap(), 1);
    assert_eq!(gold_rank(&[0.5, 0.5, 0.1], 1).unwrap(), 2);
    assert_eq!(gold_rank(&[0.1, 0.9, 0.3], 2).unwrap(), 2);
    assert!(gold_rank(&[0.1], 3).is_err());
    assert_eq!(ranked_flags(&[0.1, 0.9, 0.3], 2).unwrap(), vec![false, true, false]);
}

#[test]
fn report_averages_conversations() {
    let golds = [p(&[1, 1, 2, 2]), p(&[1, 2])];
    let preds = [p(&[1, 1, 2, 2]), p(&[1, 1])];
    let r = evaluate(&preds, &golds).unwrap();
    assert_eq!(r.conversations, 2);
    assert_eq!(r.messages, 6);
    assert!(close(r.one_to_one, (100.0 + 50.0) / 2.0));
    assert!(close(r.mse, 0.5));
    assert!(r.table().contains("Shen-F"));
}

fn arb_pair() -> impl Strategy<Value = (Partition, Partition)> {
    (1usize..=10).prop_flat_map(|n| {
        (
            proptest::collection::vec(0usize..4, n),
            proptest::collection::vec(0usize..4, n),
        )
            .prop_map(|(a, b)| (Partition::from_labels(&a), Partition::from_labels(&b)))
    })
}

fn relabel(x: &Partition, perm: &[usize]) -> Partition {
    let labels: Vec<usize> = x.labels().iter().map(|&l| perm[(l - 1) % perm.len()] + 100).collect();
    Partition::from_labels(&labels)
}

proptest! {
    #[test]
    fn scores_are_bounded((a, b) in arb_pair()) {
        let n = nmi(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&n));
        for s in [one_to_one(&a, &b).unwrap(), loc3(&a, &b).unwrap(), shen_f(&a, &b).unwrap()] {
            prop_assert!((0.0..=100.0 + 1e-9).contains(&s));
        }
    }

    #[test]
    fn label_permutation_invariance((a, b) in arb_pair(), rot in 0usize..4) {
        let perm: Vec<usize> = (0..4).map(|i| (i + rot) % 4).collect();
        let a2 = relabel(&a, &perm);
        prop_assert!(close(nmi(&a, &b).unwrap(), nmi(&a2, &b).unwrap()));
        prop_assert!(close(one_to_one(&a, &b).unwrap(), one_to_one(&a2, &b).unwrap()));
        prop_assert!(close(loc3(&a, &b).unwrap(), loc3(&a2, &b).unwrap()));
        prop_assert!(close(shen_f(&a, &b).unwrap(), shen_f(&a2, &b).unwrap()));
    }

    #[test]
    fn maximum_only_for_equal_partitions((a, b) in arb_pair()) {
        let same = a.canonical() == b.canonical();
        prop_assert_eq!(one_to_one(&a, &b).unwrap() == 100.0, same);
        prop_assert_eq!(close(shen_f(&a, &b).unwrap(), 100.0), same);
        prop_assert_eq!(nmi(&a, &b).unwrap() == 1.0 || close(nmi(&a, &b).unwrap(), 1.0), same);
    }
}
