//! Two-step baseline: pair probabilities from the pair classifier, then a
//! greedy pass attaching each message to its most likely predecessor.

use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Partition};
use crate::error::{Error, Result};
use crate::pair_model::PairModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreedyConfig {
    pub threshold: f64,
    /// Maximum look-back in messages; `None` is unlimited.
    pub window: Option<usize>,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        GreedyConfig {
            threshold: 0.5,
            window: None,
        }
    }
}

impl GreedyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.window == Some(0) {
            return Err(Error::Config("window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Greedy clustering over a pair-probability matrix (`probs[i][j]` for
/// `j < i` is read). Each message joins the session of its highest-scoring
/// predecessor in the window when that score exceeds the threshold; ties go
/// to the earliest predecessor.
pub fn greedy_from_matrix(probs: &[Vec<f64>], config: &GreedyConfig) -> Partition {
    let n = probs.len();
    let mut labels = Vec::with_capacity(n);
    let mut sessions = 0;
    for i in 0..n {
        let lo = config.window.map_or(0, |w| i.saturating_sub(w));
        let mut best: Option<(usize, f64)> = None;
        for j in lo..i {
            if best.map_or(true, |(_, p)| probs[i][j] > p) {
                best = Some((j, probs[i][j]));
            }
        }
        match best {
            Some((j, p)) if p > config.threshold => labels.push(labels[j]),
            _ => {
                sessions += 1;
                labels.push(sessions);
            }
        }
    }
    Partition::new(labels).expect("sessions are opened in order")
}

pub fn greedy_disentangle(pair: &PairModel, conv: &Conversation, config: &GreedyConfig) -> Partition {
    greedy_from_matrix(&pair.prob_matrix(conv), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(n: usize, f: impl Fn(usize, usize) -> f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { f(i.min(j), i.max(j)) }).collect())
            .collect()
    }

    #[test]
    fn all_low_gives_singletons() {
        let m = matrix(5, |_, _| 0.2);
        assert_eq!(greedy_from_matrix(&m, &GreedyConfig::default()), Partition::singletons(5));
    }

    #[test]
    fn all_high_gives_one_session() {
        let m = matrix(5, |_, _| 0.99);
        assert_eq!(greedy_from_matrix(&m, &GreedyConfig::default()), Partition::single(5));
    }

    #[test]
    fn hand_traced_four_messages() {
        // 1-based message numbers in the fixture, 0-based here.
        let m = matrix(4, |a, b| match (a, b) {
            (0, 1) => 0.9,
            (0, 2) => 0.2,
            (1, 2) => 0.3,
            (2, 3) => 0.8,
            _ => 0.1,
        });
        let p = greedy_from_matrix(&m, &GreedyConfig::default());
        assert_eq!(p.labels(), &[1, 1, 2, 2]);
    }

    #[test]
    fn window_limits_lookback() {
        let m = matrix(3, |a, b| if (a, b) == (0, 2) { 0.9 } else { 0.1 });
        let cfg = GreedyConfig {
            threshold: 0.5,
            window: Some(1),
        };
        assert_eq!(greedy_from_matrix(&m, &cfg).labels(), &[1, 2, 3]);
        assert_eq!(greedy_from_matrix(&m, &GreedyConfig::default()).labels(), &[1, 2, 1]);
    }

    #[test]
    fn ties_go_to_earliest_predecessor() {
        let m = matrix(3, |a, b| match (a, b) {
            (0, 1) => 0.1,
            _ => 0.7,
        });
        assert_eq!(greedy_from_matrix(&m, &GreedyConfig::default()).labels(), &[1, 2, 1]);
    }

    #[test]
    fn config_validation() {
        assert!(GreedyConfig { threshold: 1.0, window: None }.validate().is_err());
        assert!(GreedyConfig { threshold: 0.5, window: Some(0) }.validate().is_err());
        assert!(GreedyConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn raising_threshold_never_merges(
            vals in proptest::collection::vec(0.0f64..1.0, 45),
            t1 in 0.01f64..0.99,
            t2 in 0.01f64..0.99,
        ) {
            let n = 10;
            let m = matrix(n, |a, b| vals[a * n + b - (a + 1) * (a + 2) / 2]);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = greedy_from_matrix(&m, &GreedyConfig { threshold: lo, window: None });
            let b = greedy_from_matrix(&m, &GreedyConfig { threshold: hi, window: None });
            prop_assert!(b.session_count() >= a.session_count());
            prop_assert_eq!(Partition::new(b.labels().to_vec()).unwrap(), b);
        }
    }
}
