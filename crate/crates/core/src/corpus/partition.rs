use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Session assignment for the messages of one conversation.
///
/// Labels are 1-based and contiguous: every id in `1..=K` is used by at least
/// one message. They need not appear in first-use order; [`Partition::canonical`]
/// renumbers them so they do.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Partition {
    labels: Vec<usize>,
    count: usize,
}

impl TryFrom<Vec<usize>> for Partition {
    type Error = Error;

    fn try_from(labels: Vec<usize>) -> Result<Self> {
        Partition::new(labels)
    }
}

impl From<Partition> for Vec<usize> {
    fn from(p: Partition) -> Self {
        p.labels
    }
}

impl Partition {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        let count = labels.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; count + 1];
        for &l in &labels {
            if l == 0 {
                return Err(Error::invalid("session ids start at 1"));
            }
            seen[l] = true;
        }
        if seen.iter().skip(1).any(|s| !s) {
            return Err(Error::invalid(format!(
                "session ids are not contiguous: {labels:?}"
            )));
        }
        Ok(Partition { labels, count })
    }

    /// Canonical partition from arbitrary labels, numbered by first appearance.
    pub fn from_labels<T: Eq + Hash>(labels: &[T]) -> Self {
        let mut ids: HashMap<&T, usize> = HashMap::new();
        let labels: Vec<usize> = labels
            .iter()
            .map(|l| {
                let next = ids.len() + 1;
                *ids.entry(l).or_insert(next)
            })
            .collect();
        Partition {
            count: ids.len(),
            labels,
        }
    }

    pub fn single(n: usize) -> Self {
        Partition {
            labels: vec![1; n],
            count: usize::from(n > 0),
        }
    }

    pub fn singletons(n: usize) -> Self {
        Partition {
            labels: (1..=n).collect(),
            count: n,
        }
    }

    pub fn canonical(&self) -> Partition {
        Partition::from_labels(&self.labels)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn session_count(&self) -> usize {
        self.count
    }

    /// 1-based session id of message `i`.
    pub fn session_of(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn same_session(&self, i: usize, j: usize) -> bool {
        self.labels[i] == self.labels[j]
    }

    /// Message positions of each session, in conversation order; entry `k`
    /// holds session `k + 1`.
    pub fn sessions(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l - 1].push(i);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.count];
        for &l in &self.labels {
            out[l - 1] += 1;
        }
        out
    }

    /// Canonical partition over the kept positions only.
    pub fn restrict(&self, keep: &[usize]) -> Partition {
        let sub: Vec<usize> = keep.iter().map(|&i| self.labels[i]).collect();
        Partition::from_labels(&sub)
    }

    /// Number of distinct sessions among messages before position `i`.
    pub fn sessions_before(&self, i: usize) -> usize {
        let mut seen = vec![false; self.count + 1];
        self.labels[..i]
            .iter()
            .filter(|&&l| !std::mem::replace(&mut seen[l], true))
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_gaps_and_zero() {
        assert!(Partition::new(vec![1, 3]).is_err());
        assert!(Partition::new(vec![0, 1]).is_err());
        assert!(Partition::new(vec![2, 1, 2]).is_ok());
    }

    #[test]
    fn canonical_renumbers_by_first_use() {
        let p = Partition::new(vec![2, 1, 2, 3]).unwrap();
        assert_eq!(p.canonical().labels(), &[1, 2, 1, 3]);
        assert_eq!(p.sessions(), vec![vec![1], vec![0, 2], vec![3]]);
    }

    #[test]
    fn empty_partition_has_no_sessions() {
        let p = Partition::new(vec![]).unwrap();
        assert_eq!(p.session_count(), 0);
        assert_eq!(Partition::single(0).session_count(), 0);
    }

    proptest! {
        #[test]
        fn from_labels_is_valid_and_monotone(raw in proptest::collection::vec(0u8..6, 0..30)) {
            let p = Partition::from_labels(&raw);
            prop_assert!(Partition::new(p.labels().to_vec()).is_ok());
            let mut prev = 0;
            for i in 0..=p.len() {
                let z = p.sessions_before(i);
                prop_assert!(z >= prev);
                prev = z;
            }
            prop_assert_eq!(prev, p.session_count());
            // each session keeps conversation order
            for s in p.sessions() {
                prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
