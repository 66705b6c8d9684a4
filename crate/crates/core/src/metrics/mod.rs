//! Disentanglement and response-selection metrics.
//!
//! Partition scores are reported in [0, 100] (NMI included in the corpus
//! report). Corpus-level scores are macro averages over conversations.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::assignment::max_weight_assignment;
use crate::corpus::Partition;
use crate::error::{Error, Result};

fn check(pred: &Partition, gold: &Partition) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::Mismatch(format!(
            "prediction covers {} messages, gold covers {}",
            pred.len(),
            gold.len()
        )));
    }
    Ok(())
}

/// Overlap counts, indexed `[gold session][pred session]` (0-based).
pub fn contingency(pred: &Partition, gold: &Partition) -> Result<Vec<Vec<usize>>> {
    check(pred, gold)?;
    let mut table = vec![vec![0; pred.session_count()]; gold.session_count()];
    for (g, p) in gold.labels().iter().zip(pred.labels()) {
        table[g - 1][p - 1] += 1;
    }
    Ok(table)
}

fn entropy(sizes: &[usize], n: f64) -> f64 {
    sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| s as f64 / n * (n / s as f64).ln())
        .sum()
}

/// Mutual information normalised by the arithmetic mean of both entropies,
/// in [0, 1]. Both entropies zero gives 1; exactly one zero gives 0.
pub fn nmi(pred: &Partition, gold: &Partition) -> Result<f64> {
    let table = contingency(pred, gold)?;
    let n = pred.len() as f64;
    if pred.is_empty() {
        return Ok(1.0);
    }
    let hp = entropy(&pred.sizes(), n);
    let hg = entropy(&gold.sizes(), n);
    if hp == 0.0 && hg == 0.0 {
        return Ok(1.0);
    }
    if hp == 0.0 || hg == 0.0 {
        return Ok(0.0);
    }
    let gs = gold.sizes();
    let ps = pred.sizes();
    let mut mi = 0.0;
    for (g, row) in table.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (gs[g] as f64 * ps[p] as f64)).ln();
            }
        }
    }
    Ok((mi / ((hp + hg) / 2.0)).clamp(0.0, 1.0))
}

/// Messages covered by the best one-to-one session pairing, ×100 / N.
pub fn one_to_one(pred: &Partition, gold: &Partition) -> Result<f64> {
    let table = contingency(pred, gold)?;
    if pred.is_empty() {
        return Ok(100.0);
    }
    let weights: Vec<Vec<i64>> = table
        .iter()
        .map(|r| r.iter().map(|&c| c as i64).collect())
        .collect();
    let (best, _) = max_weight_assignment(&weights);
    Ok(100.0 * best as f64 / pred.len() as f64)
}

/// Agreement on same/different session over pairs `(i, j)` with
/// `1 ≤ i − j ≤ window`, ×100. A conversation without such pairs scores 100.
pub fn loc(pred: &Partition, gold: &Partition, window: usize) -> Result<f64> {
    check(pred, gold)?;
    let mut agree = 0usize;
    let mut total = 0usize;
    for i in 0..pred.len() {
        for j in i.saturating_sub(window)..i {
            total += 1;
            agree += usize::from(pred.same_session(i, j) == gold.same_session(i, j));
        }
    }
    Ok(if total == 0 {
        100.0
    } else {
        100.0 * agree as f64 / total as f64
    })
}

pub fn loc3(pred: &Partition, gold: &Partition) -> Result<f64> {
    loc(pred, gold, 3)
}

/// Size-weighted best-match F-score of each gold session, ×100.
pub fn shen_f(pred: &Partition, gold: &Partition) -> Result<f64> {
    let table = contingency(pred, gold)?;
    if pred.is_empty() {
        return Ok(100.0);
    }
    let n = pred.len() as f64;
    let gs = gold.sizes();
    let ps = pred.sizes();
    let total: f64 = table
        .iter()
        .enumerate()
        .map(|(g, row)| {
            let best = row
                .iter()
                .enumerate()
                .map(|(p, &c)| 2.0 * c as f64 / (gs[g] + ps[p]) as f64)
                .fold(0.0, f64::max);
            gs[g] as f64 * best
        })
        .sum();
    Ok(100.0 * total / n)
}

pub fn session_count_mse(preds: &[Partition], golds: &[Partition]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::Mismatch(format!(
            "{} predictions for {} gold partitions",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = preds
        .iter()
        .zip(golds)
        .map(|(p, g)| {
            let d = p.session_count() as f64 - g.session_count() as f64;
            d * d
        })
        .sum();
    Ok(sum / preds.len() as f64)
}

/// 1-based rank of candidate `gold` when candidates are sorted by descending
/// score; equal scores keep candidate order.
pub fn gold_rank(scores: &[f64], gold: usize) -> Result<usize> {
    let s = *scores
        .get(gold)
        .ok_or_else(|| Error::invalid(format!("gold index {gold} out of {} candidates", scores.len())))?;
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &x)| x > s || (x == s && j < gold))
        .count();
    Ok(ahead + 1)
}

/// Rank of the single gold flag in a ranked candidate list.
fn rank_in(list: &[bool]) -> Result<usize> {
    let mut golds = list.iter().enumerate().filter(|(_, &g)| g);
    match (golds.next(), golds.next()) {
        (Some((r, _)), None) => Ok(r + 1),
        (None, _) => Err(Error::invalid("ranked list has no gold candidate")),
        _ => Err(Error::invalid("ranked list has more than one gold candidate")),
    }
}

/// Share of lists with the gold candidate in the top `k`, ×100. Each list
/// holds gold flags in ranked order.
pub fn hits_at_k(ranked: &[Vec<bool>], k: usize) -> Result<f64> {
    if ranked.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for list in ranked {
        hits += usize::from(rank_in(list)? <= k);
    }
    Ok(100.0 * hits as f64 / ranked.len() as f64)
}

/// Mean reciprocal rank of the gold candidate, ×100.
pub fn mrr(ranked: &[Vec<bool>]) -> Result<f64> {
    if ranked.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for list in ranked {
        sum += 1.0 / rank_in(list)? as f64;
    }
    Ok(100.0 * sum / ranked.len() as f64)
}

/// Ranked gold flags for a candidate list given its scores.
pub fn ranked_flags(scores: &[f64], gold: usize) -> Result<Vec<bool>> {
    let r = gold_rank(scores, gold)?;
    Ok((1..=scores.len()).map(|i| i == r).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nmi: f64,
    pub one_to_one: f64,
    pub loc3: f64,
    pub shen_f: f64,
    pub mse: f64,
    pub conversations: usize,
    pub messages: usize,
}

impl MetricReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14}{:>10}", "metric", "score");
        for (name, v) in [
            ("NMI", self.nmi),
            ("1-1", self.one_to_one),
            ("Loc3", self.loc3),
            ("Shen-F", self.shen_f),
            ("MSE", self.mse),
        ] {
            let _ = writeln!(s, "{name:<14}{v:>10.4}");
        }
        let _ = writeln!(s, "{:<14}{:>10}", "conversations", self.conversations);
        let _ = write!(s, "{:<14}{:>10}", "messages", self.messages);
        s
    }
}

/// Macro-averaged metric report over aligned prediction/gold lists.
pub fn evaluate(preds: &[Partition], golds: &[Partition]) -> Result<MetricReport> {
    let mse = session_count_mse(preds, golds)?;
    let n = preds.len().max(1) as f64;
    let mut r = MetricReport {
        nmi: 0.0,
        one_to_one: 0.0,
        loc3: 0.0,
        shen_f: 0.0,
        mse,
        conversations: preds.len(),
        messages: preds.iter().map(Partition::len).sum(),
    };
    for (p, g) in preds.iter().zip(golds) {
        r.nmi += 100.0 * nmi(p, g)?;
        r.one_to_one += one_to_one(p, g)?;
        r.loc3 += loc3(p, g)?;
        r.shen_f += shen_f(p, g)?;
    }
    r.nmi /= n;
    r.one_to_one /= n;
    r.loc3 /= n;
    r.shen_f /= n;
    Ok(r)
}

#[cfg(test)]
mod tests;
