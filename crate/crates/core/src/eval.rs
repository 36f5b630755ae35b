//! Candidate ranking and retrieval metrics.
//!
//! Ranks are 1-based. Equal scores are ordered by original candidate index, so
//! every metric is reproducible. Pools without any positive candidate are
//! fatal in [`EvalMode::Strict`] and skipped with a warning in
//! [`EvalMode::Lenient`]; the no-answer threshold sweep is the one place where
//! such pools take part (a correct abstention counts as a rank-1 hit).

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{CandidatePool, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPool {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    /// Candidate indices, best first.
    pub ranking: Vec<usize>,
    pub no_answer_predicted: bool,
}

/// Candidate indices sorted by descending score, ties by ascending index.
pub fn rank_scores(scores: &[f64]) -> Result<Vec<usize>> {
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Input(format!("candidate {i} has a NaN score")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(order)
}

impl RankedPool {
    pub fn from_scores(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Input("cannot rank an empty pool".into()));
        }
        if scores.len() != labels.len() {
            return Err(Error::Input(format!("{} scores for {} labels", scores.len(), labels.len())));
        }
        let ranking = rank_scores(&scores)?;
        Ok(RankedPool {
            scores,
            labels,
            ranking,
            no_answer_predicted: false,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn num_positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn has_answer(&self) -> bool {
        self.num_positives() > 0
    }

    pub fn top_score(&self) -> f64 {
        self.scores[self.ranking[0]]
    }

    /// 1-based ranks of the positive candidates, ascending.
    pub fn positive_ranks(&self) -> Vec<usize> {
        self.ranking
            .iter()
            .enumerate()
            .filter(|(_, &c)| self.labels[c] == 1)
            .map(|(r, _)| r + 1)
            .collect()
    }

    /// The pool restricted to its first `n` candidates, re-ranked.
    pub fn truncated(&self, n: usize) -> Result<RankedPool> {
        RankedPool::from_scores(self.scores[..n].to_vec(), self.labels[..n].to_vec())
    }

    /// Sets the no-answer decision for threshold `tau`.
    pub fn apply_threshold(&mut self, tau: f64) {
        self.no_answer_predicted = self.top_score() < tau;
    }
}

/// Scores every candidate of `pool` with `scorer(context, candidate)` and ranks them.
pub fn rank_pool<F>(pool: &CandidatePool, mut scorer: F) -> Result<RankedPool>
where
    F: FnMut(&[Utterance], &Utterance) -> Result<f64>,
{
    let mut scores = Vec::with_capacity(pool.candidates.len());
    for (i, (candidate, _)) in pool.candidates.iter().enumerate() {
        let s = scorer(&pool.context, candidate).map_err(|e| Error::Input(format!("candidate {i}: {e}")))?;
        scores.push(s);
    }
    RankedPool::from_scores(scores, pool.labels())
}

fn answerable<'a>(pools: &'a [RankedPool], mode: EvalMode, metric: &str) -> Result<Vec<&'a RankedPool>> {
    let mut kept = Vec::with_capacity(pools.len());
    let mut skipped = 0;
    for (i, p) in pools.iter().enumerate() {
        if p.has_answer() {
            kept.push(p);
        } else if mode == EvalMode::Strict {
            return Err(Error::Input(format!("{metric}: pool {i} has no positive candidate")));
        } else {
            skipped += 1;
        }
    }
    if skipped > 0 {
        warn!("{metric}: skipped {skipped} pool(s) without a positive candidate");
    }
    if kept.is_empty() {
        return Err(Error::Input(format!("{metric}: no pool has a positive candidate")));
    }
    Ok(kept)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    sum / count as f64
}

/// R_n@k: mean fraction of a pool's positives found in its top `k` of `n`.
///
/// Pools larger than `n` are restricted to their first `n` candidates (the usual
/// way R_2@k is read off 10-candidate pools).
pub fn recall_at_k(pools: &[RankedPool], n: usize, k: usize, mode: EvalMode) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::Input(format!("cutoff k={k} must lie in 1..={n}")));
    }
    let mut restricted = Vec::with_capacity(pools.len());
    for (i, p) in pools.iter().enumerate() {
        match p.len().cmp(&n) {
            std::cmp::Ordering::Less => {
                return Err(Error::Input(format!("pool {i} has {} candidates, fewer than n={n}", p.len())))
            }
            std::cmp::Ordering::Equal => restricted.push(p.clone()),
            std::cmp::Ordering::Greater => restricted.push(p.truncated(n)?),
        }
    }
    let kept = answerable(&restricted, mode, &format!("R_{n}@{k}"))?;
    Ok(mean(kept.iter().map(|p| {
        let hits = p.positive_ranks().iter().filter(|&&r| r <= k).count();
        hits as f64 / p.num_positives() as f64
    })))
}

pub fn average_precision(pool: &RankedPool) -> f64 {
    let ranks = pool.positive_ranks();
    mean(ranks.iter().enumerate().map(|(i, &r)| (i + 1) as f64 / r as f64))
}

pub fn mean_average_precision(pools: &[RankedPool], mode: EvalMode) -> Result<f64> {
    let kept = answerable(pools, mode, "MAP")?;
    Ok(mean(kept.iter().map(|p| average_precision(p))))
}

pub fn mean_reciprocal_rank(pools: &[RankedPool], mode: EvalMode) -> Result<f64> {
    let kept = answerable(pools, mode, "MRR")?;
    Ok(mean(kept.iter().map(|p| 1.0 / p.positive_ranks()[0] as f64)))
}

pub fn precision_at_one(pools: &[RankedPool], mode: EvalMode) -> Result<f64> {
    let kept = answerable(pools, mode, "P@1")?;
    Ok(mean(kept.iter().map(|p| f64::from(p.labels[p.ranking[0]] == 1))))
}

/// The no-answer threshold grid 0.60, 0.65, ..., 0.95.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..8).map(|i| f64::from(60 + 5 * i) / 100.0).collect()
}

/// R_n@1 with abstention: a pool whose top score falls below `tau` is predicted
/// to have no answer, which counts as a hit exactly when the pool is answerless.
pub fn no_answer_recall_at_1(pools: &[RankedPool], tau: f64) -> Result<f64> {
    if pools.is_empty() {
        return Err(Error::Input("no pools to evaluate".into()));
    }
    Ok(mean(pools.iter().map(|p| {
        if p.top_score() < tau {
            f64::from(!p.has_answer())
        } else if p.has_answer() {
            f64::from(p.labels[p.ranking[0]] == 1) / p.num_positives() as f64
        } else {
            0.0
        }
    })))
}

/// Validation score for every grid value, in grid order.
pub fn threshold_sweep(pools: &[RankedPool], grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    grid.iter().map(|&tau| Ok((tau, no_answer_recall_at_1(pools, tau)?))).collect()
}

/// The grid value maximizing [`no_answer_recall_at_1`]; ties go to the smallest.
pub fn select_threshold(pools: &[RankedPool], grid: &[f64]) -> Result<f64> {
    let sweep = threshold_sweep(pools, grid)?;
    let mut best = sweep[0];
    for &(tau, value) in &sweep[1..] {
        if value > best.1 || (value == best.1 && tau < best.0) {
            best = (tau, value);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub recall_at: BTreeMap<(usize, usize), f64>,
    pub map_score: f64,
    pub mrr: f64,
    pub p_at_1: f64,
    pub threshold_used: Option<f64>,
    /// R@1 under the no-answer rule at `threshold_used`.
    pub no_answer_r_at_1: Option<f64>,
}

impl MetricReport {
    /// `key=value` lines in a fixed order.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for ((n, k), v) in &self.recall_at {
            out.push_str(&format!("R@{n},{k}={v}\n"));
        }
        out.push_str(&format!("MAP={}\nMRR={}\nP@1={}\n", self.map_score, self.mrr, self.p_at_1));
        if let Some(t) = self.threshold_used {
            out.push_str(&format!("threshold={t}\n"));
        }
        if let Some(v) = self.no_answer_r_at_1 {
            out.push_str(&format!("NA-R@1={v}\n"));
        }
        out
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "metric      value")?;
        for ((n, k), v) in &self.recall_at {
            writeln!(f, "{:<11} {v:.4}", format!("R_{n}@{k}"))?;
        }
        writeln!(f, "{:<11} {:.4}", "MAP", self.map_score)?;
        writeln!(f, "{:<11} {:.4}", "MRR", self.mrr)?;
        writeln!(f, "{:<11} {:.4}", "P@1", self.p_at_1)?;
        if let Some(t) = self.threshold_used {
            writeln!(f, "{:<11} {t:.2}", "threshold")?;
        }
        if let Some(v) = self.no_answer_r_at_1 {
            writeln!(f, "{:<11} {v:.4}", "NA-R@1")?;
        }
        Ok(())
    }
}

/// Computes the requested `(n, k)` recalls plus MAP, MRR and P@1.
pub fn evaluate(pools: &[RankedPool], cutoffs: &[(usize, usize)], mode: EvalMode) -> Result<MetricReport> {
    let mut recall_at = BTreeMap::new();
    for &(n, k) in cutoffs {
        recall_at.insert((n, k), recall_at_k(pools, n, k, mode)?);
    }
    Ok(MetricReport {
        recall_at,
        map_score: mean_average_precision(pools, mode)?,
        mrr: mean_reciprocal_rank(pools, mode)?,
        p_at_1: precision_at_one(pools, mode)?,
        threshold_used: None,
        no_answer_r_at_1: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(scores: &[f64], labels: &[u8]) -> RankedPool {
        RankedPool::from_scores(scores.to_vec(), labels.to_vec()).unwrap()
    }

    /// Pool of `n` where the positives land on the given 1-based ranks.
    fn pool_with_ranks(n: usize, ranks: &[usize]) -> RankedPool {
        let scores: Vec<f64> = (0..n).map(|i| 1.0 - i as f64 / n as f64).collect();
        let labels = (1..=n).map(|r| u8::from(ranks.contains(&r))).collect();
        RankedPool::from_scores(scores, labels).unwrap()
    }

    #[test]
    fn ranking_and_ties() {
        assert_eq!(pool(&[0.1, 0.9, 0.5], &[0, 1, 0]).ranking, vec![1, 2, 0]);
        assert_eq!(pool(&[0.5, 0.5], &[0, 1]).ranking, vec![0, 1]);
        assert_eq!(pool(&[0.3], &[1]).ranking, vec![0]);
        assert!(RankedPool::from_scores(vec![], vec![]).is_err());
    }

    #[test]
    fn recall_examples() {
        let top = pool_with_ranks(10, &[1]);
        assert_eq!(recall_at_k(&[top], 10, 1, EvalMode::Strict).unwrap(), 1.0);
        let three = pool_with_ranks(10, &[1, 2, 3]);
        assert_eq!(recall_at_k(&[three], 10, 1, EvalMode::Strict).unwrap(), 1.0 / 3.0);
        let two = pool_with_ranks(10, &[2, 4]);
        assert_eq!(recall_at_k(&[two], 10, 2, EvalMode::Strict).unwrap(), 0.5);
        assert!(recall_at_k(&[pool_with_ranks(10, &[1])], 10, 11, EvalMode::Strict).is_err());
    }

    #[test]
    fn map_examples() {
        let ap = mean_average_precision(&[pool_with_ranks(10, &[1, 3])], EvalMode::Strict).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(mean_average_precision(&[pool_with_ranks(10, &[1])], EvalMode::Strict).unwrap(), 1.0);
        assert_eq!(mean_average_precision(&[pool_with_ranks(10, &[5])], EvalMode::Strict).unwrap(), 0.2);
    }

    #[test]
    fn mrr_examples() {
        assert_eq!(mean_reciprocal_rank(&[pool_with_ranks(10, &[2])], EvalMode::Strict).unwrap(), 0.5);
        assert_eq!(mean_reciprocal_rank(&[pool_with_ranks(10, &[1])], EvalMode::Strict).unwrap(), 1.0);
        let pools = [pool_with_ranks(10, &[1]), pool_with_ranks(10, &[4])];
        assert_eq!(mean_reciprocal_rank(&pools, EvalMode::Strict).unwrap(), 0.625);
    }

    #[test]
    fn p_at_1_examples() {
        let mut pools = vec![pool_with_ranks(4, &[1]); 3];
        pools.push(pool_with_ranks(4, &[2]));
        assert_eq!(precision_at_one(&pools, EvalMode::Strict).unwrap(), 0.75);
        assert_eq!(precision_at_one(&pools[..3], EvalMode::Strict).unwrap(), 1.0);
        assert_eq!(precision_at_one(&pools[3..], EvalMode::Strict).unwrap(), 0.0);
    }

    #[test]
    fn answerless_pools_by_mode() {
        let pools = [pool_with_ranks(3, &[1]), pool_with_ranks(3, &[])];
        assert!(mean_reciprocal_rank(&pools, EvalMode::Strict).is_err());
        assert_eq!(mean_reciprocal_rank(&pools, EvalMode::Lenient).unwrap(), 1.0);
    }

    #[test]
    fn default_grid() {
        let g = default_threshold_grid();
        assert_eq!(g, vec![0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95]);
    }

    #[test]
    fn threshold_ties_go_low() {
        let pools = [
            pool(&[0.99, 0.1], &[1, 0]),
            pool(&[0.2, 0.97], &[0, 1]),
            pool(&[0.98, 0.5, 0.4], &[1, 0, 0]),
        ];
        assert_eq!(select_threshold(&pools, &default_threshold_grid()).unwrap(), 0.6);
    }

    #[test]
    fn answerless_pool_prefers_abstention() {
        let pools = [pool(&[0.7, 0.2], &[0, 0])];
        let sweep = threshold_sweep(&pools, &default_threshold_grid()).unwrap();
        assert_eq!(sweep[0].1, 0.0);
        assert_eq!(sweep[1].1, 0.0);
        assert_eq!(sweep[2].1, 0.0);
        assert!(sweep[3..].iter().all(|&(_, v)| v == 1.0));
        assert_eq!(select_threshold(&pools, &default_threshold_grid()).unwrap(), 0.75);
        assert!(select_threshold(&pools, &[]).is_err());
    }

    #[test]
    fn report_key_values() {
        let pools = [pool_with_ranks(10, &[1])];
        let report = evaluate(&pools, &[(10, 1), (2, 1)], EvalMode::Strict).unwrap();
        let text = report.to_key_values();
        assert!(text.contains("R@10,1=1\n"));
        assert!(text.contains("R@2,1=1\n"));
        assert!(text.contains("MAP=1\nMRR=1\nP@1=1\n"));
    }
}
