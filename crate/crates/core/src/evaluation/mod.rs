//! Score fusion, ranking metrics, alpha selection, agentic diagnostics and
//! significance statistics.

mod stats;

pub use stats::{cliffs_delta, wilcoxon_signed_rank, WILCOXON_EXACT_MAX_N};

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::corpus::ItemIdx;
use crate::environment::{ActionKind, Episode, Observation, TaskFamily};
use crate::error::{Error, Result};
use crate::math::{log2, mean, std_dev};
use crate::retrieval::{normalize_first_stage, rank_order, recall_at_k, CandidatePool};

/// The 11-point alpha grid `0.0, 0.1, ..., 1.0`.
pub fn alpha_grid() -> [f64; 11] {
    core::array::from_fn(|i| i as f64 / 10.0)
}

/// Fuses first-stage and agent scores into a ranking, best first.
///
/// Agent scores are min–max normalized over the scored items. Items the
/// map omits take `s_mma = s0`, which keeps their first-stage relative
/// order. Ties break by ascending item index.
pub fn fuse_scores(pool: &CandidatePool, scores: &BTreeMap<ItemIdx, f64>, alpha: f64) -> Vec<(ItemIdx, f64)> {
    let scored: Vec<(ItemIdx, f64)> =
        pool.entries.iter().filter_map(|e| scores.get(&e.item).map(|&s| (e.item, s))).collect();
    let raw: Vec<f64> = scored.iter().map(|&(_, s)| s).collect();
    let norm: BTreeMap<ItemIdx, f64> =
        scored.iter().map(|&(i, _)| i).zip(normalize_first_stage(&raw)).collect();
    let mut fused: Vec<(ItemIdx, f64)> = pool
        .entries
        .iter()
        .map(|e| {
            let s_mma = norm.get(&e.item).copied().unwrap_or(e.s0);
            (e.item, alpha * e.s0 + (1.0 - alpha) * s_mma)
        })
        .collect();
    fused.sort_by(rank_order);
    fused
}

/// 1-based rank of `target`, if present.
pub fn rank_of<T: PartialEq>(ranked: &[T], target: &T) -> Option<usize> {
    ranked.iter().position(|x| x == target).map(|p| p + 1)
}

/// Single-relevant NDCG: `1 / log2(rank + 1)` inside the cutoff, else 0.
pub fn ndcg_at_k<T: PartialEq>(ranked: &[T], target: &T, k: usize) -> f64 {
    match rank_of(ranked, target) {
        Some(r) if r <= k => 1.0 / log2(r as f64 + 1.0),
        _ => 0.0,
    }
}

pub fn hr_at_k<T: PartialEq>(ranked: &[T], target: &T, k: usize) -> u8 {
    recall_at_k(ranked, target, k)
}

/// HR and NDCG at the two reported cutoffs for one ranking.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RankMetrics {
    pub hr10: f64,
    pub hr20: f64,
    pub ndcg10: f64,
    pub ndcg20: f64,
}

impl RankMetrics {
    pub fn of(ranking: &[ItemIdx], target: ItemIdx) -> Self {
        Self {
            hr10: f64::from(hr_at_k(ranking, &target, 10)),
            hr20: f64::from(hr_at_k(ranking, &target, 20)),
            ndcg10: ndcg_at_k(ranking, &target, 10),
            ndcg20: ndcg_at_k(ranking, &target, 20),
        }
    }

    pub fn mean_of(rows: &[RankMetrics]) -> Self {
        let col = |f: fn(&RankMetrics) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
        Self { hr10: col(|m| m.hr10), hr20: col(|m| m.hr20), ndcg10: col(|m| m.ndcg10), ndcg20: col(|m| m.ndcg20) }
    }
}

/// Mean and population standard deviation of per-seed values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn over(values: &[f64]) -> Self {
        Self { mean: mean(values), std: std_dev(values), n: values.len() }
    }
}

/// What alpha selection needs from one finished validation episode.
#[derive(Debug, Clone, Copy)]
pub struct AlphaSample<'p> {
    pub pool: &'p CandidatePool,
    /// `None` when the episode ended in a fallback; its ranking then does
    /// not depend on alpha.
    pub scores: Option<&'p BTreeMap<ItemIdx, f64>>,
    pub target: ItemIdx,
}

impl<'p> AlphaSample<'p> {
    pub fn from_episode(ep: &'p Episode<'_>) -> Option<Self> {
        let outcome = ep.outcome()?;
        Some(Self { pool: ep.pool(), scores: outcome.scores.as_ref(), target: ep.target() })
    }

    pub fn ndcg10(&self, alpha: f64) -> f64 {
        let ranking: Vec<ItemIdx> = match self.scores {
            Some(s) => fuse_scores(self.pool, s, alpha).into_iter().map(|(i, _)| i).collect(),
            None => self.pool.first_stage_order(),
        };
        ndcg_at_k(&ranking, &self.target, 10)
    }
}

/// Mean validation NDCG@10 for each grid point.
pub fn alpha_curve(samples: &[AlphaSample<'_>]) -> [(f64, f64); 11] {
    alpha_grid().map(|a| (a, mean(&samples.iter().map(|s| s.ndcg10(a)).collect::<Vec<_>>())))
}

/// Grid point with the highest mean NDCG@10; ties go to the smaller alpha.
pub fn grid_search_alpha(samples: &[AlphaSample<'_>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("alpha search needs at least one validation episode".into()));
    }
    let mut best = (0.0, f64::NEG_INFINITY);
    for (a, v) in alpha_curve(samples) {
        if v > best.1 {
            best = (a, v);
        }
    }
    Ok(best.0)
}

/// Per-episode facts the agentic diagnostics are computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub family: TaskFamily,
    /// `(kind, returned Null)` for every evidence tool or `AskUser` call.
    pub calls: Vec<(ActionKind, bool)>,
    pub first_action: Option<ActionKind>,
    pub turns: usize,
    pub ndcg10: f64,
}

impl TrajectorySummary {
    pub fn from_episode(ep: &Episode<'_>) -> Self {
        let history = ep.history();
        Self {
            family: ep.family(),
            calls: history
                .iter()
                .filter(|h| h.action.kind().is_tool_call())
                .map(|h| (h.action.kind(), matches!(h.observation, Observation::Null)))
                .collect(),
            first_action: history.first().map(|h| h.action.kind()),
            turns: history.len(),
            ndcg10: ep.outcome().map_or(0.0, |o| o.ndcg10),
        }
    }

    pub fn null_count(&self) -> usize {
        self.calls.iter().filter(|c| c.1).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgenticMetrics {
    /// Among episodes with at least one Null, share ending with NDCG@10 > 0.
    pub recovery_rate: f64,
    /// Null-returning tool calls over all tool calls, pooled.
    pub failed_call_rate: f64,
    pub mean_turns: f64,
    /// Mean history length among episodes with NDCG@10 > 0.
    pub turns_to_success: f64,
    /// Share of OOMA episodes whose first action is the surviving
    /// modality's tool.
    pub first_action_rate: f64,
    pub episodes: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn agentic_metrics(trajectories: &[TrajectorySummary]) -> AgenticMetrics {
    let with_null: Vec<&TrajectorySummary> = trajectories.iter().filter(|t| t.null_count() > 0).collect();
    let recovered = with_null.iter().filter(|t| t.ndcg10 > 0.0).count();
    let calls: usize = trajectories.iter().map(|t| t.calls.len()).sum();
    let nulls: usize = trajectories.iter().map(TrajectorySummary::null_count).sum();
    let successes: Vec<f64> = trajectories.iter().filter(|t| t.ndcg10 > 0.0).map(|t| t.turns as f64).collect();
    let ooma: Vec<&TrajectorySummary> = trajectories.iter().filter(|t| t.family.is_ooma()).collect();
    let routed = ooma.iter().filter(|t| t.first_action.is_some() && t.first_action == t.family.expected_first_tool()).count();
    AgenticMetrics {
        recovery_rate: ratio(recovered, with_null.len()),
        failed_call_rate: ratio(nulls, calls),
        mean_turns: mean(&trajectories.iter().map(|t| t.turns as f64).collect::<Vec<_>>()),
        turns_to_success: mean(&successes),
        first_action_rate: ratio(routed, ooma.len()),
        episodes: trajectories.len(),
    }
}

/// Mean of `(family, value)` pairs per family.
pub fn mean_ndcg_by_family(rows: impl IntoIterator<Item = (TaskFamily, f64)>) -> BTreeMap<TaskFamily, f64> {
    let mut groups: BTreeMap<TaskFamily, Vec<f64>> = BTreeMap::new();
    for (f, v) in rows {
        groups.entry(f).or_default().push(v);
    }
    groups.into_iter().map(|(f, v)| (f, mean(&v))).collect()
}

/// Recall before and after reranking a retrieved (not target-positive)
/// pool, plus the reranked HR@10 / NDCG@10.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullCatalogMetrics {
    pub recall_pre: u8,
    pub recall_post: u8,
    pub hr10: f64,
    pub ndcg10: f64,
}

pub fn full_catalog_metrics(pool: &CandidatePool, reranked: &[ItemIdx], target: ItemIdx, k: usize) -> FullCatalogMetrics {
    let pre = pool.first_stage_order();
    FullCatalogMetrics {
        recall_pre: recall_at_k(&pre, &target, k),
        recall_post: recall_at_k(reranked, &target, k),
        hr10: f64::from(hr_at_k(reranked, &target, 10)),
        ndcg10: ndcg_at_k(reranked, &target, 10),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Modality;
    use crate::retrieval::PoolEntry;
    use alloc::vec;

    fn pool(s0: &[f64]) -> CandidatePool {
        let mut entries: Vec<PoolEntry> = s0
            .iter()
            .enumerate()
            .map(|(i, &s)| PoolEntry { item: ItemIdx(i as u32), rank: 0, s0: s, raw: s })
            .collect();
        entries.sort_by(|a, b| b.s0.total_cmp(&a.s0).then(a.item.cmp(&b.item)));
        for (r, e) in entries.iter_mut().enumerate() {
            e.rank = r as u32 + 1;
        }
        CandidatePool { episode_id: "p".into(), source: Modality::Text, entries, contains_target: true }
    }

    fn order(v: Vec<(ItemIdx, f64)>) -> Vec<u32> {
        v.into_iter().map(|(i, _)| i.0).collect()
    }

    #[test]
    fn ndcg_examples() {
        let r = [5, 9, 2, 7];
        assert_eq!(ndcg_at_k(&r, &5, 10), 1.0);
        assert_eq!(hr_at_k(&r, &5, 10), 1);
        assert_eq!(ndcg_at_k(&r, &2, 10), 0.5);
        assert_eq!(ndcg_at_k(&r, &7, 3), 0.0);
        assert_eq!(ndcg_at_k(&r, &100, 10), 0.0);
    }

    #[test]
    fn omitted_items_keep_first_stage_order() {
        let p = pool(&[1.0, 0.8, 0.6, 0.0]);
        let mut m = BTreeMap::new();
        m.insert(ItemIdx(3), 10.0);
        m.insert(ItemIdx(0), 0.0);
        let fused = order(fuse_scores(&p, &m, 0.5));
        // item 3 -> 0.5*0 + 0.5*1; item 0 -> 0.5*1 + 0.5*0; both tie at 0.5
        // with item 1 (0.8) and 2 (0.6) unscored
        assert_eq!(fused, vec![1, 2, 0, 3]);
    }

    #[test]
    fn boundary_alphas() {
        let p = pool(&[0.2, 1.0, 0.0, 0.7]);
        let m: BTreeMap<ItemIdx, f64> = [(ItemIdx(0), 3.0), (ItemIdx(1), 1.0), (ItemIdx(2), 2.0), (ItemIdx(3), 0.0)].into();
        assert_eq!(order(fuse_scores(&p, &m, 1.0)), vec![1, 3, 0, 2]);
        assert_eq!(order(fuse_scores(&p, &m, 0.0)), vec![0, 2, 1, 3]);
    }

    #[test]
    fn copying_s0_selects_smallest_alpha() {
        let p = pool(&[0.1, 1.0, 0.0, 0.5]);
        let m: BTreeMap<ItemIdx, f64> = p.entries.iter().map(|e| (e.item, e.s0)).collect();
        let s = AlphaSample { pool: &p, scores: Some(&m), target: ItemIdx(0) };
        assert_eq!(grid_search_alpha(&[s]).unwrap(), 0.0);
    }

    #[test]
    fn oracle_scores_select_zero() {
        let p = pool(&[0.1, 1.0, 0.0, 0.5]);
        let m: BTreeMap<ItemIdx, f64> = p.entries.iter().map(|e| (e.item, f64::from(e.item == ItemIdx(2)))).collect();
        let s = AlphaSample { pool: &p, scores: Some(&m), target: ItemIdx(2) };
        assert_eq!(grid_search_alpha(&[s]).unwrap(), 0.0);
        assert!(grid_search_alpha(&[]).is_err());
    }

    #[test]
    fn null_then_evidence_counts_half() {
        let t = TrajectorySummary {
            family: TaskFamily::ImageOnly,
            calls: vec![(ActionKind::AnalyzeText, true), (ActionKind::AnalyzeImage, false)],
            first_action: Some(ActionKind::AnalyzeText),
            turns: 3,
            ndcg10: 0.5,
        };
        let m = agentic_metrics(&[t]);
        assert_eq!(m.failed_call_rate, 0.5);
        assert_eq!(m.first_action_rate, 0.0);
        assert_eq!(m.recovery_rate, 1.0);
        assert_eq!(m.turns_to_success, 3.0);
    }
}
