//! Aligned text tables and line-delimited records for evaluation results.

use std::fmt::Write as _;

use modalroute_core::environment::TaskFamily;
use modalroute_core::evaluation::{cliffs_delta, wilcoxon_signed_rank, FullCatalogMetrics, MeanStd};
use modalroute_core::experiment::PolicyEvaluation;
use modalroute_core::math::mean;

use crate::error::Result;
use crate::io::ReportRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(title: &str, headers: &[&str]) -> Self {
        Self { title: title.into(), headers: headers.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    /// First column left-aligned, the rest right-aligned.
    pub fn render(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
                if i == 0 {
                    let _ = write!(s, "{cell:<w$}");
                } else {
                    let _ = write!(s, "  {cell:>w$}");
                }
            }
            s.trim_end().to_string()
        };
        let mut out = format!("{}\n", self.title);
        out.push_str(&line(&self.headers));
        out.push('\n');
        let total = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
        out.push_str(&"-".repeat(total));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

pub fn fmt_ms(m: MeanStd) -> String {
    format!("{:.4} ± {:.4}", m.mean, m.std)
}

/// Means of a full-catalog run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FullCatalogSummary {
    pub recall_pre: f64,
    pub recall_post: f64,
    pub hr10: f64,
    pub ndcg10: f64,
}

impl FullCatalogSummary {
    pub fn of(rows: &[FullCatalogMetrics]) -> Self {
        let col = |f: fn(&FullCatalogMetrics) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
        Self {
            recall_pre: col(|m| f64::from(m.recall_pre)),
            recall_post: col(|m| f64::from(m.recall_post)),
            hr10: col(|m| m.hr10),
            ndcg10: col(|m| m.ndcg10),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub eval: PolicyEvaluation,
    pub full_catalog: Option<FullCatalogSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyResults {
    pub policy: String,
    pub seeds: Vec<SeedResult>,
}

impl PolicyResults {
    fn over(&self, f: impl Fn(&SeedResult) -> f64) -> MeanStd {
        MeanStd::over(&self.seeds.iter().map(f).collect::<Vec<_>>())
    }

    fn over_full(&self, f: impl Fn(&FullCatalogSummary) -> f64) -> Option<MeanStd> {
        let v: Option<Vec<f64>> = self.seeds.iter().map(|s| s.full_catalog.as_ref().map(&f)).collect();
        v.filter(|v| !v.is_empty()).map(|v| MeanStd::over(&v))
    }
}

/// Paired comparison of per-episode OOMA NDCG@10, pooled over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Significance {
    pub candidate: String,
    pub baseline: String,
    pub mean_delta: f64,
    pub wilcoxon_p: f64,
    pub cliffs_delta: f64,
    pub pairs: usize,
}

impl Significance {
    pub fn paired(candidate: &PolicyResults, baseline: &PolicyResults) -> Result<Self> {
        let pool = |r: &PolicyResults| r.seeds.iter().flat_map(|s| s.eval.ooma_ndcg10.iter().copied()).collect::<Vec<_>>();
        let (a, b) = (pool(candidate), pool(baseline));
        if a.len() != b.len() {
            return Err(modalroute_core::Error::Integrity(format!(
                "unpaired samples: {} vs {} episodes",
                a.len(),
                b.len()
            ))
            .into());
        }
        let deltas: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        Ok(Self {
            candidate: candidate.policy.clone(),
            baseline: baseline.policy.clone(),
            mean_delta: mean(&deltas),
            wilcoxon_p: wilcoxon_signed_rank(&deltas)?,
            cliffs_delta: cliffs_delta(&a, &b)?,
            pairs: deltas.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub dataset: String,
    pub config_hash: String,
    pub policies: Vec<PolicyResults>,
    pub significance: Option<Significance>,
}

fn rank_cols() -> [(&'static str, fn(&modalroute_core::evaluation::RankMetrics) -> f64); 4] {
    [("HR@10", |m| m.hr10), ("HR@20", |m| m.hr20), ("NDCG@10", |m| m.ndcg10), ("NDCG@20", |m| m.ndcg20)]
}

type AgenticCol = (&'static str, &'static str, fn(&PolicyEvaluation) -> f64);

fn agentic_cols() -> [AgenticCol; 6] {
    [
        ("NDCG@10", "ndcg10", |e| e.ooma.ndcg10),
        ("failed-call", "failed_call_rate", |e| e.agentic_ooma.failed_call_rate),
        ("turns", "mean_turns", |e| e.agentic_ooma.mean_turns),
        ("recovery", "recovery_rate", |e| e.agentic_ooma.recovery_rate),
        ("turns-to-success", "turns_to_success", |e| e.agentic_ooma.turns_to_success),
        ("first-action", "first_action_rate", |e| e.agentic_ooma.first_action_rate),
    ]
}

fn full_cols() -> [(&'static str, &'static str, fn(&FullCatalogSummary) -> f64); 4] {
    [
        ("Recall@B pre", "recall_pre", |f| f.recall_pre),
        ("Recall@B post", "recall_post", |f| f.recall_post),
        ("HR@10", "hr10", |f| f.hr10),
        ("NDCG@10", "ndcg10", |f| f.ndcg10),
    ]
}

impl Report {
    fn families(&self) -> Vec<TaskFamily> {
        let mut out: Vec<TaskFamily> = Vec::new();
        for p in &self.policies {
            for s in &p.seeds {
                for f in s.eval.per_family.keys() {
                    if !out.contains(f) {
                        out.push(*f);
                    }
                }
            }
        }
        out.sort();
        out
    }

    pub fn tables(&self) -> Vec<Table> {
        let mut tables = Vec::new();
        let families = self.families();
        let header = |first: &'static str, rest: &[&'static str]| {
            let mut h = vec![first];
            h.extend_from_slice(rest);
            h
        };
        let rank_names: Vec<&str> = rank_cols().iter().map(|c| c.0).collect();

        for p in &self.policies {
            let mut t = Table::new(&format!("Per-family results: {} on {}", p.policy, self.dataset), &header("family", &rank_names));
            for f in &families {
                let mut row = vec![f.id().to_string()];
                for (_, col) in rank_cols() {
                    row.push(fmt_ms(p.over(|s| s.eval.per_family.get(f).map_or(0.0, col))));
                }
                t.push(row);
            }
            tables.push(t);
        }

        let mut t = Table::new(&format!("OOMA average on {}", self.dataset), &header("policy", &rank_names));
        for p in &self.policies {
            let mut row = vec![p.policy.clone()];
            for (_, col) in rank_cols() {
                row.push(fmt_ms(p.over(|s| col(&s.eval.ooma))));
            }
            t.push(row);
        }
        tables.push(t);

        if self.policies.iter().any(|p| p.over_full(|f| f.hr10).is_some()) {
            let names: Vec<&str> = full_cols().iter().map(|c| c.0).collect();
            let mut t = Table::new(&format!("Full-catalog fixed pool on {}", self.dataset), &header("policy", &names));
            for p in &self.policies {
                let cells: Option<Vec<String>> = full_cols().iter().map(|(_, _, col)| p.over_full(col).map(fmt_ms)).collect();
                if let Some(cells) = cells {
                    let mut row = vec![p.policy.clone()];
                    row.extend(cells);
                    t.push(row);
                }
            }
            tables.push(t);
        }

        let names: Vec<&str> = agentic_cols().iter().map(|c| c.0).collect();
        let mut t = Table::new(&format!("Router comparison on {} (OOMA)", self.dataset), &header("policy", &names));
        for p in &self.policies {
            let mut row = vec![p.policy.clone()];
            for (_, _, col) in agentic_cols() {
                row.push(fmt_ms(p.over(|s| col(&s.eval))));
            }
            t.push(row);
        }
        tables.push(t);

        if let Some(s) = &self.significance {
            let mut t = Table::new(
                &format!("Significance on {} (OOMA NDCG@10, {} pairs)", self.dataset, s.pairs),
                &["comparison", "mean delta", "Wilcoxon p", "Cliff's delta"],
            );
            t.push(vec![
                format!("{} vs {}", s.candidate, s.baseline),
                format!("{:+.4}", s.mean_delta),
                format!("{:.3e}", s.wilcoxon_p),
                format!("{:+.4}", s.cliffs_delta),
            ]);
            tables.push(t);
        }
        tables
    }

    pub fn render(&self) -> String {
        let mut out = format!("config {}\n", self.config_hash);
        for t in self.tables() {
            out.push('\n');
            out.push_str(&t.render());
        }
        out
    }

    pub fn records(&self) -> Vec<ReportRecord> {
        let mut out = Vec::new();
        let mut push = |policy: &str, family: &str, metric: &str, m: MeanStd| {
            out.push(ReportRecord {
                dataset: self.dataset.clone(),
                policy: policy.into(),
                family: family.into(),
                metric: metric.into(),
                mean: m.mean,
                std: m.std,
                n_seeds: m.n,
                config_hash: self.config_hash.clone(),
            })
        };
        let families = self.families();
        for p in &self.policies {
            for f in &families {
                for (name, col) in rank_cols() {
                    push(&p.policy, f.id(), &name.to_lowercase().replace('@', ""), p.over(|s| s.eval.per_family.get(f).map_or(0.0, col)));
                }
            }
            for (name, col) in rank_cols() {
                push(&p.policy, "ooma", &name.to_lowercase().replace('@', ""), p.over(|s| col(&s.eval.ooma)));
            }
            for (_, metric, col) in agentic_cols().into_iter().skip(1) {
                push(&p.policy, "ooma", metric, p.over(|s| col(&s.eval)));
            }
            for (_, metric, col) in full_cols() {
                if let Some(m) = p.over_full(col) {
                    push(&p.policy, "full-catalog", metric, m);
                }
            }
        }
        if let Some(s) = &self.significance {
            let n = self.policies.first().map_or(0, |p| p.seeds.len());
            let label = format!("{}-vs-{}", s.candidate, s.baseline);
            for (metric, v) in [("mean_delta", s.mean_delta), ("wilcoxon_p", s.wilcoxon_p), ("cliffs_delta", s.cliffs_delta)] {
                push(&label, "ooma", metric, MeanStd { mean: v, std: 0.0, n });
            }
        }
        out
    }
}
