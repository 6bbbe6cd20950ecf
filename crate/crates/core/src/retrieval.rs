//! First-stage retrieval over the surviving modality and candidate-pool
//! construction.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::corpus::{Catalog, ItemGraph, ItemIdx, Modality};
use crate::error::{Error, Result};
use crate::math::ln;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Document frequencies and average length over the catalog's
/// concatenated text fields.
#[derive(Debug, Clone, Default)]
pub struct Bm25Stats {
    pub n_docs: usize,
    pub avg_doc_len: f64,
    pub doc_freq: BTreeMap<String, u32>,
}

impl Bm25Stats {
    pub fn idf(&self, term: &str) -> f64 {
        let df = f64::from(self.doc_freq.get(term).copied().unwrap_or(0));
        if df == 0.0 {
            return 0.0;
        }
        let n = self.n_docs as f64;
        ln((n - df + 0.5) / (df + 0.5) + 1.0)
    }
}

/// Okapi BM25 of `doc` against `query`. Each query token occurrence
/// contributes; repeated query terms therefore weigh more.
pub fn bm25_score<S: AsRef<str>>(query: &[S], doc: &[S], stats: &Bm25Stats) -> f64 {
    if query.is_empty() || doc.is_empty() || stats.avg_doc_len <= 0.0 {
        return 0.0;
    }
    let len_norm = 1.0 - BM25_B + BM25_B * doc.len() as f64 / stats.avg_doc_len;
    query
        .iter()
        .map(|q| {
            let q = q.as_ref();
            let tf = doc.iter().filter(|d| d.as_ref() == q).count() as f64;
            if tf == 0.0 {
                return 0.0;
            }
            stats.idf(q) * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * len_norm)
        })
        .sum()
}

/// Precomputed per-document term counts for fast BM25 over a catalog.
#[derive(Debug, Clone)]
pub struct TextIndex {
    stats: Bm25Stats,
    term_ids: BTreeMap<String, u32>,
    idf: Vec<f64>,
    /// Per item: sorted `(term id, tf)` pairs.
    docs: Vec<Vec<(u32, u32)>>,
    doc_len: Vec<u32>,
}

impl TextIndex {
    pub fn build(catalog: &Catalog) -> Self {
        let mut term_ids: BTreeMap<String, u32> = BTreeMap::new();
        let mut docs = Vec::with_capacity(catalog.len());
        let mut doc_len = Vec::with_capacity(catalog.len());
        let mut doc_freq: BTreeMap<String, u32> = BTreeMap::new();
        for item in catalog.items() {
            let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
            let mut len = 0;
            for tok in item.text_tokens() {
                let next = term_ids.len() as u32;
                let id = *term_ids.entry(tok.clone()).or_insert(next);
                *counts.entry(id).or_default() += 1;
                len += 1;
            }
            docs.push(counts.into_iter().collect::<Vec<_>>());
            doc_len.push(len);
        }
        let mut df_by_id = alloc::vec![0_u32; term_ids.len()];
        for doc in &docs {
            for &(t, _) in doc {
                df_by_id[t as usize] += 1;
            }
        }
        for (term, &id) in &term_ids {
            doc_freq.insert(term.clone(), df_by_id[id as usize]);
        }
        let total: u64 = doc_len.iter().map(|&l| u64::from(l)).sum();
        let stats = Bm25Stats {
            n_docs: catalog.len(),
            avg_doc_len: if catalog.is_empty() { 0.0 } else { total as f64 / catalog.len() as f64 },
            doc_freq,
        };
        let mut idf = alloc::vec![0.0; term_ids.len()];
        for (term, &id) in &term_ids {
            idf[id as usize] = stats.idf(term);
        }
        Self { stats, term_ids, idf, docs, doc_len }
    }

    pub fn stats(&self) -> &Bm25Stats {
        &self.stats
    }

    /// Maps query tokens to term ids, dropping terms unseen in the catalog
    /// (they contribute nothing).
    pub fn encode_query<S: AsRef<str>>(&self, query: &[S]) -> Vec<u32> {
        query.iter().filter_map(|q| self.term_ids.get(q.as_ref()).copied()).collect()
    }

    pub fn score_encoded(&self, query: &[u32], item: ItemIdx) -> f64 {
        let doc = &self.docs[item.get()];
        if query.is_empty() || doc.is_empty() || self.stats.avg_doc_len <= 0.0 {
            return 0.0;
        }
        let len_norm = 1.0 - BM25_B + BM25_B * f64::from(self.doc_len[item.get()]) / self.stats.avg_doc_len;
        query
            .iter()
            .map(|&q| match doc.binary_search_by_key(&q, |&(t, _)| t) {
                Ok(pos) => {
                    let tf = f64::from(doc[pos].1);
                    self.idf[q as usize] * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * len_norm)
                }
                Err(_) => 0.0,
            })
            .sum()
    }
}

/// Ranked `(item, raw score)` pairs from one retriever.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawScoreList {
    pub entries: Vec<(ItemIdx, f64)>,
    /// Set when the query carried no evidence and nothing was retrieved.
    pub empty_evidence: bool,
}

/// Descending score, ascending item index (= ascending item_id).
pub fn rank_order(a: &(ItemIdx, f64), b: &(ItemIdx, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn top_k(scores: Vec<f64>, k: usize) -> Vec<(ItemIdx, f64)> {
    let mut ranked: Vec<(ItemIdx, f64)> =
        scores.into_iter().enumerate().map(|(i, s)| (ItemIdx(i as u32), s)).collect();
    ranked.sort_by(rank_order);
    ranked.truncate(k);
    ranked
}

pub fn jaccard<A: AsRef<str>, B: AsRef<str>>(a: &[A], b: &[B]) -> f64 {
    let a: BTreeSet<&str> = a.iter().map(AsRef::as_ref).collect();
    let b: BTreeSet<&str> = b.iter().map(AsRef::as_ref).collect();
    let inter = a.intersection(&b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Exhaustive scorers for the three first-stage retrievers.
#[derive(Debug, Clone, Copy)]
pub struct Retrievers<'a> {
    pub catalog: &'a Catalog,
    pub text: &'a TextIndex,
    pub graph: &'a ItemGraph,
}

impl<'a> Retrievers<'a> {
    pub fn text_scores<S: AsRef<str>>(&self, query: &[S]) -> Vec<f64> {
        let q = self.text.encode_query(query);
        (0..self.catalog.len()).map(|i| self.text.score_encoded(&q, ItemIdx(i as u32))).collect()
    }

    pub fn image_scores<S: AsRef<str>>(&self, tags: &[S]) -> Vec<f64> {
        self.catalog.items().iter().map(|item| jaccard(tags, &item.image_tags)).collect()
    }

    /// Sum over history items of the edge weight to each candidate.
    pub fn graph_scores(&self, history: &[ItemIdx]) -> Vec<f64> {
        let mut scores = alloc::vec![0.0; self.catalog.len()];
        for &h in history {
            for &(n, w) in self.graph.neighbors(h) {
                scores[n.get()] += f64::from(w);
            }
        }
        scores
    }

    pub fn retrieve_text<S: AsRef<str>>(&self, query: &[S], k: usize) -> RawScoreList {
        if query.is_empty() {
            return RawScoreList { entries: Vec::new(), empty_evidence: true };
        }
        RawScoreList { entries: top_k(self.text_scores(query), k), empty_evidence: false }
    }

    pub fn retrieve_image<S: AsRef<str>>(&self, tags: &[S], k: usize) -> RawScoreList {
        if tags.is_empty() {
            return RawScoreList { entries: Vec::new(), empty_evidence: true };
        }
        RawScoreList { entries: top_k(self.image_scores(tags), k), empty_evidence: false }
    }

    pub fn retrieve_graph(&self, history: &[ItemIdx], k: usize) -> RawScoreList {
        if history.is_empty() {
            return RawScoreList { entries: Vec::new(), empty_evidence: true };
        }
        RawScoreList { entries: top_k(self.graph_scores(history), k), empty_evidence: false }
    }

    /// Raw first-stage scores of every catalog item for `modality`, with
    /// the query assembled from the payloads of `query_items`.
    pub fn scores_for(&self, modality: Modality, query_items: &[ItemIdx]) -> Vec<f64> {
        match modality {
            Modality::Text => {
                let q: Vec<&str> = query_items
                    .iter()
                    .flat_map(|&i| self.catalog.item(i).text_tokens().map(String::as_str))
                    .collect();
                self.text_scores(&q)
            }
            Modality::Image => {
                let q: Vec<&str> = query_items
                    .iter()
                    .flat_map(|&i| self.catalog.item(i).image_tags.iter().map(String::as_str))
                    .collect();
                self.image_scores(&q)
            }
            Modality::Behavior => self.graph_scores(query_items),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolEntry {
    pub item: ItemIdx,
    /// 1-based first-stage rank.
    pub rank: u32,
    /// Min–max normalized first-stage score.
    pub s0: f64,
    pub raw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub episode_id: String,
    /// Retriever that produced the pool.
    pub source: Modality,
    /// Sorted by rank.
    pub entries: Vec<PoolEntry>,
    /// Evaluator-only.
    pub contains_target: bool,
}

impl CandidatePool {
    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn position(&self, item: ItemIdx) -> Option<usize> {
        self.entries.iter().position(|e| e.item == item)
    }

    pub fn contains(&self, item: ItemIdx) -> bool {
        self.position(item).is_some()
    }

    /// Items in first-stage order.
    pub fn first_stage_order(&self) -> Vec<ItemIdx> {
        self.entries.iter().map(|e| e.item).collect()
    }

    fn from_ranked(episode_id: String, source: Modality, ranked: Vec<(ItemIdx, f64)>, target: ItemIdx) -> Self {
        let raw: Vec<f64> = ranked.iter().map(|&(_, s)| s).collect();
        let s0 = normalize_first_stage(&raw);
        let contains_target = ranked.iter().any(|&(i, _)| i == target);
        let entries = ranked
            .into_iter()
            .zip(s0)
            .enumerate()
            .map(|(pos, ((item, raw), s0))| PoolEntry { item, rank: pos as u32 + 1, s0, raw })
            .collect();
        Self { episode_id, source, entries, contains_target }
    }
}

/// Min–max normalization to `[0, 1]`; a constant list maps to 0.5.
pub fn normalize_first_stage(raw: &[f64]) -> Vec<f64> {
    let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if raw.is_empty() || hi - lo <= 0.0 || !(hi - lo).is_finite() {
        return alloc::vec![0.5; raw.len()];
    }
    raw.iter().map(|&x| (x - lo) / (hi - lo)).collect()
}

/// Ranked candidates with `exclude` removed; errors when fewer than
/// `pool_size` remain.
fn ranked_candidates(raw_scores: &[f64], exclude: &[ItemIdx], pool_size: usize) -> Result<Vec<(ItemIdx, f64)>> {
    if pool_size == 0 {
        return Err(Error::Config("pool size must be positive".into()));
    }
    let excluded: BTreeSet<ItemIdx> = exclude.iter().copied().filter(|i| i.get() < raw_scores.len()).collect();
    let available = raw_scores.len() - excluded.len();
    if available < pool_size {
        return Err(Error::Config(format!(
            "catalog has {available} eligible items, fewer than pool size {pool_size}"
        )));
    }
    let mut ranked = top_k(raw_scores.to_vec(), raw_scores.len());
    ranked.retain(|(i, _)| !excluded.contains(i));
    Ok(ranked)
}

/// Target plus the top `B - 1` other items by raw first-stage score,
/// skipping `exclude` (the user's already consumed items). The target
/// keeps its own raw score, so it lands wherever that score puts it.
pub fn build_target_positive_pool(
    episode_id: String,
    target: ItemIdx,
    source: Modality,
    raw_scores: &[f64],
    exclude: &[ItemIdx],
    pool_size: usize,
) -> Result<CandidatePool> {
    if target.get() >= raw_scores.len() {
        return Err(Error::Integrity(format!("target index {} outside catalog", target.0)));
    }
    let mut ranked = ranked_candidates(raw_scores, exclude, pool_size)?;
    ranked.retain(|&(i, _)| i != target);
    ranked.truncate(pool_size - 1);
    ranked.push((target, raw_scores[target.get()]));
    ranked.sort_by(rank_order);
    Ok(CandidatePool::from_ranked(episode_id, source, ranked, target))
}

/// Plain top-`B` retrieval skipping `exclude`; the target may be missing.
pub fn build_retrieved_pool(
    episode_id: String,
    target: ItemIdx,
    source: Modality,
    raw_scores: &[f64],
    exclude: &[ItemIdx],
    pool_size: usize,
) -> Result<CandidatePool> {
    let mut ranked = ranked_candidates(raw_scores, exclude, pool_size)?;
    ranked.truncate(pool_size);
    Ok(CandidatePool::from_ranked(episode_id, source, ranked, target))
}

pub fn recall_at_k<T: PartialEq>(ranked: &[T], target: &T, k: usize) -> u8 {
    u8::from(ranked.iter().take(k).any(|x| x == target))
}
