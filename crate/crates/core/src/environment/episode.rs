use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::action::{Action, ActionKind, ClarificationPayload, Evidence, GraphNeighbor, Observation};
use super::{EnvConfig, Mode, ModalityMask, TaskFamily};
use crate::corpus::{ItemIdx, ItemRecord, Modality};
use crate::error::{Error, Result};
use crate::evaluation::{fuse_scores, ndcg_at_k};
use crate::retrieval::{build_target_positive_pool, rank_order, CandidatePool, Retrievers, TextIndex};

/// Read-only corpus handles an episode draws evidence from.
pub type World<'a> = Retrievers<'a>;

const IMAGE_TAGS_PER_CALL: usize = 5;
const CLARIFICATION_TAGS: usize = 10;
const CLARIFICATION_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EpisodeSplit {
    /// Used for policy updates.
    Support,
    /// Held back for per-family diagnostics during training.
    Query,
    Validation,
    Test,
}

impl EpisodeSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeSplit::Support => "support",
            EpisodeSplit::Query => "query",
            EpisodeSplit::Validation => "val",
            EpisodeSplit::Test => "test",
        }
    }
}

/// A held-out target together with the user context visible before it.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub user_id: String,
    pub target: ItemIdx,
    /// Most recent history items, oldest first.
    pub context: Vec<ItemIdx>,
    /// Every item the user consumed before the target; kept out of pools.
    pub seen: Vec<ItemIdx>,
}

impl EpisodeSpec {
    pub fn key(&self, world: &World<'_>) -> String {
        format!("{}:{}", self.user_id, world.catalog.item(self.target).item_id)
    }

    /// The most recent `window` context items.
    pub fn query_items(&self, window: usize) -> &[ItemIdx] {
        &self.context[self.context.len().saturating_sub(window)..]
    }
}

/// First-stage source for a mask: text if present, else behavior, else image.
pub fn pool_source(mask: ModalityMask) -> Modality {
    if mask.text {
        Modality::Text
    } else if mask.behavior {
        Modality::Behavior
    } else {
        Modality::Image
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    /// 1-based turn index.
    pub t: usize,
    pub rationale: String,
    pub action: Action,
    pub observation: Observation,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

/// Terminal ranking and how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub ranking: Vec<ItemIdx>,
    /// Submitted score map, kept so the ranking can be re-fused under a
    /// different alpha. `None` when the evaluator fell back.
    pub scores: Option<BTreeMap<ItemIdx, f64>>,
    pub ndcg10: f64,
    pub fallback: bool,
    pub timed_out: bool,
}

/// One reranking episode. Evaluator-facing accessors (target, family,
/// mask) live here; policies only ever see an [`EpisodeView`].
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    id: String,
    user_id: String,
    target: ItemIdx,
    family: TaskFamily,
    split: EpisodeSplit,
    pool: Arc<CandidatePool>,
    context: Vec<ItemIdx>,
    world: World<'a>,
    config: EnvConfig,
    history: Vec<HistoryEntry>,
    null_seen: BTreeSet<ActionKind>,
    /// Default-argument cursors for AnalyzeText / AnalyzeImage.
    cursor: [usize; 2],
    outcome: Option<Outcome>,
}

/// Builds the target-positive pool from the family's surviving source and
/// returns a fresh episode.
pub fn make_episode<'a>(
    spec: &EpisodeSpec,
    family: TaskFamily,
    world: World<'a>,
    config: &EnvConfig,
    split: EpisodeSplit,
) -> Result<Episode<'a>> {
    let source = pool_source(family.mask());
    let raw = world.scores_for(source, spec.query_items(config.first_stage_window));
    let pool = build_target_positive_pool(spec.key(&world), spec.target, source, &raw, &spec.seen, config.pool_size)?;
    Episode::with_pool(spec, family, world, config, split, Arc::new(pool))
}

impl<'a> Episode<'a> {
    /// Uses a prebuilt pool, which must contain the target when the pool
    /// is target-positive.
    pub fn with_pool(
        spec: &EpisodeSpec,
        family: TaskFamily,
        world: World<'a>,
        config: &EnvConfig,
        split: EpisodeSplit,
        pool: Arc<CandidatePool>,
    ) -> Result<Self> {
        config.validate()?;
        let id = format!("{}:{}:{}", split.as_str(), spec.key(&world), family.id());
        Ok(Self {
            id,
            user_id: spec.user_id.clone(),
            target: spec.target,
            family,
            split,
            pool,
            context: spec.context.clone(),
            world,
            config: config.clone(),
            history: Vec::new(),
            null_seen: BTreeSet::new(),
            cursor: [0, 0],
            outcome: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn target(&self) -> ItemIdx {
        self.target
    }

    pub fn family(&self) -> TaskFamily {
        self.family
    }

    pub fn mask(&self) -> ModalityMask {
        self.family.mask()
    }

    pub fn split(&self) -> EpisodeSplit {
        self.split
    }

    pub fn pool(&self) -> &CandidatePool {
        &self.pool
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn world(&self) -> &World<'a> {
        &self.world
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.reward).collect()
    }

    pub fn null_seen(&self) -> &BTreeSet<ActionKind> {
        &self.null_seen
    }

    pub fn is_done(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn outcome(&self) -> Option<&Outcome> {
        self.outcome.as_ref()
    }

    pub fn view(&self) -> EpisodeView<'_, 'a> {
        EpisodeView { ep: self }
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        self.step_with_rationale(String::new(), action)
    }

    pub fn step_with_rationale(&mut self, rationale: String, action: Action) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::Usage(format!("episode {} is already done", self.id)));
        }
        let lambda = self.config.reward;
        let (observation, mut reward, terminal) = match &action {
            Action::AnalyzeText { item_id } | Action::AnalyzeImage { item_id } => {
                let kind = action.kind();
                match self.resolve_item_arg(item_id.as_deref()) {
                    Some(arg) => self.call_tool(kind, arg),
                    None => (Observation::Null, lambda.lambda_invalid, false),
                }
            }
            Action::RetrieveGraph { user_id } => {
                if user_id.as_deref().is_some_and(|u| u != self.user_id) {
                    (Observation::Null, lambda.lambda_invalid, false)
                } else {
                    self.call_tool(ActionKind::RetrieveGraph, None)
                }
            }
            Action::AskUser { modality, query } => self.ask_user(*modality, query),
            Action::ScoreCandidates { scores } => match self.resolve_scores(scores) {
                Some(resolved) => {
                    let ranking: Vec<ItemIdx> =
                        fuse_scores(&self.pool, &resolved, self.config.alpha).into_iter().map(|(i, _)| i).collect();
                    let ndcg10 = ndcg_at_k(&ranking, &self.target, 10);
                    self.outcome =
                        Some(Outcome { ranking, scores: Some(resolved), ndcg10, fallback: false, timed_out: false });
                    (Observation::Terminal { ndcg10, fallback: false }, ndcg10, true)
                }
                None => {
                    let ndcg10 = self.fall_back(false);
                    (Observation::Terminal { ndcg10, fallback: true }, lambda.lambda_invalid, true)
                }
            },
            Action::Invalid { terminal, .. } => {
                if *terminal {
                    let ndcg10 = self.fall_back(false);
                    (Observation::Terminal { ndcg10, fallback: true }, lambda.lambda_invalid, true)
                } else {
                    (Observation::Null, lambda.lambda_invalid, false)
                }
            }
        };

        let t = self.history.len() + 1;
        let mut done = terminal;
        if !done && t >= self.config.reward.turn_budget {
            let ndcg10 = self.fall_back(true);
            reward += ndcg10 + lambda.lambda_invalid;
            done = true;
        }
        let entry = HistoryEntry { t, rationale, action, observation: observation.clone(), reward };
        self.history.push(entry);
        Ok(StepResult { observation, reward, done })
    }

    fn fall_back(&mut self, timed_out: bool) -> f64 {
        let ranking = self.pool.first_stage_order();
        let ndcg10 = ndcg_at_k(&ranking, &self.target, 10);
        self.outcome = Some(Outcome { ranking, scores: None, ndcg10, fallback: true, timed_out });
        ndcg10
    }

    /// `Some(None)` for the default argument, `Some(Some(item))` for a
    /// valid explicit item, `None` for an item outside pool and context.
    fn resolve_item_arg(&self, item_id: Option<&str>) -> Option<Option<ItemIdx>> {
        match item_id {
            None => Some(None),
            Some(id) => {
                let idx = self.world.catalog.lookup(id)?;
                (self.pool.contains(idx) || self.context.contains(&idx)).then_some(Some(idx))
            }
        }
    }

    fn resolve_scores(&self, scores: &BTreeMap<String, f64>) -> Option<BTreeMap<ItemIdx, f64>> {
        scores
            .iter()
            .map(|(id, &s)| {
                let idx = self.world.catalog.lookup(id).filter(|&i| self.pool.contains(i))?;
                s.is_finite().then_some((idx, s))
            })
            .collect()
    }

    fn next_context_item(&mut self, slot: usize) -> Option<ItemIdx> {
        if self.context.is_empty() {
            return None;
        }
        // Most recent first, but items the first stage already queried with
        // come last; past the end the oldest remaining slot repeats.
        let n = self.context.len();
        let w = self.config.first_stage_window.min(n);
        let k = self.cursor[slot].min(n - 1);
        self.cursor[slot] += 1;
        let from_end = if w == n { k } else { (k + w) % n };
        Some(self.context[n - 1 - from_end])
    }

    fn call_tool(&mut self, kind: ActionKind, explicit: Option<ItemIdx>) -> (Observation, f64, bool) {
        let lambda = self.config.reward;
        if self.null_seen.contains(&kind) {
            return (Observation::Null, lambda.lambda_invalid, false);
        }
        let modality = kind.tool_modality().expect("evidence tool");
        if !self.mask().has(modality) {
            self.null_seen.insert(kind);
            return (Observation::Null, lambda.lambda_tool, false);
        }
        let evidence = match modality {
            Modality::Text | Modality::Image => {
                let slot = usize::from(modality == Modality::Image);
                let item = match explicit {
                    Some(item) => Some(item),
                    None => self.next_context_item(slot),
                };
                match item {
                    Some(item) => self.item_evidence(modality, item),
                    None => return (Observation::Null, lambda.lambda_tool, false),
                }
            }
            Modality::Behavior => Evidence::Graph { neighbors: self.graph_neighbors(self.config.graph_evidence_top) },
        };
        (Observation::Evidence(evidence), lambda.lambda_tool, false)
    }

    fn item_evidence(&self, modality: Modality, item: ItemIdx) -> Evidence {
        let record = self.world.catalog.item(item);
        match modality {
            Modality::Text => Evidence::Text {
                item_id: record.item_id.clone(),
                title: record.title.clone(),
                category: record.category.clone(),
                description: record.description.iter().take(self.config.description_limit).cloned().collect(),
            },
            _ => Evidence::Image {
                item_id: record.item_id.clone(),
                tags: record.image_tags.iter().take(IMAGE_TAGS_PER_CALL).cloned().collect(),
            },
        }
    }

    /// Neighbors of the whole visible context, aggregated by edge weight,
    /// excluding the context items themselves.
    fn graph_neighbors(&self, top: usize) -> Vec<GraphNeighbor> {
        let scores = self.world.graph_scores(&self.context);
        let mut ranked: Vec<(ItemIdx, f64)> = scores
            .into_iter()
            .enumerate()
            .map(|(i, s)| (ItemIdx(i as u32), s))
            .filter(|&(i, s)| s > 0.0 && !self.context.contains(&i))
            .collect();
        ranked.sort_by(rank_order);
        ranked.truncate(top);
        ranked
            .into_iter()
            .map(|(i, w)| {
                let rec = self.world.catalog.item(i);
                GraphNeighbor { item_id: rec.item_id.clone(), title: rec.title.join(" "), weight: w }
            })
            .collect()
    }

    fn ask_user(&mut self, modality: Modality, query: &str) -> (Observation, f64, bool) {
        let lambda = self.config.reward;
        if self.config.mode == Mode::Auto {
            return (Observation::Null, lambda.lambda_invalid, false);
        }
        let about = match self.world.catalog.lookup(query.trim()) {
            Some(item) if self.pool.contains(item) => Some(item),
            Some(_) => return (Observation::Null, lambda.lambda_invalid, false),
            None => None,
        };
        if !self.mask().has(modality) {
            return (Observation::Null, lambda.lambda_ask, false);
        }
        let payload = self.synthesize_answer(modality, about);
        (Observation::Clarification(payload), lambda.lambda_ask, false)
    }

    /// Answers are assembled only from payloads of the queried (surviving)
    /// modality.
    fn synthesize_answer(&self, modality: Modality, about: Option<ItemIdx>) -> ClarificationPayload {
        let catalog = self.world.catalog;
        let items: Vec<&ItemRecord> = match about {
            Some(item) => alloc::vec![catalog.item(item)],
            None => self.context.iter().rev().map(|&i| catalog.item(i)).collect(),
        };
        match modality {
            Modality::Text => {
                let terms: Vec<String> =
                    items.iter().flat_map(|r| r.title.iter().chain(&r.category).cloned()).collect();
                let answer = format!("I'm looking for something like: {}", terms.join(" "));
                ClarificationPayload { modality, answer, terms }
            }
            Modality::Image => {
                let terms: Vec<String> = if about.is_some() {
                    items[0].image_tags.iter().take(IMAGE_TAGS_PER_CALL).cloned().collect()
                } else {
                    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
                    for tag in items.iter().flat_map(|r| &r.image_tags) {
                        *freq.entry(tag.as_str()).or_default() += 1;
                    }
                    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
                    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
                    ranked.into_iter().take(CLARIFICATION_TAGS).map(|(t, _)| t.to_string()).collect()
                };
                let answer = format!("Visually I like: {}", terms.join(", "));
                ClarificationPayload { modality, answer, terms }
            }
            Modality::Behavior => {
                let neighbors = self.graph_neighbors(CLARIFICATION_NEIGHBORS);
                let titles: Vec<&str> = neighbors.iter().map(|n| n.title.as_str()).collect();
                let answer = format!("People with my history also chose: {}", titles.join("; "));
                let terms = neighbors.iter().map(|n| n.item_id.clone()).collect();
                ClarificationPayload { modality, answer, terms }
            }
        }
    }
}

/// Everything a policy may condition on: pool, user context ids, its own
/// history. The mask, target and family are not reachable from here.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeView<'e, 'a> {
    ep: &'e Episode<'a>,
}

impl<'e, 'a> EpisodeView<'e, 'a> {
    pub fn episode_id(&self) -> &'e str {
        &self.ep.id
    }

    pub fn user_id(&self) -> &'e str {
        &self.ep.user_id
    }

    /// 1-based index of the turn about to be played.
    pub fn turn(&self) -> usize {
        self.ep.history.len() + 1
    }

    pub fn turn_budget(&self) -> usize {
        self.ep.config.reward.turn_budget
    }

    pub fn budget_left(&self) -> usize {
        self.turn_budget().saturating_sub(self.ep.history.len())
    }

    pub fn mode(&self) -> Mode {
        self.ep.config.mode
    }

    pub fn pool(&self) -> &'e CandidatePool {
        &self.ep.pool
    }

    pub fn context(&self) -> &'e [ItemIdx] {
        &self.ep.context
    }

    pub fn history(&self) -> &'e [HistoryEntry] {
        &self.ep.history
    }

    pub fn item_id(&self, item: ItemIdx) -> &'a str {
        &self.ep.world.catalog.item(item).item_id
    }

    pub fn lookup(&self, item_id: &str) -> Option<ItemIdx> {
        self.ep.world.catalog.lookup(item_id)
    }

    fn evidence_seen(&self, modality: Modality) -> bool {
        self.ep.history.iter().any(|h| match &h.observation {
            Observation::Evidence(ev) => ev.modality() == modality,
            Observation::Clarification(c) => c.modality == modality,
            _ => false,
        })
    }

    /// BM25 access to candidate text; available only once text evidence
    /// has been observed in this episode.
    pub fn text_index(&self) -> Option<&'a TextIndex> {
        self.evidence_seen(Modality::Text).then_some(self.ep.world.text)
    }

    /// Candidate tags; available only once image evidence has been observed.
    pub fn candidate_tags(&self, item: ItemIdx) -> Option<&'a [String]> {
        self.evidence_seen(Modality::Image).then(|| self.ep.world.catalog.item(item).image_tags.as_slice())
    }

    /// Compact snippet for a pool entry drawn from the pool's own source.
    pub fn pool_summary(&self, item: ItemIdx) -> String {
        let pool = &self.ep.pool;
        let record = self.ep.world.catalog.item(item);
        match pool.source {
            Modality::Text => record.title.join(" "),
            Modality::Image => record.image_tags.iter().take(IMAGE_TAGS_PER_CALL).cloned().collect::<Vec<_>>().join(", "),
            Modality::Behavior => {
                let raw = pool.entries.iter().find(|e| e.item == item).map_or(0.0, |e| e.raw);
                format!("co-occurrence weight {raw}")
            }
        }
    }
}
