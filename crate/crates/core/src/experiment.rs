//! Episode sets, cached pools, policy runs and validation tuning over one
//! catalog.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_item_graph, chronological_split, Catalog, ItemGraph, ItemIdx, Modality};
use crate::environment::{pool_source, EnvConfig, Episode, EpisodeSpec, EpisodeSplit, Mode, TaskFamily, World};
use crate::error::{Error, Result};
use crate::evaluation::{
    agentic_metrics, alpha_grid, full_catalog_metrics, fuse_scores, mean_ndcg_by_family, ndcg_at_k, AgenticMetrics,
    FullCatalogMetrics, RankMetrics, TrajectorySummary,
};
use crate::math::{fnv1a, mean, mix_seed};
use crate::policies::{
    modality_scores, EvidenceProfile, LinearPolicy, Policy, PolicyParams, RuleRouter, RuleRouterConfig,
};
use crate::retrieval::{build_retrieved_pool, build_target_positive_pool, CandidatePool, TextIndex};
use crate::training::{train, IterationLog, PpoConfig, RolloutSource, ValueParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkbenchConfig {
    pub env: EnvConfig,
    /// Chronological train/validation/test fractions.
    pub split: [f64; 3],
    /// Most recent share of the training interactions used as training
    /// targets; the graph for those episodes is built from the rest.
    pub train_target_fraction: f64,
    /// Share of training (spec, family) pairs held out as the query split.
    pub query_share: f64,
}

impl Default for WorkbenchConfig {
    fn default() -> Self {
        Self { env: EnvConfig::default(), split: [0.8, 0.1, 0.1], train_target_fraction: 0.25, query_share: 0.2 }
    }
}

impl WorkbenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if !(self.train_target_fraction > 0.0 && self.train_target_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_target_fraction {} must be in (0,1)",
                self.train_target_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.query_share) {
            return Err(Error::Config(format!("query_share {} must be in [0,1)", self.query_share)));
        }
        Ok(())
    }
}

/// Deterministic support/query assignment of a training (spec, family) pair.
pub fn is_query_pair(spec_key: &str, family: TaskFamily, query_share: f64) -> bool {
    let h = fnv1a(format!("{spec_key}:{}", family.id()).as_bytes());
    ((h % 10_000) as f64) < query_share * 10_000.0
}

/// Targets of `segment` (a subrange of the catalog's time-sorted
/// interactions) with each user's preceding `context_len` items.
fn build_specs(catalog: &Catalog, start: usize, end: usize, context_len: usize) -> Vec<EpisodeSpec> {
    let mut history: BTreeMap<&str, Vec<ItemIdx>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let mut specs = Vec::new();
    for (pos, it) in catalog.interactions().iter().enumerate().take(end) {
        let Some(item) = catalog.lookup(&it.item_id) else { continue };
        let past = history.entry(it.user_id.as_str()).or_default();
        if pos >= start && !past.is_empty() && seen.insert((it.user_id.as_str(), item)) {
            let context = past[past.len().saturating_sub(context_len)..].to_vec();
            specs.push(EpisodeSpec { user_id: it.user_id.clone(), target: item, context, seen: past.clone() });
        }
        past.push(item);
    }
    specs
}

struct SpecSet {
    specs: Vec<EpisodeSpec>,
    /// Target-positive pools per first-stage source, indexed by `Modality::index`.
    pools: Vec<[Arc<CandidatePool>; 3]>,
}

/// Everything needed to create episodes for one catalog: text index,
/// graphs, episode specs per split and their cached pools.
pub struct Workbench {
    catalog: Catalog,
    config: WorkbenchConfig,
    text: TextIndex,
    graph: ItemGraph,
    training_graph: ItemGraph,
    train: SpecSet,
    val: SpecSet,
    test: SpecSet,
    /// Per family: indices into `train.specs` assigned to support / query.
    support_by_family: BTreeMap<TaskFamily, Vec<usize>>,
    query_by_family: BTreeMap<TaskFamily, Vec<usize>>,
}

impl core::fmt::Debug for Workbench {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Workbench")
            .field("items", &self.catalog.len())
            .field("train_specs", &self.train.specs.len())
            .field("val_specs", &self.val.specs.len())
            .field("test_specs", &self.test.specs.len())
            .finish()
    }
}

impl Workbench {
    pub fn new(catalog: Catalog, config: WorkbenchConfig) -> Result<Self> {
        config.validate()?;
        let split = chronological_split(&catalog, config.split)?;
        let (n_train, n_val) = (split.train.len(), split.val.len());
        let inner_end = n_train - libm::floor(n_train as f64 * config.train_target_fraction) as usize;
        let graph = build_item_graph(&catalog, split.train);
        let training_graph = build_item_graph(&catalog, &split.train[..inner_end]);
        let text = TextIndex::build(&catalog);
        let ctx = config.env.context_len;
        let train_specs = build_specs(&catalog, inner_end, n_train, ctx);
        let val_specs = build_specs(&catalog, n_train, n_train + n_val, ctx);
        let test_specs = build_specs(&catalog, n_train + n_val, catalog.interactions().len(), ctx);
        if train_specs.is_empty() || val_specs.is_empty() || test_specs.is_empty() {
            return Err(Error::Config(format!(
                "too few episodes: {} train / {} val / {} test targets with nonempty context",
                train_specs.len(),
                val_specs.len(),
                test_specs.len()
            )));
        }
        let make_set = |specs: Vec<EpisodeSpec>, g: &ItemGraph| -> Result<SpecSet> {
            let world = World { catalog: &catalog, text: &text, graph: g };
            let pools = specs
                .iter()
                .map(|spec| {
                    let key = spec.key(&world);
                    let query = spec.query_items(config.env.first_stage_window);
                    let build = |m: Modality| -> Result<Arc<CandidatePool>> {
                        let raw = world.scores_for(m, query);
                        build_target_positive_pool(key.clone(), spec.target, m, &raw, &spec.seen, config.env.pool_size)
                            .map(Arc::new)
                    };
                    Ok([build(Modality::Text)?, build(Modality::Image)?, build(Modality::Behavior)?])
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SpecSet { specs, pools })
        };
        let train = make_set(train_specs, &training_graph)?;
        let val = make_set(val_specs, &graph)?;
        let test = make_set(test_specs, &graph)?;
        let mut support_by_family = BTreeMap::new();
        let mut query_by_family = BTreeMap::new();
        {
            let world = World { catalog: &catalog, text: &text, graph: &training_graph };
            for family in TaskFamily::ALL {
                let (mut s, mut q) = (Vec::new(), Vec::new());
                for (i, spec) in train.specs.iter().enumerate() {
                    if is_query_pair(&spec.key(&world), family, config.query_share) {
                        q.push(i);
                    } else {
                        s.push(i);
                    }
                }
                if s.is_empty() {
                    return Err(Error::Config(format!("no support episodes for family {}", family.id())));
                }
                support_by_family.insert(family, s);
                query_by_family.insert(family, q);
            }
        }
        Ok(Self { catalog, config, text, graph, training_graph, train, val, test, support_by_family, query_by_family })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn config(&self) -> &WorkbenchConfig {
        &self.config
    }

    pub fn env(&self) -> &EnvConfig {
        &self.config.env
    }

    fn set(&self, split: EpisodeSplit) -> &SpecSet {
        match split {
            EpisodeSplit::Support | EpisodeSplit::Query => &self.train,
            EpisodeSplit::Validation => &self.val,
            EpisodeSplit::Test => &self.test,
        }
    }

    /// Specs of a split. Support and query share the training specs; the
    /// pair assignment is per family.
    pub fn specs(&self, split: EpisodeSplit) -> &[EpisodeSpec] {
        &self.set(split).specs
    }

    pub fn support_indices(&self, family: TaskFamily) -> &[usize] {
        &self.support_by_family[&family]
    }

    pub fn query_indices(&self, family: TaskFamily) -> &[usize] {
        &self.query_by_family[&family]
    }

    pub fn world(&self, split: EpisodeSplit) -> World<'_> {
        let graph = match split {
            EpisodeSplit::Support | EpisodeSplit::Query => &self.training_graph,
            _ => &self.graph,
        };
        World { catalog: &self.catalog, text: &self.text, graph }
    }

    /// Target-positive episode for spec `index` of `split`.
    pub fn episode(&self, split: EpisodeSplit, index: usize, family: TaskFamily, env: &EnvConfig) -> Result<Episode<'_>> {
        let set = self.set(split);
        let spec = set
            .specs
            .get(index)
            .ok_or_else(|| Error::Usage(format!("{} has no episode {index}", split.as_str())))?;
        if env.pool_size != self.config.env.pool_size
            || env.first_stage_window != self.config.env.first_stage_window
            || env.context_len != self.config.env.context_len
        {
            return Err(Error::Usage("pool-shaping settings differ from the workbench's".into()));
        }
        let pool = set.pools[index][pool_source(family.mask()).index()].clone();
        Episode::with_pool(spec, family, self.world(split), env, split, pool)
    }

    /// Episode over the plain top-`pool_size` first-stage retrieval of a
    /// test spec; the target may be missing from the pool.
    pub fn full_catalog_episode(&self, index: usize, family: TaskFamily, env: &EnvConfig) -> Result<Episode<'_>> {
        let spec = self
            .test
            .specs
            .get(index)
            .ok_or_else(|| Error::Usage(format!("test has no episode {index}")))?;
        let world = self.world(EpisodeSplit::Test);
        let source = pool_source(family.mask());
        let raw = world.scores_for(source, spec.query_items(env.first_stage_window));
        let pool = build_retrieved_pool(spec.key(&world), spec.target, source, &raw, &spec.seen, env.pool_size)?;
        Episode::with_pool(spec, family, world, env, EpisodeSplit::Test, Arc::new(pool))
    }

    /// Every spec of `split` crossed with `families`, played by `policy`
    /// in spec-major order.
    pub fn play_all(
        &self,
        split: EpisodeSplit,
        families: &[TaskFamily],
        env: &EnvConfig,
        policy: &mut dyn Policy,
        seed: u64,
    ) -> Result<Vec<Episode<'_>>> {
        let mut out = Vec::with_capacity(self.specs(split).len() * families.len());
        for index in 0..self.specs(split).len() {
            for &family in families {
                let mut ep = self.episode(split, index, family, env)?;
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, fnv1a(ep.id().as_bytes())));
                play_episode(&mut ep, policy, &mut rng)?;
                out.push(ep);
            }
        }
        Ok(out)
    }
}

/// Steps `ep` with `policy` until it terminates.
pub fn play_episode(ep: &mut Episode<'_>, policy: &mut dyn Policy, rng: &mut dyn RngCore) -> Result<()> {
    while !ep.is_done() {
        let decision = policy.act(&ep.view(), rng);
        ep.step_with_rationale(decision.rationale, decision.action)?;
    }
    Ok(())
}

impl RolloutSource for Workbench {
    fn support_episode(&self, rng: &mut ChaCha8Rng, family: TaskFamily) -> Result<Episode<'_>> {
        let pick = self.support_indices(family);
        let index = pick[rng.gen_range(0..pick.len())];
        self.episode(EpisodeSplit::Support, index, family, &self.config.env)
    }

    fn query_diagnostics(&self, params: &PolicyParams) -> Result<BTreeMap<TaskFamily, f64>> {
        let mut policy = LinearPolicy::new(params.clone(), true);
        let mut out = BTreeMap::new();
        for family in TaskFamily::ALL {
            let mut ndcg = Vec::new();
            for &index in self.query_indices(family) {
                let mut ep = self.episode(EpisodeSplit::Query, index, family, &self.config.env)?;
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                play_episode(&mut ep, &mut policy, &mut rng)?;
                ndcg.push(ep.outcome().map_or(0.0, |o| o.ndcg10));
            }
            out.insert(family, mean(&ndcg));
        }
        Ok(out)
    }
}

/// Per-modality evidence scores of a finished episode, captured once so
/// combiner weights and alpha can be re-tuned without replaying it. The
/// routing decisions of both policies do not depend on either.
#[derive(Debug, Clone)]
pub struct FrozenEpisode<'p> {
    pub family: TaskFamily,
    pub target: ItemIdx,
    pub pool: &'p CandidatePool,
    /// `None` when the ranking is the first-stage order: the episode fell
    /// back or scored without any evidence.
    pub per_modality: Option<[Option<Vec<f64>>; 3]>,
}

impl<'p> FrozenEpisode<'p> {
    pub fn capture(ep: &'p Episode<'_>) -> Self {
        let view = ep.view();
        let fell_back = ep.outcome().is_none_or(|o| o.fallback);
        let per_modality = (!fell_back)
            .then(|| modality_scores(&view, &EvidenceProfile::from_view(&view)))
            .filter(|per| per.iter().any(Option::is_some));
        Self { family: ep.family(), target: ep.target(), pool: ep.pool(), per_modality }
    }

    pub fn ndcg10(&self, weights: [f64; 3], alpha: f64) -> f64 {
        let ranking: Vec<ItemIdx> = match &self.per_modality {
            None => self.pool.first_stage_order(),
            Some(per) => {
                let scores: BTreeMap<ItemIdx, f64> = self
                    .pool
                    .entries
                    .iter()
                    .enumerate()
                    .map(|(i, e)| {
                        let s = per.iter().zip(weights).filter_map(|(m, w)| m.as_ref().map(|v| w * v[i])).sum();
                        (e.item, s)
                    })
                    .collect();
                fuse_scores(self.pool, &scores, alpha).into_iter().map(|(i, _)| i).collect()
            }
        };
        ndcg_at_k(&ranking, &self.target, 10)
    }
}

/// Combiner grid: each weight in `{0, .25, .5, .75, 1}`, renormalized to
/// sum 1, all-zero skipped, duplicates after renormalization dropped.
pub fn combiner_grid() -> Vec<[f64; 3]> {
    let steps = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut out: Vec<[f64; 3]> = Vec::new();
    for a in steps {
        for b in steps {
            for c in steps {
                let total = a + b + c;
                if total == 0.0 {
                    continue;
                }
                let w = [a / total, b / total, c / total];
                if !out.iter().any(|o| o.iter().zip(&w).all(|(x, y)| (x - y).abs() < 1e-12)) {
                    out.push(w);
                }
            }
        }
    }
    out
}

fn mean_ndcg(frozen: &[FrozenEpisode<'_>], weights: [f64; 3], alpha: f64) -> f64 {
    mean(&frozen.iter().map(|f| f.ndcg10(weights, alpha)).collect::<Vec<_>>())
}

/// Best combiner weights at fixed `alpha`; ties keep the earlier grid point.
pub fn tune_combiner(frozen: &[FrozenEpisode<'_>], alpha: f64) -> Result<[f64; 3]> {
    if frozen.is_empty() {
        return Err(Error::Config("combiner tuning needs validation episodes".into()));
    }
    let mut best = ([1.0 / 3.0; 3], f64::NEG_INFINITY);
    for w in combiner_grid() {
        let v = mean_ndcg(frozen, w, alpha);
        if v > best.1 {
            best = (w, v);
        }
    }
    Ok(best.0)
}

/// Best alpha on the 11-point grid at fixed weights; ties go to the smaller alpha.
pub fn tune_alpha(frozen: &[FrozenEpisode<'_>], weights: [f64; 3]) -> Result<f64> {
    if frozen.is_empty() {
        return Err(Error::Config("alpha search needs at least one validation episode".into()));
    }
    let mut best = (0.0, f64::NEG_INFINITY);
    for a in alpha_grid() {
        let v = mean_ndcg(frozen, weights, a);
        if v > best.1 {
            best = (a, v);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuned {
    pub weights: [f64; 3],
    pub alpha: f64,
}

/// Plays validation episodes of all families with `policy`, then tunes
/// the combiner (if `tune_weights`) and alpha.
pub fn tune_on_validation(
    wb: &Workbench,
    policy: &mut dyn Policy,
    weights: [f64; 3],
    tune_weights: bool,
    seed: u64,
) -> Result<Tuned> {
    let env = wb.env().clone();
    let episodes = wb.play_all(EpisodeSplit::Validation, &TaskFamily::ALL, &env, policy, seed)?;
    let frozen: Vec<FrozenEpisode<'_>> = episodes.iter().map(FrozenEpisode::capture).collect();
    let weights = if tune_weights { tune_combiner(&frozen, env.alpha)? } else { weights };
    let alpha = tune_alpha(&frozen, weights)?;
    Ok(Tuned { weights, alpha })
}

/// Reranks `n` retrieved (not target-positive) test pools and reports
/// recall before and after along with HR/NDCG.
pub fn full_catalog_check(
    wb: &Workbench,
    policy: &mut dyn Policy,
    family: TaskFamily,
    env: &EnvConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<FullCatalogMetrics>> {
    let count = n.min(wb.specs(EpisodeSplit::Test).len());
    (0..count)
        .map(|index| {
            let mut ep = wb.full_catalog_episode(index, family, env)?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, index as u64));
            play_episode(&mut ep, policy, &mut rng)?;
            let ranking = &ep.outcome().expect("finished episode").ranking;
            let m = full_catalog_metrics(ep.pool(), ranking, ep.target(), env.pool_size);
            if m.recall_pre != m.recall_post {
                return Err(Error::Integrity(format!("recall changed by reranking in {}", ep.id())));
            }
            Ok(m)
        })
        .collect()
}

/// Mean NDCG@10 of finished episodes per family.
pub fn ndcg_by_family(episodes: &[Episode<'_>]) -> BTreeMap<TaskFamily, f64> {
    mean_ndcg_by_family(episodes.iter().map(|e| (e.family(), e.outcome().map_or(0.0, |o| o.ndcg10))))
}

/// Test-split results of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    pub per_family: BTreeMap<TaskFamily, RankMetrics>,
    /// Means over the one-observed-modality families' episodes.
    pub ooma: RankMetrics,
    pub agentic_ooma: AgenticMetrics,
    pub agentic_all: AgenticMetrics,
    /// Per-episode OOMA NDCG@10 in spec-major, family order; paired
    /// across policies evaluated on the same workbench.
    pub ooma_ndcg10: Vec<f64>,
    /// Mean episode reward sum on OOMA episodes.
    pub ooma_return: f64,
}

pub fn summarize(episodes: &[Episode<'_>]) -> PolicyEvaluation {
    let metrics: Vec<(TaskFamily, RankMetrics)> = episodes
        .iter()
        .map(|e| {
            let ranking = &e.outcome().expect("finished episode").ranking;
            (e.family(), RankMetrics::of(ranking, e.target()))
        })
        .collect();
    let mut groups: BTreeMap<TaskFamily, Vec<RankMetrics>> = BTreeMap::new();
    for (f, m) in &metrics {
        groups.entry(*f).or_default().push(*m);
    }
    let per_family = groups.iter().map(|(f, rows)| (*f, RankMetrics::mean_of(rows))).collect();
    let ooma_rows: Vec<RankMetrics> = metrics.iter().filter(|(f, _)| f.is_ooma()).map(|(_, m)| *m).collect();
    let summaries: Vec<TrajectorySummary> = episodes.iter().map(TrajectorySummary::from_episode).collect();
    let ooma_summaries: Vec<TrajectorySummary> = summaries.iter().filter(|t| t.family.is_ooma()).cloned().collect();
    let ooma_returns: Vec<f64> =
        episodes.iter().filter(|e| e.family().is_ooma()).map(|e| e.rewards().iter().sum()).collect();
    PolicyEvaluation {
        per_family,
        ooma: RankMetrics::mean_of(&ooma_rows),
        agentic_ooma: agentic_metrics(&ooma_summaries),
        agentic_all: agentic_metrics(&summaries),
        ooma_ndcg10: ooma_rows.iter().map(|m| m.ndcg10).collect(),
        ooma_return: mean(&ooma_returns),
    }
}

/// Outputs of training and comparing both routers on one workbench.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub params: PolicyParams,
    pub value: ValueParams,
    pub log: Vec<IterationLog>,
    pub learned_alpha: f64,
    pub rule_alpha: f64,
    pub learned: PolicyEvaluation,
    pub rule: PolicyEvaluation,
}

/// Trains the learned router, tunes combiner weights and alpha for it and
/// alpha for the rule router on validation, then evaluates both on every
/// test spec and family in auto mode.
pub fn run_seed(wb: &Workbench, ppo: &PpoConfig, seed: u64) -> Result<SeedRun> {
    let env = EnvConfig { mode: Mode::Auto, ..wb.env().clone() };
    let ppo = PpoConfig { seed, ..ppo.clone() };
    let initial = PolicyParams { mode: Mode::Auto, ..PolicyParams::default() };
    let out = train(wb, initial, &ppo, env.reward.gamma)?;

    let mut greedy = LinearPolicy::new(out.params.clone(), true);
    let tuned = tune_on_validation(wb, &mut greedy, out.params.weights, true, seed)?;
    let params = PolicyParams { weights: tuned.weights, ..out.params };
    let mut rule = RuleRouter::default();
    let rule_alpha = tune_on_validation(wb, &mut rule, RuleRouterConfig::default().weights, false, seed)?.alpha;

    let mut greedy = LinearPolicy::new(params.clone(), true);
    let learned_eps =
        wb.play_all(EpisodeSplit::Test, &TaskFamily::ALL, &EnvConfig { alpha: tuned.alpha, ..env.clone() }, &mut greedy, seed)?;
    let rule_eps =
        wb.play_all(EpisodeSplit::Test, &TaskFamily::ALL, &EnvConfig { alpha: rule_alpha, ..env }, &mut rule, seed)?;
    Ok(SeedRun {
        seed,
        params,
        value: out.value,
        log: out.log,
        learned_alpha: tuned.alpha,
        rule_alpha,
        learned: summarize(&learned_eps),
        rule: summarize(&rule_eps),
    })
}

/// OOMA test NDCG@10 of the scripted router with and without clarifying
/// questions, at the same alpha.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractiveCheck {
    pub alpha: f64,
    pub auto_ndcg10: f64,
    pub interactive_ndcg10: f64,
    pub auto_return: f64,
    pub interactive_return: f64,
}

pub fn interactive_check(wb: &Workbench, seed: u64) -> Result<InteractiveCheck> {
    let mut rule = RuleRouter::default();
    let alpha = tune_on_validation(wb, &mut rule, RuleRouterConfig::default().weights, false, seed)?.alpha;
    let base = EnvConfig { alpha, ..wb.env().clone() };
    let auto = wb.play_all(EpisodeSplit::Test, &TaskFamily::OOMA, &EnvConfig { mode: Mode::Auto, ..base.clone() }, &mut rule, seed)?;
    let mut asking = RuleRouter::new(RuleRouterConfig { ask_after_probe: true, ..RuleRouterConfig::default() });
    let inter =
        wb.play_all(EpisodeSplit::Test, &TaskFamily::OOMA, &EnvConfig { mode: Mode::Interactive, ..base }, &mut asking, seed)?;
    let (a, i) = (summarize(&auto), summarize(&inter));
    Ok(InteractiveCheck {
        alpha,
        auto_ndcg10: a.ooma.ndcg10,
        interactive_ndcg10: i.ooma.ndcg10,
        auto_return: a.ooma_return,
        interactive_return: i.ooma_return,
    })
}
