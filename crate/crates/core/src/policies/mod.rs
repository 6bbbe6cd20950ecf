//! Policies act on the policy-visible [`EpisodeView`] only. The learned
//! router and the rule-based control share the evidence scorers below, so
//! they differ only in which tools they call and when they stop.

mod linear;
mod rule;

pub use linear::{LinearPolicy, PolicyParams, StepRecord, ACTION_KINDS, N_ACTIONS};
pub use rule::{RuleRouter, RuleRouterConfig};

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use rand::RngCore;

use crate::corpus::{tokenize, ItemIdx, Modality};
use crate::environment::{Action, ActionKind, EpisodeView, Evidence, Observation};
use crate::math::ln;
use crate::retrieval::normalize_first_stage;

/// One policy decision: a free-text rationale and the structured action.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub rationale: String,
    pub action: Action,
}

pub trait Policy {
    fn name(&self) -> &str;

    fn act(&mut self, view: &EpisodeView<'_, '_>, rng: &mut dyn RngCore) -> Decision;
}

/// Named slots of the routing feature vector.
pub mod feature {
    pub const BIAS: usize = 0;
    pub const TURN: usize = 1;
    pub const TRIED_TEXT: usize = 2;
    pub const TRIED_IMAGE: usize = 3;
    pub const TRIED_GRAPH: usize = 4;
    pub const TRIED_ASK: usize = 5;
    pub const NULL_TEXT: usize = 6;
    pub const NULL_IMAGE: usize = 7;
    pub const NULL_GRAPH: usize = 8;
    pub const EVIDENCE_TEXT: usize = 9;
    pub const EVIDENCE_IMAGE: usize = 10;
    pub const EVIDENCE_GRAPH: usize = 11;
    pub const CLARIFICATIONS: usize = 12;
    pub const S0_ENTROPY: usize = 13;
    pub const S0_GAP: usize = 14;
    pub const DIM: usize = 15;

    pub const NAMES: [&str; DIM] = [
        "bias",
        "turn",
        "tried_text",
        "tried_image",
        "tried_graph",
        "tried_ask",
        "null_text",
        "null_image",
        "null_graph",
        "evidence_text",
        "evidence_image",
        "evidence_graph",
        "clarifications",
        "s0_entropy",
        "s0_gap",
    ];
}

pub const FEATURE_DIM: usize = feature::DIM;

fn modality_slot(kind: ActionKind) -> Option<usize> {
    kind.tool_modality().map(|m| match m {
        Modality::Text => 0,
        Modality::Image => 1,
        Modality::Behavior => 2,
    })
}

/// Routing features: a deterministic function of the pool and the
/// policy's own action/observation history.
pub fn extract_features(view: &EpisodeView<'_, '_>) -> [f64; FEATURE_DIM] {
    use feature::*;
    let mut f = [0.0; FEATURE_DIM];
    f[BIAS] = 1.0;
    f[TURN] = view.turn() as f64 / view.turn_budget() as f64;
    for h in view.history() {
        let kind = h.action.kind();
        if kind == ActionKind::AskUser {
            f[TRIED_ASK] = 1.0;
        }
        if let Some(slot) = modality_slot(kind) {
            f[TRIED_TEXT + slot] = 1.0;
            match &h.observation {
                Observation::Null => f[NULL_TEXT + slot] = 1.0,
                Observation::Evidence(_) => f[EVIDENCE_TEXT + slot] += 1.0,
                _ => {}
            }
        }
        if matches!(h.observation, Observation::Clarification(_)) {
            f[CLARIFICATIONS] += 1.0;
        }
    }
    let pool = view.pool();
    let total: f64 = pool.entries.iter().map(|e| e.s0).sum();
    let b = pool.size() as f64;
    if b > 1.0 {
        let entropy = if total > 0.0 {
            -pool.entries.iter().map(|e| e.s0 / total).filter(|&p| p > 0.0).map(|p| p * ln(p)).sum::<f64>()
        } else {
            ln(b)
        };
        f[S0_ENTROPY] = entropy / ln(b);
        f[S0_GAP] = pool.entries[0].s0 - pool.entries[1].s0;
    }
    f
}

/// Evidence accumulated from observations so far.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvidenceProfile {
    pub text_terms: Vec<String>,
    pub tag_counts: BTreeMap<String, f64>,
    pub neighbors: BTreeMap<String, f64>,
    pub has: [bool; 3],
}

impl EvidenceProfile {
    pub fn from_view(view: &EpisodeView<'_, '_>) -> Self {
        let mut p = Self::default();
        for h in view.history() {
            match &h.observation {
                Observation::Evidence(Evidence::Text { title, category, description, .. }) => {
                    p.text_terms.extend(title.iter().chain(category).chain(description).cloned());
                    p.has[0] = true;
                }
                Observation::Evidence(Evidence::Image { tags, .. }) => {
                    for t in tags {
                        *p.tag_counts.entry(t.clone()).or_default() += 1.0;
                    }
                    p.has[1] = true;
                }
                Observation::Evidence(Evidence::Graph { neighbors }) => {
                    for n in neighbors {
                        let w = p.neighbors.entry(n.item_id.clone()).or_default();
                        *w = w.max(n.weight);
                    }
                    p.has[2] = true;
                }
                Observation::Clarification(c) => match c.modality {
                    Modality::Text => {
                        p.text_terms.extend(c.terms.iter().flat_map(|t| tokenize(t)));
                        p.has[0] = true;
                    }
                    Modality::Image => {
                        for t in &c.terms {
                            *p.tag_counts.entry(t.clone()).or_default() += 1.0;
                        }
                        p.has[1] = true;
                    }
                    Modality::Behavior => {
                        for id in &c.terms {
                            let w = p.neighbors.entry(id.clone()).or_default();
                            *w = w.max(1.0);
                        }
                        p.has[2] = true;
                    }
                },
                _ => {}
            }
        }
        p
    }
}

/// Per-modality evidence scores over the pool (in pool order), min–max
/// normalized; `None` where no evidence for that modality was gathered.
pub fn modality_scores(view: &EpisodeView<'_, '_>, profile: &EvidenceProfile) -> [Option<Vec<f64>>; 3] {
    let pool = view.pool();
    let text = view.text_index().filter(|_| profile.has[0]).map(|index| {
        let q = index.encode_query(&profile.text_terms);
        pool.entries.iter().map(|e| index.score_encoded(&q, e.item)).collect::<Vec<_>>()
    });
    let image = profile.has[1].then(|| {
        pool.entries
            .iter()
            .map(|e| {
                view.candidate_tags(e.item)
                    .unwrap_or(&[])
                    .iter()
                    .map(|t| profile.tag_counts.get(t).copied().unwrap_or(0.0))
                    .sum::<f64>()
            })
            .collect::<Vec<_>>()
    });
    let graph = profile.has[2].then(|| {
        pool.entries
            .iter()
            .map(|e| profile.neighbors.get(view.item_id(e.item)).copied().unwrap_or(0.0))
            .collect::<Vec<_>>()
    });
    [text, image, graph].map(|s| s.map(|raw| normalize_first_stage(&raw)))
}

/// Weighted evidence combination for every pool item; zeros when no
/// evidence was gathered.
pub fn evidence_scores(view: &EpisodeView<'_, '_>, weights: [f64; 3]) -> Vec<(ItemIdx, f64)> {
    let profile = EvidenceProfile::from_view(view);
    let per = modality_scores(view, &profile);
    view.pool()
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let s: f64 = per.iter().zip(weights).filter_map(|(m, w)| m.as_ref().map(|v| w * v[i])).sum();
            (e.item, s)
        })
        .collect()
}

/// The terminal action both policies emit. Without any gathered evidence
/// the map is empty, so every candidate keeps its first-stage score.
pub fn score_candidates(view: &EpisodeView<'_, '_>, weights: [f64; 3]) -> Action {
    if !EvidenceProfile::from_view(view).has.iter().any(|&h| h) {
        return Action::ScoreCandidates { scores: BTreeMap::new() };
    }
    let scores = evidence_scores(view, weights).into_iter().map(|(i, s)| (view.item_id(i).into(), s)).collect();
    Action::ScoreCandidates { scores }
}

/// First modality that returned evidence, in text/image/behavior order.
pub(crate) fn evidenced_modality(view: &EpisodeView<'_, '_>) -> Option<Modality> {
    let p = EvidenceProfile::from_view(view);
    Modality::ALL.into_iter().zip(p.has).find(|&(_, h)| h).map(|(m, _)| m)
}
