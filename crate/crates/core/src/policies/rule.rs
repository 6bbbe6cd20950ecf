use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{score_candidates, Decision, Policy};
use crate::environment::{Action, ActionKind, EpisodeView, Mode, Observation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleRouterConfig {
    /// After probing, ask the user once about every modality that
    /// returned evidence. Only takes effect in interactive mode.
    pub ask_after_probe: bool,
    pub weights: [f64; 3],
}

impl Default for RuleRouterConfig {
    fn default() -> Self {
        Self { ask_after_probe: false, weights: [1.0 / 3.0; 3] }
    }
}

/// Deterministic control: one call each to text, graph, image (a `Null`
/// simply moves on), then an equal-weight evidence score.
#[derive(Debug, Clone, Default)]
pub struct RuleRouter {
    pub config: RuleRouterConfig,
}

impl RuleRouter {
    pub const ORDER: [ActionKind; 3] = [ActionKind::AnalyzeText, ActionKind::RetrieveGraph, ActionKind::AnalyzeImage];

    pub fn new(config: RuleRouterConfig) -> Self {
        Self { config }
    }

    pub fn decide(&self, view: &EpisodeView<'_, '_>) -> Decision {
        let history = view.history();
        let tried = |k: ActionKind| history.iter().any(|h| h.action.kind() == k);
        if let Some(next) = Self::ORDER.into_iter().find(|&k| !tried(k)) {
            return Decision {
                rationale: format!("probe {}", next.as_str()),
                action: Action::tool(next).expect("evidence tool"),
            };
        }
        if self.config.ask_after_probe && view.mode() == Mode::Interactive {
            let evidenced: Vec<_> = Self::ORDER
                .iter()
                .filter_map(|&k| {
                    let modality = k.tool_modality()?;
                    history
                        .iter()
                        .any(|h| {
                            matches!(&h.observation, Observation::Evidence(e) if e.modality() == modality)
                        })
                        .then_some(modality)
                })
                .collect();
            let asked = |m| {
                history.iter().any(|h| matches!(&h.action, Action::AskUser { modality, .. } if *modality == m))
            };
            if let Some(m) = evidenced.into_iter().find(|&m| !asked(m)) {
                return Decision {
                    rationale: format!("clarify {}", m.as_str()),
                    action: Action::AskUser { modality: m, query: String::from("What are you looking for?") },
                };
            }
        }
        Decision { rationale: String::from("score"), action: score_candidates(view, self.config.weights) }
    }
}

impl Policy for RuleRouter {
    fn name(&self) -> &str {
        "rule-router"
    }

    fn act(&mut self, view: &EpisodeView<'_, '_>, _rng: &mut dyn RngCore) -> Decision {
        self.decide(view)
    }
}
