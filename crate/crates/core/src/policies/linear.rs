use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{evidenced_modality, extract_features, score_candidates, Decision, Policy, FEATURE_DIM};
use crate::corpus::Modality;
use crate::environment::{Action, ActionKind, EpisodeView, Mode};
use crate::error::{Error, Result};
use crate::math::{ln, masked_softmax};

pub const N_ACTIONS: usize = 5;

/// Row order of the routing head.
pub const ACTION_KINDS: [ActionKind; N_ACTIONS] = [
    ActionKind::AnalyzeText,
    ActionKind::AnalyzeImage,
    ActionKind::RetrieveGraph,
    ActionKind::AskUser,
    ActionKind::ScoreCandidates,
];

const ASK_INDEX: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Row-major `N_ACTIONS x FEATURE_DIM` routing head.
    pub theta: Vec<f64>,
    /// Evidence combiner weights for text, image, behavior.
    pub weights: [f64; 3],
    pub mode: Mode,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self { theta: vec![0.0; N_ACTIONS * FEATURE_DIM], weights: [1.0 / 3.0; 3], mode: Mode::Auto }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != N_ACTIONS * FEATURE_DIM {
            return Err(Error::Config(format!(
                "theta has {} entries, expected {}",
                self.theta.len(),
                N_ACTIONS * FEATURE_DIM
            )));
        }
        if self.theta.iter().chain(&self.weights).any(|x| !x.is_finite()) || self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Numeric("policy parameters must be finite with nonnegative weights".into()));
        }
        Ok(())
    }

    pub fn allowed(&self) -> [bool; N_ACTIONS] {
        let mut a = [true; N_ACTIONS];
        a[ASK_INDEX] = self.mode == Mode::Interactive;
        a
    }

    pub fn logits(&self, features: &[f64]) -> [f64; N_ACTIONS] {
        core::array::from_fn(|a| {
            self.theta[a * FEATURE_DIM..(a + 1) * FEATURE_DIM].iter().zip(features).map(|(t, x)| t * x).sum()
        })
    }

    /// Action distribution; excluded kinds get exactly zero.
    pub fn probabilities(&self, features: &[f64]) -> [f64; N_ACTIONS] {
        let p = masked_softmax(&self.logits(features), &self.allowed());
        core::array::from_fn(|a| p[a])
    }
}

/// Data the trainer needs from one routing decision.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub features: [f64; FEATURE_DIM],
    pub action: usize,
    pub logprob: f64,
}

/// Linear-softmax router over [`extract_features`]. Samples during
/// training; takes the argmax (lowest index on ties) when greedy.
#[derive(Debug, Clone)]
pub struct LinearPolicy {
    pub params: PolicyParams,
    pub greedy: bool,
}

impl LinearPolicy {
    pub fn new(params: PolicyParams, greedy: bool) -> Self {
        Self { params, greedy }
    }

    pub fn decide(&self, view: &EpisodeView<'_, '_>, rng: &mut dyn RngCore) -> (Decision, StepRecord) {
        let features = extract_features(view);
        let probs = self.params.probabilities(&features);
        let action = if self.greedy {
            let mut best = 0;
            for a in 1..N_ACTIONS {
                if probs[a] > probs[best] {
                    best = a;
                }
            }
            best
        } else {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = None;
            for (a, &p) in probs.iter().enumerate() {
                acc += p;
                if p > 0.0 && u < acc {
                    pick = Some(a);
                    break;
                }
            }
            // rounding left u above the cumulative sum; take the last allowed kind
            pick.unwrap_or_else(|| probs.iter().rposition(|&p| p > 0.0).unwrap_or(N_ACTIONS - 1))
        };
        let kind = ACTION_KINDS[action];
        let act = match kind {
            ActionKind::ScoreCandidates => score_candidates(view, self.params.weights),
            ActionKind::AskUser => Action::AskUser {
                modality: evidenced_modality(view).unwrap_or(Modality::Text),
                query: String::from("What are you looking for?"),
            },
            tool => Action::tool(tool).expect("evidence tool"),
        };
        let rationale = format!("{} (p={:.3})", kind.as_str(), probs[action]);
        (Decision { rationale, action: act }, StepRecord { features, action, logprob: ln(probs[action]) })
    }
}

impl Policy for LinearPolicy {
    fn name(&self) -> &str {
        "learned"
    }

    fn act(&mut self, view: &EpisodeView<'_, '_>, rng: &mut dyn RngCore) -> Decision {
        self.decide(view, rng).0
    }
}
