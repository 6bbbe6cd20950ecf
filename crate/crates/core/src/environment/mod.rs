//! The partially observable reranking episode: hidden modality masks,
//! tool dispatch with `Null` returns, step costs and terminal scoring.

mod action;
mod episode;

pub use action::{Action, ActionKind, ClarificationPayload, Evidence, GraphNeighbor, Observation};
pub use episode::{
    make_episode, pool_source, Episode, EpisodeSpec, EpisodeSplit, EpisodeView, HistoryEntry, Outcome, StepResult,
    World,
};

use alloc::format;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Modality;
use crate::error::{Error, Result};
use crate::math::powi;

/// Which modalities an episode exposes. Never shown to policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModalityMask {
    pub text: bool,
    pub image: bool,
    pub behavior: bool,
}

impl ModalityMask {
    pub const fn new(text: bool, image: bool, behavior: bool) -> Self {
        Self { text, image, behavior }
    }

    pub fn has(self, modality: Modality) -> bool {
        match modality {
            Modality::Text => self.text,
            Modality::Image => self.image,
            Modality::Behavior => self.behavior,
        }
    }

    pub fn count(self) -> usize {
        usize::from(self.text) + usize::from(self.image) + usize::from(self.behavior)
    }
}

/// The seven missingness task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskFamily {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "no-text")]
    NoText,
    #[serde(rename = "no-img")]
    NoImage,
    #[serde(rename = "cold-user")]
    ColdUser,
    #[serde(rename = "text-only")]
    TextOnly,
    #[serde(rename = "img-only")]
    ImageOnly,
    #[serde(rename = "beh-only")]
    BehaviorOnly,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 7] = [
        TaskFamily::Full,
        TaskFamily::NoText,
        TaskFamily::NoImage,
        TaskFamily::ColdUser,
        TaskFamily::TextOnly,
        TaskFamily::ImageOnly,
        TaskFamily::BehaviorOnly,
    ];

    /// One-observed-modality families.
    pub const OOMA: [TaskFamily; 3] = [TaskFamily::TextOnly, TaskFamily::ImageOnly, TaskFamily::BehaviorOnly];

    pub fn id(self) -> &'static str {
        match self {
            TaskFamily::Full => "full",
            TaskFamily::NoText => "no-text",
            TaskFamily::NoImage => "no-img",
            TaskFamily::ColdUser => "cold-user",
            TaskFamily::TextOnly => "text-only",
            TaskFamily::ImageOnly => "img-only",
            TaskFamily::BehaviorOnly => "beh-only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.id() == s)
    }

    pub fn mask(self) -> ModalityMask {
        match self {
            TaskFamily::Full => ModalityMask::new(true, true, true),
            TaskFamily::NoText => ModalityMask::new(false, true, true),
            TaskFamily::NoImage => ModalityMask::new(true, false, true),
            TaskFamily::ColdUser => ModalityMask::new(true, true, false),
            TaskFamily::TextOnly => ModalityMask::new(true, false, false),
            TaskFamily::ImageOnly => ModalityMask::new(false, true, false),
            TaskFamily::BehaviorOnly => ModalityMask::new(false, false, true),
        }
    }

    pub fn is_ooma(self) -> bool {
        self.mask().count() == 1
    }

    /// The tool that reaches the single surviving modality of an OOMA
    /// family.
    pub fn expected_first_tool(self) -> Option<ActionKind> {
        match self {
            TaskFamily::TextOnly => Some(ActionKind::AnalyzeText),
            TaskFamily::ImageOnly => Some(ActionKind::AnalyzeImage),
            TaskFamily::BehaviorOnly => Some(ActionKind::RetrieveGraph),
            _ => None,
        }
    }
}

/// Uniform over the seven families.
pub fn sample_task_family<R: Rng + ?Sized>(rng: &mut R) -> TaskFamily {
    TaskFamily::ALL[rng.gen_range(0..TaskFamily::ALL.len())]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    pub lambda_tool: f64,
    pub lambda_ask: f64,
    pub lambda_invalid: f64,
    pub turn_budget: usize,
    pub gamma: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { lambda_tool: -0.02, lambda_ask: -0.10, lambda_invalid: -0.20, turn_budget: 8, gamma: 1.0 }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_invalid <= self.lambda_ask && self.lambda_ask <= self.lambda_tool && self.lambda_tool < 0.0) {
            return Err(Error::Config(format!(
                "need lambda_invalid <= lambda_ask <= lambda_tool < 0, got {} / {} / {}",
                self.lambda_invalid, self.lambda_ask, self.lambda_tool
            )));
        }
        if self.turn_budget == 0 {
            return Err(Error::Config("turn budget must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} must be in [0,1]", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `AskUser` is removed from the action set.
    #[default]
    Auto,
    Interactive,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Auto => "auto",
            Mode::Interactive => "interactive",
        }
    }
}

/// Episode-engine settings shared by every episode of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub reward: RewardParams,
    pub mode: Mode,
    pub pool_size: usize,
    /// Fusion weight on the first-stage score during training; evaluation
    /// replaces it with the validation-selected value.
    pub alpha: f64,
    /// Number of most recent history items visible as user context.
    pub context_len: usize,
    /// Number of most recent context items the first-stage retriever queries with.
    pub first_stage_window: usize,
    /// Neighbors returned by `RetrieveGraph`.
    pub graph_evidence_top: usize,
    /// Description tokens returned by `AnalyzeText`.
    pub description_limit: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            reward: RewardParams::default(),
            mode: Mode::Auto,
            pool_size: 100,
            alpha: 0.0,
            context_len: 3,
            first_stage_window: 1,
            graph_evidence_top: 30,
            description_limit: 32,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        if self.pool_size == 0 {
            return Err(Error::Config("pool size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} must be in [0,1]", self.alpha)));
        }
        if self.context_len == 0 || self.first_stage_window == 0 {
            return Err(Error::Config("context_len and first_stage_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Discounted return with the first reward discounted by `gamma^1`.
pub fn episode_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().enumerate().map(|(k, r)| powi(gamma, k as i32 + 1) * r).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn masks_match_family_table() {
        let rows = [
            ("full", (1, 1, 1)),
            ("no-text", (0, 1, 1)),
            ("no-img", (1, 0, 1)),
            ("cold-user", (1, 1, 0)),
            ("text-only", (1, 0, 0)),
            ("img-only", (0, 1, 0)),
            ("beh-only", (0, 0, 1)),
        ];
        for (id, (t, i, b)) in rows {
            let m = TaskFamily::parse(id).unwrap().mask();
            assert_eq!((m.text as u8, m.image as u8, m.behavior as u8), (t, i, b), "{id}");
            assert!(m.count() >= 1);
        }
    }

    #[test]
    fn default_rewards_are_valid() {
        let r = RewardParams::default();
        r.validate().unwrap();
        assert_eq!((r.lambda_tool, r.lambda_ask, r.lambda_invalid, r.turn_budget), (-0.02, -0.10, -0.20, 8));
        let bad = RewardParams { lambda_ask: -0.01, ..r };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn return_conventions() {
        assert!((episode_return(&[-0.02, 1.0], 1.0) - 0.98).abs() < 1e-15);
        assert!((episode_return(&[-0.02, 1.0], 0.5) - 0.24).abs() < 1e-15);
    }

    #[test]
    fn family_sampling_is_seeded() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_task_family(&mut rng)).collect::<alloc::vec::Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        let all = draw(11);
        for f in TaskFamily::ALL {
            assert!(all.contains(&f), "{f:?} never drawn");
        }
    }
}
