use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionKind {
    AnalyzeText,
    AnalyzeImage,
    RetrieveGraph,
    AskUser,
    ScoreCandidates,
    Invalid,
}

impl ActionKind {
    pub const TOOLS: [ActionKind; 3] = [ActionKind::AnalyzeText, ActionKind::AnalyzeImage, ActionKind::RetrieveGraph];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::AnalyzeText => "AnalyzeText",
            ActionKind::AnalyzeImage => "AnalyzeImage",
            ActionKind::RetrieveGraph => "RetrieveGraph",
            ActionKind::AskUser => "AskUser",
            ActionKind::ScoreCandidates => "ScoreCandidates",
            ActionKind::Invalid => "Invalid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ActionKind::AnalyzeText,
            ActionKind::AnalyzeImage,
            ActionKind::RetrieveGraph,
            ActionKind::AskUser,
            ActionKind::ScoreCandidates,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }

    /// Modality reached by an automated evidence tool.
    pub fn tool_modality(self) -> Option<Modality> {
        match self {
            ActionKind::AnalyzeText => Some(Modality::Text),
            ActionKind::AnalyzeImage => Some(Modality::Image),
            ActionKind::RetrieveGraph => Some(Modality::Behavior),
            _ => None,
        }
    }

    pub fn for_modality(modality: Modality) -> ActionKind {
        match modality {
            Modality::Text => ActionKind::AnalyzeText,
            Modality::Image => ActionKind::AnalyzeImage,
            Modality::Behavior => ActionKind::RetrieveGraph,
        }
    }

    /// Evidence tools and `AskUser`; the calls counted by failed-call rate.
    pub fn is_tool_call(self) -> bool {
        matches!(
            self,
            ActionKind::AnalyzeText | ActionKind::AnalyzeImage | ActionKind::RetrieveGraph | ActionKind::AskUser
        )
    }
}

/// A structured tool call. Omitted item/user arguments select the
/// environment default: the next not-yet-analyzed context item (most
/// recent first) or the episode's own user.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    AnalyzeText { item_id: Option<String> },
    AnalyzeImage { item_id: Option<String> },
    RetrieveGraph { user_id: Option<String> },
    AskUser { modality: Modality, query: String },
    ScoreCandidates { scores: BTreeMap<String, f64> },
    /// Anything that failed to decode. `terminal` marks a malformed
    /// `ScoreCandidates`.
    Invalid { raw: String, terminal: bool },
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::AnalyzeText { .. } => ActionKind::AnalyzeText,
            Action::AnalyzeImage { .. } => ActionKind::AnalyzeImage,
            Action::RetrieveGraph { .. } => ActionKind::RetrieveGraph,
            Action::AskUser { .. } => ActionKind::AskUser,
            Action::ScoreCandidates { .. } => ActionKind::ScoreCandidates,
            Action::Invalid { .. } => ActionKind::Invalid,
        }
    }

    /// Tool call with default arguments.
    pub fn tool(kind: ActionKind) -> Option<Action> {
        match kind {
            ActionKind::AnalyzeText => Some(Action::AnalyzeText { item_id: None }),
            ActionKind::AnalyzeImage => Some(Action::AnalyzeImage { item_id: None }),
            ActionKind::RetrieveGraph => Some(Action::RetrieveGraph { user_id: None }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNeighbor {
    pub item_id: String,
    pub title: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Evidence {
    Text { item_id: String, title: Vec<String>, category: Vec<String>, description: Vec<String> },
    Image { item_id: String, tags: Vec<String> },
    Graph { neighbors: Vec<GraphNeighbor> },
}

impl Evidence {
    pub fn modality(&self) -> Modality {
        match self {
            Evidence::Text { .. } => Modality::Text,
            Evidence::Image { .. } => Modality::Image,
            Evidence::Graph { .. } => Modality::Behavior,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClarificationPayload {
    pub modality: Modality,
    /// Synthesized user answer.
    pub answer: String,
    /// Normalized terms the answer was built from (tokens or tags).
    pub terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Evidence(Evidence),
    Null,
    Clarification(ClarificationPayload),
    Terminal { ndcg10: f64, fallback: bool },
}

impl Observation {
    pub fn kind_str(&self) -> &'static str {
        match self {
            Observation::Evidence(_) => "evidence",
            Observation::Null => "null",
            Observation::Clarification(_) => "clarification",
            Observation::Terminal { .. } => "terminal",
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Observation::Null)
    }
}
