//! Line-delimited JSON messages exchanged with an external policy, and the
//! JSON forms of actions and observations shared with transcripts.
//!
//! Every message is one UTF-8 line: `obs` from the environment, `act` from
//! the policy, `end` when the episode terminates.

use std::collections::BTreeMap;

use modalroute_core::corpus::Modality;
use modalroute_core::environment::{
    Action, ActionKind, ClarificationPayload, EpisodeView, Evidence, GraphNeighbor, Mode, Observation,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Obs(ObsMessage),
    Act(ActMessage),
    End(EndMessage),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsMessage {
    pub episode_id: String,
    pub turn: usize,
    pub budget_left: usize,
    pub mode: Mode,
    pub pool: Vec<PoolItem>,
    pub last: Option<LastStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolItem {
    pub item_id: String,
    pub rank: u32,
    pub s0: f64,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LastStep {
    pub action: WireAction,
    pub obs_kind: String,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActMessage {
    #[serde(default)]
    pub rationale: String,
    pub action: WireAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireAction {
    pub kind: String,
    #[serde(default)]
    pub args: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndMessage {
    pub reward: f64,
    pub ndcg10: f64,
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("message serializes");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim_end())
    }
}

pub fn encode_action(action: &Action) -> WireAction {
    let args = match action {
        Action::AnalyzeText { item_id } | Action::AnalyzeImage { item_id } => match item_id {
            Some(id) => json!({ "item_id": id }),
            None => json!({}),
        },
        Action::RetrieveGraph { user_id } => match user_id {
            Some(id) => json!({ "user_id": id }),
            None => json!({}),
        },
        Action::AskUser { modality, query } => json!({ "modality": modality, "query": query }),
        Action::ScoreCandidates { scores } => json!({ "scores": scores }),
        Action::Invalid { raw, terminal } => json!({ "raw": raw, "terminal": terminal }),
    };
    WireAction { kind: action.kind().as_str().into(), args }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ItemArgs {
    item_id: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UserArgs {
    user_id: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AskArgs {
    modality: Modality,
    query: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreArgs {
    scores: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InvalidArgs {
    raw: String,
    terminal: bool,
}

fn args<T: serde::de::DeserializeOwned>(v: &Value) -> Option<T> {
    // a missing args object means "no arguments"
    let v = if v.is_null() { &json!({}) } else { v };
    serde_json::from_value(v.clone()).ok()
}

/// Schema-checked action. Unknown kinds and malformed arguments become
/// `Invalid`; a malformed `ScoreCandidates` is terminal.
pub fn decode_action(wire: &WireAction) -> Action {
    let raw = || serde_json::to_string(wire).expect("wire action serializes");
    let invalid = |terminal| Action::Invalid { raw: raw(), terminal };
    if wire.kind == ActionKind::Invalid.as_str() {
        return args::<InvalidArgs>(&wire.args)
            .map_or_else(|| invalid(false), |a| Action::Invalid { raw: a.raw, terminal: a.terminal });
    }
    match ActionKind::parse(&wire.kind) {
        Some(ActionKind::AnalyzeText) => {
            args::<ItemArgs>(&wire.args).map_or_else(|| invalid(false), |a| Action::AnalyzeText { item_id: a.item_id })
        }
        Some(ActionKind::AnalyzeImage) => {
            args::<ItemArgs>(&wire.args).map_or_else(|| invalid(false), |a| Action::AnalyzeImage { item_id: a.item_id })
        }
        Some(ActionKind::RetrieveGraph) => args::<UserArgs>(&wire.args)
            .map_or_else(|| invalid(false), |a| Action::RetrieveGraph { user_id: a.user_id }),
        Some(ActionKind::AskUser) => args::<AskArgs>(&wire.args)
            .map_or_else(|| invalid(false), |a| Action::AskUser { modality: a.modality, query: a.query }),
        Some(ActionKind::ScoreCandidates) => args::<ScoreArgs>(&wire.args)
            .filter(|a| a.scores.values().all(|s| s.is_finite()))
            .map_or_else(|| invalid(true), |a| Action::ScoreCandidates { scores: a.scores }),
        _ => invalid(false),
    }
}

/// Decodes one line expected to hold an `act` message.
pub fn decode_act_line(line: &str) -> (String, Action) {
    match Message::parse(line) {
        Ok(Message::Act(act)) => (act.rationale, decode_action(&act.action)),
        _ => (String::new(), Action::Invalid { raw: line.trim_end().to_string(), terminal: false }),
    }
}

fn neighbor_json(n: &GraphNeighbor) -> Value {
    json!({ "item_id": n.item_id, "title": n.title, "weight": n.weight })
}

pub fn observation_payload(obs: &Observation) -> Value {
    match obs {
        Observation::Null => Value::Null,
        Observation::Evidence(Evidence::Text { item_id, title, category, description }) => {
            json!({ "modality": "text", "item_id": item_id, "title": title, "category": category, "description": description })
        }
        Observation::Evidence(Evidence::Image { item_id, tags }) => {
            json!({ "modality": "image", "item_id": item_id, "tags": tags })
        }
        Observation::Evidence(Evidence::Graph { neighbors }) => {
            json!({ "modality": "behavior", "neighbors": neighbors.iter().map(neighbor_json).collect::<Vec<_>>() })
        }
        Observation::Clarification(ClarificationPayload { modality, answer, terms }) => {
            json!({ "modality": modality, "answer": answer, "terms": terms })
        }
        Observation::Terminal { ndcg10, fallback } => json!({ "ndcg10": ndcg10, "fallback": fallback }),
    }
}

/// The policy-visible state as an `obs` message.
pub fn obs_message(view: &EpisodeView<'_, '_>) -> ObsMessage {
    let pool = view
        .pool()
        .entries
        .iter()
        .map(|e| PoolItem {
            item_id: view.item_id(e.item).to_string(),
            rank: e.rank,
            s0: e.s0,
            summary: view.pool_summary(e.item),
        })
        .collect();
    let last = view.history().last().map(|h| LastStep {
        action: encode_action(&h.action),
        obs_kind: h.observation.kind_str().into(),
        payload: observation_payload(&h.observation),
    });
    ObsMessage {
        episode_id: view.episode_id().into(),
        turn: view.turn(),
        budget_left: view.budget_left(),
        mode: view.mode(),
        pool,
        last,
    }
}
