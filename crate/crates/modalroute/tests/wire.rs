//! Wire format round trips and schema checks.

use std::collections::BTreeMap;

use modalroute::config::{CorpusSource, ExperimentConfig};
use modalroute::wire::{decode_act_line, decode_action, encode_action, obs_message, ActMessage, EndMessage, Message, WireAction};
use modalroute_core::corpus::{Modality, SyntheticConfig};
use modalroute_core::environment::{Action, EpisodeSplit, TaskFamily};
use proptest::prelude::*;
use serde_json::json;

fn modality() -> impl Strategy<Value = Modality> {
    prop_oneof![Just(Modality::Text), Just(Modality::Image), Just(Modality::Behavior)]
}

fn action() -> impl Strategy<Value = Action> {
    let id = proptest::option::of("[a-z0-9_:]{1,12}");
    prop_oneof![
        id.clone().prop_map(|item_id| Action::AnalyzeText { item_id }),
        id.clone().prop_map(|item_id| Action::AnalyzeImage { item_id }),
        id.prop_map(|user_id| Action::RetrieveGraph { user_id }),
        (modality(), ".{0,40}").prop_map(|(modality, query)| Action::AskUser { modality, query }),
        proptest::collection::btree_map("[a-z0-9]{1,8}", -1e300..1e300f64, 0..20)
            .prop_map(|scores| Action::ScoreCandidates { scores }),
        (".{0,30}", any::<bool>()).prop_map(|(raw, terminal)| Action::Invalid { raw, terminal }),
    ]
}

proptest! {
    #[test]
    fn actions_survive_encode_line_decode(a in action(), rationale in ".{0,60}") {
        let line = Message::Act(ActMessage { rationale: rationale.clone(), action: encode_action(&a) }).to_line();
        prop_assert_eq!(line.matches('\n').count(), 1);
        let (r, back) = decode_act_line(&line);
        prop_assert_eq!(r, rationale);
        prop_assert_eq!(back, a);
    }

    #[test]
    fn end_messages_round_trip_bit_exactly(reward in any::<f64>().prop_filter("finite", |x| x.is_finite()), ndcg in 0.0..=1.0f64) {
        let m = Message::End(EndMessage { reward, ndcg10: ndcg });
        let back = Message::parse(&m.to_line()).unwrap();
        let Message::End(e) = back else { panic!() };
        prop_assert_eq!(e.reward.to_bits(), reward.to_bits());
        prop_assert_eq!(e.ndcg10.to_bits(), ndcg.to_bits());
    }

    #[test]
    fn unknown_kinds_never_terminate(kind in "[A-Za-z]{1,16}", args in proptest::option::of("[a-z]{1,5}")) {
        prop_assume!(!["AnalyzeText", "AnalyzeImage", "RetrieveGraph", "AskUser", "ScoreCandidates", "Invalid"].contains(&kind.as_str()));
        let args = args.map_or(serde_json::Value::Null, |k| json!({ k: 1 }));
        let a = decode_action(&WireAction { kind, args });
        let non_terminal = matches!(a, Action::Invalid { terminal: false, .. });
        prop_assert!(non_terminal, "{:?}", a);
    }
}

#[test]
fn score_maps_with_non_finite_or_non_numeric_values_are_terminal() {
    for args in [
        json!({ "scores": { "a": null } }),
        json!({ "scores": { "a": 1.0 }, "extra": true }),
        json!({ "scores": null }),
        json!("scores"),
    ] {
        let a = decode_action(&WireAction { kind: "ScoreCandidates".into(), args: args.clone() });
        assert!(matches!(a, Action::Invalid { terminal: true, .. }), "{args}");
    }
    // an empty map is well-formed: every item keeps its first-stage score
    let a = decode_action(&WireAction { kind: "ScoreCandidates".into(), args: json!({ "scores": {} }) });
    assert_eq!(a, Action::ScoreCandidates { scores: BTreeMap::new() });
}

#[test]
fn ask_user_needs_a_known_modality() {
    for args in [json!({ "modality": "audio", "query": "?" }), json!({ "modality": "text" }), json!({ "query": "?" })] {
        let a = decode_action(&WireAction { kind: "AskUser".into(), args: args.clone() });
        assert!(matches!(a, Action::Invalid { terminal: false, .. }), "{args}");
    }
}

#[test]
fn observation_messages_of_real_episodes_round_trip() {
    let mut c = ExperimentConfig::default();
    c.corpus = CorpusSource::Synthetic(SyntheticConfig { n_items: 240, n_users: 120, ..SyntheticConfig::default() });
    c.workbench.env.pool_size = 20;
    let wb = c.workbench(1).unwrap();
    for family in TaskFamily::ALL {
        let mut ep = wb.episode(EpisodeSplit::Test, 0, family, wb.env()).unwrap();
        let first = ep.pool().entries[0].item;
        let first_id = ep.world().catalog.item(first).item_id.clone();
        for a in [
            Action::AnalyzeText { item_id: None },
            Action::AnalyzeImage { item_id: Some(first_id.clone()) },
            Action::RetrieveGraph { user_id: None },
            Action::ScoreCandidates { scores: [(first_id.clone(), 0.25)].into_iter().collect() },
        ] {
            let m = obs_message(&ep.view());
            assert_eq!(m.pool.len(), 20);
            assert!(m.pool.windows(2).all(|w| w[0].rank < w[1].rank));
            let line = Message::Obs(m.clone()).to_line();
            assert_eq!(Message::parse(&line).unwrap(), Message::Obs(m));
            ep.step(a).unwrap();
        }
        assert!(ep.is_done());
    }
}
