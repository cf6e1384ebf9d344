use std::collections::BTreeMap;

use nskt::data::Interaction;
use nskt::explain::{export_graph, parse_graph_json, GraphFormat};
use nskt::facts::{encode_student, Context};
use nskt::ground::ground;
use nskt::params::{ParamStore, TableSizes};
use nskt::template::{build_base_template, build_responsible_template, RuleConfig};
use proptest::prelude::*;

fn sequence(items: &[(u32, u32, bool)]) -> Vec<Interaction> {
    items
        .iter()
        .enumerate()
        .map(|(t, &(skill, quiz, correct))| Interaction {
            student: 4,
            t: t as u32,
            skill,
            quiz,
            correct,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn json_export_round_trips(
        items in proptest::collection::vec((0u32..2, 0u32..3, any::<bool>()), 2..7),
        responsible in any::<bool>(),
    ) {
        let t = if responsible {
            build_responsible_template(2, 2, RuleConfig::default())
        } else {
            build_base_template(2, 1)
        };
        let g = ground(&t, &encode_student(&sequence(&items), Context::Quiz).unwrap()).unwrap();
        let back = parse_graph_json(&export_graph(&g, GraphFormat::Json, None).unwrap()).unwrap();
        prop_assert_eq!(&back, &g);
    }

    #[test]
    fn dot_lists_every_node_and_edge(
        items in proptest::collection::vec((0u32..2, 0u32..3, any::<bool>()), 2..6),
    ) {
        let t = build_responsible_template(2, 1, RuleConfig::default());
        let g = ground(&t, &encode_student(&sequence(&items), Context::Quiz).unwrap()).unwrap();
        let params = ParamStore::init(&t.params, TableSizes { skills: 2, quizzes: 3 }, 2, 0);
        let dot = export_graph(&g, GraphFormat::Dot, Some(&params)).unwrap();
        let nodes = dot.lines().filter(|l| l.trim_start().starts_with('n') && !l.contains("->")).count();
        let edges = dot.lines().filter(|l| l.contains("->")).count();
        prop_assert_eq!(nodes, g.len());
        prop_assert_eq!(edges, g.n_edges());
    }
}

#[test]
fn json_preserves_kind_counts() {
    let t = build_responsible_template(1, 1, RuleConfig::default());
    let g = ground(&t, &encode_student(&sequence(&[(0, 0, false), (0, 0, false), (0, 0, false), (0, 0, true)]), Context::Quiz).unwrap()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&export_graph(&g, GraphFormat::Json, None).unwrap()).unwrap();
    let mut kinds: BTreeMap<String, usize> = BTreeMap::new();
    for n in v["nodes"].as_array().unwrap() {
        *kinds.entry(n["kind"].as_str().unwrap().to_string()).or_default() += 1;
    }
    assert_eq!(kinds.values().sum::<usize>(), g.len());
    assert!(v["nodes"].as_array().unwrap().iter().any(|n| n["atom"].as_str().unwrap_or("").starts_with("not_mastered")));
}
