use std::sync::Arc;

use flexlane_core::autoir::{parse_autoir, serialize_autoir, ConfigValue};
use flexlane_core::registry::ParamRegistry;
use flexlane_core::sim::Scenario;
use flexlane_core::translation::kb::{manual_entries, shipped_entries};
use flexlane_core::translation::prompt::first_program_block;
use flexlane_core::translation::*;
use proptest::prelude::*;

fn curated() -> Translator {
    let registry = ParamRegistry::shipped();
    let index = build_index(shipped_entries(&registry).unwrap()).unwrap();
    Translator::new(index, Arc::new(MockProvider::shipped()), registry)
}

fn degraded() -> Translator {
    let index = build_index(manual_entries().unwrap()).unwrap();
    Translator::new(index, Arc::new(MockProvider::shipped()), ParamRegistry::shipped())
}

fn golden() -> Vec<(GoldenItem, Option<flexlane_core::autoir::AutoIRProgram>)> {
    load_golden(&data_dir().join("golden.jsonl")).unwrap()
}

#[test]
fn kb_token_count_matches_a_plain_split() {
    let entries = shipped_entries(&ParamRegistry::shipped()).unwrap();
    let manual = std::fs::read_to_string(data_dir().join("manual.md")).unwrap();
    let mut texts: Vec<&str> = entries.iter().map(|e| e.scenario_text.as_str()).collect();
    texts.push(&manual);
    for t in texts {
        let oracle = t.split(|c: char| c.is_whitespace()).filter(|w| !w.is_empty()).count();
        assert_eq!(tokenize(t).len(), oracle);
    }
}

#[test]
fn manual_chunks_into_several_pieces() {
    let chunks = manual_entries().unwrap();
    assert!(chunks.len() >= 3, "manual gave {} chunks", chunks.len());
    assert!(chunks.iter().all(|c| c.program.is_none() && tokenize(&c.scenario_text).len() <= CHUNK_TOKENS));
}

#[test]
fn shipped_kb_builds_and_is_deterministic() {
    let registry = ParamRegistry::shipped();
    let entries = shipped_entries(&registry).unwrap();
    assert!(entries.len() >= 40);
    let a = build_index(entries.clone()).unwrap();
    let b = build_index(entries).unwrap();
    for q in ["Do not follow the traffic light.", "keep left", "wait longer", "xyz"] {
        assert_eq!(retrieve(&a, q, 5), retrieve(&b, q, 5));
    }
}

#[test]
fn every_entry_retrieves_itself_first() {
    let registry = ParamRegistry::shipped();
    let index = build_index(shipped_entries(&registry).unwrap()).unwrap();
    for e in index.entries() {
        let top = &retrieve(&index, &e.scenario_text, 1)[0];
        assert_eq!(top.entry.entry_id, e.entry_id);
        assert!((top.score - 1.0).abs() < 1e-9);
    }
}

#[test]
fn exhaustive_retrieval_is_a_permutation() {
    let registry = ParamRegistry::shipped();
    let index = build_index(shipped_entries(&registry).unwrap()).unwrap();
    let mut got: Vec<String> =
        retrieve(&index, "stop near the light", index.len()).iter().map(|r| r.entry.entry_id.clone()).collect();
    let mut want: Vec<String> = index.entries().map(|e| e.entry_id.clone()).collect();
    got.sort();
    want.sort();
    assert_eq!(got, want);
    let scores: Vec<f64> = retrieve(&index, "stop near the light", index.len()).iter().map(|r| r.score).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert!(scores.iter().all(|s| (-1.0..=1.0).contains(s)));
}

#[test]
fn ignore_light_query_hits_the_ignore_entry() {
    let registry = ParamRegistry::shipped();
    let index = build_index(shipped_entries(&registry).unwrap()).unwrap();
    let top = &retrieve(&index, "Do not follow the traffic light.", 1)[0];
    let p = top.entry.program.as_ref().unwrap();
    assert_eq!(p.param_select.as_str(), "use_flag");
    assert_eq!(p.config_action, ConfigValue::Bool(false));
}

#[test]
fn mock_relevance_examples() {
    let mock = MockProvider::shipped();
    let cot = PromptTemplate::cot_relevance();
    for u in ["The traffic light seems broken, ignore it.", "Traffic light is crazy! It is always red."] {
        assert!(classify_relevance(u, &cot, &mock).unwrap().relevant, "{u}");
    }
    for u in ["What a nice song on the radio.", "Book a table for two tonight"] {
        assert!(!classify_relevance(u, &cot, &mock).unwrap().relevant, "{u}");
    }
}

#[test]
fn table_two_programs() {
    let t = curated();
    let registry = ParamRegistry::shipped();
    let p = generate_autoir("Do not follow the traffic light.", &t.index, &t.generation_template, &MockProvider::shipped(), &registry)
        .unwrap();
    assert_eq!(p.path().to_string(), "perception/traffic_light_classifier_node/use_flag");
    assert_eq!(p.config_action, ConfigValue::Bool(false));
    assert_eq!(p.timer, 10.0);
    let p = generate_autoir("I want you drive on the leftmost lane.", &t.index, &t.generation_template, &MockProvider::shipped(), &registry)
        .unwrap();
    assert_eq!(p.path().to_string(), "planning/mission_planner/lane_prefer");
    assert_eq!(p.config_action, ConfigValue::Token("LEFT".into()));
    assert_eq!(p.timer, 10.0);
}

#[test]
fn mock_echoes_the_single_reference_program() {
    let program = parse_autoir("moduleSelect: planning\nnodeSelect: mission_planner\nparamSelect: lane_prefer\nconfigAction: RIGHT\nTimer: 4.5\n").unwrap();
    let entry = KnowledgeEntry { entry_id: "only".into(), scenario_text: "anything".into(), program: Some(program.clone()) };
    let prompt = build_generation_prompt(&PromptTemplate::generation(), &[Retrieved { entry: &entry, score: 0.3 }], "go", None);
    let resp = MockProvider::shipped().complete(&ProviderRequest { prompt: prompt.clone(), mode: Mode::Generation }).unwrap();
    assert_eq!(resp.text, serialize_autoir(&program));
    assert_eq!(first_program_block(&prompt).unwrap(), resp.text);
}

#[test]
fn irrelevant_utterance_stops_at_the_verdict() {
    let t = curated().translate("Sing me a song.");
    assert_eq!(t.verdict.as_ref().map(|v| v.relevant), Some(false));
    assert_eq!(t.outcome, Outcome::Irrelevant);
    assert!(t.retrieved.is_empty() && t.attempts.is_empty());
}

#[test]
fn golden_set_is_fully_reproduced_with_the_curated_kb() {
    let items = golden();
    assert!(items.iter().filter(|(i, _)| i.relevant).count() >= 40);
    assert!(items.iter().filter(|(i, _)| !i.relevant).count() >= 10);
    let t = curated();
    let mut misses = Vec::new();
    for (item, expected) in &items {
        let got = t.translate(&item.utterance);
        let ok = match expected {
            Some(want) => got.program() == Some(want),
            None => got.outcome == Outcome::Irrelevant,
        };
        if !ok {
            misses.push(format!("{} -> {:?} via {:?}", item.utterance, got.program().map(|p| p.to_string()), got.retrieved));
        }
    }
    assert!(misses.is_empty(), "{}", misses.join("\n"));
    let r = evaluate(&items, &t);
    for v in [r.module_select, r.node_select, r.param_select, r.config_action, r.overall, r.relevance] {
        assert_eq!(v, 100.0, "{r:?}");
    }
}

#[test]
fn degraded_kb_scores_lower() {
    let items = golden();
    let good = evaluate(&items, &curated());
    let bad = evaluate(&items, &degraded());
    assert!(bad.overall < good.overall, "{bad:?}");
    for v in [bad.module_select, bad.node_select, bad.param_select, bad.config_action] {
        assert!(bad.overall <= v + 1e-9);
    }
}

#[test]
fn translation_is_deterministic() {
    let (a, b) = (curated(), curated());
    for (item, _) in golden() {
        assert_eq!(a.translate(&item.utterance), b.translate(&item.utterance));
    }
}

#[test]
fn scenario_phrasings_translate() {
    let t = curated();
    for name in flexlane_core::sim::BUILTIN_SCENARIOS {
        let s = Scenario::builtin(name).unwrap();
        let Some(script) = &s.instruction else { continue };
        let programs: Vec<_> = script.phrasings.iter().map(|u| t.translate(u).program().cloned()).collect();
        assert!(programs.iter().all(|p| p.is_some()), "{name}: {programs:?}");
        assert!(programs.windows(2).all(|w| w[0] == w[1]), "{name}: {programs:?}");
    }
}

proptest! {
    #[test]
    fn chunks_reassemble(words in prop::collection::vec("[a-z.,!]{1,6}", 0..2000), max in 1usize..800) {
        let text = words.join(" \n ");
        let chunks = chunk_document("src", &text, max);
        let rebuilt: Vec<&str> = chunks.iter().flat_map(|c| tokenize(&c.text)).collect();
        prop_assert_eq!(rebuilt, tokenize(&text));
        for (i, c) in chunks.iter().enumerate() {
            prop_assert_eq!(c.ordinal, i);
            prop_assert!(c.token_count <= max);
            if i + 1 < chunks.len() {
                prop_assert_eq!(c.token_count, max);
            }
        }
    }

    #[test]
    fn embeddings_are_unit_or_zero(text in "[ a-zA-Z!.]{0,200}") {
        let v = embed_text(&text);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if tokenize(&text).is_empty() {
            prop_assert_eq!(norm, 0.0);
        } else {
            prop_assert!((norm - 1.0).abs() < 1e-9);
        }
    }
}
