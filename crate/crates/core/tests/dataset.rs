use sea_core::corpus::fixture_path;
use sea_core::training_data::{
    compute_stats, extract_query_eval_cases, extract_query_pairs, extract_response_pairs,
    load_dataset, save_dataset, to_jsonl, validate_dataset, QuerySelection,
};

#[test]
fn small_fixture_stats_match_hand_count() {
    let data = load_dataset(fixture_path("dialogues_small.jsonl")).unwrap();
    let s = compute_stats(&data);
    assert_eq!(s.dialogues, 3);
    assert_eq!(s.utterances, 28);
    assert_eq!(s.searches, 10);
    assert_eq!(s.unique_selected_urls, 6);
    assert_eq!(s.unique_selected_domains, 3);
    assert_eq!(s.wizard_turns, 14);
    assert_eq!(s.searching_turns, 9);
    assert_eq!(s.mean_utterance_words, 257.0 / 28.0);
    assert_eq!(s.mean_utterances_per_dialogue, 28.0 / 3.0);
    assert_eq!(s.pct_searching_turns_with_selection, 100.0);
}

#[test]
fn fixture_round_trips_byte_for_byte() {
    for name in ["dialogues_small.jsonl", "dialogues_eval.jsonl"] {
        let raw = std::fs::read_to_string(fixture_path(name)).unwrap();
        let data = load_dataset(fixture_path(name)).unwrap();
        assert_eq!(to_jsonl(&data), raw, "{name}");
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("copy.jsonl");
        save_dataset(&out, &data).unwrap();
        assert_eq!(std::fs::read_to_string(out).unwrap(), raw);
    }
}

#[test]
fn eval_fixture_is_valid_and_has_fifty_wizard_turns() {
    let raw = std::fs::read_to_string(fixture_path("dialogues_eval.jsonl")).unwrap();
    assert!(validate_dataset(&raw).is_empty());
    let data = load_dataset(fixture_path("dialogues_eval.jsonl")).unwrap();
    assert_eq!(extract_response_pairs(&data).len(), 50);
}

#[test]
fn selected_knowledge_is_reachable_from_pairs() {
    let data = load_dataset(fixture_path("dialogues_eval.jsonl")).unwrap();
    for p in extract_response_pairs(&data) {
        for s in &p.selected {
            let doc = p
                .docs
                .iter()
                .find(|d| d.url == s.doc_url)
                .expect("selected doc recorded");
            assert!(doc.content.contains(&s.sentence));
        }
    }
}

#[test]
fn query_pairs_and_cases_agree() {
    let data = load_dataset(fixture_path("dialogues_small.jsonl")).unwrap();
    let last = extract_query_pairs(&data, QuerySelection::Last);
    let all = extract_query_pairs(&data, QuerySelection::All);
    assert_eq!(last.len(), 9);
    assert_eq!(all.len(), 10);
    let cases = extract_query_eval_cases(&data);
    assert_eq!(cases.len(), 9);
    for (p, c) in last.iter().zip(&cases) {
        assert_eq!(p.query, c.gold_query);
        assert_eq!(p.context, c.context);
    }
}
