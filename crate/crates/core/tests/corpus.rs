use std::collections::{BTreeSet, HashSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use sparqlcopy::corpus::synthetic::{self, SyntheticConfig};
use sparqlcopy::corpus::{
    annotate_raw, annotate_tag_end, annotate_tag_within, build_instruction_prompt, enrich_answers, filter_nonempty,
    kb_elements, load_dataset, Entry, PromptMode, Scheme,
};
use sparqlcopy::endpoint::{AnswerSet, Client, EndpointConfig, FixtureServer};
use sparqlcopy::sparqltok::{tokenize_query, Classifier, TokenType};
use sparqlcopy::Error;

fn corpus(seed: u64, per: usize) -> synthetic::SyntheticCorpus {
    synthetic::generate(&SyntheticConfig {
        train_per_template: per,
        validation_per_template: 1,
        test_per_template: 1,
        seed,
    })
    .unwrap()
}

fn kb_query_tokens(query: &str) -> Vec<String> {
    let classifier = Classifier::default();
    let mut out: Vec<String> = tokenize_query(query)
        .unwrap()
        .into_iter()
        .filter(|t| matches!(classifier.structural(t), TokenType::Uri | TokenType::Lit))
        .collect();
    out.sort();
    out
}

#[test]
fn five_hundred_distinct_parseable_entries() {
    let c = synthetic::generate(&SyntheticConfig::default()).unwrap();
    assert_eq!(c.templates.len(), 10);
    assert_eq!(c.split.train.len(), 500);
    let distinct: HashSet<(&str, &str)> = c.split.train.iter().map(|e| (e.question.as_str(), e.query.as_str())).collect();
    assert_eq!(distinct.len(), 500);
    for e in &c.split.train {
        assert!(!tokenize_query(&e.query).unwrap().is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// The KB tokens marked in a tag-within question are exactly the KB
    /// tokens of its query, counted with multiplicity.
    #[test]
    fn tag_within_spans_match_query_kb_tokens(seed in 0u64..1000) {
        let c = corpus(seed, 3);
        for e in c.split.all() {
            let t = c.templates.iter().find(|t| Some(&t.id) == e.template_id.as_ref()).unwrap();
            let a = annotate_tag_within(e, t, &c.bindings[&e.id]).unwrap();
            a.validate().unwrap();
            let mut spans: Vec<String> = a.kb_spans.iter().map(|(_, k)| k.clone()).collect();
            spans.sort();
            prop_assert_eq!(spans, kb_query_tokens(&e.query), "{}", e.id);
        }
    }

    #[test]
    fn tag_end_is_a_function_of_its_inputs(seed in any::<u64>()) {
        let c = corpus(5, 1);
        let e = &c.split.train[3];
        let elems = kb_elements(e, &c.labels).unwrap();
        let a = annotate_tag_end(e, &elems, seed);
        prop_assert_eq!(&a, &annotate_tag_end(e, &elems, seed));
        a.validate().unwrap();
        let raw = annotate_raw(e);
        prop_assert_eq!(a.body(), raw.tokens.as_slice());
        let tagged: BTreeSet<String> = a.tagged_elements().into_iter().map(|(k, _)| k).collect();
        let given: BTreeSet<String> = elems.iter().map(|(k, _)| k.clone()).collect();
        prop_assert_eq!(tagged, given);
    }
}

#[test]
fn tag_end_seeds_cover_several_orders() {
    let entry = Entry::new(
        "c",
        "which person has opponent ike clanton ?",
        "select distinct ?uri where { ?uri dbo:opponent dbr:Ike_Clanton . ?uri a dbo:Person }",
    );
    let elems = vec![
        ("dbr:Ike_Clanton".to_string(), "ike clanton".to_string()),
        ("dbo:opponent".to_string(), "opponent".to_string()),
        ("dbo:Person".to_string(), "person".to_string()),
    ];
    let orders: HashSet<Vec<String>> = (0..100)
        .map(|s| annotate_tag_end(&entry, &elems, s).kb_spans.into_iter().map(|(_, k)| k).collect())
        .collect();
    assert!(orders.len() > 1);
    assert!(orders.len() <= 6);
}

#[test]
fn raw_annotation_carries_no_spans() {
    let c = corpus(1, 2);
    for e in c.split.all() {
        let a = annotate_raw(e);
        assert_eq!(a.scheme, Scheme::RawQuestion);
        assert!(a.kb_spans.is_empty());
        a.validate().unwrap();
    }
}

fn enriched(answers: &[Option<AnswerSet>]) -> Vec<Entry> {
    answers
        .iter()
        .enumerate()
        .map(|(i, a)| Entry {
            gold_answers: a.clone(),
            ..Entry::new(i.to_string(), "q", "ask where { }")
        })
        .collect()
}

#[test]
fn filter_nonempty_counts_and_is_idempotent() {
    let mut answers: Vec<Option<AnswerSet>> = (0..6).map(|i| Some(AnswerSet::bindings([format!("x{i}")]))).collect();
    answers.push(Some(AnswerSet::Boolean { value: false }));
    answers.push(Some(AnswerSet::Boolean { value: true }));
    answers.push(Some(AnswerSet::bindings(Vec::<String>::new())));
    answers.push(Some(AnswerSet::error("timeout")));
    let entries = enriched(&answers);
    let (kept, retention) = filter_nonempty(&entries).unwrap();
    assert_eq!(kept.len(), 8);
    assert!((retention - 0.8).abs() < 1e-12);
    let (again, r2) = filter_nonempty(&kept).unwrap();
    assert_eq!(again, kept);
    assert_eq!(r2, 1.0);
}

#[test]
fn filter_nonempty_rejects_unenriched() {
    let entries = enriched(&[Some(AnswerSet::Boolean { value: true }), None]);
    assert!(matches!(filter_nonempty(&entries), Err(Error::NotEnriched(id)) if id == "1"));
}

#[test]
fn load_dataset_reports_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    std::fs::write(
        &path,
        "{\"question\":\"a ?\",\"query\":\"ask where { }\"}\n\
         {\"question\":\"b ?\"}\n\
         {\"question\":\"c ?\",\"query\":\"ask where { }\"}\n",
    )
    .unwrap();
    match load_dataset(&path) {
        Err(Error::Record { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a record error, got {other:?}"),
    }
}

#[test]
fn load_dataset_rejects_duplicate_ids() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    std::fs::write(
        &path,
        "{\"id\":\"7\",\"question\":\"a ?\",\"query\":\"ask where { }\"}\n\
         {\"id\":\"7\",\"question\":\"b ?\",\"query\":\"ask where { }\"}\n",
    )
    .unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::DuplicateId(_))));
}

#[test]
fn enrichment_records_timeouts_per_entry() {
    let c = corpus(2, 1);
    let server = FixtureServer::spawn(Arc::new(c.graph().unwrap())).unwrap();
    let stalled = &c.split.train[0];
    let needle = tokenize_query(&stalled.query)
        .unwrap()
        .into_iter()
        .find(|t| t.starts_with("dbr:"))
        .unwrap();
    server.delay_queries_containing(needle.clone(), Duration::from_millis(1500));
    let client = Client::new(EndpointConfig {
        timeout_secs: 0.4,
        ..EndpointConfig::new(server.url())
    })
    .unwrap();
    let out = enrich_answers(&c.split.train, &client).unwrap();
    assert_eq!(out.len(), c.split.train.len());
    for e in &out {
        if e.query.contains(&needle) {
            assert!(e.answer_error().is_some(), "{}", e.id);
        } else {
            assert!(e.gold_answers.as_ref().unwrap().is_nonempty(), "{}", e.id);
        }
    }
}

#[test]
fn enrichment_fails_up_front_when_unreachable() {
    let c = corpus(2, 1);
    let client = Client::new(EndpointConfig {
        timeout_secs: 0.5,
        ..EndpointConfig::new("http://127.0.0.1:9/sparql")
    })
    .unwrap();
    assert!(enrich_answers(&c.split.train, &client).is_err());
}

#[test]
fn instruction_prompt_matches_golden_file() {
    let entry = Entry::new(
        "c",
        "which person has opponent ike clanton ?",
        "select distinct ?uri where { ?uri dbo:opponent dbr:Ike_Clanton . ?uri a dbo:Person }",
    );
    let elems = vec![
        ("dbr:Ike_Clanton".to_string(), "ike clanton".to_string()),
        ("dbo:opponent".to_string(), "opponent".to_string()),
        ("dbo:Person".to_string(), "person".to_string()),
    ];
    let annotated = annotate_tag_end(&entry, &elems, 42);
    let text = build_instruction_prompt(&entry, &annotated, PromptMode::Instruction).unwrap().full_text();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/instruction_prompt.txt");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &text).unwrap();
    }
    assert_eq!(text, std::fs::read_to_string(golden).unwrap());
}

#[test]
fn instruction_mode_needs_tag_end() {
    let entry = Entry::new("1", "what is the office of richard coke ?", "select distinct ?uri where { dbr:Richard_Coke dbp:office ?uri }");
    let raw = annotate_raw(&entry);
    assert!(matches!(
        build_instruction_prompt(&entry, &raw, PromptMode::Instruction),
        Err(Error::PromptScheme)
    ));
    let standard = build_instruction_prompt(&entry, &raw, PromptMode::Standard).unwrap();
    assert_eq!(standard.text(), entry.question);
}
