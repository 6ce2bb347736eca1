use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;
use sparqlcopy::copynet::Prediction;
use sparqlcopy::corpus::Entry;
use sparqlcopy::endpoint::{AnswerSet, Client, EndpointConfig, Graph};
use sparqlcopy::metrics::{aggregate_runs, answer_accuracy, answer_f1, bleu, corpus_bleu, evaluate_run, summarize, RunReport};
use sparqlcopy::sparqltok::{tokenize_query, PrefixTable};
use sparqlcopy::Error;

const TTL: &str = r#"
dbr:A dbo:team dbr:T1 .
dbr:B dbo:team dbr:T1 .
dbr:C dbo:team dbr:T2 .
dbr:A a dbo:Person .
dbr:B a dbo:Person .
dbr:C a dbo:Robot .
"#;

fn client() -> Client {
    let mut g = Graph::new(PrefixTable::default());
    g.load_turtle(TTL).unwrap();
    Client::fixture(Arc::new(g), EndpointConfig::new("fixture:test")).unwrap()
}

/// Entries whose gold answers are filled from the fixture graph.
fn gold_entries(c: &Client) -> Vec<Entry> {
    [
        "select ?x where { ?x dbo:team dbr:T1 }",
        "select ?x where { ?x dbo:team dbr:T2 }",
        "select ?x where { ?x a dbo:Person }",
        "select ?x where { ?x a dbo:Robot }",
        "ask where { dbr:A dbo:team dbr:T1 }",
        "select ?x where { dbr:C dbo:team ?x }",
    ]
    .iter()
    .enumerate()
    .map(|(i, q)| Entry {
        gold_answers: Some(c.execute(q)),
        ..Entry::new(format!("e{i}"), "q ?", *q)
    })
    .collect()
}

fn predict(id: &str, query: &str) -> Prediction {
    Prediction {
        id: id.to_string(),
        tokens: tokenize_query(query).unwrap(),
        query: query.to_string(),
        truncated: false,
    }
}

#[test]
fn gold_predictions_score_perfectly() {
    let c = client();
    let entries = gold_entries(&c);
    let preds: Vec<Prediction> = entries.iter().map(|e| predict(&e.id, &e.query)).collect();
    let (report, scores) = evaluate_run(&preds, &entries, &c, 1.0).unwrap();
    assert!((report.bleu - 100.0).abs() < 1e-9);
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.f1, 1.0);
    assert!(report.complete);
    assert_eq!(scores.len(), entries.len());
}

#[test]
fn half_wrong_predictions_give_half_accuracy() {
    let c = client();
    let entries = gold_entries(&c);
    let wrong = "select ?x where { ?x dbo:team dbr:Nowhere }";
    let preds: Vec<Prediction> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| predict(&e.id, if i % 2 == 0 { &e.query } else { wrong }))
        .collect();
    let (report, scores) = evaluate_run(&preds, &entries, &c, 1.0).unwrap();
    assert_eq!(report.accuracy, 0.5);
    assert_eq!(report.f1, 0.5);
    assert_eq!(scores.iter().filter(|s| s.answer_correct).count(), 3);
}

#[test]
fn missing_predictions_mark_the_report_incomplete() {
    let c = client();
    let entries = gold_entries(&c);
    let preds = vec![predict(&entries[0].id, &entries[0].query)];
    let (report, _) = evaluate_run(&preds, &entries, &c, 1.0).unwrap();
    assert!(!report.complete);
    assert!((report.accuracy - 1.0 / 6.0).abs() < 1e-12);
    assert!(matches!(evaluate_run(&[], &entries, &c, 1.0), Err(Error::NoPredictions)));
}

#[test]
fn unreachable_endpoint_scores_zero() {
    let c = Client::new(EndpointConfig {
        timeout_secs: 0.5,
        ..EndpointConfig::new("http://127.0.0.1:9/sparql")
    })
    .unwrap();
    let local = client();
    let entries = gold_entries(&local);
    let preds: Vec<Prediction> = entries.iter().map(|e| predict(&e.id, &e.query)).collect();
    let (report, _) = evaluate_run(&preds, &entries, &c, 1.0).unwrap();
    assert!(!report.complete);
    assert_eq!(report.accuracy, 0.0);
}

fn answer_set() -> impl Strategy<Value = AnswerSet> {
    prop_oneof![
        prop::collection::btree_set("[a-d]", 0..4).prop_map(|v| AnswerSet::Bindings { values: v }),
        any::<bool>().prop_map(|value| AnswerSet::Boolean { value }),
        Just(AnswerSet::error("down")),
    ]
}

fn renamed(tokens: &[String], map: &HashMap<String, String>) -> Vec<String> {
    tokens.iter().map(|t| map[t].clone()).collect()
}

proptest! {
    #[test]
    fn full_f1_iff_accurate_on_nonempty_gold(pred in answer_set(), gold in answer_set()) {
        prop_assume!(gold.is_nonempty());
        prop_assert_eq!(answer_f1(&pred, &gold) == 1.0, answer_accuracy(&pred, &gold));
        let f = answer_f1(&pred, &gold);
        prop_assert!((0.0..=1.0).contains(&f));
    }

    /// BLEU only sees token identity, so a bijective renaming leaves it unchanged.
    #[test]
    fn bleu_is_invariant_under_renaming(
        pairs in prop::collection::vec(
            (prop::collection::vec(0u8..6, 0..12), prop::collection::vec(0u8..6, 1..12)),
            1..5,
        ),
        shift in 1u8..50,
    ) {
        let to_tok = |v: &Vec<u8>| v.iter().map(|x| format!("t{x}")).collect::<Vec<String>>();
        let map: HashMap<String, String> = (0u8..6).map(|x| (format!("t{x}"), format!("dbr:R{}", x as u16 + shift as u16))).collect();
        let a: Vec<(Vec<String>, Vec<String>)> = pairs.iter().map(|(p, r)| (to_tok(p), to_tok(r))).collect();
        let b: Vec<(Vec<String>, Vec<String>)> = a.iter().map(|(p, r)| (renamed(p, &map), renamed(r, &map))).collect();
        prop_assert!((corpus_bleu(&a) - corpus_bleu(&b)).abs() < 1e-12);
        for ((p, r), (q, s)) in a.iter().zip(&b) {
            prop_assert!((bleu(p, r) - bleu(q, s)).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_lies_between_run_extremes(values in prop::collection::vec((0.0f64..100.0, 0.0f64..1.0, 0.0f64..1.0), 1..6)) {
        let base = summarize(&[], 0.0, 1.0, true);
        let runs: Vec<RunReport> = values
            .iter()
            .enumerate()
            .map(|(i, &(b, a, f))| RunReport { bleu: b, accuracy: a, f1: f, ..base.clone() }.with_seed(i as u64))
            .collect();
        let agg = aggregate_runs(&runs).unwrap();
        let check = |get: fn(&RunReport) -> f64| {
            let lo = runs.iter().map(get).fold(f64::INFINITY, f64::min);
            let hi = runs.iter().map(get).fold(f64::NEG_INFINITY, f64::max);
            let v = get(&agg);
            v >= lo - 1e-12 && v <= hi + 1e-12
        };
        prop_assert!(check(|r| r.bleu));
        prop_assert!(check(|r| r.accuracy));
        prop_assert!(check(|r| r.f1));
        prop_assert_eq!(agg.seeds.len(), runs.len());
    }
}
