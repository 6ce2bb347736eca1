use std::path::Path;

use proptest::prelude::*;
use sparqlcopy::erroranalysis::{align, error_matrix, render_report, EditOp, ErrorMatrix, ROWS};
use sparqlcopy::metrics::{summarize, RunReport};
use sparqlcopy::sparqltok::{KbMembership, TokenType};

/// Edit distance by plain recursion over the three moves.
fn naive_distance(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let diag = naive_distance(ra, rb) + usize::from(x != y);
            let del = naive_distance(ra, b) + 1;
            let ins = naive_distance(a, rb) + 1;
            diag.min(del).min(ins)
        }
    }
}

fn strs(v: &[u8]) -> Vec<String> {
    v.iter().map(|x| format!("t{x}")).collect()
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

proptest! {
    #[test]
    fn alignment_cost_is_minimal(
        a in prop::collection::vec(0u8..4, 0..=5),
        b in prop::collection::vec(0u8..4, 0..=5),
    ) {
        prop_assert_eq!(align(&strs(&a), &strs(&b)).cost(), naive_distance(&a, &b));
    }

    /// Every reference and prediction index is visited once, in order.
    #[test]
    fn alignment_is_a_monotone_traversal(
        a in prop::collection::vec(0u8..4, 0..12),
        b in prop::collection::vec(0u8..4, 0..12),
    ) {
        let (ra, rb) = (strs(&a), strs(&b));
        let al = align(&ra, &rb);
        let mut rs = Vec::new();
        let mut ps = Vec::new();
        for op in &al.ops {
            match *op {
                EditOp::Match { r, p } => {
                    prop_assert_eq!(&ra[r], &rb[p]);
                    rs.push(r);
                    ps.push(p);
                }
                EditOp::Substitute { r, p } => {
                    prop_assert_ne!(&ra[r], &rb[p]);
                    rs.push(r);
                    ps.push(p);
                }
                EditOp::Insert { p } => ps.push(p),
                EditOp::Delete { r } => rs.push(r),
            }
        }
        prop_assert_eq!(rs, (0..a.len()).collect::<Vec<_>>());
        prop_assert_eq!(ps, (0..b.len()).collect::<Vec<_>>());
    }

    #[test]
    fn matrix_total_equals_alignment_cost(
        pairs in prop::collection::vec(
            (prop::collection::vec(0usize..6, 0..8), prop::collection::vec(0usize..6, 0..8)),
            1..6,
        ),
    ) {
        const POOL: [&str; 6] = ["select", "?x", "dbr:A", "dbr:Fake", "\"v\"", "count"];
        let kb = KbMembership::new(["dbr:A"]);
        let data: Vec<(String, Vec<String>, Vec<String>)> = pairs
            .iter()
            .enumerate()
            .map(|(i, (r, p))| {
                let f = |v: &Vec<usize>| v.iter().map(|&k| POOL[k].to_string()).collect::<Vec<_>>();
                (i.to_string(), f(r), f(p))
            })
            .collect();
        let (m, records) = error_matrix(data.iter().map(|(i, r, p)| (i.as_str(), r.as_slice(), p.as_slice())), &kb);
        let cost: usize = records.iter().map(|r| r.alignment.cost()).sum();
        prop_assert_eq!(m.total_errors(), cost);
        prop_assert_eq!(m.pairs, data.len());
        // references are classified structurally
        prop_assert!(m.counts[TokenType::FakeUri.index()].iter().all(|&c| c == 0));
        prop_assert_eq!(m.deletions[TokenType::FakeUri.index()], 0);
    }
}

const BASE: &str = "select ?x where { ?x dbo:team dbr:A }";

/// Ten pairs whose errors are counted by hand below.
fn hand_pairs() -> Vec<(String, Vec<String>, Vec<String>)> {
    let rows = [
        (BASE, BASE),
        (BASE, "select ?x where { ?x dbo:team dbr:B }"),
        (BASE, "select ?x where { ?x dbo:team dbr:Zzz }"),
        (BASE, "ask ?x where { ?x dbo:team dbr:A }"),
        (BASE, "select ?y where { ?x dbo:team dbr:A }"),
        (BASE, "select ?x where { ?x dbo:team dbr:A"),
        (BASE, "select ?x where { ?x dbo:team dbr:A } limit 5"),
        ("select ?x where { ?x dbo:team \"x\"@en }", "select ?x where { ?x dbo:team \"y\"@en }"),
        ("select ( count ( ?x ) as ?c ) where { ?x a dbo:Person }", "select ( ?x ( ?x ) as ?c ) where { ?x a dbo:Person }"),
        (BASE, "select ?x where { ?x dbo:team <unk> }"),
    ];
    rows.iter()
        .enumerate()
        .map(|(i, (r, p))| (format!("p{i}"), toks(r), toks(p)))
        .collect()
}

fn hand_matrix() -> ErrorMatrix {
    let kb = KbMembership::new(["dbr:A", "dbr:B", "dbo:team", "dbo:Person"]);
    let pairs = hand_pairs();
    error_matrix(pairs.iter().map(|(i, r, p)| (i.as_str(), r.as_slice(), p.as_slice())), &kb).0
}

#[test]
fn ten_pair_hand_tally() {
    use TokenType::*;
    let m = hand_matrix();
    let mut want = ErrorMatrix {
        pairs: 10,
        ..ErrorMatrix::default()
    };
    want.counts[Uri.index()][Uri.index()] = 1;
    want.counts[Uri.index()][FakeUri.index()] = 1;
    want.counts[Uri.index()][Unk.index()] = 1;
    want.counts[SVocab.index()][SVocab.index()] = 1;
    want.counts[Var.index()][Var.index()] = 1;
    want.counts[Lit.index()][Lit.index()] = 1;
    want.counts[Fct.index()][Var.index()] = 1;
    want.deletions[SVocab.index()] = 1;
    want.insertions[SVocab.index()] = 1;
    want.insertions[Lit.index()] = 1;
    assert_eq!(m, want);
    assert_eq!(m.total_errors(), 10);
    assert_eq!(m.fake_uri_predictions(), 1);
}

fn run() -> RunReport {
    RunReport {
        bleu: 61.4,
        accuracy: 0.5,
        f1: 0.625,
        ..summarize(&[], 0.0, 1.0, true)
    }
}

#[test]
fn rendered_report_matches_golden_file() {
    let r = render_report(&hand_matrix(), &run());
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(dir.join("error_report.md"), &r.markdown).unwrap();
        std::fs::write(dir.join("error_report.csv"), &r.csv).unwrap();
    }
    assert_eq!(r.markdown, std::fs::read_to_string(dir.join("error_report.md")).unwrap());
    assert_eq!(r.csv, std::fs::read_to_string(dir.join("error_report.csv")).unwrap());
}

#[test]
fn zero_matrix_renders_all_zero_rows() {
    let m = ErrorMatrix::default();
    assert!(m.is_zero());
    let r = render_report(&m, &run());
    for t in ROWS {
        let line = r.markdown.lines().find(|l| l.starts_with(&format!("| {} |", t.label()))).unwrap();
        let cells: Vec<&str> = line.split('|').map(str::trim).filter(|c| !c.is_empty()).skip(1).collect();
        assert_eq!(cells.len(), TokenType::ALL.len());
        assert!(cells.iter().all(|c| *c == "0"), "{line}");
    }
    assert!(r.markdown.contains("Insertions: 0 -- Deletions: 0 -- Substitutions: 0"));
    assert!(r.markdown.contains("BLEU: 61% -- ANSWER ACC: 50% -- ANSWER F1: 63%"));
}
