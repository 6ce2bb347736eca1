//! Token-level alignment of reference and predicted queries, and
//! error-distribution matrices over token types.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::metrics::{csv_field, percent, RunReport};
use crate::sparqltok::{Classifier, KbMembership, TokenType};

const N: usize = TokenType::ALL.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum EditOp {
    Match { r: usize, p: usize },
    Substitute { r: usize, p: usize },
    Insert { p: usize },
    Delete { r: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Alignment {
    pub ops: Vec<EditOp>,
}

impl Alignment {
    pub fn cost(&self) -> usize {
        self.ops.iter().filter(|op| !matches!(op, EditOp::Match { .. })).count()
    }
}

/// Unit-cost Levenshtein alignment. On ties the backtrace prefers the
/// diagonal (match or substitution), then deletion, then insertion.
pub fn align<R: AsRef<str>, P: AsRef<str>>(reference: &[R], pred: &[P]) -> Alignment {
    let (n, m) = (reference.len(), pred.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        dp[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diff = usize::from(reference[i - 1].as_ref() != pred[j - 1].as_ref());
            dp[i][j] = (dp[i - 1][j - 1] + diff).min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == pred[j - 1].as_ref();
            if dp[i][j] == dp[i - 1][j - 1] + usize::from(!same) {
                ops.push(if same {
                    EditOp::Match { r: i - 1, p: j - 1 }
                } else {
                    EditOp::Substitute { r: i - 1, p: j - 1 }
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            ops.push(EditOp::Delete { r: i - 1 });
            i -= 1;
        } else {
            ops.push(EditOp::Insert { p: j - 1 });
            j -= 1;
        }
    }
    ops.reverse();
    Alignment { ops }
}

/// Substitution counts `counts[ref][pred]` plus insertions (by predicted
/// type) and deletions (by reference type). References are classified
/// structurally, so the `FakeUri` row stays empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorMatrix {
    pub counts: [[usize; N]; N],
    pub insertions: [usize; N],
    pub deletions: [usize; N],
    pub pairs: usize,
}

/// One aligned pair for JSONL drill-down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub id: String,
    pub reference: Vec<String>,
    pub prediction: Vec<String>,
    pub reference_types: Vec<TokenType>,
    pub prediction_types: Vec<TokenType>,
    pub alignment: Alignment,
}

impl ErrorMatrix {
    /// Aligns one pair, adds it to the matrix and returns the record.
    pub fn add_pair(
        &mut self,
        classifier: &Classifier,
        kb: &KbMembership,
        id: &str,
        reference: &[String],
        pred: &[String],
    ) -> AlignmentRecord {
        let rt: Vec<TokenType> = reference.iter().map(|t| classifier.structural(t)).collect();
        let pt: Vec<TokenType> = pred.iter().map(|t| classifier.classify(t, kb)).collect();
        let alignment = align(reference, pred);
        for op in &alignment.ops {
            match *op {
                EditOp::Match { .. } => {}
                EditOp::Substitute { r, p } => self.counts[rt[r].index()][pt[p].index()] += 1,
                EditOp::Insert { p } => self.insertions[pt[p].index()] += 1,
                EditOp::Delete { r } => self.deletions[rt[r].index()] += 1,
            }
        }
        self.pairs += 1;
        AlignmentRecord {
            id: id.to_string(),
            reference: reference.to_vec(),
            prediction: pred.to_vec(),
            reference_types: rt,
            prediction_types: pt,
            alignment,
        }
    }

    pub fn merge(&mut self, other: &ErrorMatrix) {
        for r in 0..N {
            for p in 0..N {
                self.counts[r][p] += other.counts[r][p];
            }
            self.insertions[r] += other.insertions[r];
            self.deletions[r] += other.deletions[r];
        }
        self.pairs += other.pairs;
    }

    pub fn substitutions(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn total_errors(&self) -> usize {
        self.substitutions() + self.insertions.iter().sum::<usize>() + self.deletions.iter().sum::<usize>()
    }

    pub fn is_zero(&self) -> bool {
        self.total_errors() == 0
    }

    pub fn row(&self, reference: TokenType) -> &[usize; N] {
        &self.counts[reference.index()]
    }

    /// Row-normalized percentages; an empty row is all zeros.
    pub fn row_percentages(&self, reference: TokenType) -> [f64; N] {
        let row = self.row(reference);
        let total: usize = row.iter().sum();
        let mut out = [0.0; N];
        if total > 0 {
            for (o, &c) in out.iter_mut().zip(row) {
                *o = 100.0 * c as f64 / total as f64;
            }
        }
        out
    }

    /// Errors attributed to each reference type (substitutions and
    /// deletions), as percentages of all such errors.
    pub fn reference_distribution(&self) -> [f64; N] {
        let mut per = [0usize; N];
        for (r, slot) in per.iter_mut().enumerate() {
            *slot = self.counts[r].iter().sum::<usize>() + self.deletions[r];
        }
        to_percentages(&per)
    }

    /// Like [`Self::reference_distribution`], but URI substitutions whose
    /// prediction is a fake URI are counted in the `FakeUri` column.
    pub fn split_distribution(&self) -> [f64; N] {
        let mut per = [0usize; N];
        let fake = TokenType::FakeUri.index();
        for r in 0..N {
            for p in 0..N {
                let col = if p == fake { fake } else { r };
                per[col] += self.counts[r][p];
            }
            per[r] += self.deletions[r];
        }
        to_percentages(&per)
    }

    /// Count of predicted tokens classified as fake URIs in substitutions or
    /// insertions.
    pub fn fake_uri_predictions(&self) -> usize {
        let fake = TokenType::FakeUri.index();
        self.counts.iter().map(|row| row[fake]).sum::<usize>() + self.insertions[fake]
    }
}

fn to_percentages(counts: &[usize; N]) -> [f64; N] {
    let total: usize = counts.iter().sum();
    let mut out = [0.0; N];
    if total > 0 {
        for (o, &c) in out.iter_mut().zip(counts) {
            *o = 100.0 * c as f64 / total as f64;
        }
    }
    out
}

/// Builds the matrix over `(id, reference, prediction)` token triples with
/// the default classifier.
pub fn error_matrix<'a, I>(pairs: I, kb: &KbMembership) -> (ErrorMatrix, Vec<AlignmentRecord>)
where
    I: IntoIterator<Item = (&'a str, &'a [String], &'a [String])>,
{
    error_matrix_with(&Classifier::default(), pairs, kb)
}

pub fn error_matrix_with<'a, I>(classifier: &Classifier, pairs: I, kb: &KbMembership) -> (ErrorMatrix, Vec<AlignmentRecord>)
where
    I: IntoIterator<Item = (&'a str, &'a [String], &'a [String])>,
{
    let mut m = ErrorMatrix::default();
    let records = pairs
        .into_iter()
        .map(|(id, r, p)| m.add_pair(classifier, kb, id, r, p))
        .collect();
    (m, records)
}

/// Reference rows shown in the grid.
pub const ROWS: [TokenType; 6] = [
    TokenType::Uri,
    TokenType::SVocab,
    TokenType::Lit,
    TokenType::Fct,
    TokenType::Var,
    TokenType::Unk,
];

/// Overall error distribution over reference types.
pub fn red_line(m: &ErrorMatrix) -> String {
    let dist = m.reference_distribution();
    ROWS.iter()
        .map(|&t| format!("{}:{}%", t.label(), percent(dist[t.index()] / 100.0)))
        .collect::<Vec<_>>()
        .join(" -- ")
}

pub fn blue_line(run: &RunReport) -> String {
    format!(
        "BLEU: {}% -- ANSWER ACC: {}% -- ANSWER F1: {}%",
        run.bleu.round() as i64,
        percent(run.accuracy),
        percent(run.f1)
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    pub markdown: String,
    pub csv: String,
}

/// Confusion grid with integer row percentages, then the overall
/// distribution and the run's metrics.
pub fn render_report(m: &ErrorMatrix, run: &RunReport) -> RenderedReport {
    let mut md = String::from("| References \\ Predictions |");
    for t in TokenType::ALL {
        let _ = write!(md, " {} |", t.label());
    }
    md.push_str("\n|---|");
    md.push_str(&"---:|".repeat(N));
    md.push('\n');
    let mut csv = String::from("reference");
    for t in TokenType::ALL {
        let _ = write!(csv, ",{}", csv_field(t.label()));
    }
    csv.push_str(",substitutions,deletions\n");
    for r in ROWS {
        let pct = m.row_percentages(r);
        let _ = write!(md, "| {} |", r.label());
        let _ = write!(csv, "{}", csv_field(r.label()));
        for v in pct {
            let _ = write!(md, " {} |", percent(v / 100.0));
            let _ = write!(csv, ",{}", percent(v / 100.0));
        }
        md.push('\n');
        let _ = writeln!(
            csv,
            ",{},{}",
            m.row(r).iter().sum::<usize>(),
            m.deletions[r.index()]
        );
    }
    let red = red_line(m);
    let blue = blue_line(run);
    let _ = write!(
        md,
        "\n{red}\n\n{blue}\n\nInsertions: {} -- Deletions: {} -- Substitutions: {}\n",
        m.insertions.iter().sum::<usize>(),
        m.deletions.iter().sum::<usize>(),
        m.substitutions()
    );
    let dist = m.reference_distribution();
    csv.push_str("distribution");
    for t in TokenType::ALL {
        let _ = write!(csv, ",{}", percent(dist[t.index()] / 100.0));
    }
    let _ = writeln!(csv, ",,");
    let _ = writeln!(
        csv,
        "metrics,bleu={},accuracy={},f1={},,,,,,",
        run.bleu.round() as i64,
        percent(run.accuracy),
        percent(run.f1)
    );
    RenderedReport { markdown: md, csv }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_is_all_matches() {
        let a = toks("select ?x where { ?x a dbo:Film }");
        let al = align(&a, &a);
        assert_eq!(al.cost(), 0);
        assert_eq!(al.ops.len(), a.len());
    }

    #[test]
    fn prefers_substitution() {
        let al = align(&toks("a b c"), &toks("a x c"));
        assert_eq!(al.ops[1], EditOp::Substitute { r: 1, p: 1 });
        assert_eq!(al.cost(), 1);
    }

    #[test]
    fn row_of_one_and_three() {
        let mut m = ErrorMatrix::default();
        m.counts[TokenType::Uri.index()][TokenType::Uri.index()] = 1;
        m.counts[TokenType::Uri.index()][TokenType::SVocab.index()] = 3;
        let p = m.row_percentages(TokenType::Uri);
        assert_eq!(percent(p[TokenType::Uri.index()] / 100.0), 25);
        assert_eq!(percent(p[TokenType::SVocab.index()] / 100.0), 75);
    }
}
