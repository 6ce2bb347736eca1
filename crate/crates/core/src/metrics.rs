//! BLEU over query tokens, answer accuracy and F1, run evaluation and
//! multi-seed aggregation.
//!
//! BLEU is corpus-level, up to 4-grams with uniform weights and a brevity
//! penalty, on `sparqltok` token sequences. Orders for which the prediction
//! side has no n-grams at all are left out of the geometric mean; if no
//! order remains the score is 0.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::copynet::Prediction;
use crate::corpus::Entry;
use crate::endpoint::{AnswerSet, Client};
use crate::error::{Error, Result};
use crate::sparqltok::{detokenize, tokenize_query};

pub const MAX_ORDER: usize = 4;

/// Default smoothing constant for [`sentence_bleu`].
pub const SMOOTHING_EPS: f64 = 0.1;

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped matches and candidate n-gram count for one order.
fn clipped<S: AsRef<str>, R: AsRef<str>>(pred: &[S], reference: &[R], n: usize) -> (usize, usize) {
    let p = ngrams(pred, n);
    let r = ngrams(reference, n);
    let matched = p.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, pred.len().saturating_sub(n - 1))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub pred_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn of<S: AsRef<str>, R: AsRef<str>>(pred: &[S], reference: &[R]) -> Self {
        let mut s = Self {
            pred_len: pred.len(),
            ref_len: reference.len(),
            ..Self::default()
        };
        for n in 1..=MAX_ORDER {
            let (m, t) = clipped(pred, reference, n);
            s.matches[n - 1] = m;
            s.totals[n - 1] = t;
        }
        s
    }

    pub fn add(&mut self, other: &Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.pred_len += other.pred_len;
        self.ref_len += other.ref_len;
    }

    fn brevity_penalty(&self) -> f64 {
        if self.pred_len == 0 {
            0.0
        } else if self.pred_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.pred_len as f64).exp()
        }
    }

    /// Unsmoothed BLEU in [0, 100].
    pub fn score(&self) -> f64 {
        self.combine(|m, _| if m == 0 { None } else { Some(m as f64) })
    }

    /// BLEU where a zero match count is replaced by `eps`.
    pub fn smoothed(&self, eps: f64) -> f64 {
        self.combine(|m, _| Some(if m == 0 { eps } else { m as f64 }))
    }

    fn combine(&self, numerator: impl Fn(usize, usize) -> Option<f64>) -> f64 {
        let mut log_sum = 0.0;
        let mut orders = 0;
        for n in 0..MAX_ORDER {
            let t = self.totals[n];
            if t == 0 {
                continue;
            }
            match numerator(self.matches[n], t) {
                Some(m) => log_sum += (m / t as f64).ln(),
                None => return 0.0,
            }
            orders += 1;
        }
        if orders == 0 {
            return 0.0;
        }
        100.0 * self.brevity_penalty() * (log_sum / orders as f64).exp()
    }
}

/// BLEU of a single pair, computed as a one-pair corpus.
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(pred: &[S], reference: &[R]) -> f64 {
    BleuStats::of(pred, reference).score()
}

/// Corpus BLEU: n-gram statistics are summed over all pairs before combining.
pub fn corpus_bleu<S: AsRef<str>, R: AsRef<str>>(pairs: &[(Vec<S>, Vec<R>)]) -> f64 {
    let mut total = BleuStats::default();
    for (p, r) in pairs {
        total.add(&BleuStats::of(p, r));
    }
    total.score()
}

/// Sentence BLEU with add-epsilon smoothing of empty n-gram matches, for
/// per-entry diagnostics.
pub fn sentence_bleu<S: AsRef<str>, R: AsRef<str>>(pred: &[S], reference: &[R], eps: f64) -> f64 {
    BleuStats::of(pred, reference).smoothed(eps)
}

/// Exact answer equality. An endpoint error on either side never counts.
pub fn answer_accuracy(pred: &AnswerSet, gold: &AnswerSet) -> bool {
    match (pred, gold) {
        (AnswerSet::Bindings { values: p }, AnswerSet::Bindings { values: g }) => p == g,
        (AnswerSet::Boolean { value: p }, AnswerSet::Boolean { value: g }) => p == g,
        _ => false,
    }
}

pub fn answer_f1(pred: &AnswerSet, gold: &AnswerSet) -> f64 {
    match (pred, gold) {
        (AnswerSet::Bindings { values: p }, AnswerSet::Bindings { values: g }) => set_f1(p, g),
        (AnswerSet::Boolean { value: p }, AnswerSet::Boolean { value: g })
            if p == g => {
                1.0
            }
        _ => 0.0,
    }
}

fn set_f1(pred: &BTreeSet<String>, gold: &BTreeSet<String>) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let common = pred.intersection(gold).count() as f64;
    if common == 0.0 {
        return 0.0;
    }
    let precision = common / pred.len() as f64;
    let recall = common / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryScore {
    pub id: String,
    /// Smoothed sentence BLEU, for drill-down only.
    pub bleu: f64,
    pub answer_correct: bool,
    pub answer_f1: f64,
    pub predicted_query: String,
    pub predicted_answers: AnswerSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: Option<u64>,
    pub bleu: f64,
    pub accuracy: f64,
    pub f1: f64,
}

/// Scores over one evaluated subset. `accuracy` and `f1` are fractions in
/// [0, 1]; `bleu` is in [0, 100].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub bleu: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub entries: usize,
    pub retention: f64,
    /// False when some entries had no prediction or the endpoint was down.
    pub complete: bool,
    /// Hash of the sorted entry ids.
    pub subset: String,
    #[serde(default)]
    pub seeds: Vec<SeedMetrics>,
}

impl RunReport {
    pub fn metrics(&self, seed: Option<u64>) -> SeedMetrics {
        SeedMetrics {
            seed,
            bleu: self.bleu,
            accuracy: self.accuracy,
            f1: self.f1,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = vec![self.metrics(Some(seed))];
        self
    }
}

pub fn subset_hash<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.sort_unstable();
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update([0]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds a report from per-entry scores plus the corpus BLEU pairs.
pub fn summarize(scores: &[EntryScore], corpus_bleu_value: f64, retention: f64, complete: bool) -> RunReport {
    let n = scores.len();
    let (accuracy, f1) = if n == 0 {
        (0.0, 0.0)
    } else {
        (
            scores.iter().filter(|s| s.answer_correct).count() as f64 / n as f64,
            scores.iter().map(|s| s.answer_f1).sum::<f64>() / n as f64,
        )
    };
    RunReport {
        bleu: corpus_bleu_value,
        accuracy,
        f1,
        entries: n,
        retention,
        complete,
        subset: subset_hash(scores.iter().map(|s| s.id.as_str())),
        seeds: Vec::new(),
    }
}

/// Executes every prediction and scores it against the gold answers of
/// `entries`, which must already be restricted to non-empty gold answers.
/// Missing predictions and endpoint failures score zero and mark the report
/// incomplete.
pub fn evaluate_run(
    predictions: &[Prediction],
    entries: &[Entry],
    client: &Client,
    retention: f64,
) -> Result<(RunReport, Vec<EntryScore>)> {
    if predictions.is_empty() {
        return Err(Error::NoPredictions);
    }
    for e in entries {
        if e.gold_answers.is_none() {
            return Err(Error::NotEnriched(e.id.clone()));
        }
    }
    let by_id: HashMap<&str, &Prediction> = predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut complete = true;
    let queries: Vec<String> = entries
        .iter()
        .map(|e| match by_id.get(e.id.as_str()) {
            Some(p) => detokenize(&p.tokens),
            None => {
                log::warn!("no prediction for entry `{}`", e.id);
                complete = false;
                String::new()
            }
        })
        .collect();
    let answers = match client.ping() {
        Ok(()) => {
            let runnable: Vec<&str> = queries.iter().map(String::as_str).filter(|q| !q.is_empty()).collect();
            let mut results = client.execute_all(&runnable).into_iter();
            queries
                .iter()
                .map(|q| {
                    if q.is_empty() {
                        AnswerSet::error("no prediction")
                    } else {
                        results.next().expect("one answer per runnable query")
                    }
                })
                .collect::<Vec<_>>()
        }
        Err(e) => {
            log::error!("{e}; scoring every prediction as failed");
            complete = false;
            queries.iter().map(|_| AnswerSet::error(e.to_string())).collect()
        }
    };
    let mut pairs = Vec::with_capacity(entries.len());
    let mut scores = Vec::with_capacity(entries.len());
    for ((e, q), a) in entries.iter().zip(&queries).zip(answers) {
        let gold = e.gold_answers.as_ref().expect("checked above");
        let reference = tokenize_query(&e.query)?;
        let pred = by_id.get(e.id.as_str()).map(|p| p.tokens.clone()).unwrap_or_default();
        scores.push(EntryScore {
            id: e.id.clone(),
            bleu: sentence_bleu(&pred, &reference, SMOOTHING_EPS),
            answer_correct: answer_accuracy(&a, gold),
            answer_f1: answer_f1(&a, gold),
            predicted_query: q.clone(),
            predicted_answers: a,
        });
        pairs.push((pred, reference));
    }
    let report = summarize(&scores, corpus_bleu(&pairs), retention, complete);
    Ok((report, scores))
}

/// Arithmetic mean of each metric over runs on the same subset. Per-run
/// values are kept in `seeds`.
pub fn aggregate_runs(reports: &[RunReport]) -> Result<RunReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Config("no run reports to aggregate".into()))?;
    if reports.iter().any(|r| r.subset != first.subset || r.entries != first.entries) {
        return Err(Error::MismatchedReports);
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&RunReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let seeds = reports
        .iter()
        .flat_map(|r| {
            if r.seeds.is_empty() {
                vec![r.metrics(None)]
            } else {
                r.seeds.clone()
            }
        })
        .collect();
    Ok(RunReport {
        bleu: mean(|r| r.bleu),
        accuracy: mean(|r| r.accuracy),
        f1: mean(|r| r.f1),
        entries: first.entries,
        retention: first.retention,
        complete: reports.iter().all(|r| r.complete),
        subset: first.subset.clone(),
        seeds,
    })
}

/// Integer percentage as printed in the result tables.
pub fn percent(fraction: f64) -> i64 {
    (fraction * 100.0).round() as i64
}

/// `BLEU & Acc. & F1` rows, one per labelled report.
pub fn results_markdown(rows: &[(String, &RunReport)]) -> String {
    let mut out = String::from("| Run | BLEU | Acc. | F1 |\n|---|---:|---:|---:|\n");
    for (label, r) in rows {
        let _ = writeln!(
            out,
            "| {label} | {} | {} | {} |",
            r.bleu.round() as i64,
            percent(r.accuracy),
            percent(r.f1)
        );
    }
    out
}

pub fn results_csv(rows: &[(String, &RunReport)]) -> String {
    let mut out = String::from("run,bleu,accuracy,f1,entries,retention\n");
    for (label, r) in rows {
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{:.4},{},{:.4}",
            csv_field(label),
            r.bleu,
            100.0 * r.accuracy,
            100.0 * r.f1,
            r.entries,
            r.retention
        );
    }
    out
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
