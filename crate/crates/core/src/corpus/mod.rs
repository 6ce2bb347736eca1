//! Question/query datasets: loading, templates, annotation schemes, answer
//! enrichment and splits.

mod annotate;
mod prompt;
mod recover;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use annotate::{
    annotate_raw, annotate_tag_end, annotate_tag_within, kb_elements, tokenize_question, unwrap_kb,
    wrap_kb, AnnotatedQuestion, LabelSource, SEP,
};
pub use prompt::{build_instruction_prompt, Prompt, PromptMode};
pub use recover::{match_bindings, recover_templates, TemplateRecovery};

use crate::endpoint::{AnswerSet, Client};
use crate::error::{Error, Result};

/// One question/query pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reformulated_question: Option<String>,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    #[serde(default, rename = "answers", skip_serializing_if = "Option::is_none")]
    pub gold_answers: Option<AnswerSet>,
}

impl Entry {
    pub fn new(id: impl Into<String>, question: impl Into<String>, query: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            reformulated_question: None,
            query: query.into(),
            template_id: None,
            gold_answers: None,
        }
    }

    /// Detail of a failed enrichment, if any.
    pub fn answer_error(&self) -> Option<&str> {
        match &self.gold_answers {
            Some(AnswerSet::Error { detail }) => Some(detail),
            _ => None,
        }
    }
}

#[derive(Deserialize)]
struct RawEntry {
    id: Option<serde_json::Value>,
    question: Option<String>,
    reformulated_question: Option<String>,
    query: Option<String>,
    template_id: Option<serde_json::Value>,
    answers: Option<AnswerSet>,
}

fn opaque_id(v: serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}

/// Reads a JSON Lines dataset. Records without an `id` get their 1-based
/// line number.
pub fn load_dataset(path: &Path) -> Result<Vec<Entry>> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Record {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let raw: RawEntry = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let question = raw
            .question
            .filter(|q| !q.trim().is_empty())
            .ok_or_else(|| err("missing or empty `question`".into()))?;
        let query = raw
            .query
            .filter(|q| !q.trim().is_empty())
            .ok_or_else(|| err("missing or empty `query`".into()))?;
        let id = raw.id.map(opaque_id).unwrap_or_else(|| lineno.to_string());
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        entries.push(Entry {
            id,
            question,
            reformulated_question: raw.reformulated_question.filter(|q| !q.trim().is_empty()),
            query,
            template_id: raw.template_id.map(opaque_id),
            gold_answers: raw.answers,
        });
    }
    Ok(entries)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// templates

/// Paired question and query skeletons sharing numbered `<i>` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalTemplate {
    pub id: String,
    pub question_template: String,
    pub query_template: String,
}

/// A placeholder filler: the KB token used in the query and its natural
/// language surface form used in the question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub kb_token: String,
    pub label: String,
}

impl Binding {
    pub fn new(kb_token: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            kb_token: kb_token.into(),
            label: label.into(),
        }
    }
}

pub type Bindings = BTreeMap<usize, Binding>;

/// Piece of a template: literal text or a placeholder index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Segment<'a> {
    Text(&'a str),
    Slot(usize),
}

pub(crate) fn segments(template: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let bytes = template.as_bytes();
    let mut last = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'>' {
                if last < i {
                    out.push(Segment::Text(&template[last..i]));
                }
                out.push(Segment::Slot(template[i + 1..j].parse().unwrap()));
                i = j + 1;
                last = i;
                continue;
            }
        }
        i += 1;
    }
    if last < template.len() {
        out.push(Segment::Text(&template[last..]));
    }
    out
}

fn placeholder_set(template: &str) -> BTreeSet<usize> {
    segments(template)
        .into_iter()
        .filter_map(|s| match s {
            Segment::Slot(i) => Some(i),
            Segment::Text(_) => None,
        })
        .collect()
}

impl GlobalTemplate {
    pub fn new(id: impl Into<String>, question: impl Into<String>, query: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            question_template: question.into(),
            query_template: query.into(),
        }
    }

    pub fn placeholders(&self) -> BTreeSet<usize> {
        placeholder_set(&self.question_template)
    }

    /// Both sides use the same placeholder indices, numbered `1..=n`.
    pub fn validate(&self) -> Result<()> {
        let q = placeholder_set(&self.question_template);
        let s = placeholder_set(&self.query_template);
        let invalid = |message: String| Error::InvalidTemplate {
            template: self.id.clone(),
            message,
        };
        if q != s {
            return Err(invalid(format!("question placeholders {q:?} differ from query placeholders {s:?}")));
        }
        if !q.iter().copied().eq(1..=q.len()) {
            return Err(invalid(format!("placeholders {q:?} are not contiguous from 1")));
        }
        Ok(())
    }
}

pub fn load_templates(path: &Path) -> Result<Vec<GlobalTemplate>> {
    let text = std::fs::read_to_string(path)?;
    let templates: Vec<GlobalTemplate> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text)?
    } else {
        read_jsonl(path)?
    };
    for t in &templates {
        t.validate()?;
    }
    Ok(templates)
}

fn fill(template: &str, mut value: impl FnMut(usize) -> String) -> String {
    segments(template)
        .into_iter()
        .map(|s| match s {
            Segment::Text(t) => t.to_string(),
            Segment::Slot(i) => value(i),
        })
        .collect()
}

/// Fills a template's placeholders, producing a dataset entry.
pub fn instantiate_template(template: &GlobalTemplate, bindings: &Bindings) -> Result<Entry> {
    template.validate()?;
    let missing: Vec<usize> = template
        .placeholders()
        .into_iter()
        .filter(|i| !bindings.contains_key(i))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingBindings {
            template: template.id.clone(),
            missing,
        });
    }
    let question = fill(&template.question_template, |i| bindings[&i].label.clone());
    let query = fill(&template.query_template, |i| bindings[&i].kb_token.clone());
    let key: Vec<&str> = bindings.values().map(|b| b.kb_token.as_str()).collect();
    let mut entry = Entry::new(format!("{}#{}", template.id, key.join(",")), question, query);
    entry.template_id = Some(template.id.clone());
    Ok(entry)
}

// ---------------------------------------------------------------------------
// schemes and variants

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "raw")]
    RawQuestion,
    #[serde(rename = "tag-within")]
    TagWithin,
    #[serde(rename = "tag-end")]
    TagEnd,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" | "raw-question" => Ok(Scheme::RawQuestion),
            "tag-within" => Ok(Scheme::TagWithin),
            "tag-end" => Ok(Scheme::TagEnd),
            other => Err(Error::Config(format!("unknown annotation scheme `{other}`"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::RawQuestion => "raw",
            Scheme::TagWithin => "tag-within",
            Scheme::TagEnd => "tag-end",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionVariant {
    Original,
    Reformulated,
}

pub fn select_question_variant(entry: &Entry, variant: QuestionVariant) -> Result<&str> {
    match variant {
        QuestionVariant::Original => Ok(&entry.question),
        QuestionVariant::Reformulated => entry
            .reformulated_question
            .as_deref()
            .ok_or_else(|| Error::MissingReformulation(entry.id.clone())),
    }
}

/// Train/test question surfaces for the three generalization protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneralizationProtocol {
    /// Train on original questions, test on the test split's reformulations.
    OriginalToReformulatedTest,
    /// Train on original questions, test on the train split's reformulations.
    OriginalToReformulatedTrain,
    /// Train and test on reformulations.
    ReformulatedToReformulated,
}

impl GeneralizationProtocol {
    /// Rewrites the split so each entry's `question` holds the surface form
    /// the protocol calls for. The returned split's test set is the one to
    /// evaluate on.
    pub fn apply(self, split: &DatasetSplit) -> Result<DatasetSplit> {
        let with = |entries: &[Entry], v: QuestionVariant| -> Result<Vec<Entry>> {
            entries
                .iter()
                .map(|e| {
                    let mut e = e.clone();
                    e.question = select_question_variant(&e, v)?.to_string();
                    Ok(e)
                })
                .collect()
        };
        use QuestionVariant::*;
        let (train, test) = match self {
            Self::OriginalToReformulatedTest => (with(&split.train, Original)?, with(&split.test, Reformulated)?),
            Self::OriginalToReformulatedTrain => (with(&split.train, Original)?, with(&split.train, Reformulated)?),
            Self::ReformulatedToReformulated => (with(&split.train, Reformulated)?, with(&split.test, Reformulated)?),
        };
        let validation = match self {
            Self::ReformulatedToReformulated => with(&split.validation, Reformulated)?,
            _ => split.validation.clone(),
        };
        Ok(DatasetSplit {
            train,
            validation,
            test,
        })
    }
}

// ---------------------------------------------------------------------------
// splits

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Entry>,
    pub validation: Vec<Entry>,
    pub test: Vec<Entry>,
}

impl DatasetSplit {
    pub fn new(train: Vec<Entry>, validation: Vec<Entry>, test: Vec<Entry>) -> Result<Self> {
        let split = Self {
            train,
            validation,
            test,
        };
        split.check_disjoint()?;
        Ok(split)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        Ok(())
    }

    /// Shuffles with `seed` and cuts by the given train/validation fractions;
    /// the remainder is the test split.
    pub fn by_fraction(mut entries: Vec<Entry>, train: f64, validation: f64, seed: u64) -> Result<Self> {
        entries.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = entries.len();
        let n_train = (n as f64 * train).round() as usize;
        let n_val = ((n as f64 * validation).round() as usize).min(n - n_train.min(n));
        let test = entries.split_off((n_train + n_val).min(n));
        let validation = entries.split_off(n_train.min(n));
        Self::new(entries, validation, test)
    }

    pub fn all(&self) -> impl Iterator<Item = &Entry> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}

// ---------------------------------------------------------------------------
// answers

/// Executes every gold query and stores its normalized answer. Per-entry
/// failures are recorded as [`AnswerSet::Error`]; an unreachable endpoint
/// fails the whole batch before anything is modified.
pub fn enrich_answers(entries: &[Entry], client: &Client) -> Result<Vec<Entry>> {
    client.ping()?;
    let queries: Vec<&str> = entries.iter().map(|e| e.query.as_str()).collect();
    let answers = client.execute_all(&queries);
    Ok(entries
        .iter()
        .zip(answers)
        .map(|(e, a)| {
            if let AnswerSet::Error { detail } = &a {
                log::warn!("entry {}: answer_error: {detail}", e.id);
            }
            Entry {
                gold_answers: Some(a),
                ..e.clone()
            }
        })
        .collect())
}

/// Keeps entries whose gold answer is non-empty; a `false` ASK answer counts
/// as non-empty. Retention of an empty input is 1.
pub fn filter_nonempty(entries: &[Entry]) -> Result<(Vec<Entry>, f64)> {
    let mut kept = Vec::new();
    for e in entries {
        let answers = e
            .gold_answers
            .as_ref()
            .ok_or_else(|| Error::NotEnriched(e.id.clone()))?;
        if answers.is_nonempty() {
            kept.push(e.clone());
        }
    }
    let retention = if entries.is_empty() {
        1.0
    } else {
        kept.len() as f64 / entries.len() as f64
    };
    Ok((kept, retention))
}

/// Entries indexed by id.
pub fn index_by_id(entries: &[Entry]) -> HashMap<&str, &Entry> {
    entries.iter().map(|e| (e.id.as_str(), e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_single_record() {
        let f = write_tmp(
            r#"{"question":"what is the office of richard coke ?","query":"select distinct ?uri where { dbr:Richard_Coke dbp:office ?uri }"}"#,
        );
        let entries = load_dataset(f.path()).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].question, "what is the office of richard coke ?");
        assert_eq!(
            entries[0].query,
            "select distinct ?uri where { dbr:Richard_Coke dbp:office ?uri }"
        );
        assert_eq!(entries[0].reformulated_question, None);
        assert_eq!(entries[0].template_id, None);
        assert_eq!(entries[0].gold_answers, None);
    }

    #[test]
    fn load_empty_file() {
        let f = write_tmp("");
        assert!(load_dataset(f.path()).unwrap().is_empty());
    }

    #[test]
    fn missing_query_reports_line() {
        let f = write_tmp(concat!(
            "{\"id\":1,\"question\":\"a ?\",\"query\":\"ask { }\"}\n",
            "{\"id\":2,\"question\":\"b ?\"}\n",
            "{\"id\":3,\"question\":\"c ?\",\"query\":\"ask { }\"}\n",
        ));
        match load_dataset(f.path()) {
            Err(Error::Record { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("query"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let f = write_tmp(concat!(
            "{\"id\":\"x\",\"question\":\"a ?\",\"query\":\"ask { }\"}\n",
            "{\"id\":\"x\",\"question\":\"b ?\",\"query\":\"ask { }\"}\n",
        ));
        assert!(matches!(load_dataset(f.path()), Err(Error::DuplicateId(id)) if id == "x"));
    }

    #[test]
    fn instantiate_richard_coke() {
        let t = GlobalTemplate::new(
            "t1",
            "what is the <1> of <2> ?",
            "select distinct ?uri where { <2> <1> ?uri }",
        );
        let b: Bindings = [
            (1, Binding::new("dbp:office", "office")),
            (2, Binding::new("dbr:Richard_Coke", "richard coke")),
        ]
        .into_iter()
        .collect();
        let e = instantiate_template(&t, &b).unwrap();
        assert_eq!(e.question, "what is the office of richard coke ?");
        assert_eq!(e.query, "select distinct ?uri where { dbr:Richard_Coke dbp:office ?uri }");
        assert_eq!(e.template_id.as_deref(), Some("t1"));
    }

    #[test]
    fn instantiate_without_placeholders_is_identity() {
        let t = GlobalTemplate::new("t0", "how many things are there ?", "select (count(*) as ?c) where { ?s ?p ?o }");
        let e = instantiate_template(&t, &Bindings::new()).unwrap();
        assert_eq!(e.question, t.question_template);
        assert_eq!(e.query, t.query_template);
    }

    #[test]
    fn instantiate_reports_missing_bindings() {
        let t = GlobalTemplate::new("t", "what is the <1> of <2> ?", "select ?uri where { <2> <1> ?uri }");
        let b: Bindings = [(1, Binding::new("dbp:office", "office"))].into_iter().collect();
        match instantiate_template(&t, &b) {
            Err(Error::MissingBindings { missing, .. }) => assert_eq!(missing, vec![2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn template_validation() {
        assert!(GlobalTemplate::new("a", "x <1> <3>", "y <1> <3>").validate().is_err());
        assert!(GlobalTemplate::new("b", "x <1> <2>", "y <1>").validate().is_err());
        assert!(GlobalTemplate::new("c", "x <2> <1>", "y <1> <2>").validate().is_ok());
    }

    #[test]
    fn question_variants() {
        let mut e = Entry::new(
            "7",
            "how many movies are there whose director is Stanley Kubrick?",
            "select (count(?uri) as ?c) where { ?uri dbo:director dbr:Stanley_Kubrick }",
        );
        assert!(matches!(
            select_question_variant(&e, QuestionVariant::Reformulated),
            Err(Error::MissingReformulation(id)) if id == "7"
        ));
        e.reformulated_question = Some("how many movies did Stanley Kubrick direct ?".into());
        assert_eq!(
            select_question_variant(&e, QuestionVariant::Reformulated).unwrap(),
            "how many movies did Stanley Kubrick direct ?"
        );
        assert_eq!(select_question_variant(&e, QuestionVariant::Original).unwrap(), e.question);
    }

    fn enriched(id: usize, answers: AnswerSet) -> Entry {
        let mut e = Entry::new(id.to_string(), "q ?", "ask { }");
        e.gold_answers = Some(answers);
        e
    }

    #[test]
    fn retention_counts_nonempty() {
        let mut entries: Vec<Entry> = (0..8)
            .map(|i| enriched(i, AnswerSet::bindings([format!("http://x/{i}")])))
            .collect();
        entries.push(enriched(8, AnswerSet::bindings(Vec::<String>::new())));
        entries.push(enriched(9, AnswerSet::error("timeout")));
        let (kept, retention) = filter_nonempty(&entries).unwrap();
        assert_eq!(kept.len(), 8);
        assert_eq!(retention, 0.8);
        let (again, r2) = filter_nonempty(&kept).unwrap();
        assert_eq!(again, kept);
        assert_eq!(r2, 1.0);
    }

    #[test]
    fn false_ask_is_nonempty_and_empty_input_retains_all() {
        let (kept, r) = filter_nonempty(&[enriched(0, AnswerSet::Boolean { value: false })]).unwrap();
        assert_eq!((kept.len(), r), (1, 1.0));
        let (kept, r) = filter_nonempty(&[]).unwrap();
        assert!(kept.is_empty());
        assert_eq!(r, 1.0);
    }

    #[test]
    fn unenriched_entries_rejected() {
        let e = Entry::new("u", "q ?", "ask { }");
        assert!(matches!(filter_nonempty(&[e]), Err(Error::NotEnriched(id)) if id == "u"));
    }

    #[test]
    fn split_disjointness() {
        let entries: Vec<Entry> = (0..20).map(|i| Entry::new(i.to_string(), "q", "ask {}")).collect();
        let split = DatasetSplit::by_fraction(entries.clone(), 0.8, 0.1, 3).unwrap();
        assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (16, 2, 2));
        assert!(DatasetSplit::new(entries[..2].to_vec(), entries[1..3].to_vec(), vec![]).is_err());
    }
}
