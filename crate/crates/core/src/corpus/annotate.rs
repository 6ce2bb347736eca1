use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{segments, Bindings, Entry, GlobalTemplate, Scheme, Segment};
use crate::error::{Error, Result};
use crate::sparqltok::{is_literal, is_uri_shaped, tokenize_query, Classifier, TokenType};
use crate::vocab::is_reserved;
pub use crate::vocab::SEP;

/// A question token sequence with the positions of KB elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedQuestion {
    pub scheme: Scheme,
    pub tokens: Vec<String>,
    pub kb_spans: Vec<(usize, String)>,
}

impl AnnotatedQuestion {
    /// Checks the scheme-specific invariants.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.scheme == Scheme::RawQuestion && !self.kb_spans.is_empty() {
            return Err("raw question carries KB spans".into());
        }
        for (pos, kb) in &self.kb_spans {
            match self.tokens.get(*pos) {
                Some(t) if *t == wrap_kb(kb) => {}
                Some(t) => return Err(format!("span {pos} holds `{t}`, expected `{}`", wrap_kb(kb))),
                None => return Err(format!("span {pos} is past the end")),
            }
        }
        if self.scheme == Scheme::TagEnd && !self.kb_spans.is_empty() {
            let Some(first_sep) = self.tokens.iter().position(|t| t == SEP) else {
                return Err("tag-end KB elements without a separator".into());
            };
            if let Some((pos, _)) = self.kb_spans.iter().find(|(p, _)| *p <= first_sep) {
                return Err(format!("tag-end span {pos} lies inside the question body"));
            }
        }
        Ok(())
    }

    /// Tokens before the first `<sep>`.
    pub fn body(&self) -> &[String] {
        let end = self.tokens.iter().position(|t| t == SEP).unwrap_or(self.tokens.len());
        &self.tokens[..end]
    }

    /// For tag-end questions: each appended KB element with its label.
    pub fn tagged_elements(&self) -> Vec<(String, String)> {
        self.kb_spans
            .iter()
            .map(|(pos, kb)| {
                let label: Vec<&str> = self.tokens[pos + 1..]
                    .iter()
                    .take_while(|t| *t != SEP)
                    .map(String::as_str)
                    .collect();
                (kb.clone(), label.join(" "))
            })
            .collect()
    }
}

pub fn wrap_kb(kb_token: &str) -> String {
    format!("<<{kb_token}>>")
}

pub fn unwrap_kb(token: &str) -> Option<&str> {
    token
        .strip_prefix("<<")
        .and_then(|t| t.strip_suffix(">>"))
        .filter(|t| !t.is_empty())
}

fn is_marker(word: &str) -> bool {
    is_reserved(word) || unwrap_kb(word).is_some()
}

const DETACHED: &[char] = &['?', '!', ',', ';', ':', '(', ')', '"'];

/// Lowercases and splits on whitespace after detaching punctuation. Reserved
/// tokens and `<<kb>>` markers pass through untouched.
pub fn tokenize_question(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        if is_marker(word) {
            out.push(word.to_string());
            continue;
        }
        let chars: Vec<char> = word.to_lowercase().chars().collect();
        let mut cur = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let inner_dot = c == '.'
                && i > 0
                && i + 1 < chars.len()
                && chars[i - 1].is_alphanumeric()
                && chars[i + 1].is_alphanumeric();
            if DETACHED.contains(&c) || (c == '.' && !inner_dot) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// English labels for KB tokens, with a local-name fallback.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSource(pub BTreeMap<String, String>);

impl LabelSource {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn insert(&mut self, kb_token: impl Into<String>, label: impl Into<String>) {
        self.0.insert(kb_token.into(), label.into());
    }

    /// Lowercased label: the recorded one, else the literal's lexical form,
    /// else the URI local name with underscores read as spaces.
    pub fn label(&self, kb_token: &str) -> String {
        if let Some(l) = self.0.get(kb_token) {
            return l.to_lowercase();
        }
        if is_literal(kb_token) {
            return literal_lexical(kb_token).to_lowercase();
        }
        local_name(kb_token).replace('_', " ").to_lowercase()
    }
}

fn literal_lexical(token: &str) -> &str {
    if let Some(rest) = token.strip_prefix('"') {
        if let Some(end) = rest.rfind('"') {
            return &rest[..end];
        }
    }
    token
}

fn local_name(token: &str) -> &str {
    let inner = token
        .strip_prefix('<')
        .and_then(|t| t.strip_suffix('>'))
        .unwrap_or(token);
    if inner.contains("://") {
        inner.rsplit(['/', '#']).next().unwrap_or(inner)
    } else {
        inner.split_once(':').map(|(_, l)| l).unwrap_or(inner)
    }
}

/// Distinct KB elements (URIs and literals) of the gold query in query
/// order, each with its label.
pub fn kb_elements(entry: &Entry, labels: &LabelSource) -> Result<Vec<(String, String)>> {
    let classifier = Classifier::default();
    let mut out: Vec<(String, String)> = Vec::new();
    for tok in tokenize_query(&entry.query)? {
        let is_kb = matches!(
            classifier.structural(&tok),
            TokenType::Uri | TokenType::FakeUri | TokenType::Lit
        );
        if is_kb && !out.iter().any(|(k, _)| *k == tok) {
            let label = labels.label(&tok);
            out.push((tok, label));
        }
    }
    Ok(out)
}

pub fn annotate_raw(entry: &Entry) -> AnnotatedQuestion {
    AnnotatedQuestion {
        scheme: Scheme::RawQuestion,
        tokens: tokenize_question(&entry.question),
        kb_spans: Vec::new(),
    }
}

fn find_subsequence(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Replaces each placeholder's words by its `<<kb>>` token. The surface
/// follows the question template; every binding label must be locatable in
/// the entry's question.
pub fn annotate_tag_within(entry: &Entry, template: &GlobalTemplate, bindings: &Bindings) -> Result<AnnotatedQuestion> {
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
    let question = tokenize_question(&entry.question);
    for i in template.placeholders() {
        let label = &bindings[&i].label;
        if find_subsequence(&question, &tokenize_question(label)).is_none() {
            return Err(Error::PlaceholderNotFound {
                placeholder: i,
                label: label.clone(),
                question: entry.question.clone(),
            });
        }
    }
    let mut tokens = Vec::new();
    let mut kb_spans = Vec::new();
    for seg in segments(&template.question_template) {
        match seg {
            Segment::Text(t) => tokens.extend(tokenize_question(t)),
            Segment::Slot(i) => {
                let kb = &bindings[&i].kb_token;
                kb_spans.push((tokens.len(), kb.clone()));
                tokens.push(wrap_kb(kb));
            }
        }
    }
    Ok(AnnotatedQuestion {
        scheme: Scheme::TagWithin,
        tokens,
        kb_spans,
    })
}

/// Appends `<sep> <<kb>> label…` for each KB element after the question, in
/// an order drawn from a generator seeded with `seed`.
pub fn annotate_tag_end(entry: &Entry, kb_elements: &[(String, String)], seed: u64) -> AnnotatedQuestion {
    let mut tokens = tokenize_question(&entry.question);
    if kb_elements.is_empty() {
        log::warn!("entry {}: tag-end annotation without KB elements", entry.id);
    }
    let mut order: Vec<usize> = (0..kb_elements.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut kb_spans = Vec::with_capacity(order.len());
    for i in order {
        let (kb, label) = &kb_elements[i];
        tokens.push(SEP.to_string());
        kb_spans.push((tokens.len(), kb.clone()));
        tokens.push(wrap_kb(kb));
        tokens.extend(tokenize_question(label));
    }
    AnnotatedQuestion {
        scheme: Scheme::TagEnd,
        tokens,
        kb_spans,
    }
}

/// Whether a query token is a KB element (URI or literal).
pub(crate) fn is_kb_token(token: &str) -> bool {
    is_literal(token) || (is_uri_shaped(token) && !is_reserved(token))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Binding;

    fn clanton() -> (Entry, GlobalTemplate, Bindings) {
        let entry = Entry::new(
            "c",
            "which person has opponent ike clanton ?",
            "select distinct ?uri where { ?uri dbo:opponent dbr:Ike_Clanton . ?uri a dbo:Person }",
        );
        let template = GlobalTemplate::new(
            "t2",
            "who is the <1> whose <2> is <3> ?",
            "select distinct ?uri where { ?uri <2> <3> . ?uri a <1> }",
        );
        let bindings: Bindings = [
            (1, Binding::new("dbo:Person", "person")),
            (2, Binding::new("dbo:opponent", "opponent")),
            (3, Binding::new("dbr:Ike_Clanton", "ike clanton")),
        ]
        .into_iter()
        .collect();
        (entry, template, bindings)
    }

    #[test]
    fn tokenizer_detaches_punctuation() {
        assert_eq!(
            tokenize_question("How many movies did Stanley Kubrick direct?"),
            ["how", "many", "movies", "did", "stanley", "kubrick", "direct", "?"]
        );
        assert_eq!(tokenize_question("is it 22.4, really."), ["is", "it", "22.4", ",", "really", "."]);
        assert_eq!(
            tokenize_question("who <<dbo:Person>> <sep> x"),
            ["who", "<<dbo:Person>>", "<sep>", "x"]
        );
    }

    #[test]
    fn tag_within_clanton() {
        let (e, t, b) = clanton();
        let a = annotate_tag_within(&e, &t, &b).unwrap();
        assert_eq!(
            a.tokens.join(" "),
            "who is the <<dbo:Person>> whose <<dbo:opponent>> is <<dbr:Ike_Clanton>> ?"
        );
        assert_eq!(
            a.kb_spans,
            vec![
                (3, "dbo:Person".to_string()),
                (5, "dbo:opponent".to_string()),
                (7, "dbr:Ike_Clanton".to_string())
            ]
        );
        a.validate().unwrap();
    }

    #[test]
    fn tag_within_missing_label() {
        let (mut e, t, b) = clanton();
        e.question = "which person has opponent wyatt earp ?".into();
        assert!(matches!(
            annotate_tag_within(&e, &t, &b),
            Err(Error::PlaceholderNotFound { placeholder: 3, .. })
        ));
    }

    #[test]
    fn tag_within_without_placeholders() {
        let e = Entry::new("z", "how many things exist ?", "select ( count ( ?s ) as ?c ) where { ?s ?p ?o }");
        let t = GlobalTemplate::new("z", "how many things exist ?", "select ( count ( ?s ) as ?c ) where { ?s ?p ?o }");
        let a = annotate_tag_within(&e, &t, &Bindings::new()).unwrap();
        assert_eq!(a.tokens, annotate_raw(&e).tokens);
        assert!(a.kb_spans.is_empty());
    }

    #[test]
    fn tag_end_layout() {
        let (mut e, _, _) = clanton();
        e.question = "who is the person whose opponent is ike clanton ?".into();
        let elements = vec![
            ("dbr:Ike_Clanton".to_string(), "ike clanton".to_string()),
            ("dbo:opponent".to_string(), "opponent".to_string()),
            ("dbo:Person".to_string(), "person".to_string()),
        ];
        let a = annotate_tag_end(&e, &elements, 11);
        a.validate().unwrap();
        assert_eq!(a.body(), tokenize_question(&e.question).as_slice());
        let mut tagged = a.tagged_elements();
        tagged.sort();
        let mut expected = elements.clone();
        expected.sort();
        assert_eq!(tagged, expected);
        assert_eq!(a, annotate_tag_end(&e, &elements, 11));
        assert_eq!(annotate_tag_end(&e, &[], 5).tokens, tokenize_question(&e.question));
    }

    #[test]
    fn labels_fall_back_to_local_names() {
        let mut l = LabelSource::default();
        l.insert("dbo:Person", "Person");
        assert_eq!(l.label("dbo:Person"), "person");
        assert_eq!(l.label("dbr:Ike_Clanton"), "ike clanton");
        assert_eq!(l.label("<http://dbpedia.org/resource/Ike_Clanton>"), "ike clanton");
        assert_eq!(l.label("\"Zollkriminalamt\"@de"), "zollkriminalamt");
    }

    #[test]
    fn kb_elements_in_query_order() {
        let (e, _, _) = clanton();
        let els = kb_elements(&e, &LabelSource::default()).unwrap();
        let toks: Vec<&str> = els.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(toks, ["dbo:opponent", "dbr:Ike_Clanton", "dbo:Person"]);
    }
}
