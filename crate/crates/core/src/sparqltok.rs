//! SPARQL query tokenization and token-type classification.
//!
//! Queries are split into atomic tokens: prefixed names and full IRIs stay
//! whole, quoted literals (with any language tag or datatype) are one token,
//! and punctuation and operators are separate tokens. Each token can then be
//! labelled with a [`TokenType`], which drives vocabulary construction and
//! error analysis.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::endpoint::{AnswerSet, Client};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenType {
    Uri,
    FakeUri,
    SVocab,
    Lit,
    Fct,
    Var,
    Unk,
}

impl TokenType {
    /// Column order used by the error-distribution tables.
    pub const ALL: [TokenType; 7] = [
        TokenType::Uri,
        TokenType::FakeUri,
        TokenType::SVocab,
        TokenType::Lit,
        TokenType::Fct,
        TokenType::Var,
        TokenType::Unk,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            TokenType::Uri => "URIs",
            TokenType::FakeUri => "\"Fake\" URIs",
            TokenType::SVocab => "SVocab",
            TokenType::Lit => "Lit",
            TokenType::Fct => "Fct",
            TokenType::Var => "Var",
            TokenType::Unk => "Unk",
        }
    }
}

impl fmt::Display for TokenType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparqlToken {
    pub text: String,
    pub kind: TokenType,
}

/// Keyword and function inventories for one SPARQL dialect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrammarProfile {
    pub keywords: Vec<String>,
    pub functions: Vec<String>,
}

const KEYWORDS: &[&str] = &[
    "select", "ask", "describe", "construct", "distinct", "reduced", "where", "limit", "offset",
    "order", "by", "asc", "desc", "group", "having", "optional", "union", "minus", "prefix",
    "base", "as", "a", "values", "graph", "service", "from", "named", "bind", "not", "exists",
    "in", "{", "}", ".", ";", ",", "(", ")",
];

const FUNCTIONS: &[&str] = &[
    "=", "!=", "<", ">", "<=", ">=", "+", "-", "*", "/", "!", "&&", "||", "^^", "str", "ucase",
    "lcase", "concat", "filter", "count", "sum", "avg", "min", "max", "sample", "group_concat",
    "contains", "strstarts", "strends", "strlen", "substr", "regex", "replace", "lang",
    "langmatches", "datatype", "bound", "iri", "uri", "isiri", "isuri", "isblank", "isliteral",
    "isnumeric", "year", "month", "day", "now", "abs", "ceil", "floor", "round", "if",
    "coalesce",
];

impl Default for GrammarProfile {
    fn default() -> Self {
        Self {
            keywords: KEYWORDS.iter().map(|s| s.to_string()).collect(),
            functions: FUNCTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl GrammarProfile {
    fn sets(&self) -> (HashSet<String>, HashSet<String>) {
        (
            self.keywords.iter().map(|k| k.to_lowercase()).collect(),
            self.functions.iter().map(|k| k.to_lowercase()).collect(),
        )
    }
}

/// Namespace table used to expand prefixed names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrefixTable(pub BTreeMap<String, String>);

impl Default for PrefixTable {
    fn default() -> Self {
        let pairs = [
            ("dbr", "http://dbpedia.org/resource/"),
            ("res", "http://dbpedia.org/resource/"),
            ("dbo", "http://dbpedia.org/ontology/"),
            ("dbp", "http://dbpedia.org/property/"),
            ("dbc", "http://dbpedia.org/resource/Category:"),
            ("wd", "http://www.wikidata.org/entity/"),
            ("wdt", "http://www.wikidata.org/prop/direct/"),
            ("p", "http://www.wikidata.org/prop/"),
            ("ps", "http://www.wikidata.org/prop/statement/"),
            ("pq", "http://www.wikidata.org/prop/qualifier/"),
            ("rdf", "http://www.w3.org/1999/02/22-rdf-syntax-ns#"),
            ("rdfs", "http://www.w3.org/2000/01/rdf-schema#"),
            ("xsd", "http://www.w3.org/2001/XMLSchema#"),
            ("owl", "http://www.w3.org/2002/07/owl#"),
            ("foaf", "http://xmlns.com/foaf/0.1/"),
            ("skos", "http://www.w3.org/2004/02/skos/core#"),
        ];
        Self(
            pairs
                .iter()
                .map(|(p, n)| (p.to_string(), n.to_string()))
                .collect(),
        )
    }
}

impl PrefixTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Expands `prefix:local` or `<iri>` to an absolute IRI. Returns `None` for
    /// an unknown prefix or a token that is not URI-shaped.
    pub fn expand(&self, token: &str) -> Option<String> {
        if let Some(inner) = token.strip_prefix('<').and_then(|t| t.strip_suffix('>')) {
            return Some(inner.to_string());
        }
        if token.starts_with("http://") || token.starts_with("https://") {
            return Some(token.to_string());
        }
        let (prefix, local) = split_prefixed(token)?;
        self.0.get(prefix).map(|ns| format!("{ns}{local}"))
    }

    pub fn sparql_prologue(&self) -> String {
        self.0
            .iter()
            .map(|(p, ns)| format!("PREFIX {p}: <{ns}>\n"))
            .collect()
    }
}

fn split_prefixed(token: &str) -> Option<(&str, &str)> {
    let colon = token.find(':')?;
    let (prefix, rest) = token.split_at(colon);
    let local = &rest[1..];
    if local.is_empty() {
        return None;
    }
    let mut chars = prefix.chars();
    match chars.next() {
        None => {}
        Some(c) if c.is_ascii_alphabetic() => {}
        Some(_) => return None,
    }
    if !chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')) {
        return None;
    }
    if local.chars().any(|c| c.is_whitespace() || matches!(c, '"' | '<' | '>' | '{' | '}')) {
        return None;
    }
    Some((prefix, local))
}

/// True for prefixed names (complete or truncated prefixes) and absolute IRIs.
pub fn is_uri_shaped(token: &str) -> bool {
    if token.len() > 2 && token.starts_with('<') && token.ends_with('>') {
        return !token[1..token.len() - 1].chars().any(char::is_whitespace);
    }
    if token.starts_with("http://") || token.starts_with("https://") {
        return !token.chars().any(char::is_whitespace);
    }
    split_prefixed(token).is_some()
}

pub fn is_variable(token: &str) -> bool {
    let mut chars = token.chars();
    matches!(chars.next(), Some('?') | Some('$'))
        && token.len() > 1
        && chars.all(|c| c.is_alphanumeric() || c == '_')
}

fn is_numeric(token: &str) -> bool {
    let t = token.strip_prefix(['+', '-']).unwrap_or(token);
    if t.is_empty() {
        return false;
    }
    let mut seen_digit = false;
    let mut seen_dot = false;
    let mut seen_exp = false;
    let mut prev = ' ';
    for c in t.chars() {
        match c {
            '0'..='9' => seen_digit = true,
            '.' if !seen_dot && !seen_exp => seen_dot = true,
            'e' | 'E' if seen_digit && !seen_exp => seen_exp = true,
            '+' | '-' if matches!(prev, 'e' | 'E') => {}
            _ => return false,
        }
        prev = c;
    }
    seen_digit && !matches!(prev, 'e' | 'E' | '+' | '-')
}

fn is_date(token: &str) -> bool {
    let b = token.as_bytes();
    b.len() >= 10
        && b[..4].iter().all(u8::is_ascii_digit)
        && b[4] == b'-'
        && b[5..7].iter().all(u8::is_ascii_digit)
        && b[7] == b'-'
        && b[8..10].iter().all(u8::is_ascii_digit)
}

pub fn is_literal(token: &str) -> bool {
    token.starts_with('"')
        || token.starts_with('\'')
        || is_numeric(token)
        || is_date(token)
        || token.eq_ignore_ascii_case("true")
        || token.eq_ignore_ascii_case("false")
}

// ---------------------------------------------------------------------------
// tokenization

fn is_delimiter(c: char) -> bool {
    c.is_whitespace() || matches!(c, '{' | '}' | '(' | ')' | ';' | '"' | '\'' | '=' | '!' | '<' | '>' | '&' | '|')
}

/// Characters that end a word unless the character after them continues it.
fn is_soft_delimiter(c: char) -> bool {
    matches!(c, '.' | ',')
}

fn is_value_token(tok: &str) -> bool {
    tok == ")" || is_variable(tok) || is_literal(tok) || is_uri_shaped(tok)
}

/// Splits a query into atomic tokens. Never requires the query to parse.
pub fn tokenize_query(query: &str) -> Result<Vec<String>> {
    let chars: Vec<char> = query.chars().collect();
    let n = chars.len();
    let mut tokens: Vec<String> = Vec::new();
    let mut i = 0;

    let word_continues = |j: usize| -> bool {
        j < n && !is_delimiter(chars[j]) && !is_soft_delimiter(chars[j]) && !matches!(chars[j], '?' | '$')
    };

    while i < n {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        match c {
            '{' | '}' | '(' | ')' | ';' => {
                i += 1;
            }
            '.' | ',' => {
                // a dot directly followed by a digit starts a decimal
                if c == '.' && i + 1 < n && chars[i + 1].is_ascii_digit() {
                    i += 1;
                    i = scan_word(&chars, i, &word_continues);
                } else {
                    i += 1;
                }
            }
            '"' | '\'' => {
                i = scan_string(&chars, i)?;
                i = scan_literal_suffix(&chars, i, &word_continues);
            }
            '<' => {
                if let Some(end) = scan_iri(&chars, i) {
                    i = end;
                } else if i + 1 < n && chars[i + 1] == '=' {
                    i += 2;
                } else {
                    i += 1;
                }
            }
            '>' | '!' => {
                i += 1;
                if i < n && chars[i] == '=' {
                    i += 1;
                }
            }
            '=' => i += 1,
            '&' | '|' => {
                i += 1;
                if i < n && chars[i] == c {
                    i += 1;
                }
            }
            '?' | '$' => {
                i += 1;
                while i < n && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
            }
            '+' | '-' | '*' | '/' => {
                let signed_number = matches!(c, '+' | '-')
                    && i + 1 < n
                    && chars[i + 1].is_ascii_digit()
                    && tokens.last().is_none_or(|t| !is_value_token(t));
                i += 1;
                if signed_number {
                    i = scan_word(&chars, i, &word_continues);
                }
            }
            _ => {
                i = scan_word(&chars, i, &word_continues);
            }
        }
        tokens.push(chars[start..i].iter().collect());
    }
    Ok(tokens)
}

fn scan_word(chars: &[char], mut i: usize, continues: &dyn Fn(usize) -> bool) -> usize {
    let n = chars.len();
    while i < n {
        let c = chars[i];
        if is_delimiter(c) {
            break;
        }
        if is_soft_delimiter(c) && !continues(i + 1) {
            break;
        }
        i += 1;
    }
    i
}

fn scan_string(chars: &[char], start: usize) -> Result<usize> {
    let quote = chars[start];
    let mut i = start + 1;
    while i < chars.len() {
        match chars[i] {
            '\\' => i += 2,
            c if c == quote => return Ok(i + 1),
            _ => i += 1,
        }
    }
    Err(Error::UnterminatedString { offset: start })
}

fn scan_literal_suffix(chars: &[char], mut i: usize, continues: &dyn Fn(usize) -> bool) -> usize {
    let n = chars.len();
    if i < n && chars[i] == '@' {
        i += 1;
        while i < n && (chars[i].is_ascii_alphanumeric() || chars[i] == '-') {
            i += 1;
        }
    } else if i + 1 < n && chars[i] == '^' && chars[i + 1] == '^' {
        i += 2;
        if i < n && chars[i] == '<' {
            if let Some(end) = scan_iri(chars, i) {
                return end;
            }
        }
        i = scan_word(chars, i, continues);
    }
    i
}

fn scan_iri(chars: &[char], start: usize) -> Option<usize> {
    let mut i = start + 1;
    while i < chars.len() {
        match chars[i] {
            '>' if i > start + 1 => return Some(i + 1),
            c if c.is_whitespace() || matches!(c, '<' | '"' | '{' | '}' | '>') => return None,
            _ => i += 1,
        }
    }
    None
}

/// Joins tokens with single spaces.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

// ---------------------------------------------------------------------------
// classification

/// Probes a live endpoint with ASK queries to decide URI existence.
pub struct UriProbe {
    client: Arc<Client>,
    prefixes: PrefixTable,
    cache: RwLock<HashMap<String, bool>>,
}

impl UriProbe {
    pub fn new(client: Arc<Client>, prefixes: PrefixTable) -> Self {
        Self {
            client,
            prefixes,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn exists(&self, token: &str) -> bool {
        if let Some(&known) = self.cache.read().unwrap().get(token) {
            return known;
        }
        let mut cache = self.cache.write().unwrap();
        if let Some(&known) = cache.get(token) {
            return known;
        }
        let exists = match self.prefixes.expand(token) {
            Some(iri) => {
                let query = format!(
                    "ask where {{ ?s ?p ?o . filter ( ?s = <{iri}> || ?p = <{iri}> || ?o = <{iri}> ) }}"
                );
                matches!(self.client.execute(&query), AnswerSet::Boolean { value: true })
            }
            None => false,
        };
        cache.insert(token.to_string(), exists);
        exists
    }
}

impl fmt::Debug for UriProbe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UriProbe").finish_non_exhaustive()
    }
}

/// Snapshot of the URIs known to exist in the knowledge base.
#[derive(Debug, Clone, Default)]
pub struct KbMembership {
    known: HashSet<String>,
    probe: Option<Arc<UriProbe>>,
}

impl KbMembership {
    pub fn new<I, S>(uris: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            known: uris.into_iter().map(Into::into).collect(),
            probe: None,
        }
    }

    /// Membership derived from every URI in the given queries.
    pub fn from_queries<'a>(queries: impl IntoIterator<Item = &'a str>) -> Self {
        let mut known = HashSet::new();
        for q in queries {
            if let Ok(tokens) = tokenize_query(q) {
                known.extend(tokens.into_iter().filter(|t| is_uri_shaped(t)));
            }
        }
        Self { known, probe: None }
    }

    pub fn with_probe(mut self, probe: Arc<UriProbe>) -> Self {
        self.probe = Some(probe);
        self
    }

    pub fn contains(&self, uri: &str) -> bool {
        self.known.contains(uri) || self.probe.as_ref().is_some_and(|p| p.exists(uri))
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }
}

/// Labels tokens with their [`TokenType`].
#[derive(Debug, Clone)]
pub struct Classifier {
    keywords: HashSet<String>,
    functions: HashSet<String>,
}

impl Default for Classifier {
    fn default() -> Self {
        Self::new(&GrammarProfile::default())
    }
}

impl Classifier {
    pub fn new(profile: &GrammarProfile) -> Self {
        let (keywords, functions) = profile.sets();
        Self {
            keywords,
            functions,
        }
    }

    /// Type of a token without reference to a knowledge base. URI-shaped
    /// tokens are always [`TokenType::Uri`].
    pub fn structural(&self, token: &str) -> TokenType {
        if token == crate::vocab::UNK {
            return TokenType::Unk;
        }
        if is_variable(token) {
            return TokenType::Var;
        }
        if is_literal(token) {
            return TokenType::Lit;
        }
        let lower = token.to_lowercase();
        if self.keywords.contains(&lower) {
            return TokenType::SVocab;
        }
        if self.functions.contains(&lower) {
            return TokenType::Fct;
        }
        if is_uri_shaped(token) {
            return TokenType::Uri;
        }
        log::warn!("unclassifiable SPARQL token `{token}`");
        TokenType::Unk
    }

    pub fn classify(&self, token: &str, kb: &KbMembership) -> TokenType {
        match self.structural(token) {
            TokenType::Uri if !kb.contains(token) => TokenType::FakeUri,
            t => t,
        }
    }

    pub fn classify_all<S: AsRef<str>>(&self, tokens: &[S], kb: &KbMembership) -> Vec<SparqlToken> {
        tokens
            .iter()
            .map(|t| SparqlToken {
                text: t.as_ref().to_string(),
                kind: self.classify(t.as_ref(), kb),
            })
            .collect()
    }
}

/// Classifies with the default grammar profile.
pub fn classify_token(token: &str, kb: &KbMembership) -> TokenType {
    Classifier::default().classify(token, kb)
}

pub fn is_fake_uri(token: &str, kb: &KbMembership) -> Result<bool> {
    if !is_uri_shaped(token) {
        return Err(Error::NotAUri(token.to_string()));
    }
    Ok(!kb.contains(token))
}
