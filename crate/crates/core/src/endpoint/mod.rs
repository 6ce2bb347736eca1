//! SPARQL protocol client with result normalization, caching and bounded
//! concurrency. Failures are returned as data ([`AnswerSet::Error`]) so a bad
//! generated query never aborts an evaluation run.

mod fixture;
mod server;

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

pub use fixture::{Graph, QueryResult, Term, Triple, XSD};
pub use server::FixtureServer;

use crate::error::{Error, Result};

/// Environment variable overriding the configured endpoint URL.
pub const ENDPOINT_ENV: &str = "SPARQLCOPY_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnswerSet {
    Bindings { values: BTreeSet<String> },
    Boolean { value: bool },
    Error { detail: String },
}

impl AnswerSet {
    pub fn bindings<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        AnswerSet::Bindings {
            values: values.into_iter().map(Into::into).collect(),
        }
    }

    pub fn error(detail: impl Into<String>) -> Self {
        AnswerSet::Error {
            detail: detail.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, AnswerSet::Error { .. })
    }

    /// Non-empty for filtering purposes: any boolean answer counts.
    pub fn is_nonempty(&self) -> bool {
        match self {
            AnswerSet::Bindings { values } => !values.is_empty(),
            AnswerSet::Boolean { .. } => true,
            AnswerSet::Error { .. } => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 1,
            backoff_ms: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// HTTP(S) endpoint URL, or `fixture:<path>` for an in-process graph
    /// loaded from a Turtle file.
    pub url: String,
    pub timeout_secs: f64,
    pub max_parallel: usize,
    pub retry: RetryPolicy,
    pub cache: Option<PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: "https://dbpedia.org/sparql".into(),
            timeout_secs: 30.0,
            max_parallel: 4,
            retry: RetryPolicy::default(),
            cache: None,
        }
    }
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            ..Self::default()
        }
    }

    /// Applies the [`ENDPOINT_ENV`] override when set.
    pub fn with_env_override(mut self) -> Self {
        if let Ok(url) = std::env::var(ENDPOINT_ENV) {
            if !url.is_empty() {
                self.url = url;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0) {
            return Err(Error::Config("endpoint timeout must be positive".into()));
        }
        if self.max_parallel == 0 {
            return Err(Error::Config("max parallel requests must be at least 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// normalization

fn canonical_term(term: &Json) -> Option<String> {
    let value = term.get("value")?.as_str()?;
    match term.get("type")?.as_str()? {
        "uri" => Some(value.to_string()),
        "bnode" => Some(format!("_:{value}")),
        "literal" | "typed-literal" => {
            if let Some(lang) = term.get("xml:lang").and_then(Json::as_str) {
                return Some(format!("{value}@{}", lang.to_lowercase()));
            }
            match term.get("datatype").and_then(Json::as_str) {
                Some(dt) if dt != format!("{XSD}string") => Some(format!("{value}^^{dt}")),
                _ => Some(value.to_string()),
            }
        }
        _ => None,
    }
}

/// Converts a SPARQL JSON results document into an [`AnswerSet`].
///
/// Single-variable rows become their canonical value; wider rows become a
/// tuple over the variables in sorted order.
pub fn normalize_answers(payload: &str) -> AnswerSet {
    let doc: Json = match serde_json::from_str(payload) {
        Ok(d) => d,
        Err(e) => return AnswerSet::error(format!("unparseable results: {e}")),
    };
    if let Some(b) = doc.get("boolean").and_then(Json::as_bool) {
        return AnswerSet::Boolean { value: b };
    }
    let Some(rows) = doc.pointer("/results/bindings").and_then(Json::as_array) else {
        return AnswerSet::error("results document has neither `boolean` nor `results.bindings`");
    };
    let mut vars: Vec<String> = doc
        .pointer("/head/vars")
        .and_then(Json::as_array)
        .map(|vs| vs.iter().filter_map(|v| v.as_str().map(String::from)).collect())
        .unwrap_or_default();
    if vars.is_empty() {
        let mut seen = BTreeSet::new();
        for r in rows {
            if let Some(obj) = r.as_object() {
                seen.extend(obj.keys().cloned());
            }
        }
        vars = seen.into_iter().collect();
    }
    vars.sort();
    let mut values = BTreeSet::new();
    for row in rows {
        let cell = |v: &str| row.get(v).and_then(canonical_term);
        if vars.len() == 1 {
            if let Some(c) = cell(&vars[0]) {
                values.insert(c);
            }
        } else {
            let parts: Vec<String> = vars
                .iter()
                .map(|v| cell(v).unwrap_or_else(|| "UNDEF".into()))
                .collect();
            values.insert(format!("({})", parts.join(" | ")));
        }
    }
    AnswerSet::Bindings { values }
}

// ---------------------------------------------------------------------------
// cache

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    url: String,
    query: String,
    answer: AnswerSet,
}

/// Answers keyed by exact query text, optionally persisted as JSON lines.
struct Cache {
    url: String,
    entries: RwLock<HashMap<String, AnswerSet>>,
    file: Option<Mutex<File>>,
}

impl Cache {
    fn open(url: &str, path: Option<&Path>) -> Result<Self> {
        let mut entries = HashMap::new();
        let file = match path {
            Some(p) => {
                if p.exists() {
                    for line in BufReader::new(File::open(p)?).lines() {
                        let line = line?;
                        if line.trim().is_empty() {
                            continue;
                        }
                        match serde_json::from_str::<CacheRecord>(&line) {
                            Ok(r) if r.url == url => {
                                entries.insert(r.query, r.answer);
                            }
                            Ok(_) => {}
                            Err(e) => log::warn!("skipping corrupt cache line in {}: {e}", p.display()),
                        }
                    }
                }
                Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?))
            }
            None => None,
        };
        Ok(Self {
            url: url.to_string(),
            entries: RwLock::new(entries),
            file,
        })
    }

    fn get(&self, query: &str) -> Option<AnswerSet> {
        self.entries.read().unwrap().get(query).cloned()
    }

    fn put(&self, query: &str, answer: &AnswerSet) {
        self.entries
            .write()
            .unwrap()
            .insert(query.to_string(), answer.clone());
        if let Some(f) = &self.file {
            let rec = CacheRecord {
                url: self.url.clone(),
                query: query.to_string(),
                answer: answer.clone(),
            };
            let mut f = f.lock().unwrap();
            if let Err(e) = serde_json::to_writer(&mut *f, &rec).map_err(std::io::Error::from).and_then(|_| writeln!(f)) {
                log::warn!("cannot persist cache entry: {e}");
            }
        }
    }
}

// ---------------------------------------------------------------------------
// concurrency limit

struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_flight: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max {
            n = self.cv.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.cv.notify_one();
    }
}

// ---------------------------------------------------------------------------
// client

enum Transport {
    Http(reqwest::blocking::Client),
    Fixture(Arc<Graph>),
}

enum Outcome {
    Answer(AnswerSet),
    /// A deterministic rejection, safe to cache.
    Rejected(String),
    /// Timeout or network failure.
    Transient(String),
}

/// Shareable SPARQL client. Safe to use from many threads at once; the
/// number of in-flight requests never exceeds `max_parallel`.
pub struct Client {
    config: EndpointConfig,
    transport: Transport,
    cache: Cache,
    limiter: Limiter,
    requests: AtomicUsize,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client").field("url", &self.config.url).finish_non_exhaustive()
    }
}

impl Client {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        config.validate()?;
        let transport = if let Some(path) = config.url.strip_prefix("fixture:") {
            let graph = Graph::from_turtle_file(Path::new(path), Default::default())?;
            Transport::Fixture(Arc::new(graph))
        } else {
            let http = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs_f64(config.timeout_secs))
                .build()
                .map_err(|e| Error::Config(format!("http client: {e}")))?;
            Transport::Http(http)
        };
        Self::with_transport(config, transport)
    }

    /// Client over an in-process graph; no network involved.
    pub fn fixture(graph: Arc<Graph>, config: EndpointConfig) -> Result<Self> {
        config.validate()?;
        Self::with_transport(config, Transport::Fixture(graph))
    }

    fn with_transport(config: EndpointConfig, transport: Transport) -> Result<Self> {
        let cache = Cache::open(&config.url, config.cache.as_deref())?;
        let limiter = Limiter::new(config.max_parallel);
        Ok(Self {
            config,
            transport,
            cache,
            limiter,
            requests: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Number of requests that actually reached the transport (cache misses).
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Checks the endpoint answers a trivial query.
    pub fn ping(&self) -> Result<()> {
        match self.send("ask where { }") {
            Outcome::Answer(_) => Ok(()),
            Outcome::Rejected(e) | Outcome::Transient(e) => Err(Error::Unreachable(format!("{}: {e}", self.config.url))),
        }
    }

    pub fn execute(&self, query: &str) -> AnswerSet {
        if let Some(hit) = self.cache.get(query) {
            return hit;
        }
        let attempts = self.config.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.config.retry.backoff_ms << (attempt - 1)));
            }
            match self.send(query) {
                Outcome::Answer(a) => {
                    self.cache.put(query, &a);
                    return a;
                }
                Outcome::Rejected(e) => {
                    let a = AnswerSet::error(e);
                    self.cache.put(query, &a);
                    return a;
                }
                Outcome::Transient(e) => {
                    log::debug!("attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        AnswerSet::error(last)
    }

    fn send(&self, query: &str) -> Outcome {
        let _permit = self.limiter.acquire();
        self.requests.fetch_add(1, Ordering::SeqCst);
        match &self.transport {
            Transport::Fixture(g) => match g.query(query) {
                Ok(r) => Outcome::Answer(normalize_answers(&r.to_json().to_string())),
                Err(e) => Outcome::Rejected(e.to_string()),
            },
            Transport::Http(http) => {
                let req = if query.len() > 1800 {
                    http.post(&self.config.url).form(&[("query", query)])
                } else {
                    http.get(&self.config.url).query(&[("query", query)])
                };
                let resp = req
                    .header("Accept", "application/sparql-results+json")
                    .send();
                match resp {
                    Err(e) => Outcome::Transient(e.to_string()),
                    Ok(r) => {
                        let status = r.status();
                        let body = match r.text() {
                            Ok(b) => b,
                            Err(e) => return Outcome::Transient(e.to_string()),
                        };
                        if status.is_success() {
                            match normalize_answers(&body) {
                                a @ AnswerSet::Error { .. } => Outcome::Rejected(format!("{a:?}")),
                                a => Outcome::Answer(a),
                            }
                        } else if status.is_client_error() {
                            Outcome::Rejected(format!("HTTP {status}: {}", body.trim()))
                        } else {
                            Outcome::Transient(format!("HTTP {status}: {}", body.trim()))
                        }
                    }
                }
            }
        }
    }

    /// Runs every query with at most `max_parallel` in flight, keeping input
    /// order in the output.
    pub fn execute_all<S: AsRef<str> + Sync>(&self, queries: &[S]) -> Vec<AnswerSet> {
        let n = queries.len();
        let mut out: Vec<Option<AnswerSet>> = vec![None; n];
        let next = AtomicUsize::new(0);
        let slots = Mutex::new(&mut out);
        let workers = self.config.max_parallel.min(n).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= n {
                        break;
                    }
                    let a = self.execute(queries[i].as_ref());
                    slots.lock().unwrap()[i] = Some(a);
                });
            }
        });
        out.into_iter().map(|a| a.expect("every query executed")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boolean_payload() {
        assert_eq!(
            normalize_answers(r#"{"head":{},"boolean":true}"#),
            AnswerSet::Boolean { value: true }
        );
    }

    #[test]
    fn duplicate_rows_collapse() {
        let p = r#"{"head":{"vars":["uri"]},"results":{"bindings":[
            {"uri":{"type":"uri","value":"http://x/a"}},
            {"uri":{"type":"uri","value":"http://x/a"}}]}}"#;
        assert_eq!(normalize_answers(p), AnswerSet::bindings(["http://x/a"]));
    }

    #[test]
    fn typed_and_plain_literals_differ() {
        let p = format!(
            r#"{{"head":{{"vars":["v"]}},"results":{{"bindings":[
            {{"v":{{"type":"literal","value":"42","datatype":"{XSD}integer"}}}},
            {{"v":{{"type":"literal","value":"42"}}}},
            {{"v":{{"type":"literal","value":"chat","xml:lang":"FR"}}}}]}}}}"#
        );
        match normalize_answers(&p) {
            AnswerSet::Bindings { values } => {
                assert_eq!(values.len(), 3);
                assert!(values.contains("42"));
                assert!(values.contains(&format!("42^^{XSD}integer")));
                assert!(values.contains("chat@fr"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn multi_variable_rows_use_sorted_variables() {
        let p = r#"{"head":{"vars":["z","a"]},"results":{"bindings":[
            {"z":{"type":"uri","value":"http://z"},"a":{"type":"literal","value":"x"}},
            {"z":{"type":"uri","value":"http://y"}}]}}"#;
        assert_eq!(
            normalize_answers(p),
            AnswerSet::bindings(["(x | http://z)", "(UNDEF | http://y)"])
        );
    }

    #[test]
    fn garbage_payload_is_error() {
        assert!(normalize_answers("<html>").is_error());
        assert!(normalize_answers(r#"{"head":{}}"#).is_error());
    }

    #[test]
    fn config_validation() {
        let mut c = EndpointConfig::new("http://localhost:1");
        c.timeout_secs = 0.0;
        assert!(c.validate().is_err());
        c.timeout_secs = 1.0;
        c.max_parallel = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn nonempty_semantics() {
        assert!(AnswerSet::Boolean { value: false }.is_nonempty());
        assert!(!AnswerSet::bindings(Vec::<String>::new()).is_nonempty());
        assert!(!AnswerSet::error("x").is_nonempty());
    }
}
