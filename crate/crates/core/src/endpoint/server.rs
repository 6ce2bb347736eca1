//! Minimal HTTP SPARQL endpoint over a fixture [`Graph`], for tests and
//! offline runs.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use url::form_urlencoded;

use super::fixture::Graph;

#[derive(Default)]
struct Stats {
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

struct Shared {
    graph: Arc<Graph>,
    stats: Stats,
    delays: Mutex<Vec<(String, Duration)>>,
    latency: Mutex<Duration>,
    shutdown: AtomicBool,
}

/// A background SPARQL endpoint bound to `127.0.0.1` on an ephemeral port.
/// The server stops when dropped.
pub struct FixtureServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

impl FixtureServer {
    pub fn spawn(graph: Arc<Graph>) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            graph,
            stats: Stats::default(),
            delays: Mutex::new(Vec::new()),
            latency: Mutex::new(Duration::ZERO),
            shutdown: AtomicBool::new(false),
        });
        let accept_shared = Arc::clone(&shared);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_shared.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let conn_shared = Arc::clone(&accept_shared);
                std::thread::spawn(move || {
                    if let Err(e) = handle_connection(stream, &conn_shared) {
                        log::debug!("fixture server connection error: {e}");
                    }
                });
            }
        });
        Ok(Self {
            addr,
            shared,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}/sparql", self.addr)
    }

    /// Stalls any query containing `needle` for `delay` before answering.
    pub fn delay_queries_containing(&self, needle: impl Into<String>, delay: Duration) {
        self.shared.delays.lock().unwrap().push((needle.into(), delay));
    }

    /// Adds a fixed latency to every request.
    pub fn set_latency(&self, latency: Duration) {
        *self.shared.latency.lock().unwrap() = latency;
    }

    pub fn request_count(&self) -> usize {
        self.shared.stats.requests.load(Ordering::SeqCst)
    }

    /// Highest number of requests observed in flight at the same time.
    pub fn max_in_flight(&self) -> usize {
        self.shared.stats.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn extract_query(target: &str, content_type: &str, body: &[u8]) -> Option<String> {
    let from_form = |s: &[u8]| {
        form_urlencoded::parse(s)
            .find(|(k, _)| k == "query")
            .map(|(_, v)| v.into_owned())
    };
    if let Some((_, qs)) = target.split_once('?') {
        if let Some(q) = from_form(qs.as_bytes()) {
            return Some(q);
        }
    }
    if content_type.starts_with("application/sparql-query") {
        return String::from_utf8(body.to_vec()).ok();
    }
    from_form(body)
}

fn handle_connection(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let (Some(_method), Some(target)) = (parts.next(), parts.next()) else {
        return Ok(());
    };
    let target = target.to_string();
    let mut content_length = 0usize;
    let mut content_type = String::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            let v = v.trim();
            match k.trim().to_ascii_lowercase().as_str() {
                "content-length" => content_length = v.parse().unwrap_or(0),
                "content-type" => content_type = v.to_ascii_lowercase(),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    let stats = &shared.stats;
    stats.requests.fetch_add(1, Ordering::SeqCst);
    let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    stats.max_in_flight.fetch_max(now, Ordering::SeqCst);

    let response = match extract_query(&target, &content_type, &body) {
        None => (400, "text/plain", "missing `query` parameter".to_string()),
        Some(query) => {
            let latency = *shared.latency.lock().unwrap();
            let delay = shared
                .delays
                .lock()
                .unwrap()
                .iter()
                .find(|(needle, _)| query.contains(needle.as_str()))
                .map(|(_, d)| *d)
                .unwrap_or_default();
            std::thread::sleep(latency + delay);
            match shared.graph.query(&query) {
                Ok(r) => (200, "application/sparql-results+json", r.to_json().to_string()),
                Err(e) => (400, "text/plain", e.to_string()),
            }
        }
    };
    stats.in_flight.fetch_sub(1, Ordering::SeqCst);

    let (status, ctype, body) = response;
    let reason = if status == 200 { "OK" } else { "Bad Request" };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: {ctype}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    out.flush()
}
