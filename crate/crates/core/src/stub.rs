//! In-process stand-in for the remote embedding service, for tests.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rand::Rng;
use serde_json::{json, Value};

/// Marker that makes the stub answer with a row of the wrong width.
pub const RAGGED_MARKER: &str = "RAGGED";

#[derive(Debug, Clone)]
pub struct StubOptions {
    pub dim: usize,
    /// Number of leading requests answered with HTTP 500.
    pub fail_first: usize,
    /// Upper bound for a random per-request delay.
    pub max_delay: Duration,
    /// Status for every request after the injected failures, if not 200.
    pub status: u16,
}

impl Default for StubOptions {
    fn default() -> Self {
        Self {
            dim: 4,
            fail_first: 0,
            max_delay: Duration::ZERO,
            status: 200,
        }
    }
}

/// Embedding the stub returns for `text`: one row per whitespace word, with
/// values that are exact in binary32.
pub fn stub_embedding(text: &str, dim: usize) -> Vec<Vec<f64>> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let words = if words.is_empty() { vec![""] } else { words };
    words
        .iter()
        .enumerate()
        .map(|(t, w)| {
            let h = w.bytes().fold(t as u64 + 7, |acc, b| {
                acc.wrapping_mul(31).wrapping_add(b as u64)
            });
            (0..dim)
                .map(|j| {
                    (((h >> (j % 16)) % 17) as f64 - 8.0) / 8.0 + if j == 0 { 2.0 } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

#[derive(Default)]
struct Shared {
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    batches: Mutex<Vec<Vec<String>>>,
    shutdown: AtomicBool,
}

pub struct StubServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(options: StubOptions) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub listener");
        let addr = listener.local_addr().expect("stub address");
        let shared = Arc::new(Shared::default());
        let accept_shared = Arc::clone(&shared);
        let handle = thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_shared.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let shared = Arc::clone(&accept_shared);
                let options = options.clone();
                thread::spawn(move || {
                    let _ = serve(stream, &options, &shared);
                });
            }
        });
        Self {
            addr,
            shared,
            handle: Some(handle),
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    /// Largest number of requests that were being handled at the same time.
    pub fn peak_in_flight(&self) -> usize {
        self.shared.peak_in_flight.load(Ordering::SeqCst)
    }

    /// Text batches in the order the stub received them.
    pub fn batches(&self) -> Vec<Vec<String>> {
        self.shared.batches.lock().unwrap().clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// An address nothing is listening on.
pub fn unreachable_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind probe listener");
    let addr = listener.local_addr().expect("probe address");
    drop(listener);
    format!("http://{addr}")
}

fn serve(stream: TcpStream, options: &StubOptions, shared: &Shared) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    if request_line.is_empty() {
        return Ok(());
    }
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body)?;

    let n = shared.requests.fetch_add(1, Ordering::SeqCst);
    let now = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    shared.peak_in_flight.fetch_max(now, Ordering::SeqCst);
    if !options.max_delay.is_zero() {
        let ms = rand::rng().random_range(0..=options.max_delay.as_millis() as u64);
        thread::sleep(Duration::from_millis(ms));
    }
    let (status, payload) = respond(&request_line, &body, n, options, shared);
    shared.in_flight.fetch_sub(1, Ordering::SeqCst);

    let payload = payload.to_string();
    let reason = if status < 300 { "OK" } else { "Error" };
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    stream.flush()
}

fn respond(
    request_line: &str,
    body: &[u8],
    n: usize,
    options: &StubOptions,
    shared: &Shared,
) -> (u16, Value) {
    if !request_line.starts_with("POST /v1/embed ") {
        return (
            404,
            json!({ "error": format!("no route for {}", request_line.trim()) }),
        );
    }
    let parsed: Value = match serde_json::from_slice(body) {
        Ok(v) => v,
        Err(e) => return (400, json!({ "error": e.to_string() })),
    };
    if parsed["mode"] != "tokens" {
        return (400, json!({ "error": "mode must be \"tokens\"" }));
    }
    let Some(texts) = parsed["texts"].as_array() else {
        return (400, json!({ "error": "texts must be an array" }));
    };
    let texts: Vec<String> = texts
        .iter()
        .map(|t| t.as_str().unwrap_or_default().to_owned())
        .collect();
    shared.batches.lock().unwrap().push(texts.clone());
    if n < options.fail_first {
        return (500, json!({ "error": "injected failure" }));
    }
    if options.status != 200 {
        return (options.status, json!({ "error": "configured failure" }));
    }
    let embeddings: Vec<Vec<Vec<f64>>> = texts
        .iter()
        .map(|t| {
            let mut m = stub_embedding(t, options.dim);
            if t.contains(RAGGED_MARKER) {
                m[0].push(0.0);
            }
            m
        })
        .collect();
    (200, json!({ "embeddings": embeddings }))
}
