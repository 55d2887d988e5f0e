//! Minimal in-process HTTP server for exercising the client without a real
//! endpoint: scripts responses per hit and records every arrival with its
//! timestamp and request body.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

#[derive(Clone, Debug)]
pub struct MockResponse {
    pub status: u16,
    pub body: String,
}

impl MockResponse {
    /// A well-formed chat-completion response with the given text.
    pub fn ok(text: &str) -> Self {
        Self {
            status: 200,
            body: serde_json::json!({
                "id": "mock",
                "choices": [{"message": {"role": "assistant", "content": text}}]
            })
            .to_string(),
        }
    }

    pub fn status(status: u16) -> Self {
        Self {
            status,
            body: serde_json::json!({"error": {"code": status}}).to_string(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReceivedRequest {
    pub at: Instant,
    pub path: String,
    pub body: serde_json::Value,
}

impl ReceivedRequest {
    /// The user-message content of a chat request, when present.
    pub fn prompt_text(&self) -> Option<&str> {
        self.body
            .get("messages")?
            .get(0)?
            .get("content")?
            .as_str()
    }
}

type Handler = dyn Fn(usize, &ReceivedRequest) -> MockResponse + Send + Sync;

pub struct MockServer {
    addr: String,
    hits: Arc<Mutex<Vec<ReceivedRequest>>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Start on an ephemeral local port. The handler sees the 0-based hit
    /// index and the parsed request.
    pub fn start<F>(handler: F) -> std::io::Result<MockServer>
    where
        F: Fn(usize, &ReceivedRequest) -> MockResponse + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = format!("http://{}", listener.local_addr()?);
        let hits: Arc<Mutex<Vec<ReceivedRequest>>> = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let counter = AtomicUsize::new(0);
        let handler: Arc<Handler> = Arc::new(handler);

        let thread_hits = Arc::clone(&hits);
        let thread_stop = Arc::clone(&stop);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if thread_stop.load(Ordering::Relaxed) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let index = counter.fetch_add(1, Ordering::Relaxed);
                if let Some(request) = read_request(&stream) {
                    thread_hits.lock().expect("hits lock").push(request.clone());
                    let response = handler(index, &request);
                    let _ = write_response(&stream, &response);
                }
            }
        });

        Ok(MockServer {
            addr,
            hits,
            stop,
            handle: Some(handle),
        })
    }

    /// Base URL to point an endpoint configuration at.
    pub fn url(&self) -> &str {
        &self.addr
    }

    pub fn hits(&self) -> Vec<ReceivedRequest> {
        self.hits.lock().expect("hits lock").clone()
    }

    pub fn hit_count(&self) -> usize {
        self.hits.lock().expect("hits lock").len()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        // Kick the accept loop awake.
        if let Some(addr) = self.addr.strip_prefix("http://") {
            let _ = TcpStream::connect(addr);
        }
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn read_request(stream: &TcpStream) -> Option<ReceivedRequest> {
    let at = Instant::now();
    let mut reader = BufReader::new(stream);
    let mut request_line = String::new();
    reader.read_line(&mut request_line).ok()?;
    let path = request_line.split_whitespace().nth(1)?.to_string();
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).ok()?;
    let body = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
    Some(ReceivedRequest { at, path, body })
}

fn write_response(mut stream: &TcpStream, response: &MockResponse) -> std::io::Result<()> {
    let reason = match response.status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        403 => "Forbidden",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let payload = format!(
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        reason,
        response.body.len(),
        response.body
    );
    stream.write_all(payload.as_bytes())?;
    stream.flush()
}
