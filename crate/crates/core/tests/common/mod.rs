//! Minimal scripted HTTP endpoint for exercising the remote scorer without
//! a real inference server.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

pub struct MockEndpoint {
    pub base_url: String,
    responses: Arc<Mutex<VecDeque<(u16, String)>>>,
    fallback: Arc<Mutex<(u16, String)>>,
    hits: Arc<AtomicUsize>,
}

impl MockEndpoint {
    /// Starts a listener on an ephemeral port. Scripted responses are
    /// consumed in order; once exhausted, the fallback repeats.
    pub fn start(fallback_status: u16, fallback_body: &str) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock endpoint");
        let addr = listener.local_addr().unwrap();
        let responses: Arc<Mutex<VecDeque<(u16, String)>>> =
            Arc::new(Mutex::new(VecDeque::new()));
        let fallback = Arc::new(Mutex::new((fallback_status, fallback_body.to_string())));
        let hits = Arc::new(AtomicUsize::new(0));

        let r = responses.clone();
        let f = fallback.clone();
        let h = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                h.fetch_add(1, Ordering::SeqCst);
                let _ = read_request(&mut stream);
                let (status, body) = r
                    .lock()
                    .unwrap()
                    .pop_front()
                    .unwrap_or_else(|| f.lock().unwrap().clone());
                let reason = if status < 400 { "OK" } else { "Error" };
                let resp = format!(
                    "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });

        MockEndpoint {
            base_url: format!("http://{addr}"),
            responses,
            fallback,
            hits,
        }
    }

    pub fn push_response(&self, status: u16, body: &str) {
        self.responses
            .lock()
            .unwrap()
            .push_back((status, body.to_string()));
    }

    pub fn set_fallback(&self, status: u16, body: &str) {
        *self.fallback.lock().unwrap() = (status, body.to_string());
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn read_request(stream: &mut std::net::TcpStream) -> std::io::Result<String> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    // Read headers.
    let header_end;
    loop {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Ok(String::from_utf8_lossy(&buf).into_owned());
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = find_header_end(&buf) {
            header_end = pos;
            break;
        }
    }
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_lowercase();
    let content_length: usize = headers
        .lines()
        .find_map(|l| l.strip_prefix("content-length:"))
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0);
    let body_start = header_end + 4;
    while buf.len() < body_start + content_length {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

/// Completion-API body with scripted token logprobs.
pub fn logprobs_body(values: &[Option<f64>]) -> String {
    let vals: Vec<String> = values
        .iter()
        .map(|v| match v {
            Some(x) => format!("{x}"),
            None => "null".to_string(),
        })
        .collect();
    format!(
        r#"{{"choices":[{{"text":"","logprobs":{{"token_logprobs":[{}]}}}}]}}"#,
        vals.join(",")
    )
}

/// Completion-API body with only generated text.
pub fn text_body(text: &str) -> String {
    format!(r#"{{"choices":[{{"text":"{text}"}}]}}"#)
}
