//! Shared test support: a minimal HTTP mock endpoint, CLI runner, and
//! synthetic corpus writers.

#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

/// One-request-per-connection HTTP responder serving
/// `{"response": respond(model, prompt)}`.
pub struct MockServer {
    pub endpoint: String,
    requests: Arc<AtomicUsize>,
    shutdown: Arc<AtomicBool>,
    addr: std::net::SocketAddr,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl MockServer {
    pub fn start<F>(respond: F) -> Self
    where
        F: Fn(&str, &str) -> String + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = listener.local_addr().expect("local addr");
        let requests = Arc::new(AtomicUsize::new(0));
        let shutdown = Arc::new(AtomicBool::new(false));
        let handle = {
            let requests = Arc::clone(&requests);
            let shutdown = Arc::clone(&shutdown);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(mut stream) = stream else { continue };
                    if let Some((model, prompt)) = read_request(&mut stream) {
                        requests.fetch_add(1, Ordering::SeqCst);
                        let text = respond(&model, &prompt);
                        let payload =
                            serde_json::to_string(&serde_json::json!({ "response": text }))
                                .expect("payload");
                        let response = format!(
                            "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                            payload.len()
                        );
                        let _ = stream.write_all(response.as_bytes());
                    }
                }
            })
        };
        MockServer {
            endpoint: format!("http://{addr}/api/generate"),
            requests,
            shutdown,
            addr,
            handle: Some(handle),
        }
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn read_request(stream: &mut TcpStream) -> Option<(String, String)> {
    let mut buf = Vec::new();
    let mut tmp = [0u8; 4096];
    let header_end = loop {
        match stream.read(&mut tmp) {
            Ok(0) => return None,
            Ok(n) => {
                buf.extend_from_slice(&tmp[..n]);
                if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                    break pos + 4;
                }
            }
            Err(_) => return None,
        }
    };
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length = headers
        .lines()
        .find_map(|line| {
            let (key, value) = line.split_once(':')?;
            key.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    while buf.len() < header_end + content_length {
        match stream.read(&mut tmp) {
            Ok(0) => break,
            Ok(n) => buf.extend_from_slice(&tmp[..n]),
            Err(_) => return None,
        }
    }
    let body: serde_json::Value =
        serde_json::from_slice(&buf[header_end..header_end + content_length]).ok()?;
    Some((
        body["model"].as_str().unwrap_or_default().to_string(),
        body["prompt"].as_str().unwrap_or_default().to_string(),
    ))
}

pub fn cli_bin() -> &'static str {
    env!("CARGO_BIN_EXE_sarcbench")
}

pub fn run_cli(dir: &Path, args: &[&str]) -> (i32, String, String) {
    run_cli_env(dir, args, &[])
}

pub fn run_cli_env(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> (i32, String, String) {
    let mut command = Command::new(cli_bin());
    command.current_dir(dir).args(args);
    for (key, value) in env {
        command.env(key, value);
    }
    let output = command.output().expect("CLI runs");
    (
        output.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&output.stdout).to_string(),
        String::from_utf8_lossy(&output.stderr).to_string(),
    )
}

pub fn write_sarcasm_corpus(path: &Path, sarcastic: usize, non_sarcastic: usize, lang: &str) {
    let mut out = String::new();
    let suffix = if lang == "hinglish" { " हो गया" } else { "" };
    for i in 0..sarcastic.max(non_sarcastic) {
        if i < sarcastic {
            out.push_str(&format!(
                "{{\"id\":\"s{i}\",\"text\":\"oh sure what a wonderful day {i}{suffix}\",\"label\":\"sarcastic\",\"lang\":\"{lang}\"}}\n"
            ));
        }
        if i < non_sarcastic {
            out.push_str(&format!(
                "{{\"id\":\"n{i}\",\"text\":\"city council approves new budget {i}{suffix}\",\"label\":\"non-sarcastic\",\"lang\":\"{lang}\"}}\n"
            ));
        }
    }
    std::fs::write(path, out).unwrap();
}

pub fn write_sentiment_corpus(path: &Path, per_class: usize) {
    let mut out = String::new();
    for i in 0..per_class {
        for (prefix, label, text) in [
            ("p", "positive", "love this"),
            ("g", "negative", "hate this"),
            ("u", "neutral", "this exists"),
        ] {
            out.push_str(&format!(
                "{{\"id\":\"{prefix}{i}\",\"text\":\"{text} {i}\",\"label\":\"{label}\",\"lang\":\"en\"}}\n"
            ));
        }
    }
    std::fs::write(path, out).unwrap();
}

/// Sorted (path, bytes) listing of every file under `dir`.
pub fn snapshot_dir(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&current) else {
            continue;
        };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let data = std::fs::read(&path).unwrap();
                files.push((path, data));
            }
        }
    }
    files.sort();
    files
}
