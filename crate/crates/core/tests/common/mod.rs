#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

#[derive(Debug, Clone)]
pub struct Recorded {
    pub path: String,
    pub auth: Option<String>,
    pub body: Value,
}

type Handler = dyn Fn(&str, &Value) -> (u16, Value) + Send + Sync;

/// Minimal HTTP/1.1 JSON server on an ephemeral local port.
pub struct Stub {
    pub base: String,
    pub requests: Arc<Mutex<Vec<Recorded>>>,
}

impl Stub {
    pub fn spawn(handler: impl Fn(&str, &Value) -> (u16, Value) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let log = requests.clone();
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let (handler, log) = (handler.clone(), log.clone());
                thread::spawn(move || serve(stream, handler.as_ref(), &log));
            }
        });
        Self { base, requests }
    }

    pub fn recorded(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<Recorded>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).is_err() {
        return;
    }
    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let (mut len, mut auth) = (0usize, None);
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).unwrap_or(0) == 0 || h == "\r\n" {
            break;
        }
        let (name, value) = h.split_once(':').unwrap_or((&h, ""));
        match name.trim().to_ascii_lowercase().as_str() {
            "content-length" => len = value.trim().parse().unwrap_or(0),
            "authorization" => auth = Some(value.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let (code, reply) = handler(&path, &body);
    log.lock().unwrap().push(Recorded { path, auth, body });
    let payload = reply.to_string();
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
}

pub fn model_dimension(model: &str) -> usize {
    match model {
        "text-embedding-ada-002" => 1536,
        _ => 768,
    }
}

/// Answers the embedding, generation and extraction contracts. Embedding
/// items come back in reverse order to exercise index-based reassembly.
pub fn fake_model_server(path: &str, body: &Value) -> (u16, Value) {
    match path {
        "/v1/embeddings" | "/embed" => {
            let model = body["model"].as_str().unwrap_or_default();
            let d = model_dimension(model);
            let inputs = body["input"].as_array().cloned().unwrap_or_default();
            let data: Vec<Value> = inputs
                .iter()
                .enumerate()
                .rev()
                .map(|(i, t)| json!({"index": i, "embedding": lexqa::embedding::mock_embed(t.as_str().unwrap_or(""), d)}))
                .collect();
            (200, json!({"data": data, "usage": {"total_tokens": inputs.len() * 10}}))
        }
        "/generate" => {
            let prompt = body["prompt"].as_str().unwrap_or_default();
            let text = if prompt.contains("Context:") {
                "According to the context, the answer is in the cited section."
            } else {
                "Sorry, I don't know."
            };
            (200, json!({"text": text, "usage": {"total_tokens": 42}}))
        }
        "/extract" => {
            let n = body["context"].as_str().unwrap_or_default().chars().count();
            (200, json!({"start": 0, "end": n.min(40)}))
        }
        _ => (404, json!({"error": {"message": "no such route"}})),
    }
}
