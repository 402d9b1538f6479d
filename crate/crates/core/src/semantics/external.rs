//! Line-delimited JSON embedding protocol.
//!
//! Request:  `{"id": u64, "kind": "text"|"image", "payload": "<text or base64 PNG>"}`
//! Response: `{"id": u64, "embedding": [f64; 512]}` or `{"id": u64|null, "error": "..."}`
//!
//! Responses may arrive in any order; ids reconcile them.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::embedding::{Embedding, EmbeddingProvider, StubProvider, EMBEDDING_DIM};
use crate::acquisition::{ImageRecord, ImageSource};
use crate::error::{Error, Result};
use crate::raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Text,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: u64,
    pub kind: RequestKind,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Default)]
struct ReaderState {
    responses: HashMap<u64, std::result::Result<Vec<f64>, String>>,
    /// Set once the stream ends or desynchronizes; every pending wait fails.
    broken: Option<String>,
}

struct Shared {
    state: Mutex<ReaderState>,
    ready: Condvar,
}

/// Client for an out-of-process embedding provider.
pub struct ExternalProvider {
    shared: Arc<Shared>,
    writer: Mutex<Box<dyn Write + Send>>,
    next_id: AtomicU64,
    timeout: Duration,
    child: Mutex<Option<Child>>,
    text_cache: Mutex<HashMap<String, Embedding>>,
}

impl ExternalProvider {
    /// Spawns `command` through the shell and speaks the protocol over its stdio.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::provider(format!("cannot start {command:?}: {e}"), false))?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let provider = Self::from_streams(stdout, stdin, timeout);
        *provider.child.lock().expect("child lock") = Some(child);
        Ok(provider)
    }

    pub fn from_streams<R, W>(reader: R, writer: W, timeout: Duration) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let shared = Arc::new(Shared {
            state: Mutex::new(ReaderState::default()),
            ready: Condvar::new(),
        });
        let bg = Arc::clone(&shared);
        std::thread::spawn(move || read_loop(BufReader::new(reader), &bg));
        Self {
            shared,
            writer: Mutex::new(Box::new(writer)),
            next_id: AtomicU64::new(1),
            timeout,
            child: Mutex::new(None),
            text_cache: Mutex::new(HashMap::new()),
        }
    }

    fn send(&self, kind: RequestKind, payload: String) -> Result<u64> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut line = serde_json::to_vec(&WireRequest { id, kind, payload })?;
        line.push(b'\n');
        let mut w = self.writer.lock().expect("writer lock");
        w.write_all(&line)
            .and_then(|_| w.flush())
            .map_err(|e| Error::provider(format!("write failed: {e}"), true))?;
        Ok(id)
    }

    fn wait_all(&self, ids: &[u64]) -> Result<Vec<Embedding>> {
        let deadline = Instant::now() + self.timeout;
        let mut state = self.shared.state.lock().expect("state lock");
        loop {
            if ids.iter().all(|id| state.responses.contains_key(id)) {
                break;
            }
            if let Some(msg) = &state.broken {
                return Err(Error::provider(msg.clone(), true));
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(Error::provider(
                    format!(
                        "timed out after {:?} waiting for {} response(s)",
                        self.timeout,
                        ids.len()
                    ),
                    true,
                ));
            }
            state = self
                .shared
                .ready
                .wait_timeout(state, deadline - now)
                .expect("state lock")
                .0;
        }
        ids.iter()
            .map(
                |id| match state.responses.remove(id).expect("checked above") {
                    Ok(values) => {
                        if values.len() != EMBEDDING_DIM {
                            return Err(Error::provider(
                                format!(
                                    "response {id} has {} values, expected {EMBEDDING_DIM}",
                                    values.len()
                                ),
                                true,
                            ));
                        }
                        Embedding::normalized(values)
                    }
                    Err(msg) => Err(Error::provider(format!("request {id}: {msg}"), true)),
                },
            )
            .collect()
    }
}

impl Drop for ExternalProvider {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.lock().ok().and_then(|mut c| c.take()) {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn read_loop(reader: impl BufRead, shared: &Shared) {
    let mut reason = "provider closed its output".to_string();
    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                reason = format!("read failed: {e}");
                break;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<WireResponse, _> = serde_json::from_str(&line);
        let mut state = shared.state.lock().expect("state lock");
        match parsed {
            Ok(WireResponse {
                id: Some(id),
                embedding: Some(e),
                ..
            }) => {
                state.responses.insert(id, Ok(e));
            }
            Ok(WireResponse {
                id: Some(id),
                error,
                ..
            }) => {
                state.responses.insert(
                    id,
                    Err(error.unwrap_or_else(|| "response without embedding".into())),
                );
            }
            Ok(WireResponse {
                id: None, error, ..
            }) => {
                log::warn!("provider error without id: {}", error.unwrap_or_default());
            }
            Err(e) => {
                state.broken = Some(format!("protocol violation: {e}"));
                shared.ready.notify_all();
                return;
            }
        }
        shared.ready.notify_all();
    }
    let mut state = shared.state.lock().expect("state lock");
    state.broken = Some(reason);
    shared.ready.notify_all();
}

impl EmbeddingProvider for ExternalProvider {
    fn embed_text(&self, text: &str) -> Result<Embedding> {
        Ok(self.embed_texts(&[text.to_string()])?.remove(0))
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        let missing: Vec<&String> = {
            let cache = self.text_cache.lock().expect("cache lock");
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .filter(|t| !cache.contains_key(*t) && seen.insert(t.as_str()))
                .collect()
        };
        if !missing.is_empty() {
            let ids = missing
                .iter()
                .map(|t| self.send(RequestKind::Text, (*t).clone()))
                .collect::<Result<Vec<_>>>()?;
            let embeddings = self.wait_all(&ids)?;
            let mut cache = self.text_cache.lock().expect("cache lock");
            for (t, e) in missing.into_iter().zip(embeddings) {
                cache.insert(t.clone(), e);
            }
        }
        let cache = self.text_cache.lock().expect("cache lock");
        Ok(texts.iter().map(|t| cache[t].clone()).collect())
    }

    fn embed_image(&self, image: &ImageRecord) -> Result<Embedding> {
        let png = raster::encode_png(&image.pixels, image.width, image.height, 3);
        let id = self.send(RequestKind::Image, BASE64.encode(png))?;
        Ok(self.wait_all(&[id])?.remove(0))
    }
}

fn answer(req: &WireRequest, stub: &StubProvider) -> std::result::Result<Embedding, String> {
    match req.kind {
        RequestKind::Text => stub.embed_text(&req.payload).map_err(|e| e.to_string()),
        RequestKind::Image => {
            let bytes = BASE64
                .decode(&req.payload)
                .map_err(|e| format!("bad base64: {e}"))?;
            let (w, h, px) = raster::decode_rgb(&bytes).map_err(|e| e.to_string())?;
            let record = ImageRecord::new(ImageSource::WebApi, "", w, h, px, Utc::now())
                .map_err(|e| e.to_string())?;
            stub.embed_image(&record).map_err(|e| e.to_string())
        }
    }
}

/// Serves the stub embedder over the wire protocol until `reader` ends.
pub fn serve_stub(
    reader: impl BufRead,
    mut writer: impl Write,
    stub: &StubProvider,
) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<WireRequest>(&line) {
            Ok(req) => match answer(&req, stub) {
                Ok(e) => WireResponse {
                    id: Some(req.id),
                    embedding: Some(e.as_slice().to_vec()),
                    error: None,
                },
                Err(msg) => WireResponse {
                    id: Some(req.id),
                    embedding: None,
                    error: Some(msg),
                },
            },
            Err(e) => WireResponse {
                id: serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64())),
                embedding: None,
                error: Some(format!("malformed request: {e}")),
            },
        };
        serde_json::to_writer(&mut writer, &response)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A fake provider that answers each batch of `batch` requests in reverse order.
    fn reversed_server(batch: usize) -> (ExternalProvider, std::thread::JoinHandle<()>) {
        let (req_r, req_w) = std::io::pipe().unwrap();
        let (resp_r, mut resp_w) = std::io::pipe().unwrap();
        let handle = std::thread::spawn(move || {
            let stub = StubProvider::new(42);
            let mut pending = Vec::new();
            for line in BufReader::new(req_r).lines() {
                let req: WireRequest = serde_json::from_str(&line.unwrap()).unwrap();
                pending.push(req);
                if pending.len() == batch {
                    for req in pending.drain(..).rev() {
                        let e = answer(&req, &stub).unwrap();
                        let resp = WireResponse {
                            id: Some(req.id),
                            embedding: Some(e.as_slice().to_vec()),
                            error: None,
                        };
                        writeln!(resp_w, "{}", serde_json::to_string(&resp).unwrap()).unwrap();
                    }
                }
            }
        });
        (
            ExternalProvider::from_streams(resp_r, req_w, Duration::from_secs(10)),
            handle,
        )
    }

    #[test]
    fn out_of_order_responses_reconciled() {
        let (provider, _h) = reversed_server(3);
        let texts: Vec<String> = ["A photo of Palm", "This is a Fan Palm", "radiating fronds"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let got = provider.embed_texts(&texts).unwrap();
        let stub = StubProvider::new(42);
        for (t, e) in texts.iter().zip(&got) {
            assert_eq!(e, &stub.embed_text(t).unwrap());
        }
        // Cached: no further requests needed (the fake would block on a partial batch).
        assert_eq!(provider.embed_text("This is a Fan Palm").unwrap(), got[1]);
    }

    #[test]
    fn malformed_response_is_retryable_error() {
        let (req_r, req_w) = std::io::pipe().unwrap();
        let (resp_r, mut resp_w) = std::io::pipe().unwrap();
        std::thread::spawn(move || {
            let mut lines = BufReader::new(req_r).lines();
            let _ = lines.next();
            writeln!(resp_w, "not json").unwrap();
        });
        let provider = ExternalProvider::from_streams(resp_r, req_w, Duration::from_secs(10));
        let err = provider.embed_text("x").unwrap_err();
        assert!(err.is_retryable(), "{err}");
    }

    #[test]
    fn silent_provider_times_out() {
        let (_req_r, req_w) = std::io::pipe().unwrap();
        let (resp_r, _resp_w) = std::io::pipe().unwrap();
        let provider = ExternalProvider::from_streams(resp_r, req_w, Duration::from_millis(50));
        let err = provider.embed_text("x").unwrap_err();
        assert!(
            err.is_retryable() && err.to_string().contains("timed out"),
            "{err}"
        );
    }

    #[test]
    fn stub_server_answers_all_kinds() {
        let stub = StubProvider::new(9);
        let png = raster::encode_png(&[10; 8 * 8 * 3], 8, 8, 3);
        let input = format!(
            "{}\n{}\n{{\"id\": 7, \"kind\": \"video\"}}\ngarbage\n",
            serde_json::to_string(&WireRequest {
                id: 1,
                kind: RequestKind::Text,
                payload: "cheese".into()
            })
            .unwrap(),
            serde_json::to_string(&WireRequest {
                id: 2,
                kind: RequestKind::Image,
                payload: BASE64.encode(png)
            })
            .unwrap(),
        );
        let mut out = Vec::new();
        serve_stub(input.as_bytes(), &mut out, &stub).unwrap();
        let responses: Vec<WireResponse> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(responses.len(), 4);
        assert_eq!(
            responses[0].embedding.as_deref(),
            Some(stub.embed_text("cheese").unwrap().as_slice())
        );
        assert_eq!(
            responses[1].embedding.as_ref().map(Vec::len),
            Some(EMBEDDING_DIM)
        );
        assert_eq!(
            (responses[2].id, responses[2].error.is_some()),
            (Some(7), true)
        );
        assert_eq!(
            (responses[3].id, responses[3].error.is_some()),
            (None, true)
        );
    }
}
