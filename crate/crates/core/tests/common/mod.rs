#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

/// What a fake endpoint saw.
pub struct Seen {
    pub body: serde_json::Value,
    pub authorization: Option<String>,
    pub path: String,
}

type Handler = dyn Fn(&Seen) -> (u16, String) + Send + Sync;

/// A local HTTP server answering every POST through a handler.
pub struct FakeServer {
    server: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
    pub requests: Arc<AtomicUsize>,
    pub url: String,
}

impl FakeServer {
    pub fn start<F>(threads: usize, handler: F) -> Self
    where
        F: Fn(&Seen) -> (u16, String) + Send + Sync + 'static,
    {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind"));
        let port = server.server_addr().to_ip().expect("ip").port();
        let handler: Arc<Handler> = Arc::new(handler);
        let requests = Arc::new(AtomicUsize::new(0));
        let workers = (0..threads)
            .map(|_| {
                let server = Arc::clone(&server);
                let handler = Arc::clone(&handler);
                let requests = Arc::clone(&requests);
                std::thread::spawn(move || {
                    for mut req in server.incoming_requests() {
                        requests.fetch_add(1, Ordering::SeqCst);
                        let mut raw = String::new();
                        let _ = req.as_reader().read_to_string(&mut raw);
                        let authorization = req
                            .headers()
                            .iter()
                            .find(|h| h.field.equiv("Authorization"))
                            .map(|h| h.value.to_string());
                        let seen = Seen {
                            body: serde_json::from_str(&raw).unwrap_or(serde_json::Value::Null),
                            authorization,
                            path: req.url().to_string(),
                        };
                        let (status, body) = handler(&seen);
                        let resp = tiny_http::Response::from_string(body).with_status_code(status);
                        let _ = req.respond(resp);
                    }
                })
            })
            .collect();
        FakeServer {
            server,
            workers,
            requests,
            url: format!("http://127.0.0.1:{port}"),
        }
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for FakeServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Chat-completions reply carrying `content`.
pub fn completion(content: &str) -> String {
    serde_json::json!({
        "id": "fake",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
    })
    .to_string()
}

/// The prompt text of a chat-completions request.
pub fn prompt_of(seen: &Seen) -> String {
    seen.body
        .pointer("/messages/0/content")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_string()
}
