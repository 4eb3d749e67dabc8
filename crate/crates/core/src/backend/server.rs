//! Detector server speaking the wire protocol, answering from a scene
//! corpus. Lets the remote path run end to end without any model.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use super::oracle::{oracle_detect, oracle_read_text, SceneCorpus};
use super::wire::{ErrorCode, Task, WireRequest, WireResponse, WireSuccess, PATH};

pub const MODEL_NAME: &str = "scene-oracle";

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("cannot listen on {addr}: {message}")]
    Bind { addr: String, message: String },
}

pub struct MockServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    served: Arc<AtomicU64>,
    workers: Vec<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts `threads`
    /// request handlers.
    pub fn start(corpus: SceneCorpus, addr: &str, threads: usize) -> Result<Self, ServerError> {
        let bind_err = |message: String| ServerError::Bind {
            addr: addr.to_string(),
            message,
        };
        let server = Arc::new(tiny_http::Server::http(addr).map_err(|e| bind_err(e.to_string()))?);
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| bind_err("not an IP listener".into()))?;
        let corpus = Arc::new(corpus);
        let stop = Arc::new(AtomicBool::new(false));
        let served = Arc::new(AtomicU64::new(0));
        let workers = (0..threads.max(1))
            .map(|_| {
                let (server, corpus, stop, served) = (server.clone(), corpus.clone(), stop.clone(), served.clone());
                std::thread::spawn(move || loop {
                    match server.recv() {
                        Ok(req) => {
                            served.fetch_add(1, Ordering::Relaxed);
                            handle(req, &corpus);
                        }
                        Err(_) if stop.load(Ordering::SeqCst) => break,
                        Err(e) => log::warn!("mock server accept error: {e}"),
                    }
                })
            })
            .collect();
        log::info!("mock detector listening on http://{local}{PATH}");
        Ok(MockServer {
            server,
            addr: local,
            stop,
            served,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests_served(&self) -> u64 {
        self.served.load(Ordering::Relaxed)
    }

    /// Blocks until the server is stopped from another thread.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

/// Pure request handler: HTTP status and response body.
pub fn respond(body: &[u8], corpus: &SceneCorpus) -> (u16, WireResponse) {
    let started = Instant::now();
    let req: WireRequest = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => return (400, WireResponse::error(ErrorCode::BadRequest, e.to_string())),
    };
    if !(0.0..=1.0).contains(&req.threshold) {
        return (400, WireResponse::error(ErrorCode::BadRequest, "threshold outside [0, 1]"));
    }
    let Some(scene) = corpus.get(&req.image_id) else {
        return (
            404,
            WireResponse::error(ErrorCode::UnknownImage, format!("unknown image {:?}", req.image_id)),
        );
    };
    let (results, texts) = match req.task {
        Task::Detect => {
            if req.queries.is_empty() {
                return (400, WireResponse::error(ErrorCode::BadRequest, "detect needs at least one query"));
            }
            let results = req
                .queries
                .iter()
                .map(|q| {
                    let mut boxes = oracle_detect(scene, q);
                    boxes.retain(|b| b.score >= req.threshold);
                    boxes
                })
                .collect();
            (results, vec![])
        }
        Task::Ocr => match &req.region {
            Some(region) if region.check().is_ok() => (vec![], oracle_read_text(scene, region)),
            _ => return (400, WireResponse::error(ErrorCode::BadRequest, "ocr needs a valid region")),
        },
    };
    let success = WireSuccess {
        results,
        texts,
        model: MODEL_NAME.into(),
        latency_ms: started.elapsed().as_millis() as u64,
    };
    (200, WireResponse::Success(success))
}

fn handle(mut req: tiny_http::Request, corpus: &SceneCorpus) {
    let (status, resp) = if *req.method() != tiny_http::Method::Post || req.url() != PATH {
        (404, WireResponse::error(ErrorCode::BadRequest, format!("no route {} {}", req.method(), req.url())))
    } else {
        let mut body = Vec::new();
        match req.as_reader().read_to_end(&mut body) {
            Ok(_) => respond(&body, corpus),
            Err(e) => (400, WireResponse::error(ErrorCode::BadRequest, e.to_string())),
        }
    };
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    let response = tiny_http::Response::from_string(resp.to_json())
        .with_status_code(status)
        .with_header(header);
    if let Err(e) = req.respond(response) {
        log::debug!("client went away: {e}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_corpus() -> SceneCorpus {
        SceneCorpus::default()
    }

    #[test]
    fn bad_requests_get_code_2() {
        let (status, resp) = respond(b"{}", &empty_corpus());
        assert_eq!(status, 400);
        assert!(matches!(resp, WireResponse::Error(e) if e.code == 2));
    }

    #[test]
    fn unknown_image_gets_code_1() {
        let (status, resp) = respond(br#"{"image_id":"x","queries":["a"],"task":"detect","threshold":0.3}"#, &empty_corpus());
        assert_eq!(status, 404);
        assert!(matches!(resp, WireResponse::Error(e) if e.code == 1));
    }
}
