//! Client for a detector server speaking the `/v1/perceive` protocol.

use serde::{Deserialize, Serialize};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use super::wire::{Task, WireRequest, WireResponse, WireSuccess, PATH};
use super::{BackendError, PerceptionBackend};
use crate::model::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8700`.
    pub endpoint: String,
    /// Deadline for one logical request, retries included.
    pub timeout_ms: u64,
    /// Extra attempts after a transport failure.
    pub retries: u32,
    /// First backoff delay; doubles per retry.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub has_ocr: bool,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://127.0.0.1:8700".into(),
            timeout_ms: 5000,
            retries: 2,
            backoff_ms: 25,
            max_in_flight: 8,
            has_ocr: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RemoteError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("remote error {code}: {message}")]
    Remote { code: i64, message: String },
}

impl From<RemoteError> for BackendError {
    fn from(e: RemoteError) -> Self {
        match e {
            RemoteError::Transport { .. } => BackendError::Transport(e.to_string()),
            RemoteError::Protocol(m) => BackendError::Protocol(m),
            RemoteError::Remote { code, message } => BackendError::Remote { code, message },
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|p| p.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteClient {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    url: String,
    slots: Slots,
}

impl RemoteClient {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .new_agent();
        let url = format!("{}{PATH}", cfg.endpoint.trim_end_matches('/'));
        let slots = Slots {
            free: Mutex::new(cfg.max_in_flight.max(1)),
            cv: Condvar::new(),
        };
        RemoteClient { cfg, agent, url, slots }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    /// Sends one request. Transport failures are retried with exponential
    /// backoff until `retries` is used up or the deadline passes; protocol
    /// and remote errors are returned at once.
    pub fn perceive(&self, req: &WireRequest) -> Result<WireSuccess, RemoteError> {
        let body = serde_json::to_vec(req).expect("wire request serializes");
        let deadline = Instant::now() + Duration::from_millis(self.cfg.timeout_ms);
        let _slot = self.slots.acquire();
        let mut attempts = 0;
        let mut backoff = Duration::from_millis(self.cfg.backoff_ms);
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Err(RemoteError::Transport {
                    attempts,
                    message: "deadline exceeded".into(),
                });
            }
            attempts += 1;
            match self.attempt(&body, remaining) {
                Ok(resp) => return resp,
                Err(message) => {
                    log::debug!("attempt {attempts} to {} failed: {message}", self.url);
                    if attempts > self.cfg.retries {
                        return Err(RemoteError::Transport { attempts, message });
                    }
                    let pause = backoff.min(deadline.saturating_duration_since(Instant::now()));
                    std::thread::sleep(pause);
                    backoff *= 2;
                }
            }
        }
    }

    /// `Err` means a retryable transport failure.
    fn attempt(&self, body: &[u8], timeout: Duration) -> Result<Result<WireSuccess, RemoteError>, String> {
        let mut resp = self
            .agent
            .post(&self.url)
            .config()
            .timeout_global(Some(timeout))
            .build()
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let bytes = resp.body_mut().read_to_vec().map_err(|e| e.to_string())?;
        Ok(match WireResponse::parse(&bytes) {
            Ok(WireResponse::Success(s)) if status == 200 => Ok(s),
            Ok(WireResponse::Success(_)) => Err(RemoteError::Protocol(format!("success body with HTTP {status}"))),
            Ok(WireResponse::Error(e)) => Err(RemoteError::Remote {
                code: e.code,
                message: e.message,
            }),
            Err(e) => Err(RemoteError::Protocol(format!("HTTP {status}: {e}"))),
        })
    }
}

/// [`PerceptionBackend`] over a [`RemoteClient`]. All DETECT phrases for
/// one image go out in a single request.
pub struct RemoteBackend {
    client: RemoteClient,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Self {
        RemoteBackend {
            client: RemoteClient::new(cfg),
        }
    }

    pub fn client(&self) -> &RemoteClient {
        &self.client
    }
}

impl PerceptionBackend for RemoteBackend {
    fn detect(&self, image_id: &str, query: &str, threshold: f64) -> Result<Vec<BBox>, BackendError> {
        Ok(self.detect_many(image_id, &[query], threshold)?.pop().unwrap_or_default())
    }

    fn detect_many(&self, image_id: &str, queries: &[&str], threshold: f64) -> Result<Vec<Vec<BBox>>, BackendError> {
        let req = WireRequest {
            image_id: image_id.to_string(),
            queries: queries.iter().map(|q| q.to_string()).collect(),
            task: Task::Detect,
            region: None,
            threshold,
        };
        let resp = self.client.perceive(&req)?;
        if resp.results.len() != queries.len() {
            return Err(BackendError::Protocol(format!(
                "{} queries but {} result lists",
                queries.len(),
                resp.results.len()
            )));
        }
        Ok(resp.results)
    }

    fn read_text(&self, image_id: &str, region: &BBox) -> Result<Vec<String>, BackendError> {
        let req = WireRequest {
            image_id: image_id.to_string(),
            queries: vec![],
            task: Task::Ocr,
            region: Some(region.clone()),
            threshold: 0.0,
        };
        Ok(self.client.perceive(&req)?.texts)
    }

    fn has_ocr(&self) -> bool {
        self.client.cfg.has_ocr
    }
}
