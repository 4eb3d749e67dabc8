//! Perception backends: where DETECT and READ_TEXT get their answers.
//!
//! - [`OracleBackend`] answers from annotated scene documents.
//! - [`RemoteBackend`] speaks the JSON wire protocol to a detector server.
//! - [`CachedBackend`] records or replays another backend's answers.
//! - [`Serialized`] wraps a backend that cannot take concurrent calls.

mod cache;
mod oracle;
mod remote;
mod server;
pub mod wire;

pub use cache::{CacheError, CacheMode, CachedBackend};
pub use oracle::{
    load_corpus, oracle_detect, oracle_read_text, verb_stem, OracleBackend, SceneCorpus, SceneDocument, SceneError,
    SceneObject, SceneRelation,
};
pub use remote::{RemoteBackend, RemoteClient, RemoteConfig, RemoteError};
pub use server::{respond, MockServer, ServerError};

use std::sync::Mutex;

use crate::model::BBox;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("unknown image {0:?}")]
    UnknownImage(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("remote error {code}: {message}")]
    Remote { code: i64, message: String },
    #[error("not in replay cache: {0}")]
    CacheMiss(String),
    #[error("backend returned an invalid box: {0}")]
    InvalidBox(String),
    #[error("{0}")]
    Other(String),
}

/// Detection and OCR provider.
///
/// Implementations must be deterministic for a given image and query, and
/// return detections sorted by score, highest first.
pub trait PerceptionBackend: Send {
    fn detect(&self, image_id: &str, query: &str, threshold: f64) -> Result<Vec<BBox>, BackendError>;

    fn read_text(&self, image_id: &str, region: &BBox) -> Result<Vec<String>, BackendError>;

    fn has_ocr(&self) -> bool;

    /// Several phrases against one image. Remote backends batch these into
    /// a single request.
    fn detect_many(&self, image_id: &str, queries: &[&str], threshold: f64) -> Result<Vec<Vec<BBox>>, BackendError> {
        queries.iter().map(|q| self.detect(image_id, q, threshold)).collect()
    }
}

impl<B: PerceptionBackend + Sync + ?Sized> PerceptionBackend for std::sync::Arc<B> {
    fn detect(&self, image_id: &str, query: &str, threshold: f64) -> Result<Vec<BBox>, BackendError> {
        (**self).detect(image_id, query, threshold)
    }
    fn read_text(&self, image_id: &str, region: &BBox) -> Result<Vec<String>, BackendError> {
        (**self).read_text(image_id, region)
    }
    fn has_ocr(&self) -> bool {
        (**self).has_ocr()
    }
    fn detect_many(&self, image_id: &str, queries: &[&str], threshold: f64) -> Result<Vec<Vec<BBox>>, BackendError> {
        (**self).detect_many(image_id, queries, threshold)
    }
}

/// Funnels all calls through a mutex so a non-`Sync` backend can be shared
/// between workers.
pub struct Serialized<B> {
    inner: Mutex<B>,
    has_ocr: bool,
}

impl<B: PerceptionBackend> Serialized<B> {
    pub fn new(inner: B) -> Self {
        let has_ocr = inner.has_ocr();
        Serialized {
            inner: Mutex::new(inner),
            has_ocr,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, B> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl<B: PerceptionBackend> PerceptionBackend for Serialized<B> {
    fn detect(&self, image_id: &str, query: &str, threshold: f64) -> Result<Vec<BBox>, BackendError> {
        self.lock().detect(image_id, query, threshold)
    }
    fn read_text(&self, image_id: &str, region: &BBox) -> Result<Vec<String>, BackendError> {
        self.lock().read_text(image_id, region)
    }
    fn has_ocr(&self) -> bool {
        self.has_ocr
    }
    fn detect_many(&self, image_id: &str, queries: &[&str], threshold: f64) -> Result<Vec<Vec<BBox>>, BackendError> {
        self.lock().detect_many(image_id, queries, threshold)
    }
}

/// Backend with OCR switched off; everything else passes through.
pub struct WithoutOcr<B>(pub B);

impl<B: PerceptionBackend> PerceptionBackend for WithoutOcr<B> {
    fn detect(&self, image_id: &str, query: &str, threshold: f64) -> Result<Vec<BBox>, BackendError> {
        self.0.detect(image_id, query, threshold)
    }
    fn read_text(&self, _image_id: &str, _region: &BBox) -> Result<Vec<String>, BackendError> {
        Err(BackendError::Other("backend has no OCR".into()))
    }
    fn has_ocr(&self) -> bool {
        false
    }
    fn detect_many(&self, image_id: &str, queries: &[&str], threshold: f64) -> Result<Vec<Vec<BBox>>, BackendError> {
        self.0.detect_many(image_id, queries, threshold)
    }
}
