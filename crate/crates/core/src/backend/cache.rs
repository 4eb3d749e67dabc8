//! Write-through and replay cache in front of another backend.
//!
//! Entries live in an append-only JSONL file. Each line carries a SHA-256
//! chained over the previous line's sum, and a `<file>.head` sidecar
//! records the entry count and final sum, so both edits and truncation
//! are caught on open.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use super::wire::Task;
use super::{BackendError, PerceptionBackend};
use crate::io::write_atomic;
use crate::model::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    /// Serve hits, forward misses to the inner backend and record them.
    ReadWrite,
    /// Serve hits only; a miss is a backend failure.
    Replay,
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cache store corrupt: {path} line {line}: {reason}")]
    StoreCorrupt { path: PathBuf, line: usize, reason: String },
    #[error("read-write cache needs an inner backend")]
    NoInner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheKey {
    image: String,
    task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    region: Option<BBox>,
    threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CacheValue {
    Boxes(Vec<BBox>),
    Texts(Vec<String>),
}

#[derive(Serialize, Deserialize)]
struct Line {
    key: CacheKey,
    value: CacheValue,
    sum: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Head {
    entries: usize,
    chain: String,
}

const GENESIS: &str = "";

fn chain_sum(prev: &str, key: &str, value: &str) -> String {
    let mut h = Sha256::new();
    for part in [prev, key, value] {
        h.update(part.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

struct Writer {
    file: Option<File>,
    chain: String,
    entries: usize,
}

pub struct CachedBackend {
    inner: Option<Box<dyn PerceptionBackend + Sync>>,
    mode: CacheMode,
    path: PathBuf,
    head_path: PathBuf,
    map: RwLock<HashMap<String, CacheValue>>,
    writer: Mutex<Writer>,
    has_ocr: bool,
}

fn head_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".head");
    PathBuf::from(name)
}

impl CachedBackend {
    pub fn open(
        path: impl Into<PathBuf>,
        mode: CacheMode,
        inner: Option<Box<dyn PerceptionBackend + Sync>>,
    ) -> Result<Self, CacheError> {
        if mode == CacheMode::ReadWrite && inner.is_none() {
            return Err(CacheError::NoInner);
        }
        let path = path.into();
        let head_path = head_path(&path);
        let (map, chain, entries) = load(&path, &head_path)?;
        let has_ocr = inner.as_ref().is_none_or(|b| b.has_ocr());
        Ok(CachedBackend {
            inner,
            mode,
            path,
            head_path,
            map: RwLock::new(map),
            writer: Mutex::new(Writer {
                file: None,
                chain,
                entries,
            }),
            has_ocr,
        })
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lookup(&self, key: &str) -> Option<CacheValue> {
        self.map.read().unwrap_or_else(|p| p.into_inner()).get(key).cloned()
    }

    fn inner(&self, key: &str) -> Result<&(dyn PerceptionBackend + Sync), BackendError> {
        match (self.mode, &self.inner) {
            (CacheMode::ReadWrite, Some(b)) => Ok(b.as_ref()),
            _ => Err(BackendError::CacheMiss(key.to_string())),
        }
    }

    fn record(&self, key: &CacheKey, value: CacheValue) -> Result<(), BackendError> {
        let key_json = serde_json::to_string(key).expect("cache key serializes");
        let mut w = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        {
            let map = self.map.read().unwrap_or_else(|p| p.into_inner());
            if map.contains_key(&key_json) {
                return Ok(());
            }
        }
        let value_json = serde_json::to_string(&value).expect("cache value serializes");
        let sum = chain_sum(&w.chain, &key_json, &value_json);
        let line = serde_json::to_string(&Line {
            key: key.clone(),
            value: value.clone(),
            sum: sum.clone(),
        })
        .expect("cache line serializes");
        let io = |e: std::io::Error| BackendError::Other(format!("cache {}: {e}", self.path.display()));
        if w.file.is_none() {
            w.file = Some(OpenOptions::new().create(true).append(true).open(&self.path).map_err(io)?);
        }
        let file = w.file.as_mut().expect("opened above");
        file.write_all(format!("{line}\n").as_bytes()).map_err(io)?;
        file.flush().map_err(io)?;
        w.chain = sum;
        w.entries += 1;
        let head = Head {
            entries: w.entries,
            chain: w.chain.clone(),
        };
        write_atomic(&self.head_path, serde_json::to_string(&head).expect("head serializes").as_bytes()).map_err(io)?;
        self.map.write().unwrap_or_else(|p| p.into_inner()).insert(key_json, value);
        Ok(())
    }
}

fn load(path: &Path, head_path: &Path) -> Result<(HashMap<String, CacheValue>, String, usize), CacheError> {
    let io = |p: &Path, source| CacheError::Io {
        path: p.to_path_buf(),
        source,
    };
    let corrupt = |line: usize, reason: String| CacheError::StoreCorrupt {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let head: Option<Head> = match std::fs::read(head_path) {
        Ok(b) => Some(serde_json::from_slice(&b).map_err(|e| corrupt(0, format!("unreadable head: {e}")))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(io(head_path, e)),
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return match head {
                Some(h) if h.entries > 0 => Err(corrupt(0, "entry file missing".into())),
                _ => Ok((HashMap::new(), GENESIS.to_string(), 0)),
            };
        }
        Err(e) => return Err(io(path, e)),
    };
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(corrupt(text.lines().count(), "truncated final line".into()));
    }
    let mut map = HashMap::new();
    let mut chain = GENESIS.to_string();
    let mut entries = 0;
    for (i, raw) in text.lines().enumerate() {
        let line: Line = serde_json::from_str(raw).map_err(|e| corrupt(i + 1, e.to_string()))?;
        let key_json = serde_json::to_string(&line.key).expect("cache key serializes");
        let value_json = serde_json::to_string(&line.value).expect("cache value serializes");
        let expect = chain_sum(&chain, &key_json, &value_json);
        if expect != line.sum {
            return Err(corrupt(i + 1, "checksum mismatch".into()));
        }
        chain = expect;
        entries += 1;
        map.insert(key_json, line.value);
    }
    let found = Head {
        entries,
        chain: chain.clone(),
    };
    match head {
        Some(h) if h == found => Ok((map, chain, entries)),
        Some(h) => Err(corrupt(
            entries,
            format!("head records {} entries, file has {entries}", h.entries),
        )),
        None if entries == 0 => Ok((map, chain, entries)),
        None => Err(corrupt(0, "head file missing".into())),
    }
}

impl PerceptionBackend for CachedBackend {
    fn detect(&self, image_id: &str, query: &str, threshold: f64) -> Result<Vec<BBox>, BackendError> {
        Ok(self.detect_many(image_id, &[query], threshold)?.pop().unwrap_or_default())
    }

    fn detect_many(&self, image_id: &str, queries: &[&str], threshold: f64) -> Result<Vec<Vec<BBox>>, BackendError> {
        let keys: Vec<CacheKey> = queries
            .iter()
            .map(|q| CacheKey {
                image: image_id.to_string(),
                task: Task::Detect,
                query: Some(q.to_string()),
                region: None,
                threshold,
            })
            .collect();
        let key_json: Vec<String> = keys.iter().map(|k| serde_json::to_string(k).expect("key")).collect();
        let mut out: Vec<Option<Vec<BBox>>> = key_json
            .iter()
            .map(|k| match self.lookup(k) {
                Some(CacheValue::Boxes(b)) => Some(b),
                _ => None,
            })
            .collect();
        let missing: Vec<usize> = (0..queries.len()).filter(|&i| out[i].is_none()).collect();
        if let Some(&first) = missing.first() {
            let inner = self.inner(&key_json[first])?;
            let asked: Vec<&str> = missing.iter().map(|&i| queries[i]).collect();
            let got = inner.detect_many(image_id, &asked, threshold)?;
            if got.len() != asked.len() {
                return Err(BackendError::Protocol("inner backend returned wrong number of lists".into()));
            }
            for (&i, boxes) in missing.iter().zip(got) {
                self.record(&keys[i], CacheValue::Boxes(boxes.clone()))?;
                out[i] = Some(boxes);
            }
        }
        Ok(out.into_iter().map(|b| b.expect("filled")).collect())
    }

    fn read_text(&self, image_id: &str, region: &BBox) -> Result<Vec<String>, BackendError> {
        let key = CacheKey {
            image: image_id.to_string(),
            task: Task::Ocr,
            query: None,
            region: Some(region.clone()),
            threshold: 0.0,
        };
        let key_json = serde_json::to_string(&key).expect("key");
        if let Some(CacheValue::Texts(t)) = self.lookup(&key_json) {
            return Ok(t);
        }
        let texts = self.inner(&key_json)?.read_text(image_id, region)?;
        self.record(&key, CacheValue::Texts(texts.clone()))?;
        Ok(texts)
    }

    fn has_ocr(&self) -> bool {
        self.has_ocr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Counting(Arc<AtomicUsize>);

    impl PerceptionBackend for Counting {
        fn detect(&self, _: &str, q: &str, _: f64) -> Result<Vec<BBox>, BackendError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(vec![BBox::new(0.1, 0.1, 0.2, 0.2).unwrap().with_label(q)])
        }
        fn read_text(&self, _: &str, _: &BBox) -> Result<Vec<String>, BackendError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(vec!["EXIT".into()])
        }
        fn has_ocr(&self) -> bool {
            true
        }
    }

    fn counting() -> (Box<dyn PerceptionBackend + Sync>, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        (Box::new(Counting(calls.clone())), calls)
    }

    #[test]
    fn second_call_is_a_hit() {
        let dir = tempfile::tempdir().unwrap();
        let (inner, calls) = counting();
        let c = CachedBackend::open(dir.path().join("c.jsonl"), CacheMode::ReadWrite, Some(inner)).unwrap();
        let a = c.detect("img", "cat", 0.3).unwrap();
        let b = c.detect("img", "cat", 0.3).unwrap();
        assert_eq!(a, b);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        c.detect("img", "cat", 0.4).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn replay_serves_persisted_entries_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let (inner, _) = counting();
        let region = BBox::new(0.1, 0.1, 0.3, 0.3).unwrap();
        {
            let c = CachedBackend::open(&path, CacheMode::ReadWrite, Some(inner)).unwrap();
            c.detect("img", "cat", 0.3).unwrap();
            c.read_text("img", &region).unwrap();
        }
        let r = CachedBackend::open(&path, CacheMode::Replay, None).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r.detect("img", "cat", 0.3).unwrap()[0].label, "cat");
        assert_eq!(r.read_text("img", &region).unwrap(), vec!["EXIT"]);
        assert!(matches!(r.detect("img", "dog", 0.3), Err(BackendError::CacheMiss(_))));
    }

    #[test]
    fn truncation_and_edits_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let (inner, _) = counting();
        {
            let c = CachedBackend::open(&path, CacheMode::ReadWrite, Some(inner)).unwrap();
            for q in ["a", "b", "c"] {
                c.detect("img", q, 0.3).unwrap();
            }
        }
        let full = std::fs::read_to_string(&path).unwrap();

        std::fs::write(&path, &full[..full.len() - 5]).unwrap();
        assert!(matches!(CachedBackend::open(&path, CacheMode::Replay, None), Err(CacheError::StoreCorrupt { .. })));

        let first_two: String = full.lines().take(2).map(|l| format!("{l}\n")).collect();
        std::fs::write(&path, first_two).unwrap();
        assert!(matches!(CachedBackend::open(&path, CacheMode::Replay, None), Err(CacheError::StoreCorrupt { .. })));

        std::fs::write(&path, full.replace("\"a\"", "\"z\"")).unwrap();
        assert!(matches!(CachedBackend::open(&path, CacheMode::Replay, None), Err(CacheError::StoreCorrupt { .. })));

        std::fs::write(&path, &full).unwrap();
        assert!(CachedBackend::open(&path, CacheMode::Replay, None).is_ok());
    }
}
