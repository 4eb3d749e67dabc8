//! On-disk result store.
//!
//! ```text
//! <dir>/meta.json              plan hash and plan inputs
//! <dir>/journal.jsonl          append-only upserts, one record per line
//! <dir>/segments/<sha>.jsonl   sorted records of one kind, named by content hash
//! <dir>/manifest.json          segment list; written last, when the run completes
//! ```
//!
//! The journal is the source of truth while a run is in progress. A torn
//! final line (from a killed process) is dropped on open; anything else that
//! fails to parse is corruption.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::io::write_atomic;
use crate::model::{RankedList, Specification, Verdict};
use crate::routine::RoutineEntry;

pub const STORE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("store {0} already exists; pass --resume to continue it")]
    AlreadyExists(PathBuf),
    #[error("no store at {0}")]
    Missing(PathBuf),
    #[error("store was created for plan {found}, but this plan hashes to {expected}")]
    PlanMismatch { expected: String, found: String },
    #[error("{path}:{line}: corrupt record: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("key {0} was already written with a different value")]
    Conflict(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One stored result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Spec {
        query_id: String,
        spec: Specification,
    },
    ParseFailure {
        query_id: String,
        error: String,
    },
    Routine {
        query_id: String,
        triplet_id: u32,
        routine: RoutineEntry,
    },
    Verdict {
        query_id: String,
        verdict: Verdict,
    },
    Ranking {
        query_id: String,
        ranking: RankedList,
    },
}

impl Record {
    /// Upsert key. Sorts by kind, then query, triplet and image.
    pub fn key(&self) -> String {
        match self {
            Record::Spec { query_id, .. } => format!("spec/{query_id}"),
            Record::ParseFailure { query_id, .. } => format!("spec/{query_id}"),
            Record::Routine { query_id, triplet_id, .. } => format!("routine/{query_id}/{triplet_id:08}"),
            Record::Verdict { query_id, verdict } => {
                format!("verdict/{query_id}/{:08}/{}", verdict.triplet_id, verdict.image_id)
            }
            Record::Ranking { query_id, .. } => format!("ranking/{query_id}"),
        }
    }

    pub fn segment(&self) -> &'static str {
        match self {
            Record::Spec { .. } | Record::ParseFailure { .. } => "specs",
            Record::Routine { .. } => "routines",
            Record::Verdict { .. } => "verdicts",
            Record::Ranking { .. } => "rankings",
        }
    }
}

pub const SEGMENTS: [&str; 4] = ["specs", "routines", "verdicts", "rankings"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub version: u32,
    pub plan_hash: String,
    pub plan: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub kind: String,
    pub file: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub plan_hash: String,
    pub segments: Vec<SegmentRef>,
}

#[derive(Serialize, Deserialize)]
struct JournalLine {
    key: String,
    record: Record,
}

pub struct ResultStore {
    dir: PathBuf,
    meta: StoreMeta,
    /// Key to (record, its canonical JSON).
    records: BTreeMap<String, (Record, String)>,
    journal: File,
    writes: usize,
}

impl ResultStore {
    /// Creates a new store; fails if `dir` already holds one.
    pub fn create(dir: &Path, plan_hash: &str, plan: serde_json::Value) -> Result<Self, StoreError> {
        let meta_path = dir.join("meta.json");
        if meta_path.exists() {
            return Err(StoreError::AlreadyExists(dir.to_path_buf()));
        }
        std::fs::create_dir_all(dir.join("segments")).map_err(io_err(dir))?;
        let meta = StoreMeta {
            version: STORE_VERSION,
            plan_hash: plan_hash.to_string(),
            plan,
        };
        let journal_path = dir.join("journal.jsonl");
        let journal = File::create(&journal_path).map_err(io_err(&journal_path))?;
        let bytes = serde_json::to_vec_pretty(&meta).expect("meta serializes");
        write_atomic(&meta_path, &bytes).map_err(io_err(&meta_path))?;
        Ok(ResultStore {
            dir: dir.to_path_buf(),
            meta,
            records: BTreeMap::new(),
            journal,
            writes: 0,
        })
    }

    /// Opens an existing store for a plan with hash `plan_hash`.
    pub fn open(dir: &Path, plan_hash: &str) -> Result<Self, StoreError> {
        let meta_path = dir.join("meta.json");
        if !meta_path.exists() {
            return Err(StoreError::Missing(dir.to_path_buf()));
        }
        let text = std::fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let meta: StoreMeta = serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            path: meta_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if meta.plan_hash != plan_hash {
            return Err(StoreError::PlanMismatch {
                expected: plan_hash.to_string(),
                found: meta.plan_hash,
            });
        }
        let journal_path = dir.join("journal.jsonl");
        let records = load_journal(&journal_path)?;
        let journal = OpenOptions::new()
            .append(true)
            .open(&journal_path)
            .map_err(io_err(&journal_path))?;
        Ok(ResultStore {
            dir: dir.to_path_buf(),
            meta,
            records,
            journal,
            writes: 0,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &StoreMeta {
        &self.meta
    }

    pub fn contains(&self, key: &str) -> bool {
        self.records.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&Record> {
        self.records.get(key).map(|(r, _)| r)
    }

    pub fn records(&self) -> impl Iterator<Item = &Record> {
        self.records.values().map(|(r, _)| r)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Journal appends made through this handle.
    pub fn writes(&self) -> usize {
        self.writes
    }

    /// Writes `record` unless an equal one is stored. Returns whether the
    /// journal grew.
    pub fn upsert(&mut self, record: Record) -> Result<bool, StoreError> {
        let key = record.key();
        let json = serde_json::to_string(&record).expect("record serializes");
        if let Some((_, existing)) = self.records.get(&key) {
            if *existing == json {
                return Ok(false);
            }
            return Err(StoreError::Conflict(key));
        }
        let mut line = serde_json::to_string(&JournalLine {
            key: key.clone(),
            record: record.clone(),
        })
        .expect("journal line serializes");
        line.push('\n');
        let path = self.dir.join("journal.jsonl");
        self.journal.write_all(line.as_bytes()).map_err(io_err(&path))?;
        self.journal.flush().map_err(io_err(&path))?;
        self.records.insert(key, (record, json));
        self.writes += 1;
        Ok(true)
    }

    /// Writes one content-addressed segment per record kind and the manifest.
    pub fn finalize(&mut self) -> Result<Manifest, StoreError> {
        let journal_path = self.dir.join("journal.jsonl");
        self.journal.sync_all().map_err(io_err(&journal_path))?;
        let mut segments = Vec::new();
        for kind in SEGMENTS {
            let mut body = String::new();
            let mut n = 0;
            for (_, json) in self.records.values().filter(|(r, _)| r.segment() == kind) {
                body.push_str(json);
                body.push('\n');
                n += 1;
            }
            let name = format!("{}.jsonl", hex::encode(Sha256::digest(body.as_bytes())));
            let path = self.dir.join("segments").join(&name);
            if !path.exists() {
                write_atomic(&path, body.as_bytes()).map_err(io_err(&path))?;
            }
            segments.push(SegmentRef {
                kind: kind.to_string(),
                file: name,
                records: n,
            });
        }
        let manifest = Manifest {
            version: STORE_VERSION,
            plan_hash: self.meta.plan_hash.clone(),
            segments,
        };
        let path = self.dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        write_atomic(&path, &bytes).map_err(io_err(&path))?;
        Ok(manifest)
    }
}

fn load_journal(path: &Path) -> Result<BTreeMap<String, (Record, String)>, StoreError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut records = BTreeMap::new();
    let mut good_len = 0usize;
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let end = bytes[offset..].iter().position(|&b| b == b'\n').map(|p| offset + p);
        let Some(end) = end else {
            // torn tail from an interrupted append
            log::warn!("{}: dropping incomplete final record", path.display());
            break;
        };
        let line = &bytes[offset..end];
        let parsed: Result<JournalLine, _> = serde_json::from_slice(line);
        match parsed {
            Ok(j) if j.key == j.record.key() => {
                let json = serde_json::to_string(&j.record).expect("record serializes");
                if let Some((_, prev)) = records.get(&j.key) {
                    if *prev != json {
                        return Err(StoreError::Conflict(j.key));
                    }
                }
                records.insert(j.key, (j.record, json));
            }
            Ok(j) => {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("key {} does not match its record", j.key),
                })
            }
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
        offset = end + 1;
        good_len = offset;
    }
    if good_len < bytes.len() {
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(good_len as u64).map_err(io_err(path))?;
    }
    Ok(records)
}

/// Reads the records of one segment kind from a finalized store.
pub fn read_segment(dir: &Path, kind: &str) -> Result<Vec<Record>, StoreError> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
        path: manifest_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let Some(seg) = manifest.segments.iter().find(|s| s.kind == kind) else {
        return Ok(Vec::new());
    };
    let path = dir.join("segments").join(&seg.file);
    let body = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    body.lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::Corrupt {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
