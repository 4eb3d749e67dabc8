//! Parse, synthesize and execute stages over worker pools, with a
//! resumable on-disk store.
//!
//! A central scheduler owns the task graph. Parse and synthesize tasks go
//! to the light pool, execute tasks to the heavy pool; workers pull from
//! bounded queues and send results back, and only the scheduler writes to
//! the store. Synthesize tasks appear when their parse result is stored,
//! execute tasks when their routine is, so a query that fails to parse
//! never produces downstream work.

mod store;

pub use store::{read_segment, Manifest, Record, ResultStore, SegmentRef, StoreError, StoreMeta, SEGMENTS, STORE_VERSION};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender, TrySendError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use crate::backend::PerceptionBackend;
use crate::model::{ErrorClass, QueryText, RankedList, Specification, Triplet, Verdict};
use crate::parser::parse_query_with_fallback;
use crate::ranking::{rank, score_images, IndeterminatePolicy, RankingError};
use crate::routine::RoutineEntry;
use crate::synth::{synthesize, PredicateLexicon};
use crate::vm::{execute_entry, VmConfig};

/// One line of a queries file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryInput {
    pub query_id: String,
    pub query: String,
}

/// Everything besides the inputs that determines stored results.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub vm: VmConfig,
    pub lexicon: PredicateLexicon,
    pub fallback_composite: bool,
    pub policy: IndeterminatePolicy,
    /// Extra attempts for a task whose worker panicked.
    pub max_retries: u32,
    /// Identifies the perception backend so stores from different backends
    /// never mix.
    pub backend_id: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            vm: VmConfig::default(),
            lexicon: PredicateLexicon::default(),
            fallback_composite: false,
            policy: IndeterminatePolicy::default(),
            max_retries: 2,
            backend_id: "oracle".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("no queries to run")]
    NoQueries,
    #[error("no images to run against")]
    NoImages,
    #[error("query id {0} appears twice")]
    DuplicateQuery(String),
    #[error("image id {0} appears twice")]
    DuplicateImage(String),
    #[error("invalid VM configuration: {0}")]
    InvalidConfig(String),
}

/// Validated run inputs and their hash.
#[derive(Debug, Clone)]
pub struct Plan {
    pub queries: Vec<QueryInput>,
    pub images: Vec<String>,
    pub config: PipelineConfig,
    pub hash: String,
    pub description: serde_json::Value,
}

/// Checks inputs and fixes the plan hash. Images are sorted so corpus
/// listing order does not matter.
pub fn plan(queries: Vec<QueryInput>, mut images: Vec<String>, config: PipelineConfig) -> Result<Plan, PlanError> {
    if queries.is_empty() {
        return Err(PlanError::NoQueries);
    }
    if images.is_empty() {
        return Err(PlanError::NoImages);
    }
    config.vm.validate().map_err(PlanError::InvalidConfig)?;
    let mut seen = HashSet::new();
    for q in &queries {
        if !seen.insert(q.query_id.as_str()) {
            return Err(PlanError::DuplicateQuery(q.query_id.clone()));
        }
    }
    images.sort();
    if let Some(w) = images.windows(2).find(|w| w[0] == w[1]) {
        return Err(PlanError::DuplicateImage(w[0].clone()));
    }
    let description = serde_json::json!({
        "version": STORE_VERSION,
        "queries": queries,
        "images": images,
        "vm": config.vm,
        "lexicon": config.lexicon.to_json(),
        "fallback_composite": config.fallback_composite,
        "policy": config.policy,
        "backend": config.backend_id,
    });
    let hash = hex::encode(Sha256::digest(description.to_string().as_bytes()));
    Ok(Plan {
        queries,
        images,
        config,
        hash,
        description,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pools {
    pub light: usize,
    pub heavy: usize,
}

impl Default for Pools {
    fn default() -> Self {
        Pools { light: 2, heavy: 4 }
    }
}

/// Stage of a task, as seen by fault hooks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Parse,
    Synthesize,
    Execute,
}

/// Panics the worker when it returns true for `(stage, key, attempt)`.
/// Lets tests exercise the retry path.
pub type FaultHook = Arc<dyn Fn(Stage, &str, u32) -> bool + Send + Sync>;

#[derive(Default)]
pub struct RunOptions<'a> {
    pub pools: Pools,
    /// Stop, as if killed, after this many store writes.
    pub stop_after: Option<usize>,
    pub fault: Option<FaultHook>,
    pub progress: Option<&'a mut dyn FnMut(&RunReport)>,
}

impl<'a> RunOptions<'a> {
    pub fn with_pools(light: usize, heavy: usize) -> Self {
        RunOptions {
            pools: Pools { light, heavy },
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub parsed: usize,
    pub parse_failed: usize,
    pub synthesized: usize,
    pub executed: usize,
    /// Tasks not run because the store already had their result.
    pub skipped: usize,
    pub retries: usize,
    /// Tasks that exhausted their retries.
    pub failed_tasks: usize,
    pub records_written: usize,
    pub wall_ms: u64,
    pub pools: Option<Pools>,
    pub completed: bool,
}

impl RunReport {
    pub fn tasks_run(&self) -> usize {
        self.parsed + self.parse_failed + self.synthesized + self.executed
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("ranking query {query_id}: {source}")]
    Ranking {
        query_id: String,
        #[source]
        source: RankingError,
    },
    #[error("run stopped after {writes} store writes")]
    Interrupted { writes: usize, report: RunReport },
}

/// Runs `plan` into a new store at `dir`.
pub fn run(
    plan: &Plan,
    backend: Arc<dyn PerceptionBackend + Sync>,
    dir: &Path,
    opts: RunOptions<'_>,
) -> Result<RunReport, PipelineError> {
    let store = ResultStore::create(dir, &plan.hash, plan.description.clone())?;
    drive(plan, store, backend, opts)
}

/// Continues an interrupted run. Only missing results are computed.
pub fn resume(
    plan: &Plan,
    backend: Arc<dyn PerceptionBackend + Sync>,
    dir: &Path,
    opts: RunOptions<'_>,
) -> Result<RunReport, PipelineError> {
    let store = ResultStore::open(dir, &plan.hash)?;
    drive(plan, store, backend, opts)
}

/// Truth-score ranking of `images` for one query's verdicts.
pub fn rank_query(
    spec: &Specification,
    images: &[String],
    verdicts: &[Verdict],
    policy: IndeterminatePolicy,
) -> Result<RankedList, RankingError> {
    let ids: Vec<u32> = spec.triplets.iter().map(|t| t.id).collect();
    let scores = score_images(verdicts, &ids, policy)?;
    rank(images, &scores)
}

enum Job {
    Parse(QueryInput),
    Synthesize { query_id: String, triplet: Triplet },
    Execute { query_id: String, routine: Arc<RoutineEntry>, image: String },
}

impl Job {
    fn stage(&self) -> Stage {
        match self {
            Job::Parse(_) => Stage::Parse,
            Job::Synthesize { .. } => Stage::Synthesize,
            Job::Execute { .. } => Stage::Execute,
        }
    }

    fn key(&self) -> String {
        match self {
            Job::Parse(q) => q.query_id.clone(),
            Job::Synthesize { query_id, triplet } => format!("{query_id}/{}", triplet.id),
            Job::Execute { query_id, routine, image } => format!("{query_id}/{}/{image}", routine.triplet_id()),
        }
    }
}

struct Task {
    id: usize,
    job: Arc<Job>,
    attempt: u32,
}

struct Done {
    task_id: usize,
    result: Result<Record, String>,
}

struct Ctx {
    config: PipelineConfig,
    backend: Arc<dyn PerceptionBackend + Sync>,
    fault: Option<FaultHook>,
}

fn perform(ctx: &Ctx, job: &Job) -> Record {
    match job {
        Job::Parse(q) => {
            let parsed = QueryText::new(q.query.clone())
                .map_err(|e| e.to_string())
                .and_then(|text| parse_query_with_fallback(&text, ctx.config.fallback_composite).map_err(|e| e.to_string()));
            match parsed {
                Ok(spec) => Record::Spec {
                    query_id: q.query_id.clone(),
                    spec,
                },
                Err(error) => Record::ParseFailure {
                    query_id: q.query_id.clone(),
                    error,
                },
            }
        }
        Job::Synthesize { query_id, triplet } => Record::Routine {
            query_id: query_id.clone(),
            triplet_id: triplet.id,
            routine: match synthesize(triplet, &ctx.config.lexicon) {
                Ok(p) => RoutineEntry::Program(p),
                Err(e) => RoutineEntry::degenerate(triplet.id, e.class(), e.reason),
            },
        },
        Job::Execute { query_id, routine, image } => Record::Verdict {
            query_id: query_id.clone(),
            verdict: execute_entry(routine, image, ctx.backend.as_ref(), &ctx.config.vm),
        },
    }
}

fn worker(ctx: Arc<Ctx>, tasks: Receiver<Task>, done: Sender<Done>) {
    for task in tasks {
        let result = catch_unwind(AssertUnwindSafe(|| {
            if let Some(hook) = &ctx.fault {
                if hook(task.job.stage(), &task.job.key(), task.attempt) {
                    panic!("injected fault");
                }
            }
            perform(&ctx, &task.job)
        }))
        .map_err(|p| {
            p.downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "worker panicked".into())
        });
        if done.send(Done { task_id: task.id, result }).is_err() {
            break;
        }
    }
}

/// Record standing in for a task that kept failing.
fn failure_record(job: &Job, message: &str) -> Record {
    match job {
        Job::Parse(q) => Record::ParseFailure {
            query_id: q.query_id.clone(),
            error: format!("parse task failed: {message}"),
        },
        Job::Synthesize { query_id, triplet } => Record::Routine {
            query_id: query_id.clone(),
            triplet_id: triplet.id,
            routine: RoutineEntry::degenerate(
                triplet.id,
                ErrorClass::BadRoutineGeneration,
                format!("synthesis task failed: {message}"),
            ),
        },
        Job::Execute { query_id, routine, image } => Record::Verdict {
            query_id: query_id.clone(),
            verdict: Verdict::indeterminate(
                image.clone(),
                routine.triplet_id(),
                ErrorClass::BackendFailure,
                format!("execute task failed: {message}"),
            ),
        },
    }
}

struct Scheduler<'p> {
    plan: &'p Plan,
    store: ResultStore,
    light: VecDeque<Task>,
    heavy: VecDeque<Task>,
    in_flight: BTreeMap<usize, Task>,
    next_id: usize,
    report: RunReport,
}

impl Scheduler<'_> {
    fn push(&mut self, job: Job) {
        let task = Task {
            id: self.next_id,
            job: Arc::new(job),
            attempt: 0,
        };
        self.next_id += 1;
        match task.job.stage() {
            Stage::Execute => self.heavy.push_back(task),
            _ => self.light.push_back(task),
        }
    }

    /// Queues the work that follows a stored record, skipping anything the
    /// store already holds.
    fn expand(&mut self, record: &Record) {
        match record {
            Record::Spec { query_id, spec } => {
                for t in &spec.triplets {
                    let key = format!("routine/{query_id}/{:08}", t.id);
                    if let Some(r) = self.store.get(&key).cloned() {
                        self.report.skipped += 1;
                        self.expand(&r);
                    } else {
                        self.push(Job::Synthesize {
                            query_id: query_id.clone(),
                            triplet: t.clone(),
                        });
                    }
                }
            }
            Record::Routine { query_id, routine, .. } => {
                let routine = Arc::new(routine.clone());
                for image in &self.plan.images {
                    let key = format!("verdict/{query_id}/{:08}/{image}", routine.triplet_id());
                    if self.store.contains(&key) {
                        self.report.skipped += 1;
                    } else {
                        self.push(Job::Execute {
                            query_id: query_id.clone(),
                            routine: routine.clone(),
                            image: image.clone(),
                        });
                    }
                }
            }
            _ => {}
        }
    }

    fn seed(&mut self) {
        for q in &self.plan.queries {
            match self.store.get(&format!("spec/{}", q.query_id)).cloned() {
                Some(r) => {
                    self.report.skipped += 1;
                    self.expand(&r);
                }
                None => self.push(Job::Parse(q.clone())),
            }
        }
    }

    fn record(&mut self, record: Record) -> Result<(), StoreError> {
        match &record {
            Record::Spec { .. } => self.report.parsed += 1,
            Record::ParseFailure { .. } => self.report.parse_failed += 1,
            Record::Routine { .. } => self.report.synthesized += 1,
            Record::Verdict { .. } => self.report.executed += 1,
            Record::Ranking { .. } => {}
        }
        if self.store.upsert(record.clone())? {
            self.report.records_written += 1;
        }
        self.expand(&record);
        Ok(())
    }

    fn finish_rankings(&mut self) -> Result<(), PipelineError> {
        for q in &self.plan.queries {
            let Some(Record::Spec { spec, .. }) = self.store.get(&format!("spec/{}", q.query_id)).cloned() else {
                continue;
            };
            let prefix = format!("verdict/{}/", q.query_id);
            let verdicts: Vec<Verdict> = self
                .store
                .records()
                .filter_map(|r| match r {
                    Record::Verdict { verdict, .. } if r.key().starts_with(&prefix) => Some(verdict.clone()),
                    _ => None,
                })
                .collect();
            let ranking = rank_query(&spec, &self.plan.images, &verdicts, self.plan.config.policy).map_err(|source| {
                PipelineError::Ranking {
                    query_id: q.query_id.clone(),
                    source,
                }
            })?;
            if self.store.upsert(Record::Ranking {
                query_id: q.query_id.clone(),
                ranking,
            })? {
                self.report.records_written += 1;
            }
        }
        Ok(())
    }
}

fn dispatch(queue: &mut VecDeque<Task>, tx: &Sender<Task>, in_flight: &mut BTreeMap<usize, Task>) {
    while let Some(task) = queue.pop_front() {
        let shadow = Task {
            id: task.id,
            job: task.job.clone(),
            attempt: task.attempt,
        };
        match tx.try_send(task) {
            Ok(()) => {
                in_flight.insert(shadow.id, shadow);
            }
            Err(TrySendError::Full(t)) | Err(TrySendError::Disconnected(t)) => {
                queue.push_front(t);
                break;
            }
        }
    }
}

fn drive(
    plan: &Plan,
    store: ResultStore,
    backend: Arc<dyn PerceptionBackend + Sync>,
    mut opts: RunOptions<'_>,
) -> Result<RunReport, PipelineError> {
    let started = Instant::now();
    let pools = Pools {
        light: opts.pools.light.max(1),
        heavy: opts.pools.heavy.max(1),
    };
    let ctx = Arc::new(Ctx {
        config: plan.config.clone(),
        backend,
        fault: opts.fault.clone(),
    });
    let (light_tx, light_rx) = bounded::<Task>(pools.light * 2);
    let (heavy_tx, heavy_rx) = bounded::<Task>(pools.heavy * 2);
    let (done_tx, done_rx) = unbounded::<Done>();

    let mut sched = Scheduler {
        plan,
        store,
        light: VecDeque::new(),
        heavy: VecDeque::new(),
        in_flight: BTreeMap::new(),
        next_id: 0,
        report: RunReport {
            pools: Some(pools),
            ..Default::default()
        },
    };
    sched.seed();

    let outcome = std::thread::scope(|scope| -> Result<(), PipelineError> {
        for (n, rx) in [(pools.light, &light_rx), (pools.heavy, &heavy_rx)] {
            for _ in 0..n {
                let (ctx, rx, done) = (ctx.clone(), rx.clone(), done_tx.clone());
                scope.spawn(move || worker(ctx, rx, done));
            }
        }
        drop(done_tx);
        let result = (|| {
            loop {
                if let Some(limit) = opts.stop_after {
                    if sched.store.writes() >= limit {
                        return Err(PipelineError::Interrupted {
                            writes: sched.store.writes(),
                            report: sched.report.clone(),
                        });
                    }
                }
                dispatch(&mut sched.light, &light_tx, &mut sched.in_flight);
                dispatch(&mut sched.heavy, &heavy_tx, &mut sched.in_flight);
                if sched.in_flight.is_empty() {
                    return Ok(());
                }
                let done = done_rx.recv().expect("workers outlive the scheduler loop");
                let task = sched.in_flight.remove(&done.task_id).expect("known task");
                match done.result {
                    Ok(record) => sched.record(record)?,
                    Err(msg) if task.attempt < plan.config.max_retries => {
                        log::warn!("{:?} task {} failed ({msg}); retrying", task.job.stage(), task.job.key());
                        sched.report.retries += 1;
                        let retry = Task {
                            attempt: task.attempt + 1,
                            ..task
                        };
                        match retry.job.stage() {
                            Stage::Execute => sched.heavy.push_front(retry),
                            _ => sched.light.push_front(retry),
                        }
                    }
                    Err(msg) => {
                        log::error!("{:?} task {} failed for good: {msg}", task.job.stage(), task.job.key());
                        sched.report.failed_tasks += 1;
                        sched.record(failure_record(&task.job, &msg))?;
                    }
                }
                if let Some(cb) = opts.progress.as_mut() {
                    cb(&sched.report);
                }
            }
        })();
        // closing the queues lets every worker exit; results still in
        // flight are discarded and recomputed on resume
        drop(light_tx);
        drop(heavy_tx);
        result
    });

    outcome?;
    sched.finish_rankings()?;
    sched.store.finalize()?;
    sched.report.completed = true;
    sched.report.wall_ms = started.elapsed().as_millis() as u64;
    Ok(sched.report)
}
