mod config;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use vismc::backend::{
    load_corpus, CacheMode, CachedBackend, MockServer, OracleBackend, PerceptionBackend, RemoteBackend, SceneCorpus,
};
use vismc::eval::{build_splits, evaluate, rank_of, EvalCase, SplitAssignment};
use vismc::io::{read_jsonl, read_text, to_jsonl, write_atomic};
use vismc::model::{Outcome, QueryText, RankedEntry, RankedList, Specification, TruthScore, Verdict};
use vismc::parser::{ingest_triplets, parse_query_with_fallback};
use vismc::pipeline::{self, read_segment, PipelineConfig, PipelineError, QueryInput, Record, RunOptions, StoreError};
use vismc::ranking::{outcome_summary, rerank, score_images, BaselineRanking, IndeterminatePolicy};
use vismc::routine::{ingest_routines, RoutineEntry};
use vismc::synth::{classify_predicate, estimate_state_count, synthesize_all, PredicateLexicon};
use vismc::vm::execute_entry;

use config::{pick, resolve_policy, BackendArgs, BackendKind, BackendSettings, CacheModeArg, FileConfig, VmArgs};

/// Exit 1 for bad input, 2 for failures while running.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser)]
#[command(name = "vismc", version, about = "Verify images against triplet specifications parsed from text queries")]
struct Cli {
    /// Config file with flat keys (default: ./vismc.toml when present).
    #[arg(long, global = true, env = "VISMC_CONFIG")]
    config: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a query into a triplet specification.
    Parse {
        #[arg(long)]
        query: String,
        /// On a grammar failure, fall back to one whole-query triplet.
        #[arg(long, env = "VISMC_FALLBACK_COMPOSITE")]
        fallback_composite: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compile a specification into routines.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Predicate lexicon overlay (JSON map predicate -> class).
        #[arg(long, env = "VISMC_LEXICON")]
        lexicon: Option<PathBuf>,
        /// Counts must match exactly instead of at least.
        #[arg(long, env = "VISMC_STRICT_COUNTING")]
        strict_counting: bool,
    },
    /// Run routines against every image of a corpus and print verdicts.
    Verify {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        routines: PathBuf,
        /// Directory of *.scene.json files.
        #[arg(long)]
        corpus: PathBuf,
        /// Restrict to these image ids (repeatable).
        #[arg(long = "image")]
        images: Vec<String>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        vm: VmArgs,
        /// Verdicts JSONL output.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Rank images by truth score.
    Rank {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long)]
        query_id: Option<String>,
        #[arg(long, env = "VISMC_POLICY")]
        policy: Option<IndeterminatePolicy>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Rerank the top K of a baseline list by rank weight times truth score.
    Rerank {
        /// JSONL of {"query_id", "ranking": [...]}.
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        verdicts: PathBuf,
        /// Specification the verdicts belong to; without it, triplet ids
        /// are taken from the verdicts.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Baseline line to use when the file holds several queries.
        #[arg(long)]
        query_id: Option<String>,
        #[arg(long, env = "VISMC_POLICY")]
        policy: Option<IndeterminatePolicy>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Parse, synthesize and verify a batch of queries into a result store.
    Run {
        /// JSONL of {"query_id", "query"}.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Store directory.
        #[arg(long, env = "VISMC_STORE")]
        store: Option<PathBuf>,
        #[arg(long, env = "VISMC_LIGHT")]
        light: Option<usize>,
        #[arg(long, env = "VISMC_HEAVY")]
        heavy: Option<usize>,
        #[arg(long, env = "VISMC_MAX_RETRIES")]
        max_retries: Option<u32>,
        /// Continue an interrupted run in the same store.
        #[arg(long)]
        resume: bool,
        #[arg(long, env = "VISMC_FALLBACK_COMPOSITE")]
        fallback_composite: bool,
        #[arg(long, env = "VISMC_LEXICON")]
        lexicon: Option<PathBuf>,
        #[arg(long, env = "VISMC_STRICT_COUNTING")]
        strict_counting: bool,
        #[arg(long, env = "VISMC_POLICY")]
        policy: Option<IndeterminatePolicy>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        vm: VmArgs,
        /// Abort after this many store writes, as if the process died.
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Recall@K tables over Easy/Hard splits.
    Eval {
        /// JSONL of {"query_id", "query", "ground_truth", "pool"}.
        #[arg(long)]
        cases: PathBuf,
        /// Comma-separated name=path pairs; a path is a rankings JSONL or a
        /// run store directory.
        #[arg(long, value_delimiter = ',')]
        systems: Vec<String>,
        /// `auto` to split by a baseline system, or a split file.
        #[arg(long, default_value = "auto")]
        splits: String,
        /// System whose ranks define the splits (default: `base`, else the first).
        #[arg(long)]
        split_by: Option<String>,
        #[arg(short, long, default_value = "report.json")]
        output: PathBuf,
    },
    /// Serve the detector protocol from a scene corpus.
    MockServer {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 8700)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 4)]
        threads: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vismc: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Parse {
            query,
            fallback_composite,
            output,
        } => cmd_parse(&query, fallback_composite || file.fallback_composite.unwrap_or(false), output.as_deref()),
        Command::Synth {
            spec,
            output,
            lexicon,
            strict_counting,
        } => {
            let lex = load_lexicon(lexicon.or(file.lexicon.clone()), strict_counting || file.strict_counting.unwrap_or(false))?;
            cmd_synth(&spec, output.as_deref(), &lex)
        }
        Command::Verify {
            spec,
            routines,
            corpus,
            images,
            backend,
            vm,
            output,
        } => {
            let settings = backend.resolve(&file)?;
            let vm = vm.resolve(&file)?;
            cmd_verify(&spec, &routines, &corpus, &images, &settings, &vm, output.as_deref())
        }
        Command::Rank {
            spec,
            verdicts,
            query_id,
            policy,
            output,
        } => cmd_rank(&spec, &verdicts, query_id, resolve_policy(policy, &file)?, output.as_deref()),
        Command::Rerank {
            baseline,
            k,
            verdicts,
            spec,
            query_id,
            policy,
            output,
        } => cmd_rerank(
            &baseline,
            k,
            &verdicts,
            spec.as_deref(),
            query_id.as_deref(),
            resolve_policy(policy, &file)?,
            output.as_deref(),
        ),
        Command::Run {
            queries,
            corpus,
            store,
            light,
            heavy,
            max_retries,
            resume,
            fallback_composite,
            lexicon,
            strict_counting,
            policy,
            backend,
            vm,
            stop_after,
        } => {
            let lex = load_lexicon(lexicon.or(file.lexicon.clone()), strict_counting || file.strict_counting.unwrap_or(false))?;
            let settings = backend.resolve(&file)?;
            let config = PipelineConfig {
                vm: vm.resolve(&file)?,
                lexicon: lex,
                fallback_composite: fallback_composite || file.fallback_composite.unwrap_or(false),
                policy: resolve_policy(policy, &file)?,
                max_retries: pick(max_retries, file.max_retries, 2),
                backend_id: backend_id(&settings),
            };
            let args = RunArgs {
                queries,
                corpus,
                store: pick(store, file.store.clone(), PathBuf::from("vismc-store")),
                light: pick(light, file.light, 2),
                heavy: pick(heavy, file.heavy, 4),
                resume,
                stop_after,
            };
            cmd_run(&args, config, &settings)
        }
        Command::Eval {
            cases,
            systems,
            splits,
            split_by,
            output,
        } => cmd_eval(&cases, &systems, &splits, split_by.as_deref(), &output),
        Command::MockServer {
            corpus,
            port,
            host,
            threads,
        } => cmd_mock_server(&corpus, &host, port, threads),
    }
}

fn load_lexicon(path: Option<PathBuf>, strict: bool) -> Result<PredicateLexicon, CliError> {
    let lex = match path {
        Some(p) => PredicateLexicon::load(&p).map_err(input)?,
        None => PredicateLexicon::default(),
    };
    Ok(if strict { lex.with_strict_counting(true) } else { lex })
}

/// Writes to `path` atomically, or to standard output.
fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()).map_err(|e| CliError::Runtime(format!("writing {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(runtime)
        }
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

fn cmd_parse(query: &str, fallback: bool, output: Option<&Path>) -> Result<(), CliError> {
    let q = QueryText::new(query).map_err(input)?;
    let spec = parse_query_with_fallback(&q, fallback).map_err(|e| CliError::Input(format!("cannot parse {query:?}: {e}")))?;
    emit(output, &pretty(&spec))
}

fn read_spec(path: &Path) -> Result<Specification, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    ingest_triplets(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn cmd_synth(spec_path: &Path, output: Option<&Path>, lex: &PredicateLexicon) -> Result<(), CliError> {
    let spec = read_spec(spec_path)?;
    let entries = synthesize_all(&spec, lex);
    for (t, e) in spec.triplets.iter().zip(&entries) {
        match e {
            RoutineEntry::Program(p) => eprintln!(
                "triplet {} {t}: {}, {} instructions",
                t.id,
                classify_predicate(t, lex),
                p.instructions.len()
            ),
            RoutineEntry::Degenerate(d) => eprintln!("triplet {} {t}: {}: {}", t.id, d.error.class, d.error.message),
        }
    }
    let states = estimate_state_count(&spec);
    eprintln!(
        "{} routines checked independently ({} subgraph states if checked jointly)",
        states.triplet_local, states.cartesian
    );
    emit(output, &pretty(&entries))
}

fn read_corpus(dir: &Path) -> Result<SceneCorpus, CliError> {
    load_corpus(dir).map_err(input)
}

fn backend_id(s: &BackendSettings) -> String {
    match s.kind {
        BackendKind::Oracle => "oracle".into(),
        BackendKind::Remote => format!("remote:{}", s.remote.endpoint),
    }
}

fn build_backend(settings: &BackendSettings, corpus: &SceneCorpus) -> Result<Arc<dyn PerceptionBackend + Sync>, CliError> {
    let inner: Box<dyn PerceptionBackend + Sync> = match settings.kind {
        BackendKind::Oracle => Box::new(OracleBackend::new(corpus.clone())),
        BackendKind::Remote => Box::new(RemoteBackend::new(settings.remote.clone())),
    };
    Ok(match &settings.cache {
        None => Arc::from(inner),
        Some(path) => {
            let (mode, inner) = match settings.cache_mode {
                CacheModeArg::ReadWrite => (CacheMode::ReadWrite, Some(inner)),
                CacheModeArg::Replay => (CacheMode::Replay, None),
            };
            Arc::new(CachedBackend::open(path.clone(), mode, inner).map_err(input)?)
        }
    })
}

/// One routine per triplet, in triplet order.
fn match_routines(spec: &Specification, entries: Vec<RoutineEntry>) -> Result<Vec<RoutineEntry>, CliError> {
    let mut by_id: BTreeMap<u32, RoutineEntry> = BTreeMap::new();
    for e in entries {
        let id = e.triplet_id();
        if by_id.insert(id, e).is_some() {
            return Err(CliError::Input(format!("two routines for triplet {id}")));
        }
    }
    let out = spec
        .triplets
        .iter()
        .map(|t| by_id.remove(&t.id).ok_or_else(|| CliError::Input(format!("no routine for triplet {}", t.id))))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(extra) = by_id.keys().next() {
        return Err(CliError::Input(format!("routine for triplet {extra}, which the specification lacks")));
    }
    Ok(out)
}

fn cmd_verify(
    spec_path: &Path,
    routines_path: &Path,
    corpus_dir: &Path,
    only: &[String],
    settings: &BackendSettings,
    vm: &vismc::vm::VmConfig,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let spec = read_spec(spec_path)?;
    let bytes = std::fs::read(routines_path).map_err(|e| CliError::Input(format!("{}: {e}", routines_path.display())))?;
    let entries = ingest_routines(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", routines_path.display())))?;
    let routines = match_routines(&spec, entries)?;
    let corpus = read_corpus(corpus_dir)?;
    let images: Vec<String> = if only.is_empty() {
        corpus.image_ids()
    } else {
        for id in only {
            if corpus.get(id).is_none() {
                return Err(CliError::Input(format!("image {id} is not in {}", corpus_dir.display())));
            }
        }
        only.to_vec()
    };
    let backend = build_backend(settings, &corpus)?;
    let mut verdicts = Vec::new();
    let mut table = String::new();
    table.push_str(&format!("{:<24} {:>7}  {:<14} {}\n", "image", "triplet", "outcome", "error"));
    let mut counterexamples = Vec::new();
    for image in &images {
        for (t, r) in spec.triplets.iter().zip(&routines) {
            let v = execute_entry(r, image, backend.as_ref(), vm);
            let err = v.error_class.map(|c| c.to_string()).unwrap_or_default();
            table.push_str(&format!("{:<24} {:>7}  {:<14} {}\n", image, t.id, v.outcome.to_string(), err));
            if v.outcome == Outcome::Violated {
                counterexamples.push(format!(
                    "visual counterexample to the specification in {image}: triplet {} {t} is violated",
                    t.id
                ));
            }
            verdicts.push(v);
        }
    }
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(table.as_bytes());
    for c in &counterexamples {
        let _ = writeln!(out, "{c}");
    }
    if let Some(p) = output {
        emit(Some(p), &to_jsonl(&verdicts))?;
    }
    Ok(())
}

fn read_verdicts(path: &Path) -> Result<Vec<Verdict>, CliError> {
    read_jsonl(path).map_err(input)
}

#[derive(Serialize)]
struct RankRow<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    query_id: Option<&'a str>,
    rank: usize,
    image: &'a str,
    truth_score: TruthScore,
    #[serde(skip_serializing_if = "Option::is_none")]
    rerank_score: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_rank: Option<usize>,
    evidence_items: usize,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    outside_top_k: bool,
    outcomes: BTreeMap<u32, Outcome>,
}

fn outcomes_by_image(verdicts: &[Verdict]) -> BTreeMap<String, BTreeMap<u32, Outcome>> {
    let mut grouped: BTreeMap<String, Vec<Verdict>> = BTreeMap::new();
    for v in verdicts {
        grouped.entry(v.image_id.clone()).or_default().push(v.clone());
    }
    grouped.into_iter().map(|(k, vs)| (k, outcome_summary(&vs))).collect()
}

fn rows_for<'a>(list: &'a RankedList, query_id: Option<&'a str>, outcomes: &BTreeMap<String, BTreeMap<u32, Outcome>>) -> Vec<RankRow<'a>> {
    list.entries
        .iter()
        .enumerate()
        .map(|(i, e)| RankRow {
            query_id,
            rank: i + 1,
            image: &e.image_id,
            truth_score: e.truth_score,
            rerank_score: e.rerank_score.map(|r| r.to_string()),
            baseline_rank: e.baseline_rank,
            evidence_items: e.evidence_items,
            outside_top_k: false,
            outcomes: outcomes.get(&e.image_id).cloned().unwrap_or_default(),
        })
        .collect()
}

fn cmd_rank(
    spec_path: &Path,
    verdicts_path: &Path,
    query_id: Option<String>,
    policy: IndeterminatePolicy,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let spec = read_spec(spec_path)?;
    let verdicts = read_verdicts(verdicts_path)?;
    let images: Vec<String> = verdicts.iter().map(|v| v.image_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let ranked = pipeline::rank_query(&spec, &images, &verdicts, policy).map_err(input)?;
    let outcomes = outcomes_by_image(&verdicts);
    emit(output, &to_jsonl(&rows_for(&ranked, query_id.as_deref(), &outcomes)))
}

fn cmd_rerank(
    baseline_path: &Path,
    k: usize,
    verdicts_path: &Path,
    spec_path: Option<&Path>,
    query_id: Option<&str>,
    policy: IndeterminatePolicy,
    output: Option<&Path>,
) -> Result<(), CliError> {
    if k == 0 {
        return Err(CliError::Input("--k must be at least 1".into()));
    }
    let baselines: Vec<BaselineRanking> = read_jsonl(baseline_path).map_err(input)?;
    let base = match (query_id, baselines.len()) {
        (Some(q), _) => baselines
            .iter()
            .find(|b| b.query_id == q)
            .ok_or_else(|| CliError::Input(format!("{}: no ranking for query {q}", baseline_path.display())))?,
        (None, 1) => &baselines[0],
        (None, 0) => return Err(CliError::Input(format!("{}: empty baseline file", baseline_path.display()))),
        (None, n) => {
            return Err(CliError::Input(format!(
                "{}: {n} queries; choose one with --query-id",
                baseline_path.display()
            )))
        }
    };
    let verdicts = read_verdicts(verdicts_path)?;
    let triplet_ids: Vec<u32> = match spec_path {
        Some(p) => read_spec(p)?.triplets.iter().map(|t| t.id).collect(),
        None => verdicts.iter().map(|v| v.triplet_id).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let scores = score_images(&verdicts, &triplet_ids, policy).map_err(input)?;
    let (top, rest) = base.top_k(k);
    let ranked = rerank(&top, &scores).map_err(input)?;
    let outcomes = outcomes_by_image(&verdicts);
    let mut rows = rows_for(&ranked, Some(&base.query_id), &outcomes);
    let offset = rows.len();
    for (i, img) in rest.iter().enumerate() {
        let s = scores.get(img);
        rows.push(RankRow {
            query_id: Some(&base.query_id),
            rank: offset + i + 1,
            image: img,
            truth_score: s.map_or_else(|| TruthScore::zero(triplet_ids.len() as u32), |s| s.score),
            rerank_score: None,
            baseline_rank: Some(offset + i),
            evidence_items: s.map_or(0, |s| s.evidence_items),
            outside_top_k: true,
            outcomes: outcomes.get(img).cloned().unwrap_or_default(),
        });
    }
    if !rest.is_empty() {
        eprintln!("{} image(s) below the top {k} kept their baseline order", rest.len());
    }
    emit(output, &to_jsonl(&rows))
}

struct RunArgs {
    queries: PathBuf,
    corpus: PathBuf,
    store: PathBuf,
    light: usize,
    heavy: usize,
    resume: bool,
    stop_after: Option<usize>,
}

fn cmd_run(args: &RunArgs, config: PipelineConfig, settings: &BackendSettings) -> Result<(), CliError> {
    let queries: Vec<QueryInput> = read_jsonl(&args.queries).map_err(input)?;
    let corpus = read_corpus(&args.corpus)?;
    let backend = build_backend(settings, &corpus)?;
    let merged = json!({
        "queries": args.queries,
        "corpus": args.corpus,
        "store": args.store,
        "light": args.light,
        "heavy": args.heavy,
        "resume": args.resume,
        "max_retries": config.max_retries,
        "fallback_composite": config.fallback_composite,
        "policy": config.policy,
        "vm": config.vm,
        "lexicon": serde_json::from_str::<serde_json::Value>(&config.lexicon.to_json()).expect("lexicon json"),
        "backend": settings,
    });
    let plan = pipeline::plan(queries, corpus.image_ids(), config).map_err(input)?;
    let mut opts = RunOptions::with_pools(args.light, args.heavy);
    opts.stop_after = args.stop_after;
    let result = if args.resume {
        pipeline::resume(&plan, backend, &args.store, opts)
    } else {
        pipeline::run(&plan, backend, &args.store, opts)
    };
    let report = match result {
        Ok(r) => r,
        Err(PipelineError::Store(
            e @ (StoreError::AlreadyExists(_) | StoreError::Missing(_) | StoreError::PlanMismatch { .. }),
        )) => return Err(input(e)),
        Err(e) => return Err(runtime(e)),
    };
    let manifest = json!({ "plan_hash": plan.hash, "config": merged, "report": report });
    let path = args.store.join("run.json");
    write_atomic(&path, pretty(&manifest).as_bytes()).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    println!(
        "parsed {} (failed {}), synthesized {}, executed {}, skipped {}, retries {}, failed tasks {}",
        report.parsed,
        report.parse_failed,
        report.synthesized,
        report.executed,
        report.skipped,
        report.retries,
        report.failed_tasks
    );
    println!("store: {}", args.store.display());
    Ok(())
}

/// Per-query image order from a rankings JSONL file or a run store.
fn load_system(path: &Path) -> Result<BTreeMap<String, RankedList>, CliError> {
    if path.is_dir() {
        let records = read_segment(path, "rankings").map_err(input)?;
        return Ok(records
            .into_iter()
            .filter_map(|r| match r {
                Record::Ranking { query_id, ranking } => Some((query_id, ranking)),
                _ => None,
            })
            .collect());
    }
    let lines: Vec<serde_json::Value> = read_jsonl(path).map_err(input)?;
    let mut rows: BTreeMap<String, Vec<(u64, String)>> = BTreeMap::new();
    for (n, line) in lines.iter().enumerate() {
        let bad = |why: &str| CliError::Input(format!("{}:{}: {why}", path.display(), n + 1));
        let qid = line["query_id"].as_str().ok_or_else(|| bad("missing query_id"))?.to_string();
        if let Some(list) = line["ranking"].as_array() {
            let ids = list.iter().map(|v| v.as_str().map(str::to_string)).collect::<Option<Vec<_>>>();
            let ids = ids.ok_or_else(|| bad("ranking must be a list of image ids"))?;
            rows.entry(qid).or_default().extend(ids.into_iter().enumerate().map(|(i, id)| (i as u64, id)));
        } else {
            let image = line["image"].as_str().ok_or_else(|| bad("need either ranking or image"))?;
            let rank = line["rank"].as_u64().ok_or_else(|| bad("row without rank"))?;
            rows.entry(qid).or_default().push((rank, image.to_string()));
        }
    }
    Ok(rows
        .into_iter()
        .map(|(q, mut r)| {
            r.sort();
            let entries = r
                .into_iter()
                .map(|(_, image_id)| RankedEntry {
                    image_id,
                    truth_score: TruthScore::zero(1),
                    rerank_score: None,
                    baseline_rank: None,
                    evidence_items: 0,
                })
                .collect();
            (q, RankedList { entries })
        })
        .collect())
}

fn cmd_eval(cases_path: &Path, systems: &[String], splits: &str, split_by: Option<&str>, output: &Path) -> Result<(), CliError> {
    let cases: Vec<EvalCase> = read_jsonl(cases_path).map_err(input)?;
    for c in &cases {
        c.validate().map_err(input)?;
    }
    if systems.is_empty() {
        return Err(CliError::Input("--systems needs at least one name=path pair".into()));
    }
    let mut order = Vec::new();
    let mut loaded = BTreeMap::new();
    for spec in systems {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("--systems entry {spec:?} is not name=path")))?;
        order.push(name.to_string());
        loaded.insert(name.to_string(), load_system(Path::new(path))?);
    }
    let (assignment, source) = if splits == "auto" {
        let by = split_by
            .map(str::to_string)
            .or_else(|| order.iter().find(|n| *n == "base").cloned())
            .or_else(|| order.first().cloned())
            .ok_or_else(|| CliError::Input("no systems given".into()))?;
        let lists = loaded
            .get(&by)
            .ok_or_else(|| CliError::Input(format!("--split-by names unknown system {by}")))?;
        let ranks: BTreeMap<String, usize> = cases
            .iter()
            .filter_map(|c| {
                let r = lists.get(&c.query_id).and_then(|l| rank_of(l, &c.ground_truth))?;
                Some((c.query_id.clone(), r))
            })
            .collect();
        (build_splits(&cases, &ranks).map_err(input)?, format!("auto:{by}"))
    } else {
        let text = read_text(Path::new(splits)).map_err(input)?;
        let mut doc: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{splits}: {e}")))?;
        // a previous report.json carries the assignment under "splits"
        if let Some(inner) = doc.get_mut("splits") {
            doc = inner.take();
        }
        let a: SplitAssignment = serde_json::from_value(doc).map_err(|e| CliError::Input(format!("{splits}: {e}")))?;
        (a, splits.to_string())
    };
    let table = evaluate(&cases, &loaded, &assignment).map_err(input)?;
    print!("{}", table.to_text());
    println!("({})", table.note);
    let report = json!({ "splits_source": source, "splits": assignment, "table": table });
    emit(Some(output), &pretty(&report))
}

fn cmd_mock_server(corpus_dir: &Path, host: &str, port: u16, threads: usize) -> Result<(), CliError> {
    let corpus = read_corpus(corpus_dir)?;
    let n = corpus.len();
    let server = MockServer::start(corpus, &format!("{host}:{port}"), threads).map_err(runtime)?;
    println!("serving {n} scenes at {}{}", server.url(), vismc::backend::wire::PATH);
    let _ = std::io::stdout().flush();
    server.join();
    Ok(())
}
