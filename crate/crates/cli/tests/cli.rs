use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vismc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vismc"))
        .current_dir(dir)
        .env_remove("VISMC_POLICY")
        .env_remove("VISMC_NEAR_FRAC")
        .args(args)
        .output()
        .expect("spawn vismc")
}

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn parse_prints_one_triplet() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vismc(tmp.path(), &["parse", "--query", "man riding horse"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let spec: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let triplets = spec["triplets"].as_array().unwrap();
    assert_eq!(triplets.len(), 1);
    assert_eq!(triplets[0]["s"]["head"], "man");
    assert_eq!(triplets[0]["p"], "riding");
    assert_eq!(triplets[0]["o"]["head"], "horse");
}

#[test]
fn unparseable_query_is_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vismc(tmp.path(), &["parse", "--query", "the of"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_cases_file_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vismc(tmp.path(), &["eval", "--cases", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing.jsonl"), "{}", stderr(&out));
}

#[test]
fn bad_flag_exits_one_and_help_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(vismc(tmp.path(), &["rank", "--nope"]).status.code(), Some(1));
    assert_eq!(vismc(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn parse_synth_verify_rank_rerank() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let scenes = corpus().join("scenes");
    let ok = |o: Output| {
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        o
    };
    ok(vismc(d, &["parse", "--query", "a cup next to a plate", "-o", "spec.json"]));
    let synth = ok(vismc(d, &["synth", "--spec", "spec.json", "-o", "routines.json"]));
    assert!(stderr(&synth).contains("1 routines"));
    let verify = ok(vismc(
        d,
        &["verify", "--spec", "spec.json", "--routines", "routines.json", "--corpus", path_str(&scenes), "-o", "v.jsonl"],
    ));
    let table = String::from_utf8(verify.stdout).unwrap();
    assert!(table.contains("visual counterexample to the specification in s01-riding"));
    assert_eq!(std::fs::read_to_string(d.join("v.jsonl")).unwrap().lines().count(), 24);

    let rank = ok(vismc(d, &["rank", "--spec", "spec.json", "--verdicts", "v.jsonl"]));
    let rows: Vec<serde_json::Value> = String::from_utf8(rank.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 24);
    assert_eq!(rows[0]["truth_score"]["satisfied"], 1);
    assert_eq!(rows[1]["truth_score"]["satisfied"], 1);
    assert_eq!(rows[2]["truth_score"]["satisfied"], 0);

    std::fs::write(
        d.join("base.jsonl"),
        "{\"query_id\":\"q\",\"ranking\":[\"s01-riding\",\"s02-stable\",\"s22-breakfast\",\"s21-cafe\"]}\n",
    )
    .unwrap();
    ok(vismc(
        d,
        &["rerank", "--baseline", "base.jsonl", "--k", "3", "--verdicts", "v.jsonl", "--spec", "spec.json", "-o", "rr.jsonl"],
    ));
    let rows: Vec<serde_json::Value> = std::fs::read_to_string(d.join("rr.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let order: Vec<&str> = rows.iter().map(|r| r["image"].as_str().unwrap()).collect();
    assert_eq!(order, ["s22-breakfast", "s01-riding", "s02-stable", "s21-cafe"]);
    // K=3, baseline index 2, one satisfied triplet: (3 - 2) * 1.
    assert_eq!(rows[0]["rerank_score"], "1");
    assert_eq!(rows[3]["outside_top_k"], true);
}

fn run_args<'a>(store: &'a str, queries: &'a str, scenes: &'a str) -> Vec<&'a str> {
    vec!["run", "--queries", queries, "--corpus", scenes, "--store", store]
}

#[test]
fn interrupted_run_resumes_to_the_same_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let queries = corpus().join("queries.jsonl");
    let scenes = corpus().join("scenes");
    let (q, s) = (path_str(&queries), path_str(&scenes));

    let fresh = vismc(d, &run_args("fresh", q, s));
    assert_eq!(fresh.status.code(), Some(0), "{}", stderr(&fresh));

    let mut cut = run_args("cut", q, s);
    cut.extend(["--stop-after", "97", "--light", "1", "--heavy", "3"]);
    assert_eq!(vismc(d, &cut).status.code(), Some(2));
    assert!(!d.join("cut/manifest.json").exists());

    let mut again = run_args("cut", q, s);
    again.push("--resume");
    let resumed = vismc(d, &again);
    assert_eq!(resumed.status.code(), Some(0), "{}", stderr(&resumed));

    let a = std::fs::read(d.join("fresh/manifest.json")).unwrap();
    let b = std::fs::read(d.join("cut/manifest.json")).unwrap();
    assert_eq!(a, b);

    // Rerunning into an existing store without --resume is refused.
    assert_eq!(vismc(d, &run_args("fresh", q, s)).status.code(), Some(1));

    let eval = vismc(
        d,
        &[
            "eval",
            "--cases",
            path_str(&corpus().join("cases.jsonl")),
            "--systems",
            &format!("base={},ours=fresh", path_str(&corpus().join("baseline.jsonl"))),
            "-o",
            "report.json",
        ],
    );
    assert_eq!(eval.status.code(), Some(0), "{}", stderr(&eval));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
    let rows = report["table"]["rows"].as_array().unwrap();
    let all_ours = rows.iter().find(|r| r["system"] == "ours" && r["split"] == "all").unwrap();
    assert_eq!(all_ours["cases"], 18);
    assert_eq!(report["splits_source"], "auto:base");
}

#[test]
fn config_precedence_defaults_file_env_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let queries = corpus().join("queries.jsonl");
    let scenes = corpus().join("scenes");
    let (q, s) = (path_str(&queries), path_str(&scenes));
    let near = |store: &str| -> f64 {
        let run: serde_json::Value =
            serde_json::from_slice(&std::fs::read(d.join(store).join("run.json")).unwrap()).unwrap();
        run["config"]["vm"]["near_frac"].as_f64().unwrap()
    };

    assert!(vismc(d, &run_args("a", q, s)).status.success());
    assert_eq!(near("a"), 0.25);

    std::fs::write(d.join("vismc.toml"), "near_frac = 0.3\nlight = 1\n").unwrap();
    assert!(vismc(d, &run_args("b", q, s)).status.success());
    assert_eq!(near("b"), 0.3);

    let env_run = Command::new(env!("CARGO_BIN_EXE_vismc"))
        .current_dir(d)
        .env("VISMC_NEAR_FRAC", "0.35")
        .args(run_args("c", q, s))
        .output()
        .unwrap();
    assert!(env_run.status.success(), "{}", stderr(&env_run));
    assert_eq!(near("c"), 0.35);

    let flag_run = Command::new(env!("CARGO_BIN_EXE_vismc"))
        .current_dir(d)
        .env("VISMC_NEAR_FRAC", "0.35")
        .args(run_args("e", q, s))
        .args(["--near-frac", "0.4"])
        .output()
        .unwrap();
    assert!(flag_run.status.success(), "{}", stderr(&flag_run));
    assert_eq!(near("e"), 0.4);

    std::fs::write(d.join("vismc.toml"), "near_fraction = 0.3\n").unwrap();
    let bad = vismc(d, &run_args("f", q, s));
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("near_fraction"), "{}", stderr(&bad));
}
