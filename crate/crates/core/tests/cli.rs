mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::fixtures;

fn ila(args: &[&str]) -> Output {
    Command::new(common::ila_bin()).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ingest(out: &Path) {
    let docs = fixtures().join("docs");
    let types = fixtures().join("types.json");
    let o = ila(&["ingest", "--docs", p(&docs), "--out", p(out), "--type-manifest", p(&types), "--type-heuristic"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("sections: 105"));
    assert!(text.contains("chunks: 86"));
    assert!(text.contains("type entries: 5"));
}

fn run_mini(index: &Path, out: &Path, mode: &str, script: &str) -> Output {
    let f = fixtures();
    ila(&[
        "run",
        "--mode",
        mode,
        "--problems",
        p(&f.join("mini.jsonl")),
        "--index-dir",
        p(index),
        "--toolchain",
        p(&f.join("toolchain.toml")),
        "--script",
        p(&f.join("scripts").join(script)),
        "--out",
        p(out),
    ])
}

fn overall(out: &Path) -> (f64, f64) {
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    (report["overall"]["acc"].as_f64().unwrap(), report["overall"]["cr"].as_f64().unwrap())
}

#[test]
fn ingest_run_replay_analyze() {
    let tmp = tempfile::tempdir().unwrap();
    let index = tmp.path().join("index");
    ingest(&index);
    for f in ["store.json", "index.json", "types.json"] {
        assert!(index.join(f).is_file());
    }

    let zs = tmp.path().join("zs");
    let o = run_mini(&index, &zs, "zero-shot", "zero_shot_mini.json");
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("all             4         2         4    50.00   100.00"), "{}", stdout(&o));
    assert_eq!(overall(&zs), (50.0, 100.0));

    let ag = tmp.path().join("ag");
    let o = run_mini(&index, &ag, "ila-agent", "agent_mini.json");
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(overall(&ag), (75.0, 100.0));
    for f in ["report.json", "report.txt", "trajectories.jsonl", "run_meta.json"] {
        assert!(ag.join(f).is_file(), "{f}");
    }

    let f = fixtures();
    let log = ag.join("trajectories.jsonl");
    let o = ila(&[
        "replay",
        "--log",
        p(&log),
        "--problems",
        p(&f.join("mini.jsonl")),
        "--index-dir",
        p(&index),
        "--toolchain",
        p(&f.join("toolchain.toml")),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("replayed 4 trajectories, 9 steps, 0 mismatches"), "{}", stdout(&o));

    let tampered = tmp.path().join("tampered.jsonl");
    let text = std::fs::read_to_string(&log).unwrap().replacen("\"text\":\"", "\"text\":\"X", 1);
    std::fs::write(&tampered, text).unwrap();
    let o = ila(&[
        "replay",
        "--log",
        p(&tampered),
        "--problems",
        p(&f.join("mini.jsonl")),
        "--index-dir",
        p(&index),
        "--toolchain",
        p(&f.join("toolchain.toml")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("1 mismatches"), "{}", stdout(&o));

    let an = tmp.path().join("an");
    let o = ila(&["analyze", "--log", p(&log), "--out", p(&an)]);
    assert_eq!(o.status.code(), Some(0));
    for f in ["stage_profile.csv", "transitions.csv", "stage_profile.svg", "transitions.svg"] {
        assert!(an.join(f).is_file(), "{f}");
    }
    let o = ila(&["analyze", "--log", p(&log), "--out", p(&an), "--stages", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = ila(&["analyze", "--log", p(&log), "--out", p(&an), "--labels", "Submit,Submit"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_from_config_file_with_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let index = tmp.path().join("index");
    ingest(&index);
    let f = fixtures();
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "mode = \"single-rag\"\nproblems = {:?}\nindex_dir = \"index\"\ntoolchain = {:?}\nout = \"out\"\nscript = {:?}\nparallelism = 2\n",
            p(&f.join("mini.jsonl")),
            p(&f.join("toolchain.toml")),
            p(&f.join("scripts/single_rag_mini.json")),
        ),
    )
    .unwrap();
    let o = ila(&["run", "--config", p(&config)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(overall(&tmp.path().join("out")), (50.0, 100.0));

    let zs_script = f.join("scripts/zero_shot_mini.json");
    let o = ila(&[
        "run",
        "--config",
        p(&config),
        "--mode",
        "zero-shot",
        "--script",
        p(&zs_script),
        "--out",
        p(&tmp.path().join("zs")),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("zs/run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["run"]["mode"], "zero-shot");
}

#[test]
fn provider_errors_make_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let script = tmp.path().join("empty.json");
    std::fs::write(&script, "{}").unwrap();
    let f = fixtures();
    let o = ila(&[
        "run",
        "--mode",
        "zero-shot",
        "--problems",
        p(&f.join("mini.jsonl")),
        "--toolchain",
        p(&f.join("toolchain.toml")),
        "--script",
        p(&script),
        "--out",
        p(&tmp.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("provider errors: 4"));
    assert_eq!(overall(&tmp.path().join("out")), (0.0, 0.0));
}

#[test]
fn configuration_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fixtures();
    let o = ila(&["ingest", "--docs", p(tmp.path()), "--out", p(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    let missing = tmp.path().join("nope.json");
    let o = ila(&[
        "ingest",
        "--docs",
        p(&f.join("docs")),
        "--out",
        p(&tmp.path().join("x")),
        "--type-manifest",
        p(&missing),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifest"));
    let o = ila(&[
        "run",
        "--mode",
        "ila-agent",
        "--problems",
        p(&f.join("mini.jsonl")),
        "--toolchain",
        p(&f.join("toolchain.toml")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = ila(&["run", "--mode", "best-mode"]);
    assert_eq!(o.status.code(), Some(2));
    let o = ila(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stats_reports_corpus_shape() {
    let f = fixtures();
    let o = ila(&["stats", "--problems", p(&f.join("problems")), "--toolchain", p(&f.join("toolchain.toml"))]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("12"), "{text}");
    assert!(text.contains("repair"));
    let o = ila(&["stats", "--problems", p(&f.join("problems")), "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["problems"], 12);
}
