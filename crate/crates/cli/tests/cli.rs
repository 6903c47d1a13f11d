use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn symop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symop")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = symop(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    symop(args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small corpus and a bundle trained on it, shared by the tests.
fn workspace() -> &'static (tempfile::TempDir, PathBuf, PathBuf) {
    static CELL: OnceLock<(tempfile::TempDir, PathBuf, PathBuf)> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("demos.jsonl");
        let bundle = dir.path().join("model.json");
        ok(&["gen-data", "--seed", "4", "--sequences", "300", "--dim", "8", "--out", s(&corpus)]);
        let out = ok(&["train", "--corpus", s(&corpus), "--epochs", "80", "--seed", "4", "--out", s(&bundle)]);
        assert!(out.contains("<- selected"), "{out}");
        (dir, corpus, bundle)
    })
}

#[test]
fn generation_and_training_are_reproducible() {
    let (dir, corpus, bundle) = workspace();
    let corpus2 = dir.path().join("again.jsonl");
    let bundle2 = dir.path().join("again.json");
    ok(&["gen-data", "--seed", "4", "--sequences", "300", "--dim", "8", "--out", s(&corpus2)]);
    assert_eq!(fs::read(corpus).unwrap(), fs::read(&corpus2).unwrap());
    ok(&["train", "--corpus", s(&corpus2), "--epochs", "80", "--seed", "4", "--out", s(&bundle2)]);
    assert_eq!(fs::read(bundle).unwrap(), fs::read(&bundle2).unwrap());
    let b: Value = serde_json::from_slice(&fs::read(bundle).unwrap()).unwrap();
    assert_eq!(b["format_version"], "1.0");
    assert_eq!(b["provenance"]["corpus_seed"], 4);
    assert_eq!(b["encoder"]["input_dim"], 8);
}

#[test]
fn ground_and_plan() {
    let (_, _, bundle) = workspace();
    let out = ok(&["ground", "--bundle", s(bundle), "--obs", "s1", "--json"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    let names: Vec<&str> = v["states"].as_array().unwrap().iter().map(|n| n.as_str().unwrap()).collect();
    let s1 = names.iter().position(|n| *n == "s1").unwrap();
    assert_eq!(v["probs"][s1], 1.0);

    let out = ok(&["plan", "--bundle", s(bundle), "--init", "s0", "--goal", "s2", "--json"]);
    let trace: Value = serde_json::from_str(&out).unwrap();
    let actions: Vec<&str> = trace["actions"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    assert_eq!(actions.first(), Some(&"Approach"));
    assert_eq!(actions.last(), Some(&"Disassemble"));

    let m = names.len();
    let mut probs = vec!["0"; m];
    probs[s1] = "1";
    let init = format!("dist:{}", probs.join(","));
    let out = ok(&["plan", "--bundle", s(bundle), "--init", &init, "--goal", "s2"]);
    assert!(out.contains("plan (1 actions): Disassemble"), "{out}");
}

#[test]
fn run_writes_a_deterministic_report() {
    let (dir, _, bundle) = workspace();
    let report = |name: &str| {
        let path = dir.path().join(name);
        ok(&[
            "run",
            "--bundle",
            s(bundle),
            "--regime",
            "obstacle",
            "--sigma",
            "0.5,1.5",
            "--episodes",
            "120",
            "--seed",
            "9",
            "--report",
            s(&path),
        ]);
        fs::read_to_string(path).unwrap()
    };
    let a = report("a.csv");
    assert_eq!(a, report("b.csv"));
    let mut lines = a.lines();
    assert_eq!(lines.next(), Some("regime,sigma,class,first_sr,rectified_sr,overall_sr,ssr,rsr,num"));
    let overall: Vec<&str> = lines.filter(|l| l.contains(",overall,")).collect();
    assert_eq!(overall.len(), 2);
    assert!(overall.iter().all(|l| l.ends_with(",120")));
}

#[test]
fn exit_codes() {
    let (dir, _, bundle) = workspace();
    // Nothing is demonstrated after s2.
    assert_eq!(code(&["plan", "--bundle", s(bundle), "--init", "s2", "--goal", "s0"]), 3);
    assert_eq!(code(&["plan", "--bundle", s(bundle), "--init", "s0", "--goal", "nowhere"]), 2);
    assert_eq!(code(&["plan", "--bundle", s(&dir.path().join("missing.json")), "--init", "s0"]), 2);
    assert_eq!(code(&["ground", "--bundle", s(bundle), "--obs", "1,2"]), 2);
    assert_eq!(code(&["run", "--bundle", s(bundle), "--regime", "sideways"]), 2);
    let budget = ["run", "--bundle", s(bundle), "--regime", "static", "--episodes", "20", "--max-steps", "1"];
    assert_eq!(code(&budget), 0);
    let strict: Vec<&str> = budget.iter().copied().chain(["--strict"]).collect();
    assert_eq!(code(&strict), 4);
}
