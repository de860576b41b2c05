use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowcomplete"))
        .args(args)
        .env_remove("FLOWCOMPLETE_CHECKPOINT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn parse_and_serialize() {
    let o = bin(&["parse", "--strict", "(raw)(prod)"]);
    assert!(o.status.success());
    let g: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(g["nodes"].as_array().unwrap().len(), 2);

    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.json");
    std::fs::write(&graph, stdout(&o)).unwrap();
    let o = bin(&["serialize", p(&graph)]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "(raw)(prod)");

    let o = bin(&["parse", "(raw)@(prod)"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&["parse", "--lenient", "(raw)@(prod)"]);
    assert!(o.status.success());
    assert_eq!(bin(&["parse", "(raw)<1(prod)"]).status.code(), Some(2));
}

#[test]
fn usage_and_io_errors() {
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bin(&["complete", "(raw)"]).status.code(), Some(2));
    let o = bin(&["stats", "/nonexistent/corpus.sfiles"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.sfiles");
    let o = bin(&["generate", "--n", "200", "--seed", "7", "--out", p(&corpus)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<String> = std::fs::read_to_string(&corpus).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 200);
    let mut unique = lines.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), 200);

    let o = bin(&["stats", p(&corpus), "--json"]);
    let st: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(st["samples_tr"], 200);

    let data = dir.path().join("data");
    let o = bin(&["split", "--corpus", p(&corpus), "--out-dir", p(&data), "--seed", "1"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("train 160  val 20  test 20"));

    let ckpt = dir.path().join("ckpt");
    let o = bin(&[
        "train", "--data", p(&data), "--out", p(&ckpt), "--preset", "tiny", "--max-steps", "6", "--eval-interval", "3",
        "--quiet",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(ckpt.join("manifest.json").exists() && ckpt.join("weights.bin").exists());
    let curve = std::fs::read_to_string(ckpt.join("curve.csv")).unwrap();
    assert!(curve.starts_with("step,train_loss,val_loss\n3,"));
    assert!(stdout(&o).contains("test PP"));

    let o = bin(&["eval", "--checkpoint", &format!("pre={}", p(&ckpt)), "--corpus", &format!("gen={}", p(&data))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.contains("gen/test") && table.contains("pre"));

    let o = bin(&["complete", "--checkpoint", p(&ckpt), "(raw)(hex)", "--max-new-tokens", "5"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 3);
    assert!(out.lines().all(|l| l.contains("(raw)(hex)")));

    let o = Command::new(env!("CARGO_BIN_EXE_flowcomplete"))
        .args(["complete", "--strategy", "greedy", "--json", "--max-new-tokens", "4", ""])
        .env("FLOWCOMPLETE_CHECKPOINT", &ckpt)
        .output()
        .unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["completions"].as_array().unwrap().len(), 1);
    assert_eq!(bin(&["complete", "--checkpoint", p(&ckpt), "(("]).status.code(), Some(2));

    let tuned = dir.path().join("tuned");
    let o = bin(&[
        "finetune", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&tuned), "--max-steps", "2", "--quiet",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tuned.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["training"]["steps"], 2);
    assert!(m["training"]["parent"].is_string());
}
