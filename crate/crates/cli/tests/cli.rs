use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIRTHPLACE: &str = "A\tbirthplace\tSpain\nB\tshusshin\tSupein\nbirthplace\thonyaku\tshusshin\n";
const BIRTHPLACE_NT: &str = "<A> <birthplace> <Spain> .\n<B> <shusshin> <Supein> .\n<birthplace> <honyaku> <shusshin> .\n";

fn kgeu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgeu")).args(args).output().expect("running kgeu")
}

fn ok(args: &[&str]) -> String {
    let out = kgeu(args);
    assert!(out.status.success(), "kgeu {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn ingest_prints_birthplace_stats() {
    let dir = TempDir::new().unwrap();
    let tsv = write(dir.path(), "birthplace.tsv", BIRTHPLACE);
    let vocab = dir.path().join("vocab.txt");
    let out = ok(&["ingest", "--format", "tsv", "--unify", s(&tsv), "--vocab-out", s(&vocab)]);
    assert!(out.starts_with("triples=3, entities=6, properties=3, overlap=2"), "{out}");
    assert_eq!(
        fs::read_to_string(&vocab).unwrap(),
        "0\tA\tE\n1\tbirthplace\tEP\n2\tSpain\tE\n3\tB\tE\n4\tshusshin\tEP\n5\tSupein\tE\n6\thonyaku\tP\n"
    );
}

#[test]
fn ingest_formats_agree() {
    let dir = TempDir::new().unwrap();
    let tsv = write(dir.path(), "birthplace.tsv", BIRTHPLACE);
    let nt = write(dir.path(), "birthplace.nt", BIRTHPLACE_NT);
    assert_eq!(ok(&["ingest", "--unify", s(&tsv)]), ok(&["ingest", "--format", "nt", "--unify", s(&nt)]));
}

#[test]
fn ingest_missing_file_names_path() {
    let out = kgeu(&["ingest", "/no/such/triples.tsv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/triples.tsv"));
}

#[test]
fn ingest_malformed_line_reports_location() {
    let dir = TempDir::new().unwrap();
    let bad = write(dir.path(), "bad.tsv", "a\tb\tc\nonly\ttwo\n");
    let out = kgeu(&["ingest", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.tsv") && err.contains('2'), "{err}");
}

#[test]
fn train_defaults_transe() {
    let dir = TempDir::new().unwrap();
    let tsv = write(dir.path(), "birthplace.tsv", BIRTHPLACE);
    let out = dir.path().join("run");
    ok(&["train", s(&tsv), "-o", s(&out)]);
    let m = manifest(&out);
    let config = &m["settings"]["config"];
    assert_eq!(config["learning_rate"], 0.001);
    assert_eq!(config["epochs"], 1000);
    assert_eq!(config["model"]["dim"], 200);
    assert_eq!(config["model"]["kind"], "transe");
    assert_eq!(m["settings"]["unify"], false);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    let log = fs::read_to_string(out.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 1000);
    assert!(out.join("model.kgeu").exists());
}

#[test]
fn train_defaults_complex() {
    let dir = TempDir::new().unwrap();
    let tsv = write(dir.path(), "birthplace.tsv", BIRTHPLACE);
    let out = dir.path().join("run");
    ok(&["train", s(&tsv), "-o", s(&out), "--model", "complex", "--epochs", "5"]);
    let config = &manifest(&out)["settings"]["config"];
    assert_eq!(config["learning_rate"], 0.01);
    assert_eq!(config["model"]["dim"], 100);
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let tsv = write(dir.path(), "birthplace.tsv", BIRTHPLACE);
    let out = s(dir.path());
    assert_eq!(kgeu(&["train", s(&tsv), "-o", out, "--epochs", "0"]).status.code(), Some(2));
    assert_eq!(kgeu(&["train", s(&tsv), "-o", out, "--model", "distmult"]).status.code(), Some(2));
    assert_eq!(kgeu(&["train", s(&tsv), "-o", out, "--lr", "-1"]).status.code(), Some(2));
    assert_eq!(kgeu(&["frobnicate"]).status.code(), Some(2));
    let threads = Command::new(env!("CARGO_BIN_EXE_kgeu"))
        .args(["ingest", s(&tsv)])
        .env("KGEU_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(2));
}

/// Generates the default toy data and trains a small unified model on it.
fn toy_model(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let toy = dir.join("toy");
    ok(&["gen-toy", "-o", s(&toy), "--n-facts", "60", "--n-entities", "20"]);
    let model = dir.join("model");
    ok(&["train", s(&toy.join("train.tsv")), "-o", s(&model), "--unify", "--dim", "8", "--epochs", "50"]);
    (toy.join("train.tsv"), toy.join("test.tsv"), model.join("model.kgeu"))
}

#[test]
fn eval_writes_reports() {
    let dir = TempDir::new().unwrap();
    let (train, test, archive) = toy_model(dir.path());
    let out = dir.path().join("eval");
    let table = ok(&["eval", s(&archive), s(&test), "--train", s(&train), "-o", s(&out)]);
    assert!(table.starts_with("Model"));
    assert!(table.lines().nth(1).unwrap().starts_with("TransU(TransE) "));
    assert_eq!(fs::read_to_string(out.join("report.txt")).unwrap(), table);

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let overall = &report["runs"][0]["report"]["overall"];
    for field in ["mean_rank_raw", "mean_rank_filtered", "hits_raw", "hits_filtered"] {
        assert!(overall[field].is_f64(), "{field} missing");
    }
    assert!(overall["mean_rank_filtered"].as_f64() <= overall["mean_rank_raw"].as_f64());
    assert_eq!(report["runs"][0]["report"]["tie_policy"], "pessimistic");
    assert_eq!(manifest(&out)["settings"]["command"], "eval");
}

#[test]
fn eval_rejects_unknown_terms() {
    let dir = TempDir::new().unwrap();
    let (_, _, archive) = toy_model(dir.path());
    let test = write(dir.path(), "unseen.tsv", "ent0\trel0\tnowhere\nsomeone\trel0\tent1\n");
    let out = kgeu(&["eval", s(&archive), s(&test), "-o", s(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere") && err.contains("someone"), "{err}");
}

#[test]
fn eval_multi_seed_rows() {
    let dir = TempDir::new().unwrap();
    let (train, test, archive) = toy_model(dir.path());
    let out = dir.path().join("eval");
    let table = ok(&["eval", s(&archive), s(&test), "--train", s(&train), "--seeds", "3", "-o", s(&out)]);
    let labels: Vec<&str> = table.lines().skip(1).map(|l| l.split("  ").next().unwrap().trim()).collect();
    assert_eq!(labels, ["TransU(TransE):Avg", "TransU(TransE):Best"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let seeds: Vec<u64> = report["runs"].as_array().unwrap().iter().map(|r| r["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, [0, 1, 2]);
    let avg = report["summary"]["avg"]["mean_rank_filtered"].as_f64().unwrap();
    let best = report["summary"]["best"]["mean_rank_filtered"].as_f64().unwrap();
    assert!(best <= avg);

    // the first seed reproduces the archive exactly
    let single = dir.path().join("single");
    ok(&["eval", s(&archive), s(&test), "--train", s(&train), "-o", s(&single)]);
    let one: serde_json::Value = serde_json::from_str(&fs::read_to_string(single.join("report.json")).unwrap()).unwrap();
    assert_eq!(one["runs"][0], report["runs"][0]);

    assert_eq!(kgeu(&["eval", s(&archive), s(&test), "--seeds", "3", "-o", s(&out)]).status.code(), Some(2));
}

#[test]
fn predict_birthplace_majority() {
    let dir = TempDir::new().unwrap();
    let tsv = write(dir.path(), "birthplace.tsv", BIRTHPLACE);
    let mut hits = 0;
    for seed in 0..10 {
        let out = dir.path().join(format!("m{seed}"));
        ok(&["train", s(&tsv), "-o", s(&out), "--unify", "--seed", &seed.to_string()]);
        let top = ok(&["predict", s(&out.join("model.kgeu")), "B", "birthplace", "-k", "3"]);
        if top.lines().any(|l| matches!(l.split('\t').nth(1), Some("Spain" | "Supein"))) {
            hits += 1;
        }
    }
    assert!(hits > 5, "only {hits} of 10 seeds");
}

#[test]
fn predict_output_and_errors() {
    let dir = TempDir::new().unwrap();
    let tsv = write(dir.path(), "birthplace.tsv", BIRTHPLACE);
    let out = dir.path().join("m");
    ok(&["train", s(&tsv), "-o", s(&out), "--unify", "--dim", "8", "--epochs", "20"]);
    let archive = out.join("model.kgeu");

    let all = ok(&["predict", s(&archive), "B", "birthplace", "-k", "100"]);
    assert_eq!(all.lines().count(), 6);
    let scores: Vec<f64> = all.lines().map(|l| l.split('\t').nth(2).unwrap().parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let filtered = ok(&["predict", s(&archive), "A", "birthplace", "-k", "100", "--filter", s(&tsv)]);
    assert_eq!(filtered.lines().count(), 5);
    assert!(!filtered.contains("\tSpain\t"));

    let head = ok(&["predict", s(&archive), "Spain", "birthplace", "--direction", "head", "-k", "2"]);
    assert_eq!(head.lines().count(), 2);

    let bad = kgeu(&["predict", s(&archive), "B", "bornIn"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bornIn"));
}

#[test]
fn gen_toy_writes_split_and_manifest() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("toy");
    let summary = ok(&["gen-toy", "-o", s(&out), "--seed", "4"]);
    assert!(summary.starts_with("train=") && summary.contains("test=60"));
    let test = fs::read_to_string(out.join("test.tsv")).unwrap();
    assert_eq!(test.lines().count(), 60);
    let m = manifest(&out);
    assert_eq!(m["settings"]["command"], "gen-toy");
    assert_eq!(m["settings"]["spec"]["seed"], 4);
    assert_eq!(m["settings"]["spec"]["n_entities"], 40);
    assert_eq!(kgeu(&["gen-toy", "-o", s(&out), "--holdout-fraction", "2"]).status.code(), Some(2));
}

#[test]
fn replay_reproduces_and_checks_inputs() {
    let dir = TempDir::new().unwrap();
    let tsv = write(dir.path(), "birthplace.tsv", BIRTHPLACE);
    let first = dir.path().join("first");
    ok(&["train", s(&tsv), "-o", s(&first), "--unify", "--dim", "8", "--epochs", "30", "--seed", "7"]);
    let second = dir.path().join("second");
    ok(&["replay", s(&first.join("manifest.json")), "-o", s(&second)]);
    assert_eq!(fs::read(first.join("model.kgeu")).unwrap(), fs::read(second.join("model.kgeu")).unwrap());
    assert_eq!(manifest(&first), manifest(&second));

    fs::write(&tsv, "A\tbirthplace\tFrance\n").unwrap();
    let out = kgeu(&["replay", s(&first.join("manifest.json")), "-o", s(&dir.path().join("third"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}
