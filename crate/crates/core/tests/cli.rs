mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use legalform::eval::EvalReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_legalform"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn german(&self, n: usize) -> PathBuf {
        common::write_dataset(self.dir.path(), &common::dataset("DE", n, &common::german_forms(), 5))
    }
}

#[test]
fn ingest_selects_top_jurisdictions() {
    let ws = Workspace::new();
    let sizes = [("DE", 40), ("CN", 90), ("US-DE", 30), ("CA", 50), ("SE", 30), ("JP", 5), ("EE", 12)];
    let gc = common::golden_copy(&sizes, 3);
    let golden = ws.path("20220914-0800-gleif-goldencopy-lei2-golden-copy.csv");
    std::fs::write(&golden, &gc.text).unwrap();
    let elf = ws.path("elf.csv");
    std::fs::write(&elf, common::sample_elf_list()).unwrap();
    let out = ws.path("datasets");

    ok(&["ingest", "--golden-copy", s(&golden), "--elf-list", s(&elf), "--out", s(&out), "--top", "3"]);
    let mut files: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    // CN and CA are excluded by default; SE and US-DE tie and SE sorts first
    assert_eq!(files, ["DE.tsv", "SE.tsv", "US-DE.tsv", "stats.json"].map(String::from));

    let stats: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["snapshot_id"], "20220914");
    assert_eq!(stats["stats"]["total_rows"], gc.total_rows);
    let skipped: u64 = stats["stats"]["skipped"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(skipped as usize, gc.malformed_rows);
    assert_eq!(stats["jurisdictions"][0]["jurisdiction"], "DE");
    assert_eq!(stats["jurisdictions"][0]["n_samples"], 40);

    let de = legalform::ingest::JurisdictionDataset::load(&out.join("DE.tsv")).unwrap();
    assert_eq!(de.len(), 40);
    assert_eq!(de.snapshot_id, "20220914");
    assert!(de.samples.windows(2).all(|w| w[0].lei < w[1].lei));

    let one = ws.path("one");
    ok(&["ingest", "--golden-copy", s(&golden), "--elf-list", s(&elf), "--out", s(&one), "--top", "1", "--exclude", ""]);
    assert!(one.join("CN.tsv").exists());
    assert!(!one.join("DE.tsv").exists());
}

#[test]
fn missing_input_is_usage_error() {
    let ws = Workspace::new();
    let out = run(&["ingest", "--golden-copy", "/nonexistent.csv", "--elf-list", "/nonexistent.csv", "--out", s(&ws.path("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["evaluate", "--dataset", "/nonexistent/DE.tsv", "--model", "cnb"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_is_reproducible_and_validates_model_name() {
    let ws = Workspace::new();
    let ds = ws.german(150);
    let (a, b) = (ws.path("a.lfm"), ws.path("b.lfm"));
    for m in [&a, &b] {
        ok(&["train", "--dataset", s(&ds), "--model", "rf", "--n-trees", "15", "--seed", "3", "--out", s(m)]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let bad = run(&["train", "--dataset", s(&ds), "--model", "svc", "--out", s(&a)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn predict_and_explain() {
    let ws = Workspace::new();
    let ds = ws.german(300);
    let model = ws.path("de.lfm");
    ok(&["train", "--dataset", s(&ds), "--model", "cnb", "--prep", "extended", "--out", s(&model)]);

    let out = ok(&["predict", "--model-file", s(&model), "--name", "Selbstfahrer Union G.m.b.H.", "--json"]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["predicted"]["elf_code"], "2HBR");
    assert_eq!(v["predicted"]["legal_form"], "Gesellschaft mit beschränkter Haftung");
    assert_eq!(v["top"].as_array().unwrap().len(), 3);

    let names = ws.path("names.txt");
    std::fs::write(&names, "Volksbank Odenwald eG\n\nAlpha Stiftung\n").unwrap();
    let out = ok(&["predict", "--model-file", s(&model), "--input", s(&names)]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("Volksbank Odenwald eG\tAZFE\t"));
    assert!(lines[1].starts_with("Alpha Stiftung\tV2YH\t"));

    assert_eq!(run(&["predict", "--model-file", s(&model), "--name", ""]).status.code(), Some(2));

    let out = ok(&["explain", "--model-file", s(&model), "--name", "Volksbank Odenwald eG", "--json"]);
    let e: legalform::pipeline::Explanation = serde_json::from_str(&out).unwrap();
    assert_eq!(e.predicted.as_str(), "AZFE");
    let top = e.tokens.iter().max_by(|a, b| a.score.total_cmp(&b.score)).unwrap();
    assert_eq!(top.token, "eg");

    let out = ok(&["explain", "--model-file", s(&model), "--name", "Qwzx Vvvq", "--json"]);
    let e: legalform::pipeline::Explanation = serde_json::from_str(&out).unwrap();
    assert!(e.tokens.iter().all(|t| t.score == 0.0));
}

#[test]
fn single_class_model_predicts_it_with_certainty() {
    let ws = Workspace::new();
    let forms = vec![common::Form { code: "2HBR", suffixes: &["GmbH"], weight: 1 }];
    let ds = common::write_dataset(ws.dir.path(), &common::dataset("DE", 20, &forms, 1));
    let model = ws.path("m.lfm");
    ok(&["train", "--dataset", s(&ds), "--model", "dt", "--out", s(&model)]);
    let out = ok(&["predict", "--model-file", s(&model), "--name", "Something Else AG", "--json"]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["predicted"]["elf_code"], "2HBR");
    assert_eq!(v["predicted"]["probability"], 1.0);
}

fn read_challenges(path: &Path) -> (Vec<String>, Vec<csv::StringRecord>) {
    let text = std::fs::read_to_string(path).unwrap();
    let comments = text.lines().filter(|l| l.starts_with('#')).map(String::from).collect();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    (comments, rdr.records().map(Result::unwrap).collect())
}

#[test]
fn challenge_flags_planted_mislabel() {
    let ws = Workspace::new();
    let mut ds = common::dataset("DE", 300, &common::german_forms(), 8);
    let clean = common::write_dataset(ws.dir.path(), &ds);
    let model = ws.path("m.lfm");
    ok(&["train", "--dataset", s(&clean), "--model", "rf", "--n-trees", "30", "--out", s(&model)]);

    let out = ws.path("c.csv");
    ok(&["challenge", "--model-file", s(&model), "--dataset", s(&clean), "--out", s(&out)]);
    let (comments, rows) = read_challenges(&out);
    assert_eq!(comments, ["# min_prob=0.9", "# model_id=rf+prep"]);
    assert!(rows.is_empty(), "{rows:?}");

    ok(&["challenge", "--model-file", s(&model), "--dataset", s(&clean), "--min-prob", "1.01", "--out", s(&out)]);
    let (comments, rows) = read_challenges(&out);
    assert_eq!(comments[0], "# min_prob=1.01");
    assert!(rows.is_empty());

    // an entity recorded as a cooperative although its name says GmbH
    let planted = ds.samples.iter().position(|s| s.name.ends_with(" GmbH") && s.elf_code.as_str() == "2HBR").unwrap();
    ds.samples[planted].elf_code = legalform::elf::ElfCode::new("AZFE").unwrap();
    let dirty_dir = ws.path("dirty");
    std::fs::create_dir(&dirty_dir).unwrap();
    let dirty = common::write_dataset(&dirty_dir, &ds);
    ok(&["challenge", "--model-file", s(&model), "--dataset", s(&dirty), "--min-prob", "0.9", "--out", s(&out)]);
    let (_, rows) = read_challenges(&out);
    assert_eq!(rows.len(), 1, "{rows:?}");
    let r = &rows[0];
    assert_eq!(&r[0], ds.samples[planted].lei.as_str());
    assert_eq!((&r[3], &r[4]), ("AZFE", "2HBR"));
    assert!(r[5].parse::<f64>().unwrap() >= 0.9);
    assert_eq!(&r[6], "rf+prep");
}

#[test]
fn evaluate_score_compare_round_trip() {
    let ws = Workspace::new();
    let ds = ws.german(200);
    let (cnb, dt, preds) = (ws.path("cnb.json"), ws.path("dt.json"), ws.path("dt.csv"));
    ok(&["evaluate", "--dataset", s(&ds), "--model", "cnb", "--out", s(&cnb)]);
    ok(&["evaluate", "--dataset", s(&ds), "--model", "dt", "--prep", "lower", "--out", s(&dt), "--predictions", s(&preds)]);
    let dt_report = EvalReport::from_json(&std::fs::read_to_string(&dt).unwrap()).unwrap();
    assert_eq!(dt_report.model_id, "dt");
    assert_eq!(dt_report.n_samples, 200);

    let header = std::fs::read_to_string(&preds).unwrap();
    assert!(header.starts_with("lei,fold,gold_elf,predicted_elf,probability,model_id\n"));

    let scored = ws.path("scored.json");
    ok(&["score", "--predictions", s(&preds), "--dataset", s(&ds), "--out", s(&scored)]);
    let ext = EvalReport::from_json(&std::fs::read_to_string(&scored).unwrap()).unwrap();
    assert_eq!(ext.micro_f1, dt_report.micro_f1);
    assert_eq!(ext.macro_f1, dt_report.macro_f1);

    let table = ok(&["compare", "--report", s(&cnb)]);
    assert_eq!(table.lines().count(), 2);

    let cmp = ws.path("cmp.json");
    ok(&["compare", "--report", s(&cnb), "--report", s(&dt), "--predictions", s(&preds), "--dataset", s(&ds), "--out", s(&cmp)]);
    let row: serde_json::Value = serde_json::from_slice(&std::fs::read(&cmp).unwrap()).unwrap();
    assert_eq!(row["best_external_f1"]["model_id"], "dt");
    assert!(row["best_traditional_f1"]["model_id"].is_string());

    let se = common::write_dataset(ws.dir.path(), &common::dataset("SE", 50, &common::generic_forms(), 2));
    let se_report = ws.path("se.json");
    ok(&["evaluate", "--dataset", s(&se), "--model", "cnb", "--out", s(&se_report)]);
    let mixed = run(&["compare", "--report", s(&cnb), "--report", s(&se_report)]);
    assert_eq!(mixed.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&mixed.stderr).contains("several jurisdictions"));
}

#[test]
fn hand_written_external_predictions() {
    let data = data_dir();
    let ds = data.join("US-NY.tsv");
    let out = ok(&["score", "--predictions", s(&data.join("US-NY.echo.csv")), "--dataset", s(&ds)]);
    assert!(out.contains("F1 1.0000"), "{out}");
    let missing = run(&["score", "--predictions", s(&data.join("US-NY.missing.csv")), "--dataset", s(&ds)]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("5493000000000000NY07"));

    let out = ok(&["compare", "--predictions", s(&data.join("US-NY.echo.csv")), "--dataset", s(&ds)]);
    assert!(out.contains("bert-base-uncased"));
}

#[test]
fn folds_export() {
    let ws = Workspace::new();
    let ds = ws.german(60);
    let out = ws.path("folds.csv");
    ok(&["folds", "--dataset", s(&ds), "--seed", "11", "--out", s(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "lei,fold");
    assert_eq!(lines.len(), 61);
    let dataset = legalform::ingest::JurisdictionDataset::load(&ds).unwrap();
    let leis: Vec<String> = dataset.samples.iter().map(|s| s.lei.clone()).collect();
    let folds = legalform::eval::FoldAssignment::read_csv(&leis, 5, text.as_bytes()).unwrap();
    assert_eq!(folds, legalform::eval::stratified_folds(&dataset.labels(), 5, 11).unwrap());
}

#[test]
fn config_file_supplies_flags() {
    let ws = Workspace::new();
    let ds = ws.german(80);
    let cfg = ws.path("experiment.toml");
    let report = ws.path("r.json");
    std::fs::write(&cfg, format!("seed = 5\nmodel = \"dt\"\nprep = \"lower\"\n[evaluate]\nout = \"{}\"\n", s(&report))).unwrap();
    ok(&["--config", s(&cfg), "evaluate", "--dataset", s(&ds), "--seed", "6", "--jobs", "2"]);
    let r = EvalReport::from_json(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.model_id, "dt");
    assert_eq!(r.seed, Some(6));
    let bad = ws.path("bad.toml");
    std::fs::write(&bad, "[evaluate]\nno_such_flag = 1\n").unwrap();
    assert_eq!(run(&["--config", s(&bad), "evaluate", "--dataset", s(&ds), "--model", "cnb"]).status.code(), Some(2));
}
