use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn metaspam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metaspam"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn metaspam")
}

fn ok(args: &[&str]) -> Output {
    let out = metaspam(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline_on_shipped_fixture() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (clean, split, emb_model, emb, model, report, preds) = (
        d.join("clean.jsonl"),
        d.join("split"),
        d.join("embedder.json"),
        d.join("emb.txt"),
        d.join("model.json"),
        d.join("report"),
        d.join("preds.jsonl"),
    );
    ok(&["preprocess", "--in", s(&fixture("synth500.jsonl")), "--out", s(&clean)]);
    ok(&["split", "--in", s(&clean), "--seed", "42", "--out-dir", s(&split)]);
    let train = split.join("train.jsonl");
    let dev = split.join("dev.jsonl");
    let test = split.join("test.jsonl");
    ok(&[
        "train-embedder", "--train", s(&train), "--epochs", "20", "--batch", "16", "--dim", "16", "--task", "task2",
        "--out", s(&emb_model),
    ]);
    ok(&["embed", "--model", s(&emb_model), "--in", s(&clean), "--out", s(&emb)]);
    ok(&[
        "train", "--train", s(&train), "--dev", s(&dev), "--encoder", "textcnn", "--cust", "linear_basis_cust",
        "--use-category", "--desc-emb", s(&emb), "--task", "task2", "--dim", "16", "--epochs", "10", "--batch", "64",
        "--patience", "5", "--seed", "42", "--out", s(&model),
    ]);
    let out = ok(&[
        "evaluate", "--model", s(&model), "--test", s(&test), "--task", "task2", "--report", s(&report), "--desc-emb",
        s(&emb),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("macro"));
    for f in ["report.csv", "confusion.csv", "report.txt"] {
        assert!(report.join(f).exists(), "{f}");
    }
    ok(&["predict", "--model", s(&model), "--in", s(&test), "--out", s(&preds), "--desc-emb", s(&emb)]);
    let lines = std::fs::read_to_string(&preds).unwrap();
    let n_test = std::fs::read_to_string(&test).unwrap().lines().count();
    assert_eq!(lines.lines().count(), n_test);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["probabilities"].as_array().unwrap().len(), 4);
    assert!(start.elapsed().as_secs() < 60, "pipeline took {:?}", start.elapsed());
}

/// Reviews whose comment is a single label-specific word.
fn separable_corpus(path: &Path) {
    let labels = [("NO-SPAM", "NONE"), ("SPAM", "SPAM-1"), ("SPAM", "SPAM-2"), ("SPAM", "SPAM-3")];
    let words = ["alpha", "bravo", "charlie", "delta"];
    let mut text = String::new();
    for i in 0..40 {
        let l = i % 4;
        let rec = serde_json::json!({
            "review_id": format!("r{i}"),
            "comment": words[l],
            "rating": 5,
            "category": "Book",
            "product_name": "p",
            "description": "d",
            "num_sold": 1,
            "num_reviews": 1,
            "label": labels[l].0,
            "spam_label": labels[l].1,
        });
        text.push_str(&rec.to_string());
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn evaluate_reports_all_ones_for_gold_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    let model = dir.path().join("m.json");
    let report = dir.path().join("rep");
    separable_corpus(&data);
    ok(&[
        "train", "--train", s(&data), "--dev", s(&data), "--encoder", "mean_pool", "--task", "task2", "--dim", "8",
        "--epochs", "60", "--patience", "60", "--batch", "8", "--lr", "0.05", "--out", s(&model),
    ]);
    ok(&["evaluate", "--model", s(&model), "--test", s(&data), "--task", "task2", "--report", s(&report)]);
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    assert!(
        csv.contains("macro,,1.000000,1.000000,1.000000,1.000000,1.000000,40,false"),
        "{csv}"
    );
    let cm = std::fs::read_to_string(report.join("confusion.csv")).unwrap();
    assert!(cm.contains("NO-SPAM,10,0,0,0"), "{cm}");
}

#[test]
fn grid_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let split = dir.path().join("split");
    ok(&["split", "--in", s(&fixture("synth500.jsonl")), "--out-dir", s(&split)]);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "grid", "--dataset", s(&split), "--encoders", "mean_pool,textcnn", "--modes", "none,bias_cust",
            "--seeds", "1,2", "--task", "task2", "--dim", "8", "--epochs", "3", "--patience", "3", "--batch", "64",
            "--out", s(&out),
        ]);
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.contains("mean_pool,Original,none"));
}

#[test]
fn grid_with_only_none_has_one_row_per_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let split = dir.path().join("split");
    ok(&["split", "--in", s(&fixture("synth500.jsonl")), "--out-dir", s(&split)]);
    let out = ok(&[
        "grid", "--dataset", s(&split), "--encoders", "mean_pool,textcnn", "--modes", "none", "--dim", "8",
        "--epochs", "1", "--patience", "1",
    ]);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    separable_corpus(&data);
    let code = |args: &[&str]| metaspam(args).status.code().unwrap();
    assert_eq!(code(&["train", "--bogus"]), 1);
    assert_eq!(code(&["nope"]), 1);
    assert_eq!(
        code(&["train", "--train", s(&data), "--dev", s(&data), "--cust", "bias_cust", "--out", "x"]),
        1
    );
    assert_eq!(code(&["split", "--in", s(&dir.path().join("missing")), "--out-dir", s(dir.path())]), 2);
    let out = dir.path().join("m.json");
    assert_eq!(
        code(&[
            "train", "--train", s(&data), "--dev", s(&data), "--encoder", "mean_pool", "--dim", "4", "--epochs", "3",
            "--patience", "3", "--lr", "1e300", "--out", s(&out),
        ]),
        3
    );
    assert!(!out.exists());
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn outputs_create_parent_directories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a/b/raw.jsonl");
    ok(&["synth", "--size", "100", "--out", s(&out)]);
    assert_eq!(std::fs::read_to_string(out).unwrap().lines().count(), 100);
}
