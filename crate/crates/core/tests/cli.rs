use std::path::Path;
use std::process::{Command, Output};

use mutual_span::cli::CONFIG_ENV;

const TINY: &str = r#"
[gen]
num_samples = 24
k = 24
d_in = 8
answer_len_range = [3, 8]

[train]
d = 16
d_in = 8
kernel_size = 3
epochs = 2
"#;

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mutual-span"))
        .current_dir(dir)
        .env_remove(CONFIG_ENV)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(&o));
    o
}

/// Temp dir holding `tiny.toml` and a generated corpus under `out/`.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    ok(cli(dir.path(), &["generate", "--config", "tiny.toml"]));
    dir
}

fn lines(path: impl AsRef<Path>) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn generate_writes_requested_sample_count_deterministically() {
    let dir = workspace();
    let d = dir.path();
    assert_eq!(lines(d.join("out/corpus.jsonl")), 24);
    assert_eq!(lines(d.join("out/train.jsonl")) + lines(d.join("out/test.jsonl")), 24);
    ok(cli(d, &["generate", "--config", "tiny.toml", "--out", "again"]));
    for f in ["corpus.jsonl", "train.jsonl", "test.jsonl"] {
        assert_eq!(std::fs::read(d.join("out").join(f)).unwrap(), std::fs::read(d.join("again").join(f)).unwrap());
    }
    ok(cli(d, &["generate", "--config", "tiny.toml", "--seed", "9", "--out", "other"]));
    assert_ne!(std::fs::read(d.join("out/corpus.jsonl")).unwrap(), std::fs::read(d.join("other/corpus.jsonl")).unwrap());
}

#[test]
fn overrides_apply_and_unknown_keys_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(cli(d, &["generate", "--num_samples", "5", "--k=16", "--answer_len_range", "[2,6]"]));
    assert_eq!(lines(d.join("out/corpus.jsonl")), 5);

    let o = cli(d, &["generate", "--no_such_key", "3", "--out", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no_such_key"), "{}", stderr(&o));
    assert!(!d.join("x").exists());
}

#[test]
fn existing_outputs_need_force() {
    let dir = workspace();
    let d = dir.path();
    let o = cli(d, &["generate", "--config", "tiny.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("corpus.jsonl"));
    ok(cli(d, &["generate", "--config", "tiny.toml", "--force"]));
}

#[test]
fn config_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mutual-span"))
        .current_dir(dir.path())
        .env(CONFIG_ENV, "tiny.toml")
        .arg("generate")
        .output()
        .unwrap();
    ok(o);
    assert_eq!(lines(dir.path().join("out/corpus.jsonl")), 24);
}

#[test]
fn train_eval_and_trace_round_trip() {
    let dir = workspace();
    let d = dir.path();
    ok(cli(d, &["train", "--config", "tiny.toml"]));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["mkt_enabled"], true);
    assert_eq!(report["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(lines(d.join("out/losses.csv")), 3);
    assert!(d.join("out/train.config.toml").exists());

    ok(cli(d, &["eval", "--config", "tiny.toml"]));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("out/metrics.json")).unwrap()).unwrap();
    for key in ["iou_0.3", "iou_0.5", "iou_0.7", "miou"] {
        let v = m[key].as_f64().unwrap();
        assert!((0.0..=100.0).contains(&v), "{key} = {v}");
    }
    assert_eq!(m["miou"].as_f64().unwrap(), report["best_miou"].as_f64().unwrap());

    ok(cli(d, &["trace", "--report", "out/report.json"]));
    assert_eq!(lines(d.join("out/alpha_beta.csv")), 3);
}

#[test]
fn trace_has_one_row_per_epoch() {
    let dir = workspace();
    let d = dir.path();
    ok(cli(d, &["train", "--config", "tiny.toml", "--epochs", "15"]));
    ok(cli(d, &["trace", "--report", "out/report.json", "--out", "tr"]));
    let text = std::fs::read_to_string(d.join("tr/alpha_beta.csv")).unwrap();
    let rows: Vec<_> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 15);
    for (i, row) in rows.iter().enumerate() {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[0], (i + 1).to_string());
        for v in &f[1..] {
            assert!((0.0..=1.0).contains(&v.parse::<f64>().unwrap()));
        }
    }
}

#[test]
fn no_mkt_report_has_no_trace() {
    let dir = workspace();
    let d = dir.path();
    ok(cli(d, &["train", "--config", "tiny.toml", "--no-mkt"]));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["mkt_enabled"], false);
    let o = cli(d, &["trace", "--report", "out/report.json", "--out", "tr"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("alpha/beta"));
}

#[test]
fn missing_corpus_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["train", "--train", "nope.jsonl", "--val", "nope.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.jsonl"));
}

#[test]
fn corrupted_or_mismatched_checkpoints_are_rejected() {
    let dir = workspace();
    let d = dir.path();
    ok(cli(d, &["train", "--config", "tiny.toml", "--epochs", "1"]));
    let ckpt = d.join("out/checkpoint.json");
    let text = std::fs::read_to_string(&ckpt).unwrap();

    let o = cli(d, &["eval", "--config", "tiny.toml", "--d", "8", "--checkpoint", "out/checkpoint.json", "--corpus", "out/test.jsonl", "--out", "e1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("manifest mismatch"), "{}", stderr(&o));

    std::fs::write(&ckpt, text.replacen("\"rows\"", "\"rowz\"", 1)).unwrap();
    let o = cli(d, &["eval", "--config", "tiny.toml", "--checkpoint", "out/checkpoint.json", "--corpus", "out/test.jsonl", "--out", "e2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("manifest mismatch"), "{}", stderr(&o));
}

#[test]
fn ablate_reports_every_seed_arm_and_predictor() {
    let dir = workspace();
    let d = dir.path();
    let o = ok(cli(d, &["ablate", "--config", "tiny.toml", "--epochs", "1", "--seeds", "1,2,3"]));
    let text = std::fs::read_to_string(d.join("out/ablation.csv")).unwrap();
    assert_eq!(text, String::from_utf8(o.stdout).unwrap());
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 16);
    assert_eq!(rows.iter().filter(|r| &r[0] == "mean").count(), 4);
    for seed in ["1", "2", "3"] {
        assert_eq!(rows.iter().filter(|r| &r[0] == seed).count(), 4);
    }
    assert_eq!(lines(d.join("out/ablation_alpha_beta.csv")), 2);
}

#[test]
fn bad_usage_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(cli(dir.path(), &["--help"]).status.code(), Some(0));
}
