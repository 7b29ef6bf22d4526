use std::path::Path;
use std::process::{Command, Output};

use perforated::data::{encode_idx_images, encode_idx_labels};
use perforated::network::decode_weights;

fn perforated(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perforated")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    std::fs::write(
        &path,
        r#"{
            "seed": 4,
            "dataset": { "kind": "two_spirals", "n_per_class": 40, "turns": 1.0, "noise": 0.05 },
            "network": { "hidden": [6, 6] },
            "pb": { "max_normal_epochs": 20, "candidate_epochs": 5, "max_cycles": 1 },
            "sweep": { "width_multipliers": [1.0, 0.5], "cycles": [0, 1] }
        }"#,
    )
    .unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn cost_prints_published_value() {
    let o = perforated(&["cost", "--hourly", "0.31", "--tps", "1581885"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("0.0544"), "{}", stdout(&o));
}

#[test]
fn cost_extras_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = perforated(&[
        "cost",
        "--hourly",
        "0.17",
        "--tps",
        "16319841",
        "--baseline-tps",
        "107001",
        "--target-tps",
        "16000000",
        "--table",
        "--output-dir",
        out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("speedup 152.52"));
    assert!(text.contains("replicas 1\n"));
    assert!(text.contains("Reduced Model with Dendrites"));
    assert_eq!(std::fs::read_to_string(dir.path().join("cost.txt")).unwrap(), text);
    assert!(dir.path().join("cost.csv").exists());
}

#[test]
fn cost_domain_error_is_usage() {
    let o = perforated(&["cost", "--hourly", "-1", "--tps", "10"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("must be positive"));
}

#[test]
fn missing_config_names_the_file() {
    let o = perforated(&["sweep", "--config", "missing.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.json"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"pb": {"pool": 3}}"#).unwrap();
    let o = perforated(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("pool"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    assert_eq!(perforated(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(perforated(&["train", "--no-such-flag"]).status.code(), Some(1));
}

#[test]
fn help_lists_flags_with_defaults() {
    let top = perforated(&["--help"]);
    assert_eq!(top.status.code(), Some(0));
    for sub in ["train", "sweep", "cost", "bench", "gen-data", "verify"] {
        assert!(stdout(&top).contains(sub), "{sub} missing from top-level help");
        let o = perforated(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        // Each option block starts with a line whose first token is a flag.
        let text = stdout(&o);
        let mut blocks: Vec<String> = Vec::new();
        for line in text.lines().skip_while(|l| !l.starts_with("Options:")).skip(1) {
            if line.trim_start().starts_with('-') {
                blocks.push(line.to_owned());
            } else if let Some(b) = blocks.last_mut() {
                b.push_str(line);
            }
        }
        for b in blocks.iter().filter(|b| !b.contains("--help")) {
            assert!(b.contains("[default:"), "{sub}: no default in {b}");
        }
    }
}

#[test]
fn train_baseline_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = perforated(&["train", "--config", &cfg, "--cycles", "0", "--output-dir", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains("cycles 0"));
        let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
        assert!(report.starts_with("cycle,phase,epoch,train_loss,train_acc,val_acc,params,wall_time_s\n"));
        let weights = std::fs::read(out.join("model.pbw")).unwrap();
        let groups = decode_weights(&weights).unwrap();
        assert_eq!(groups.len(), 6);
        reports.push((report, weights));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn train_with_cycles_stores_dendrites() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("pb");
    let o = perforated(&["train", "--config", &cfg, "--output-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("1,dendrite,")));
    let groups = decode_weights(&std::fs::read(out.join("model.pbw")).unwrap()).unwrap();
    assert!(groups.iter().any(|(name, _)| name.contains("dendrite0.output_weight")));
}

#[test]
fn sweep_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("sweep");
    let o = perforated(&[
        "sweep",
        "--config",
        &cfg,
        "--width-multipliers",
        "0.5",
        "--cycles",
        "0,1",
        "--seeds",
        "1,2",
        "--sequential",
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let ids: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, ["w0.5-c0-s1", "w0.5-c0-s2", "w0.5-c1-s1", "w0.5-c1-s2"]);
}

#[test]
fn gen_data_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("artifacts");
    let out_s = out.to_str().unwrap();
    let o = perforated(&["gen-data", "--config", &cfg, "--output-dir", out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let data = std::fs::read_to_string(out.join("data.csv")).unwrap();
    assert_eq!(data.lines().count(), 81);
    assert_eq!(data.lines().next(), Some("x0,x1,label"));

    let o = perforated(&["bench", "--config", &cfg, "--batch-sizes", "1,16", "--cycles", "1", "--output-dir", out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let bench = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(bench.lines().count(), 3);
    assert!(bench.starts_with("batch_size,units_per_s,wall_time_s,iterations,error\n"));

    let o = perforated(&["bench", "--config", &cfg, "--batch-sizes", "8,4", "--output-dir", out_s]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupt_idx_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("img.idx");
    let labels = dir.path().join("lbl.idx");
    std::fs::write(&images, encode_idx_images(2, 2, 2, &[0; 8])).unwrap();
    std::fs::write(&labels, encode_idx_labels(&[0, 1, 1])).unwrap();
    let cfg = dir.path().join("idx.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "dataset": { "kind": "idx", "images": images, "labels": labels }
        })
        .to_string(),
    )
    .unwrap();
    let o = perforated(&["gen-data", "--config", cfg.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn verify_passes() {
    let o = perforated(&["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}
