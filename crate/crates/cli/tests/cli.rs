use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use mgt_core::data::{read_events, write_events, Label};
use mgt_core::explain::parse_attention_csv;
use mgt_core::training::MetricsReport;
use tempfile::TempDir;

fn mgt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgt")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = mgt(args);
    assert!(
        out.status.success(),
        "mgt {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, n_signal: usize, n_background: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    ok(&[
        "gen",
        "--n-signal",
        &n_signal.to_string(),
        "--n-background",
        &n_background.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&path),
    ]);
    path
}

/// One small MGT run shared by the tests that need a checkpoint.
struct Trained {
    _dir: TempDir,
    data: PathBuf,
    run: PathBuf,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let data = gen(dir.path(), "events.jsonl", 100, 100, 3);
        let run = dir.path().join("run");
        ok(&[
            "train", "--data", s(&data), "--model", "mgt", "--seeds", "1", "--epochs", "2", "--out", s(&run),
        ]);
        Trained { _dir: dir, data, run }
    })
}

#[test]
fn gen_is_deterministic_and_readable() {
    let dir = TempDir::new().unwrap();
    let a = gen(dir.path(), "a.jsonl", 100, 100, 7);
    let b = gen(dir.path(), "b.jsonl", 100, 100, 7);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 200);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let events = read_events(&a).unwrap();
    assert_eq!(events.iter().filter(|e| e.label == Label::Signal).count(), 100);
    assert!(dir.path().join("a.jsonl.manifest.json").exists());
}

#[test]
fn train_writes_run_directory() {
    let t = trained();
    let seed = t.run.join("seed_1");
    assert!(seed.join("checkpoint.json").exists());
    let loss = std::fs::read_to_string(seed.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3, "{loss}");
    assert!(seed.join("explain/specialization.csv").exists());
    for f in ["test.jsonl", "summary.json", "manifest.json", "config.toml"] {
        assert!(t.run.join(f).exists(), "{f}");
    }

    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(seed.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["model"], "mgt");
    assert_eq!(metrics["seed"], 1);
    for key in ["accuracy", "precision", "recall", "f1", "auc", "confusion", "n_events"] {
        assert!(metrics["test"].get(key).is_some(), "{key}");
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seeds"], serde_json::json!([1]));
    let outputs: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["path"].as_str().unwrap())
        .collect();
    assert!(outputs.contains(&"seed_1/checkpoint.json"));
    let mut sorted = outputs.clone();
    sorted.sort();
    assert_eq!(outputs, sorted);
}

#[test]
fn eval_reproduces_recorded_metrics() {
    let t = trained();
    let out = ok(&[
        "eval",
        "--checkpoint",
        s(&t.run.join("seed_1/checkpoint.json")),
        "--data",
        s(&t.run.join("test.jsonl")),
    ]);
    let report: MetricsReport = serde_json::from_slice(&out.stdout).unwrap();
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.run.join("seed_1/metrics.json")).unwrap()).unwrap();
    let recorded: MetricsReport = serde_json::from_value(metrics["test"].clone()).unwrap();
    assert_eq!(report, recorded);
}

#[test]
fn single_class_eval_exits_with_data_error() {
    let t = trained();
    let dir = TempDir::new().unwrap();
    let signal: Vec<_> = read_events(&t.data)
        .unwrap()
        .into_iter()
        .filter(|e| e.label == Label::Signal)
        .collect();
    let path = dir.path().join("signal.jsonl");
    write_events(&path, &signal).unwrap();
    let out = mgt(&["eval", "--checkpoint", s(&t.run.join("seed_1/checkpoint.json")), "--data", s(&path)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("AUC undefined"));
}

#[test]
fn unknown_model_is_a_usage_error() {
    let t = trained();
    let out = mgt(&["train", "--data", s(&t.data), "--model", "cnn"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mgt, gt, mlp, gcn"), "{err}");
}

#[test]
fn bad_config_file_lists_problems() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nheads = 3\n[train]\nepochs = 0\n").unwrap();
    let out = mgt(&["train", "--data", "unused.jsonl", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("heads") && err.contains("epochs"), "{err}");
}

#[test]
fn missing_data_file_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let out = mgt(&["train", "--data", s(&dir.path().join("absent.jsonl")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.jsonl"));
}

#[test]
fn overfit_mlp_classifies_its_training_data() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "tiny.jsonl", 40, 40, 6);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[split]\ntrain_fraction = 0.95\n").unwrap();
    let run = dir.path().join("run");
    ok(&[
        "train", "--data", s(&data), "--config", s(&cfg), "--model", "mlp", "--seeds", "6", "--epochs", "150",
        "--batch-size", "20", "--learning-rate", "3e-3", "--out", s(&run),
    ]);
    let out = ok(&["eval", "--checkpoint", s(&run.join("seed_6/checkpoint.json")), "--data", s(&data)]);
    let report: MetricsReport = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report.accuracy > 0.9, "{report:?}");
}

#[test]
fn explain_exports_one_heatmap_per_summary() {
    let t = trained();
    let dir = TempDir::new().unwrap();
    let test = t.run.join("test.jsonl");
    ok(&[
        "explain",
        "--checkpoint",
        s(&t.run.join("seed_1/checkpoint.json")),
        "--data",
        s(&test),
        "--out",
        s(dir.path()),
    ]);
    let summaries = parse_attention_csv(&std::fs::read_to_string(dir.path().join("attention.csv")).unwrap()).unwrap();
    let node_counts: BTreeSet<usize> = read_events(&test).unwrap().iter().map(|e| e.nodes.len()).collect();
    // 2 layers x 2 heads per node count.
    assert_eq!(summaries.len(), 4 * node_counts.len());
    let pgms = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count();
    assert_eq!(pgms, summaries.len());

    let diag = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 1 + read_events(&test).unwrap().len());

    // Every selected node is routed to exactly k = 2 experts in each layer.
    let spec = std::fs::read_to_string(dir.path().join("specialization.csv")).unwrap();
    let total: u64 = spec
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("0,"))
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    let nodes: usize = read_events(&test).unwrap().iter().map(|e| e.nodes.len()).sum();
    assert_eq!(total, 2 * nodes as u64);
}

#[test]
fn explain_rejects_empty_and_unknown_subsets() {
    let t = trained();
    let dir = TempDir::new().unwrap();
    let ck = t.run.join("seed_1/checkpoint.json");
    let test = t.run.join("test.jsonl");
    let out = mgt(&["explain", "--checkpoint", s(&ck), "--data", s(&test), "--nodes", "99", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("selects no events"));

    let out = mgt(&["explain", "--checkpoint", s(&ck), "--data", s(&test), "--subset", "all", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("test-misclassified"));
}

#[test]
fn ablate_writes_sorted_table() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "events.jsonl", 150, 150, 11);
    let groups = dir.path().join("groups.toml");
    std::fs::write(
        &groups,
        "[[group]]\nname = \"b-jets\"\nfeatures = [\"b1.F1\", \"b2.F1\", \"b1.F5\", \"b2.F5\"]\n\
         [[group]]\nname = \"none\"\nfeatures = []\n",
    )
    .unwrap();
    let out_dir = dir.path().join("ablation");
    ok(&[
        "ablate", "--data", s(&data), "--groups-file", s(&groups), "--model", "mlp", "--seeds", "1", "--epochs", "3",
        "--out", s(&out_dir),
    ]);
    let csv = std::fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "group,features,auc,delta");
    assert_eq!(lines.len(), 3);
    let deltas: Vec<f64> = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(deltas[0] >= deltas[1]);
    let none = lines.iter().find(|l| l.starts_with("none,")).unwrap();
    assert!(none.ends_with(",0"), "{none}");
}

#[test]
fn ablate_rejects_unknown_feature() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "events.jsonl", 20, 20, 1);
    let groups = dir.path().join("groups.toml");
    std::fs::write(&groups, "[[group]]\nname = \"x\"\nfeatures = [\"b9.F1\"]\n").unwrap();
    let out = mgt(&["ablate", "--data", s(&data), "--groups-file", s(&groups), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn parallel_seeds_match_sequential_training() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "events.jsonl", 60, 60, 4);
    let mut checkpoints = Vec::new();
    for jobs in ["1", "3"] {
        let run = dir.path().join(format!("jobs{jobs}"));
        ok(&[
            "train", "--data", s(&data), "--model", "gt", "--seeds", "1,2,3", "--epochs", "1", "--jobs", jobs, "--out",
            s(&run),
        ]);
        let files: Vec<Vec<u8>> = (1..=3)
            .map(|seed| std::fs::read(run.join(format!("seed_{seed}/checkpoint.json"))).unwrap())
            .collect();
        checkpoints.push(files);
    }
    assert_eq!(checkpoints[0], checkpoints[1]);
}
