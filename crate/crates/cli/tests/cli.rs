use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn fltb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fltb"))
        .args(args)
        .env_remove("FLTB_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    fltb(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn edited(dir: &Path, name: &str, from: &str, to: &str) -> PathBuf {
    let text = fs::read_to_string(configs().join(name)).unwrap();
    assert!(text.contains(from), "{from}");
    let path = dir.join(format!("edited-{name}"));
    fs::write(&path, text.replacen(from, to, 1)).unwrap();
    path
}

#[test]
fn dry_run_prints_resolved_config_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run("train", &configs().join("quick.toml"), &out, &["--dry-run"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let printed = String::from_utf8(o.stdout).unwrap();
    assert!(printed.contains("client_test_fraction = 0.2"));
    assert!(printed.contains("participation = 1.0"));
    assert!(!out.exists());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cases = [
        ("quick.toml", "alpha = 0.5", "alpha = 0.0"),
        ("quick.toml", "alpha = 0.5", "alpha = -2.0"),
        ("quick.toml", "hidden = 32", "hidden = 32\nhiden = 3"),
        ("quick.toml", "rounds = 20", "rounds = -1"),
    ];
    for (name, from, to) in cases {
        let cfg = edited(tmp.path(), name, from, to);
        for cmd in ["partition", "train"] {
            let o = run(cmd, &cfg, &out, &[]);
            assert_eq!(o.status.code(), Some(2), "{cmd} {to}: {}", stderr(&o));
        }
    }
    let o = run("train", &tmp.path().join("absent.toml"), &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fltb(&["train", "--out", "x"]).status.code(), Some(2));
    assert_eq!(fltb(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_dataset_file_exits_2_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cifar.toml");
    let text = fs::read_to_string(configs().join("cifar10_lt.toml"))
        .unwrap()
        .replace(
            "\n[dataset.cifar10]\n",
            "\n[dataset.cifar10]\ndir = \"/nonexistent/cifar\"\n",
        );
    fs::write(&cfg, text).unwrap();
    let o = run("train", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("/nonexistent/cifar/data_batch_1.bin"),
        "{}",
        stderr(&o)
    );

    // no dir and no FLTB_DATA_DIR
    let o = run(
        "train",
        &configs().join("cifar10_lt.toml"),
        &tmp.path().join("out"),
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("FLTB_DATA_DIR"));
}

#[test]
fn unwritable_output_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = run(
        "partition",
        &configs().join("quick.toml"),
        &blocker.join("out"),
        &[],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn runtime_failure_exits_1_with_round() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = edited(
        tmp.path(),
        "quick.toml",
        "learning_rate = 0.05",
        "learning_rate = 1e300",
    );
    let o = run("train", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("round 1"), "{}", stderr(&o));
}

#[test]
fn partition_writes_reports_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run("partition", &configs().join("type3_partition.toml"), out, &[]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["partition.csv", "partition.json", "shards.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.join("partition.csv")).unwrap();
    assert!(csv.starts_with("client,class_0,"));
    let global = csv.lines().last().unwrap();
    assert!(global.starts_with("GLOBAL,"));
    let if_g: f64 = global.rsplit(',').next().unwrap().parse().unwrap();
    assert!(if_g <= 1.1, "{global}");
    assert_eq!(csv.lines().count(), 42);

    let shards: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("shards.json")).unwrap()).unwrap();
    assert_eq!(shards.as_array().unwrap().len(), 40);
}

#[test]
fn train_writes_report_metrics_and_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run("train", &configs().join("quick.toml"), &out, &["--workers", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let final_acc = report["final_accuracy"].as_f64().unwrap();
    assert!(report["best_accuracy"].as_f64().unwrap() >= final_acc);
    // frozen at the first green run of configs/quick.toml
    assert_eq!(final_acc, QUICK_FINAL_ACCURACY);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("round,split,metric,class,value\n"));
    let ckpt = fs::read(out.join("checkpoint.bin")).unwrap();
    assert_eq!(&ckpt[..8], b"FLTCKPT1");
    assert!(out.join("timing.json").exists());
}

const QUICK_FINAL_ACCURACY: f64 = 0.988;

#[test]
fn sweep_writes_table_cells_and_survives_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = edited(
        tmp.path(),
        "smoke_grid.toml",
        "label = \"IF_G=10 a=0.5\"\nkind = \"dirichlet\"\nimbalance_factor = 10.0\nalpha = 0.5",
        "label = \"IF_G=10 IF_L=10\"\nkind = \"rotated_long_tail\"\nimbalance_factor = 10.0\nlocal_if = 10.0",
    );
    let out = tmp.path().join("out");
    let o = run("sweep", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("6 warnings"), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("table2.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "algorithm,IF_G=1 IID,IF_G=10 IF_L=10");
    assert_eq!(rows.len(), 5);
    assert!(rows[1..].iter().all(|r| r.ends_with(",ERROR")));
    assert!(out.join("cells/r0_c0_seed0/report.json").exists());
    assert!(out.join("cells/r0_c1_seed1/error.txt").exists());
    let errors: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("errors.json")).unwrap()).unwrap();
    assert_eq!(errors.as_array().unwrap().len(), 6);
}
