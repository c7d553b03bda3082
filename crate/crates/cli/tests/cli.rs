use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[model]
dim = 8
class_dim = 4
text_layers = 1
text_heads = 2
fusion_blocks = 2
fusion_heads = 2

[train]
epochs = 2
batch_size = 4
lr_fusion = 0.001
lr_other = 0.001
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewrefer"))
        .args(args)
        .env_remove("VIEWREFER_LLM_URL")
        .env_remove("VIEWREFER_LLM_TOKEN")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "gen",
            "--n",
            "40",
            "--test-n",
            "10",
            "--seed",
            "7",
            "--out",
            p(out),
        ]);
    }
    for file in ["train.jsonl", "test.jsonl", "config.toml"] {
        let (x, y) = (
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
        );
        assert!(!x.is_empty());
        assert_eq!(x, y, "{file} differs");
    }
    assert_eq!(
        fs::read_to_string(a.join("train.jsonl"))
            .unwrap()
            .lines()
            .count(),
        40
    );
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(run(&["gen", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["train"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(
        run(&["train", "--data", "x", "--out", "y", "--row", "99"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn missing_inputs_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--data",
        p(&dir.path().join("absent")),
        "--out",
        p(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn too_few_ablation_seeds_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&["gen", "--n", "12", "--test-n", "4", "--out", p(&data)]);
    let out = run(&[
        "ablate",
        "--data",
        p(&data),
        "--seeds",
        "2",
        "--out",
        p(&dir.path().join("ab")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run_dir = dir.path().join("run");
    let config = dir.path().join("tiny.toml");
    fs::write(&config, TINY).unwrap();

    ok(&[
        "gen",
        "--n",
        "24",
        "--test-n",
        "10",
        "--seed",
        "3",
        "--out",
        p(&data),
    ]);
    ok(&["expand", "--data", p(&data)]);
    let expanded = fs::read_to_string(data.join("expanded_test.jsonl")).unwrap();
    assert_eq!(expanded.lines().count(), 10);

    let stdout = ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&run_dir),
        "--config",
        p(&config),
    ]);
    assert!(stdout.contains("epoch"), "{stdout}");
    for file in [
        "config.toml",
        "history.csv",
        "eval.json",
        "loss.svg",
        "accuracy.svg",
    ] {
        assert!(run_dir.join(file).exists(), "missing {file}");
    }
    for ckpt in ["best", "last"] {
        assert!(run_dir.join(ckpt).join("params.vrtn").exists());
    }
    let history = fs::read_to_string(run_dir.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let best = run_dir.join("best");
    let report = dir.path().join("eval.json");
    let stdout = ok(&[
        "eval",
        "--ckpt",
        p(&best),
        "--data",
        p(&data),
        "--out",
        p(&report),
    ]);
    assert!(stdout.contains("overall"));
    assert!(report.exists());

    let trend_dir = dir.path().join("trend");
    let stdout = ok(&[
        "trend",
        "--ckpt",
        p(&best),
        "--data",
        p(&data),
        "--out",
        p(&trend_dir),
    ]);
    assert!(stdout.contains("canonical view is argmax"), "{stdout}");
    assert!(trend_dir.join("trend.svg").exists());
    assert_eq!(
        fs::read_to_string(trend_dir.join("trend_blocks.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let stdout = ok(&[
        "inspect",
        "--ckpt",
        p(&best),
        "--data",
        p(&data),
        "--sample",
        "0",
    ]);
    assert!(stdout.contains("original"), "{stdout}");
    assert!(stdout.contains("predicted"), "{stdout}");
    let out = run(&[
        "inspect",
        "--ckpt",
        p(&best),
        "--data",
        p(&data),
        "--sample",
        "999",
    ]);
    assert_eq!(out.status.code(), Some(1));

    let plotted = ok(&["plot", "--run", p(&run_dir)]);
    assert!(plotted.contains("loss.svg"));
}

#[test]
fn ablate_writes_runs_and_means() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out_dir = dir.path().join("ablate");
    let config = dir.path().join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    ok(&["gen", "--n", "12", "--test-n", "6", "--out", p(&data)]);
    ok(&[
        "ablate",
        "--data",
        p(&data),
        "--seeds",
        "3",
        "--rows",
        "0,6",
        "--epochs",
        "1",
        "--jobs",
        "2",
        "--config",
        p(&config),
        "--out",
        p(&out_dir),
    ]);
    let csv = fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    // header, 2 rows x 3 seeds, then a mean and a std line per row
    assert_eq!(csv.lines().count(), 1 + 6 + 4);
    assert_eq!(csv.lines().filter(|l| l.contains(",mean,")).count(), 2);
    assert!(out_dir.join("ablation.svg").exists());
    assert!(out_dir.join("config.toml").exists());
}
