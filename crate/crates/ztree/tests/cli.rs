//! End-to-end CLI checks through the compiled binary: exit codes,
//! deterministic outputs, and the documented file formats.

mod common;

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use common::{demo_task, FakeLlm};
use ztree::builder::{build_tree, BuildConfig};
use ztree::gateway::{Gateway, PromptParams, PromptStore, TextAdvisor};
use ztree::oracle::{generate_model, ModelGenConfig, OracleAdvisor};
use ztree::prompt::TemplateSet;
use ztree::tree::{deserialize, serialize};

fn ztree_cmd() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ztree"));
    cmd.env_remove("ZTREE_API_KEY").env_remove("ZTREE_BASE_URL");
    cmd
}

fn run(args: &[&str]) -> Output {
    ztree_cmd().args(args).output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn write_demo_model(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let model = generate_model(5, &ModelGenConfig::default());
    let task = model.task_view().clone();
    let model_path = dir.join("model.json");
    let schema_path = dir.join("schema.json");
    std::fs::write(&model_path, model.to_json()).unwrap();
    std::fs::write(&schema_path, task.to_json()).unwrap();
    (schema_path, model_path)
}

#[test]
fn build_with_oracle_backend_respects_depth() {
    let dir = tempfile::tempdir().unwrap();
    let (schema, model) = write_demo_model(dir.path());
    let out = dir.path().join("tree.json");
    let output = run(&[
        "build",
        "--schema",
        schema.to_str().unwrap(),
        "--backend",
        "oracle",
        "--oracle-model",
        model.to_str().unwrap(),
        "--max-depth",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let tree = deserialize(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(tree.depth() <= 5);
    assert_eq!(tree.meta.advisor_kind, "oracle");
}

#[test]
fn build_http_without_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (schema, _) = write_demo_model(dir.path());
    let output = run(&[
        "build",
        "--schema",
        schema.to_str().unwrap(),
        "--backend",
        "http",
        "--out",
        dir.path().join("t.json").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn build_oracle_without_model_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (schema, _) = write_demo_model(dir.path());
    let output = run(&[
        "build",
        "--schema",
        schema.to_str().unwrap(),
        "--backend",
        "oracle",
        "--out",
        dir.path().join("t.json").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn replay_builds_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let task = demo_task();
    let schema = dir.path().join("schema.json");
    std::fs::write(&schema, task.to_json()).unwrap();
    let recording = dir.path().join("rec");

    // Record a scripted run through the library, then replay via the CLI.
    {
        let gateway =
            Gateway::new(Box::new(FakeLlm)).with_recorder(PromptStore::open(&recording).unwrap());
        let advisor = TextAdvisor::new(
            Arc::new(gateway),
            TemplateSet::embedded(),
            PromptParams::default(),
            3,
        );
        let cfg = BuildConfig {
            max_depth: 3,
            ..BuildConfig::default()
        };
        build_tree(&task, &advisor, &cfg).unwrap();
    }

    let run_replay = |out: &Path| {
        let output = run(&[
            "build",
            "--schema",
            schema.to_str().unwrap(),
            "--backend",
            "replay",
            "--record-dir",
            recording.to_str().unwrap(),
            "--max-depth",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(
            output.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        std::fs::read(out).unwrap()
    };
    let a = run_replay(&dir.path().join("a.json"));
    let b = run_replay(&dir.path().join("b.json"));
    assert_eq!(a, b);
}

#[test]
fn replay_without_recording_fails_as_transport() {
    let dir = tempfile::tempdir().unwrap();
    let (schema, _) = write_demo_model(dir.path());
    let empty = dir.path().join("empty-rec");
    std::fs::create_dir_all(&empty).unwrap();
    let output = run(&[
        "build",
        "--schema",
        schema.to_str().unwrap(),
        "--backend",
        "replay",
        "--record-dir",
        empty.to_str().unwrap(),
        "--out",
        dir.path().join("t.json").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3));
}

fn build_oracle_tree(dir: &Path, depth: u32) -> (std::path::PathBuf, std::path::PathBuf) {
    let model = generate_model(5, &ModelGenConfig::default());
    let task = model.task_view().clone();
    let advisor = OracleAdvisor::new(model, &task).unwrap();
    let cfg = BuildConfig {
        max_depth: depth,
        ..BuildConfig::default()
    };
    let tree = build_tree(&task, &advisor, &cfg).unwrap();
    let tree_path = dir.join("tree.json");
    std::fs::write(&tree_path, serialize(&tree)).unwrap();

    let data = advisor.model().sample(&task, 60, 11);
    let mut csv = String::new();
    let feature_names: Vec<&str> = task.features.iter().map(|f| f.name.as_str()).collect();
    csv.push_str(&feature_names.join(","));
    csv.push_str(",target\n");
    for (row, label) in data.rows.iter().zip(&data.labels) {
        let mut cells = Vec::new();
        for name in &feature_names {
            match row.get(name) {
                Some(ztree::tree::RowValue::Number(v)) => cells.push(format!("{v}")),
                Some(ztree::tree::RowValue::Category(c)) => cells.push(c.clone()),
                None => cells.push(String::new()),
            }
        }
        csv.push_str(&cells.join(","));
        csv.push_str(&format!(",{label}\n"));
    }
    let csv_path = dir.join("data.csv");
    std::fs::write(&csv_path, csv).unwrap();
    (tree_path, csv_path)
}

#[test]
fn predict_appends_columns_and_explains() {
    let dir = tempfile::tempdir().unwrap();
    let (tree, csv) = build_oracle_tree(dir.path(), 4);
    let out = dir.path().join("preds.csv");
    let output = run(&[
        "predict",
        "--tree",
        tree.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--explain",
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.ends_with("predicted,p_class_a,p_class_b,path"));
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), 60);
    for line in body {
        assert!(line.contains("class_a") || line.contains("class_b"));
    }
}

#[test]
fn predict_missing_values_skip_only_when_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let (tree, csv) = build_oracle_tree(dir.path(), 4);
    // Blank out the first feature of the first data row.
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(|l| l.to_string()).collect();
    let mut cells: Vec<&str> = lines[1].split(',').collect();
    cells[0] = "";
    lines[1] = cells.join(",");
    std::fs::write(&csv, lines.join("\n")).unwrap();

    let strict = run(&[
        "predict",
        "--tree",
        tree.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(strict.status.code(), Some(4));

    let out = dir.path().join("preds.csv");
    let lenient = run(&[
        "predict",
        "--tree",
        tree.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--allow-skips",
    ]);
    assert!(lenient.status.success());
    let stderr = String::from_utf8_lossy(&lenient.stderr);
    assert!(
        stderr.contains("skipped 1 of"),
        "missing skip summary: {stderr}"
    );
    // The skipped row keeps its place with empty prediction cells.
    let written = std::fs::read_to_string(&out).unwrap();
    assert!(written.lines().nth(1).unwrap().ends_with(",,,"));
}

#[test]
fn eval_baseline_runs_are_seeded_and_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (tree, csv) = build_oracle_tree(dir.path(), 4);
    let args = [
        "eval",
        "--tree",
        tree.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--baseline",
        "cart",
        "--max-depth",
        "3",
        "--shots",
        "4",
        "--test-fraction",
        "0.5",
        "--seed",
        "1",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(
        a.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&a.stderr)
    );
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("cart baseline"));
    assert!(stdout(&a).contains("zero-shot tree"));
}

#[test]
fn eval_baseline_without_split_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (tree, csv) = build_oracle_tree(dir.path(), 4);
    let output = run(&[
        "eval",
        "--tree",
        tree.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--baseline",
        "cart",
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn render_styles() {
    let dir = tempfile::tempdir().unwrap();
    let (tree, _) = build_oracle_tree(dir.path(), 4);
    let dot = run(&["render", "--tree", tree.to_str().unwrap(), "--style", "dot"]);
    assert!(dot.status.success());
    assert!(stdout(&dot).starts_with("digraph"));

    let text = run(&[
        "render",
        "--tree",
        tree.to_str().unwrap(),
        "--style",
        "text",
    ]);
    assert!(text.status.success());
    assert!(stdout(&text).contains("<="));
}

#[test]
fn render_invalid_tree_is_failure_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"format_version\":1,").unwrap();
    let output = run(&["render", "--tree", bad.to_str().unwrap(), "--style", "text"]);
    assert_eq!(output.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&output.stderr).contains("document"));
}

#[test]
fn demo_oracle_prints_comparison_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("demo");
    let output = run(&[
        "demo-oracle",
        "--seed",
        "3",
        "--rows",
        "400",
        "--max-depth",
        "5",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let text = stdout(&output);
    assert!(text.contains("zero-shot tree"));
    assert!(text.contains("cart 4-shot"));
    assert!(text.contains("bayes ceiling"));
    for file in ["model.json", "schema.json", "tree.json"] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }
    // The written tree parses and respects the documented format.
    let tree = deserialize(&std::fs::read_to_string(out_dir.join("tree.json")).unwrap()).unwrap();
    assert!(tree.depth() <= 5);
}

#[test]
fn unknown_flag_is_usage_error() {
    let output = run(&["build", "--no-such-flag"]);
    assert_eq!(output.status.code(), Some(2));
}
