use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn mrae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrae")).args(args).output().expect("spawn mrae")
}

fn fixture() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/six_annotations.json")
        .to_string_lossy()
        .into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn filter_prints_counts_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("small.json");
    let o = mrae(&["filter-coco", "--in", &fixture(), "--out", s(&out)]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("retained 4 / dropped 2"), "{}", stdout(&o));
    let manifest = read_json(&dir.path().join("small.json.manifest.json"));
    assert_eq!(manifest["command"], "filter-coco");
    assert_eq!(manifest["config"]["max_area"], 1024.0);
    assert!(manifest["started_at"].is_string() && manifest["finished_at"].is_string());
    assert!(manifest["tool_version"].is_string());
}

#[test]
fn zero_max_area_gives_empty_subset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("none.json");
    let o = mrae(&["filter-coco", "--in", &fixture(), "--out", s(&out), "--max-area", "0"]);
    assert!(o.status.success());
    let v = read_json(&out);
    assert_eq!(v["annotations"].as_array().unwrap().len(), 0);
    assert_eq!(v["images"].as_array().unwrap().len(), 0);
    assert_eq!(v["categories"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_input_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.json");
    let o = mrae(&["filter-coco", "--in", s(&dir.path().join("absent.json")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn malformed_input_is_a_data_error_naming_the_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"images": [], "categories": [], "annotations": [{"image_id": 1, "category_id": 1, "bbox": [0, 0, 3]}]}"#)
        .unwrap();
    let o = mrae(&["filter-coco", "--in", s(&bad), "--out", s(&dir.path().join("o.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("annotations[0].bbox"), "{o:?}");
}

#[test]
fn anchors_default_shape_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("a.json");
    assert!(mrae(&["cluster-anchors", "--in", &fixture(), "--out", s(&json)]).status.success());
    let v = read_json(&json);
    assert_eq!(v["scales"].as_array().unwrap().len(), 4);
    assert_eq!(v["ratios"].as_array().unwrap().len(), 3);

    let csv = dir.path().join("a.csv");
    assert!(mrae(&["cluster-anchors", "--in", &fixture(), "--out", s(&csv), "--format", "csv"]).status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("kind,index,value\n"));
    assert_eq!(text.lines().count(), 8);

    let o = mrae(&["cluster-anchors", "--in", &fixture(), "--out", s(&json), "--scales", "7"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn histogram_emits_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h.csv");
    assert!(mrae(&["histogram", "--in", &fixture(), "--out", s(&out), "--bin-width", "16", "--bins", "4"]).status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 17);
    let total: u64 = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 6);
    assert_eq!(mrae(&["histogram", "--in", &fixture(), "--out", s(&out), "--bins", "0"]).status.code(), Some(1));
}

#[test]
fn gradcheck_flags() {
    assert_eq!(mrae(&["gradcheck", "--eps", "0"]).status.code(), Some(1));
    let loose = mrae(&["gradcheck", "--seed", "2", "--tol", "1e30"]);
    assert!(loose.status.success());
    assert_eq!(mrae(&["gradcheck", "--seed", "2", "--tol", "0"]).status.code(), Some(3));
}

#[test]
fn train_flag_combinations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = s(&out);
    for bad in [
        vec!["train", "--fusion", "soft", "--template", "2", "--out", o],
        vec!["train", "--fusion", "mrae", "--out", o],
        vec!["train", "--fusion", "mrae", "--template", "4", "--out", o],
        vec!["train", "--fusion", "hard", "--out", o],
        vec!["train", "--fusion", "hard", "--hard-level", "9", "--out", o],
        vec!["train", "--fusion", "soft", "--switch-template", "2@5", "--out", o],
        vec!["train", "--fusion", "mrae", "--template", "1", "--switch-template", "2", "--out", o],
        vec!["train", "--fusion", "mrae", "--template", "1", "--lr-schedule", "5:0.1,5:0.2", "--out", o],
        vec!["train", "--fusion", "sideways", "--out", o],
    ] {
        assert_eq!(mrae(&bad).status.code(), Some(1), "{bad:?}");
    }
    assert!(!out.exists());
}

#[test]
fn zero_step_run_writes_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = mrae(&["train", "--fusion", "mrae", "--template", "2", "--steps", "0", "--val-images", "8", "--out", s(&out)]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(std::fs::read_to_string(out.join("report.csv")).unwrap(), "step,loss,a1,a2,a3\n");
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["steps"], 0);
    assert!(summary["final_loss"].is_null());
    for f in ["manifest.json", "timing.json"] {
        assert!(out.join(f).is_file());
    }
}

#[test]
fn short_runs_log_template_maximum_and_compare_merges() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("mrae");
    let b = dir.path().join("hard");
    let base = ["--steps", "6", "--n-images", "6", "--val-images", "6", "--seed", "3"];
    let mut args = vec!["train", "--fusion", "mrae", "--template", "2", "--out", s(&a)];
    args.extend(base);
    assert!(mrae(&args).status.success());
    let mut args = vec!["train", "--fusion", "hard", "--hard-level", "random", "--out", s(&b)];
    args.extend(base);
    assert!(mrae(&args).status.success());

    let csv = std::fs::read_to_string(a.join("report.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').skip(2).map(|x| x.parse().unwrap()).collect();
        assert!(v[1] > v[0] && v[1] > v[2], "{line}");
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    let table = dir.path().join("cmp.csv");
    let md = dir.path().join("cmp.md");
    let o = mrae(&["compare", "--reports", s(&a), s(&b), "--out", s(&table), "--markdown", s(&md)]);
    assert!(o.status.success(), "{o:?}");
    let text = std::fs::read_to_string(&table).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("run,fusion,steps,seed,final_loss,localization_score"));
    // Values agree with the individual summaries.
    for (row, dir) in rows[1..].iter().zip([&a, &b]) {
        let summary = read_json(&dir.join("summary.json"));
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[1], summary["fusion"].as_str().unwrap());
        assert_eq!(cells[4].parse::<f64>().unwrap(), summary["final_loss"].as_f64().unwrap());
        assert_eq!(cells[5].parse::<f64>().unwrap(), summary["evaluation"]["localization_score"].as_f64().unwrap());
    }
    assert_eq!(std::fs::read_to_string(&md).unwrap().lines().count(), 4);

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(mrae(&["compare", "--reports", s(&empty), "--out", s(&table)]).status.code(), Some(2));
}

#[test]
fn single_precision_train() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = mrae(&[
        "train", "--fusion", "soft", "--steps", "3", "--n-images", "3", "--val-images", "3", "--precision", "f32", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(read_json(&out.join("summary.json"))["precision"], "f32");
}

#[test]
fn backbone_config_file_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bb.cfg");
    std::fs::write(&cfg, "channels = 8, 12, 16\nstem_channels = 4\n").unwrap();
    let out = dir.path().join("r");
    let o = mrae(&[
        "train", "--fusion", "soft", "--steps", "2", "--n-images", "2", "--val-images", "2", "--backbone-config", s(&cfg), "--out", s(&out),
    ]);
    assert!(o.status.success(), "{o:?}");
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["config"]["model"]["backbone"]["channels"], serde_json::json!([8, 12, 16]));

    std::fs::write(&cfg, "channels = 16, 8, 4\n").unwrap();
    let o = mrae(&["train", "--fusion", "soft", "--steps", "1", "--backbone-config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}
