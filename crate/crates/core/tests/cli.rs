use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use violin::harness::{probe_oracle, probe_spec, ProbeFamily};

fn violin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_violin")).args(args).output().unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = violin(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for item in fs::read_dir(dir).unwrap() {
            let path = item.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                files.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn gen(out: &Path, scale: &str) -> Value {
    ok_json(&["gen", "--seed", "7", "--scale", scale, "--out", out.to_str().unwrap()])
}

#[test]
fn gen_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let summary = gen(&a, "0.001");
    gen(&b, "0.001");
    assert_eq!(summary["total"], 48);
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 49);
    assert_eq!(ta, tb);
}

#[test]
fn gen_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "0.001");
    let out = violin(&["gen", "--scale", "0.001", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "gen");
    let again = violin(&[
        "gen",
        "--scale",
        "0.001",
        "--overwrite",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(again.status.success());
}

#[test]
fn eval_of_ground_truth_scores_zero_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let report = dir.path().join("report");
    gen(&data, "0.01");
    let summary = ok_json(&[
        "eval",
        "--manifest",
        data.join("manifest.jsonl").to_str().unwrap(),
        "--images",
        data.join("gt").to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
        "--model-tag",
        "ground-truth",
    ]);
    assert_eq!(summary["coverage"], 1.0);
    assert_eq!(summary["failures"], 0);
    for g in summary["aggregates"].as_array().unwrap() {
        assert_eq!(g["pre_mean"], 0.0);
        assert_eq!(g["pur_mean"], 0.0);
    }
    let csv = fs::read_to_string(report.join("report.csv")).unwrap();
    let rows = violin::harness::parse_csv(&csv).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.model_tag == "ground-truth"));
    let md = fs::read_to_string(report.join("report.md")).unwrap();
    assert!(md.contains("pre-mean"));
}

#[test]
fn eval_reports_missing_images_without_aborting() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, "0.001");
    let gt = data.join("gt");
    let mut removed = 0;
    for item in fs::read_dir(&gt).unwrap().take(5) {
        fs::remove_file(item.unwrap().path()).unwrap();
        removed += 1;
    }
    let summary = ok_json(&[
        "eval",
        "--manifest",
        data.join("manifest.jsonl").to_str().unwrap(),
        "--images",
        gt.to_str().unwrap(),
        "--report",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(summary["failures"], removed);
    assert_eq!(summary["evaluated"], 48 - removed);
    let jsonl = fs::read_to_string(dir.path().join("r/report.jsonl")).unwrap();
    let kinds: Vec<String> = jsonl
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v["type"] == "failure")
        .map(|v| v["kind"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds, vec!["missing-file"; removed]);
}

#[test]
fn split_tags_every_entry() {
    let dir = tempfile::tempdir().unwrap();
    let total = gen(dir.path(), "0.005")["total"].as_u64().unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    let split = dir.path().join("split.jsonl");
    let summary = ok_json(&[
        "split",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        split.to_str().unwrap(),
    ]);
    let entries = violin::dataset::read_manifest(&split).unwrap();
    let train = entries
        .iter()
        .filter(|e| e.split == Some(violin::dataset::SplitTag::Train))
        .count();
    assert_eq!(summary["train"], train);
    assert_eq!(
        summary["train"].as_u64().unwrap() + summary["test"].as_u64().unwrap(),
        total
    );

    let hue = dir.path().join("hue.jsonl");
    ok_json(&[
        "split",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        hue.to_str().unwrap(),
        "--strategy",
        "hue1",
    ]);
    let tagged = violin::dataset::read_manifest(&hue).unwrap();
    assert_eq!(tagged.len() as u64, total);
    for e in &tagged {
        assert_eq!(
            e.generalization.contains_key("hue1"),
            e.single_color().is_some(),
            "{}",
            e.id
        );
    }
}

#[test]
fn metrics_pair_and_image() {
    let v = ok_json(&["metrics", "--pair", "#9966CC", "#9966cc"]);
    assert_eq!(v["precision"]["pre_mean"], 0.0);
    let v = ok_json(&["metrics", "--pair", "#000000", "#FFFFFF"]);
    assert_eq!(v["precision"]["normalized"]["rgb_ed"], 1.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.png");
    image::RgbImage::from_pixel(32, 32, image::Rgb([153, 102, 204]))
        .save(&path)
        .unwrap();
    let v = ok_json(&["metrics", "--image", path.to_str().unwrap(), "--target", "#9966CC"]);
    let text = v.to_string();
    assert!(text.contains("pur_mean"), "{text}");
}

#[test]
fn probe_reads_images_from_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    for p in probe_spec(ProbeFamily::Spatial).prompts {
        let entry = p.to_entry(128);
        let img = probe_oracle(&entry, 0).unwrap();
        img.save(dir.path().join(format!("{}.png", entry.id))).unwrap();
    }
    let v = ok_json(&[
        "probe",
        "--family",
        "spatial",
        "--resolution",
        "128",
        "--images",
        dir.path().to_str().unwrap(),
    ]);
    let results = v[0]["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    for r in results {
        assert_eq!(r["split"]["flagged"], false, "{r}");
    }
}

#[test]
fn bad_input_yields_json_error_and_exit_1() {
    let out = violin(&["metrics", "--pair", "#12345", "#000000"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(!err["error"]["message"].as_str().unwrap().is_empty());

    let out = violin(&[
        "eval",
        "--manifest",
        "/no/such/manifest.jsonl",
        "--images",
        ".",
        "--report",
        ".",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "manifest");
}
