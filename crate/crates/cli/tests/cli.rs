mod common;

use std::path::Path;
use std::process::Output;

use common::*;
use engine_core::manifest::read_manifest;
use engine_core::{write_manifest, DatasetManifest};

fn fails_with(out: Output, needle: &str) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(!out.status.success(), "expected failure, stderr: {stderr}");
    assert!(stderr.contains(needle), "stderr {stderr:?} lacks {needle:?}");
}

fn write(dir: &Path, rel: &str, body: &str) {
    let p = dir.join(rel);
    if let Some(parent) = p.parent() {
        std::fs::create_dir_all(parent).unwrap();
    }
    std::fs::write(p, body).unwrap();
}

fn pool(dir: &Path, name: &str, records: Vec<engine_core::SampleRecord>) {
    let m = DatasetManifest::new("pose", records, vec![]).unwrap();
    write_manifest(&m, &dir.join(name)).unwrap();
}

#[test]
fn compose_reports_missing_pool() {
    let dir = tempfile::tempdir().unwrap();
    pool(dir.path(), "real.jsonl", vec![real_record("r", 1)]);
    let out = engine(dir.path())
        .args(["compose", "--condition", "E", "--real", "real.jsonl", "--out", "e.jsonl"])
        .output()
        .unwrap();
    fails_with(out, "filtered synthetic");
    assert!(!dir.path().join("e.jsonl").exists());

    let out = engine(dir.path())
        .args(["compose", "--condition", "Z", "--real", "real.jsonl", "--out", "e.jsonl"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn compose_applies_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    pool(w, "real.jsonl", vec![real_record("r", 1)]);
    pool(w, "raw.jsonl", vec![syn_record("a", 1, 1), syn_record("b", 1, 2)]);
    pool(w, "clean.jsonl", vec![syn_record("a", 1, 1)]);
    write(w, "verdicts.jsonl", &format!(
        "{{\"id\":\"{}\",\"decision\":\"accept\",\"reviewer\":\"r\",\"decided_at\":1}}\n",
        sid("b")
    ));
    run_ok(engine(w).args([
        "compose", "--condition", "e", "--real", "real.jsonl", "--raw-syn", "raw.jsonl",
        "--filtered-syn", "clean.jsonl", "--verdicts", "verdicts.jsonl", "--out", "e.jsonl",
    ]));
    let e = read_manifest(&w.join("e.jsonl")).unwrap();
    assert_eq!(e.len(), 3);
    assert!(e.contains(&sid("b")));
}

#[test]
fn gen_plan_requires_control_section() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.toml", "tau_sem = 1.0\n");
    let out = engine(dir.path())
        .args(["gen-plan", "--config", "c.toml", "--out", "plan.jsonl"])
        .output()
        .unwrap();
    fails_with(out, "[control]");
}

#[test]
fn gen_collect_rejects_missing_output() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    write(w, "c.toml", "tau_sem = 1.0\nseed = 3\n[control]\nprompts = [\"p\"]\nn_scenes = 1\nk_variations = 2\n");
    run_ok(engine(w).args(["gen-plan", "--config", "c.toml", "--out", "plan.jsonl"]));
    assert_eq!(std::fs::read_to_string(w.join("plan.jsonl")).unwrap().lines().count(), 2);
    write(w, "out/a.png", "one");
    write(w, "outputs.jsonl", "{\"scene_index\":1,\"variation_index\":1,\"image_path\":\"a.png\"}\n");
    let out = engine(w)
        .args(["gen-collect", "--plan", "plan.jsonl", "--outputs", "outputs.jsonl", "--root", "out", "--config", "c.toml", "--out", "syn.jsonl"])
        .output()
        .unwrap();
    fails_with(out, "missing");

    write(w, "out/b.png", "two");
    write(w, "outputs.jsonl", "{\"scene_index\":1,\"variation_index\":1,\"image_path\":\"a.png\"}\n{\"scene_index\":1,\"variation_index\":2,\"image_path\":\"b.png\"}\n");
    run_ok(engine(w).args(["gen-collect", "--plan", "plan.jsonl", "--outputs", "outputs.jsonl", "--root", "out", "--config", "c.toml", "--out", "syn.jsonl"]));
    let syn = read_manifest(&w.join("syn.jsonl")).unwrap();
    assert_eq!(syn.len(), 2);
    assert!(syn.records().iter().all(|r| r.image_path.starts_with("out")));
}

#[test]
fn register_hashes_and_rejects_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    write(w, "c.toml", "tau_sem = 1.0\n");
    write(w, "imgs/a.png", "alpha");
    write(w, "imgs/notes.txt", "not an image");
    write(w, "labels/a.txt", "0 0.5 0.5 0.1 0.1");
    run_ok(engine(w).args(["register", "--images", "imgs", "--labels", "labels", "--config", "c.toml", "--out", "m.jsonl"]));
    let m = read_manifest(&w.join("m.jsonl")).unwrap();
    assert_eq!(m.len(), 1);
    assert_eq!(m.records()[0].id, sid("alpha"));
    assert!(m.records()[0].label_path.is_some());

    write(w, "imgs/b.jpg", "alpha");
    let out = engine(w)
        .args(["register", "--images", "imgs", "--config", "c.toml", "--out", "m2.jsonl"])
        .output()
        .unwrap();
    fails_with(out, "identical bytes");
}

fn filter_fixture(w: &Path, tau_sem: &str) {
    write(w, "c.toml", &format!("tau_sem = {tau_sem}\n"));
    pool(w, "syn.jsonl", vec![syn_record("a", 1, 1)]);
    let id = sid("a");
    write(w, "embs.jsonl", &format!("{{\"id\":\"{id}\",\"dim\":2,\"vec\":[1.0,0.0]}}\n"));
    write(w, "dets.jsonl", &format!("{{\"id\":\"{id}\",\"image_w\":10,\"image_h\":10,\"persons\":[]}}\n"));
    write(w, "bank.jsonl", "{\"polarity\":\"positive\",\"template\":\"p\",\"vec\":[1.0,0.0]}\n{\"polarity\":\"negative\",\"template\":\"n\",\"vec\":[0.0,1.0]}\n");
    write(w, "cal.json", r#"{"tau_sem":10.0,"achieved_recall":1.0,"achieved_rejection":1.0,"n_pos":1,"n_neg":1,"recall_target":0.95,"method":"m","structural":null}"#);
}

fn filter_args(calibration: bool) -> Vec<&'static str> {
    let mut args = vec![
        "filter", "--manifest", "syn.jsonl", "--embeddings", "embs.jsonl", "--detections", "dets.jsonl",
        "--prompt-bank", "bank.jsonl", "--config", "c.toml", "--out-clean", "clean.jsonl", "--out-decisions", "dec.jsonl",
    ];
    if calibration {
        args.extend(["--calibration", "cal.json"]);
    }
    args
}

#[test]
fn filter_threshold_sources() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    filter_fixture(w, "5.0");
    fails_with(engine(w).args(filter_args(true)).output().unwrap(), "tau_sem");
    run_ok(engine(w).args(filter_args(false)));
    let decisions = std::fs::read_to_string(w.join("dec.jsonl")).unwrap();
    assert!(decisions.contains("\"stage\":\"structural\""), "{decisions}");

    filter_fixture(w, "\"calibrate\"");
    fails_with(engine(w).args(filter_args(false)).output().unwrap(), "calibrat");
    run_ok(engine(w).args(filter_args(true)));
    let out = engine(w).args(filter_args(true)).arg("--calibrated-structural").output().unwrap();
    fails_with(out, "structural thresholds");
}

#[test]
fn diag_rejects_shared_ids() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let line = |tag: &str, v: [f64; 2]| format!("{{\"id\":\"{}\",\"dim\":2,\"vec\":[{},{}]}}\n", sid(tag), v[0], v[1]);
    write(w, "real.jsonl", &[line("a", [0.0, 0.0]), line("b", [2.0, 0.0])].concat());
    write(w, "syn.jsonl", &[line("c", [1.0, 1.0]), line("d", [1.0, 3.0])].concat());
    run_ok(engine(w).args(["diag", "--real-embs", "real.jsonl", "--syn-embs", "syn.jsonl", "--out-summary", "gap.json", "--out-proj", "p.csv"]));
    let gap: serde_json::Value = serde_json::from_slice(&std::fs::read(w.join("gap.json")).unwrap()).unwrap();
    assert!((gap["frechet_gap"].as_f64().unwrap() - 6f64.sqrt()).abs() < 1e-12);
    let csv = std::fs::read_to_string(w.join("p.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("id,u,v,origin"));
    assert_eq!(csv.lines().count(), 5);

    write(w, "syn.jsonl", &[line("a", [1.0, 1.0]), line("d", [1.0, 3.0])].concat());
    let out = engine(w)
        .args(["diag", "--real-embs", "real.jsonl", "--syn-embs", "syn.jsonl", "--out-summary", "gap.json", "--out-proj", "p.csv"])
        .output()
        .unwrap();
    fails_with(out, &sid("a").to_string());
}

#[test]
fn calibrate_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let rows: Vec<(String, f64, &str)> = (0..4)
        .map(|i| (sid(&format!("m{i}")).to_string(), i as f64, if i < 3 { "positive" } else { "negative" }))
        .collect();
    let margins: String = rows.iter().map(|(id, m, _)| format!("{{\"id\":\"{id}\",\"margin\":{m:?}}}\n")).collect();
    let labels: String = std::iter::once("id,label\n".to_owned())
        .chain(rows.iter().map(|(id, _, l)| format!("{id},{l}\n")))
        .collect();
    write(w, "margins.jsonl", &margins);
    write(w, "labels.csv", &labels);
    run_ok(engine(w).args(["calibrate", "--margins", "margins.jsonl", "--labels", "labels.csv", "--recall", "0.6", "--out", "cal.json"]));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(w.join("cal.json")).unwrap()).unwrap();
    assert_eq!(report["tau_sem"], 1.0);
    assert_eq!(report["n_pos"], 3);

    let out = engine(w)
        .args(["calibrate", "--margins", "margins.jsonl", "--labels", "labels.csv", "--detections", "d.jsonl", "--out", "cal.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn review_export_of_fresh_log_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    write(w, "review.log", "");
    run_ok(engine(w).args(["review", "export", "--log", "review.log", "--out", "v.jsonl"]));
    assert_eq!(std::fs::read(w.join("v.jsonl")).unwrap(), b"");
}

#[test]
fn help_lists_every_stage() {
    let out = run_ok(std::process::Command::new(ENGINE).arg("--help"));
    let help = String::from_utf8_lossy(&out.stdout);
    for cmd in ["gen-plan", "gen-collect", "register", "ingest", "margins", "calibrate", "filter", "compose", "export", "import", "diag", "review"] {
        assert!(help.contains(cmd), "help lacks {cmd}");
    }
}
