use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use srrdoc::corpus::{synthesize_corpus, CorpusRecord, LayoutTemplate};
use srrdoc::pipeline::{run_parse, unordered_record, DetectorKind, OrderKind, Pipeline, PipelineConfig};

fn corpus(n: usize) -> Vec<CorpusRecord> {
    synthesize_corpus(&LayoutTemplate::ALL, n, 7)
}

fn identity_config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig { out: out.to_path_buf(), ..Default::default() };
    cfg.order.kind = OrderKind::Gt;
    cfg
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn identity_run_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let records = corpus(36);
    let (run, manifest) = run_parse(&identity_config(dir.path()), &records).unwrap();
    assert_eq!(run.failed(), 0);
    assert_eq!(manifest.pages.len(), 36);
    for p in run.metrics().unwrap() {
        for v in [p.text_edit, p.formula_edit, p.order_edit].into_iter().flatten() {
            assert_eq!(v, 0.0, "{p:?}");
        }
        assert!(p.table_teds.is_none_or(|t| t == 1.0), "{p:?}");
    }
    let files = snapshot(dir.path());
    assert_eq!(files.keys().filter(|k| k.ends_with(".md")).count(), 36);
    for name in ["manifest.json", "predictions.jsonl", "report.json", "report.csv"] {
        assert!(files.contains_key(name), "{name}");
    }
}

#[test]
fn perturbed_detection_and_artifacts_raise_text_edit() {
    let records = corpus(30);
    let clean_dir = tempfile::tempdir().unwrap();
    let (clean, _) = run_parse(&identity_config(clean_dir.path()), &records).unwrap();

    let noisy_dir = tempfile::tempdir().unwrap();
    let mut cfg = identity_config(noisy_dir.path());
    cfg.perturb.enabled = true;
    cfg.recognizer.boundary_artifact = true;
    let (noisy, _) = run_parse(&cfg, &records).unwrap();
    let before = clean.report.unwrap().text_edit.unwrap();
    let after = noisy.report.unwrap().text_edit.unwrap();
    assert_eq!(before, 0.0);
    assert!(after > 0.02, "{after}");
}

#[test]
fn repeated_runs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = identity_config(dir.path());
    cfg.perturb.enabled = true;
    cfg.recognizer.char_error_rate = 0.05;
    cfg.order.kind = OrderKind::Geometric;
    let records = corpus(12);
    run_parse(&cfg, &records).unwrap();
    let first = snapshot(dir.path());
    fs::remove_dir_all(dir.path()).unwrap();
    run_parse(&cfg, &records).unwrap();
    assert_eq!(first, snapshot(dir.path()));
}

#[test]
fn parallel_recognition_matches_serial() {
    let records = corpus(12);
    let serial = tempfile::tempdir().unwrap();
    let parallel = tempfile::tempdir().unwrap();
    let mut cfg = identity_config(serial.path());
    cfg.recognizer.char_error_rate = 0.1;
    run_parse(&cfg, &records).unwrap();
    cfg.out = parallel.path().to_path_buf();
    cfg.parallelism = 4;
    run_parse(&cfg, &records).unwrap();
    let (a, b) = (snapshot(serial.path()), snapshot(parallel.path()));
    for (name, bytes) in &a {
        if name != "manifest.json" {
            assert_eq!(Some(bytes), b.get(name), "{name}");
        }
    }
}

#[test]
fn xycut_detector_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = identity_config(dir.path());
    cfg.detector.kind = DetectorKind::Xycut;
    let (run, _) = run_parse(&cfg, &corpus(12)).unwrap();
    assert_eq!(run.failed(), 0);
    let report = run.report.unwrap();
    assert!(report.text_edit.unwrap() < 0.5, "{report:?}");
}

#[test]
fn missing_model_fails_at_startup() {
    let mut cfg = PipelineConfig::default();
    cfg.order.model = Some("/nonexistent/model.bin".into());
    assert!(Pipeline::from_config(&cfg).is_err());
    cfg.order.model = None;
    assert!(Pipeline::from_config(&cfg).is_err());
}

#[test]
fn run_fails_only_when_every_page_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = identity_config(dir.path());
    let mut records: Vec<CorpusRecord> = corpus(3).into_iter().map(|r| unordered_record(r.page)).collect();
    assert!(matches!(run_parse(&cfg, &records), Err(srrdoc::Error::Stage { .. })));
    assert!(dir.path().join("manifest.json").exists());

    records.push(corpus(4).pop().unwrap());
    let (run, manifest) = run_parse(&cfg, &records).unwrap();
    assert_eq!(run.failed(), 3);
    assert_eq!(manifest.pages.iter().filter(|p| p.status == "failed").count(), 3);
}
