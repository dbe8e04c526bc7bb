use std::path::Path;

use hashcond::data::load_synthetic;
use hashcond::harness::*;
use hashcond::ErrorKind;
use serde_json::json;

fn toy_spec(out: &Path, extra: &[&str]) -> ExperimentSpec {
    let doc = json!({
        "dataset": "toy",
        "toy": {"classes": 4, "per_class": 12, "side": 8, "seed": 1, "test_per_class": 6},
        "ipc": 2,
        "seeds": [0],
        "condense": {"arch": "conv-w8-d2", "iterations": 5, "real_batch": 8},
        "hashing": {"arch": "conv-w8-d2", "epochs": 2, "batch_size": 16, "code_bits": 16},
        "code_bits": [16],
        "output_dir": out,
    });
    let overrides: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
    spec_from_json(Some(doc), &overrides).unwrap()
}

#[test]
fn condense_then_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = toy_spec(tmp.path(), &[]);
    let runs = cmd_condense(&spec).unwrap();
    assert_eq!(runs.len(), 1);
    let run = &runs[0];
    assert!(run.dir.ends_with("toy/iem/2ipc/0"));
    assert!(run.archive.join("manifest.json").exists());
    assert!(run.dir.join("trace.jsonl").exists());
    assert_eq!(run.manifest.provenance.method, "iem");
    assert_eq!(run.manifest.provenance.ratio, 8.0 / 48.0);
    assert_eq!(run.iterations, 5);

    let reports = cmd_evaluate(&spec, None).unwrap();
    assert_eq!(reports.len(), 1);
    let r = &reports[0];
    assert!((0.0..=1.0).contains(&r.map_value));
    assert_eq!((r.query_count, r.database_count, r.code_bits), (24, 48, 16));
    assert!(run.dir.join("eval.json").exists());

    let again = cmd_evaluate(&spec, None).unwrap();
    assert_eq!(again[0].map_value, r.map_value);
}

#[test]
fn dm_plain_records_no_formation() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = toy_spec(tmp.path(), &["method=dm-plain"]);
    let run = &cmd_condense(&spec).unwrap()[0];
    assert_eq!(run.manifest.formation_factor, 1);
    assert_eq!(run.manifest.provenance.method, "dm-plain");
}

#[test]
fn condense_is_bit_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = &cmd_condense(&toy_spec(a.path(), &[])).unwrap()[0];
    let rb = &cmd_condense(&toy_spec(b.path(), &[])).unwrap()[0];
    for f in ["manifest.json", "payload.bin"] {
        assert_eq!(std::fs::read(ra.archive.join(f)).unwrap(), std::fs::read(rb.archive.join(f)).unwrap());
    }
}

#[test]
fn baselines_and_whole_set() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = toy_spec(tmp.path(), &[]);
    for m in [Method::Random, Method::Herding] {
        let run = &cmd_baseline(&spec, m).unwrap()[0];
        assert!(run.coreset.as_ref().unwrap().exists());
        let set = load_synthetic(&run.archive).unwrap();
        assert_eq!((set.len(), set.formation_factor), (8, 1));
    }
    assert_eq!(cmd_baseline(&spec, Method::Iem).unwrap_err().kind(), ErrorKind::Config);

    let whole = toy_spec(tmp.path(), &["method=whole"]);
    let r = &cmd_evaluate(&whole, None).unwrap()[0];
    assert_eq!(r.method, "whole");
    assert_eq!(r.ratio, Some(1.0));
}

#[test]
fn ablation_grid_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = toy_spec(tmp.path(), &["condense.iterations=2"]);
    let rep = cmd_ablate(&spec).unwrap();
    let cells: Vec<(bool, bool)> = rep.rows.iter().map(|r| (r.na, r.da)).collect();
    assert_eq!(cells, ABLATION_GRID);
    let lines: Vec<&str> = rep.table.lines().skip(2).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("| ✗ | ✗ |"));
    assert!(lines[1].starts_with("| ✓ | ✗ |"));
    assert!(lines[2].starts_with("| ✗ | ✓ |"));
    assert!(lines[3].starts_with("| ✓ | ✓ |"));

    let wrong = toy_spec(tmp.path(), &["method=random"]);
    assert_eq!(cmd_ablate(&wrong).unwrap_err().kind(), ErrorKind::Config);
}

#[test]
fn generalize_shares_the_archive() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = toy_spec(tmp.path(), &[]);
    cmd_condense(&spec).unwrap();
    let plugins = vec!["center".to_string(), "center-no-quant".to_string()];
    let g = cmd_generalize(&spec, None, &plugins).unwrap();
    assert_eq!(g.reports.len(), 2);
    assert_eq!(g.reports[0].trained_on, g.reports[1].trained_on);
    assert!(g.reports.iter().all(|r| r.map_value.is_finite()));

    assert_eq!(cmd_generalize(&spec, None, &[]).unwrap_err().kind(), ErrorKind::Config);
    let bad = vec!["center".to_string(), "nope".to_string()];
    assert_eq!(cmd_generalize(&spec, None, &bad).unwrap_err().kind(), ErrorKind::Config);
}

#[test]
fn timing_series_are_monotone_and_aligned() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = toy_spec(tmp.path(), &["timing.checkpoint_seconds=0.05", "timing.checkpoints=3"]);
    let rep = cmd_timing(&spec).unwrap();
    assert_eq!(rep.series.len(), 2);
    for s in &rep.series {
        assert_eq!(s.points.len(), 3);
        assert!(s.points.windows(2).all(|w| w[0].seconds < w[1].seconds && w[0].iteration < w[1].iteration));
        for (i, p) in s.points.iter().enumerate() {
            assert_eq!(p.nominal_seconds, 0.05 * (i + 1) as f64);
            assert!(p.seconds >= p.nominal_seconds);
        }
    }
    assert_eq!(rep.series[0].points.len(), rep.series[1].points.len());
    let dir = tmp.path().join("toy/timing/2ipc");
    assert!(dir.join("timing.json").exists() && dir.join("timing.svg").exists());
}

#[test]
fn report_collects_every_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = toy_spec(tmp.path(), &[]);
    cmd_condense(&spec).unwrap();
    cmd_evaluate(&spec, None).unwrap();
    cmd_baseline(&spec, Method::Random).unwrap();
    cmd_evaluate(&toy_spec(tmp.path(), &["method=random"]), None).unwrap();
    let rep = cmd_report(tmp.path()).unwrap();
    assert_eq!(rep.reports.len(), 2);
    assert!(rep.fair);
    assert!(rep.table.contains("| toy | 2 | 16.67 |"));
    assert!(tmp.path().join("report.md").exists());
}

#[test]
fn missing_dataset_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = spec_from_json(
        Some(json!({"dataset": "cifar10", "data_root": tmp.path(), "output_dir": tmp.path()})),
        &[],
    )
    .unwrap();
    let err = cmd_condense(&spec).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Io);
    assert_eq!(err.kind().exit_code(), 2);
}
