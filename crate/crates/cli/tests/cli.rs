use std::path::Path;
use std::process::{Command, Output};

fn hashcond(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hashcond"))
        .args(args)
        .env_remove("HASHCOND_SERVER")
        .env_remove("DATA_ROOT")
        .env_remove("OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn toy(root: &Path) -> Vec<String> {
    let data = root.join("data");
    let o = hashcond(&["make-toy", "--root", data.to_str().unwrap(), "--classes", "3", "--per-class", "6", "--side", "8", "--test-per-class", "3"]);
    assert!(o.status.success());
    [
        "dataset=toy".to_string(),
        format!("data_root={}", serde_json::json!(data)),
        format!("output_dir={}", serde_json::json!(root.join("out"))),
        "ipc=1".into(),
        "condense.arch=conv-w4-d1".into(),
        "condense.iterations=2".into(),
        "hashing.arch=conv-w4-d1".into(),
        "hashing.epochs=1".into(),
    ]
    .into_iter()
    .flat_map(|s| ["--set".to_string(), s])
    .collect()
}

fn with<'a>(cmd: &'a [&'a str], sets: &'a [String]) -> Vec<&'a str> {
    cmd.iter().copied().chain(sets.iter().map(String::as_str)).collect()
}

#[test]
fn help_exits_zero() {
    let o = hashcond(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["condense", "evaluate", "baseline", "ablate", "timing", "generalize", "report", "serve"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn usage_and_config_errors_exit_one() {
    assert_eq!(hashcond(&["condense", "--bogus"]).status.code(), Some(1));
    assert_eq!(hashcond(&["condense", "--set", "seeds=[]"]).status.code(), Some(1));
    assert_eq!(hashcond(&["condense", "--set", "oops"]).status.code(), Some(1));
    assert_eq!(hashcond(&["baseline", "--method", "gm"]).status.code(), Some(1));
    let o = hashcond(&["condense", "--config", "/nonexistent/spec.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot read"));
}

#[test]
fn missing_data_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hashcond(&["condense", "--data-root", tmp.path().to_str().unwrap(), "--output-root", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn full_toy_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let sets = toy(tmp.path());

    let o = hashcond(&with(&["condense"], &sets));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("iem seed 0: 3 rows, f=2"));

    let o = hashcond(&with(&["baseline", "--method", "herding"], &sets));
    assert!(o.status.success());

    let o = hashcond(&with(&["evaluate", "--json"], &sets));
    assert!(o.status.success());
    let reports: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(reports[0]["method"], "iem");

    let mut herd = sets.clone();
    herd.extend(["--set".into(), "method=herding".into()]);
    assert!(hashcond(&with(&["evaluate"], &herd)).status.success());

    let o = hashcond(&with(&["generalize", "--plugins", "center,center-no-quant"], &sets));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("center-no-quant"));
    assert_eq!(hashcond(&with(&["generalize", "--plugins", "center"], &sets)).status.code(), Some(1));

    let o = hashcond(&["report", "--root", tmp.path().join("out").to_str().unwrap()]);
    assert!(o.status.success());
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("| iem | herding |") || table.contains("| herding | iem |"), "{table}");
}
