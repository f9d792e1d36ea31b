use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nhcz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nhcz"))
        .args(args)
        .env("NHCZ_THREADS", "2")
        .output()
        .expect("spawn nhcz")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = nhcz(&["gen", "--kind", "grid", "--size", "300", "--seed", "7", "--out", p(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let v = nhcz(&["validate", "--space", p(&a)]);
    assert!(v.status.success());
}

#[test]
fn unknown_kind_is_an_error() {
    let o = nhcz(&["gen", "--kind", "torus", "--size", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("torus"));
}

#[test]
fn spike_decomposition_passes() {
    let dir = tempfile::tempdir().unwrap();
    let space = dir.path().join("grid.json");
    assert!(nhcz(&["gen", "--kind", "grid", "--size", "300", "--out", p(&space)]).status.success());
    let mut f = vec![0.0; 300];
    f[150] = 10.0;
    let fp = dir.path().join("f.json");
    fs::write(&fp, serde_json::to_string(&f).unwrap()).unwrap();
    let out = dir.path().join("dec.json");
    let o = nhcz(&[
        "czdecomp", "--space", p(&space), "--f", p(&fp), "--lambda", "8", "--p", "1", "--beta0", "217", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["decomposition"]["pieces"].as_array().unwrap().len(), 1);
}

#[test]
fn operator_and_maximal_run() {
    let dir = tempfile::tempdir().unwrap();
    let space = dir.path().join("b.json");
    assert!(nhcz(&["gen", "--kind", "bergman-sample", "--size", "24", "--out", p(&space)]).status.success());
    let f: Vec<f64> = (0..24).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
    let fp = dir.path().join("f.json");
    fs::write(&fp, serde_json::to_string(&f).unwrap()).unwrap();
    for check in ["weak11", "cotlar", "rbmo-image"] {
        let o = nhcz(&["operator", "--space", p(&space), "--f", p(&fp), "--check", check]);
        assert!(o.status.success(), "{check}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = nhcz(&["operator", "--space", p(&space), "--f", p(&fp), "--b", p(&fp), "--check", "commutator"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for op in ["m", "n", "sharp", "mp"] {
        let o = nhcz(&["--sample-cap", "16", "maximal", "--space", p(&space), "--f", p(&fp), "--op", op]);
        assert!(o.status.success(), "{op}: {}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["values"].as_array().unwrap().len(), 24);
    }
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let cfg = dir.join("suite.toml");
    fs::write(
        &cfg,
        format!("{extra}\n[[scenarios]]\nkind = \"line3-canonical\"\nsizes = [3]\nseeds = [1, 2]\n\n[[scenarios]]\nkind = \"cluster-spike\"\nsizes = [48]\nseeds = [3]\n"),
    )
    .unwrap();
    cfg
}

#[test]
fn suite_is_reproducible_and_writes_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "trial_scale = 0.2");
    let mut runs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("r{i}.jsonl"));
        let o = nhcz(&["suite", "--config", p(&cfg), "--out", p(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let reports = nhcz_core::report::read_jsonl(&fs::read_to_string(&out).unwrap()).unwrap();
        runs.push(reports.iter().map(|r| r.without_timing()).collect::<Vec<_>>());
    }
    assert!(!runs[0].is_empty());
    assert_eq!(runs[0], runs[1]);
    let csv = dir.path().join("r.csv");
    assert!(nhcz(&["suite", "--config", p(&cfg), "--out", p(&csv), "--format", "csv"]).status.success());
    assert!(fs::read_to_string(&csv).unwrap().starts_with("check,scenario,kind,size,seed,field,name,value"));
}

#[test]
fn empty_check_list_succeeds_with_no_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "checks = []");
    let o = nhcz(&["suite", "--config", p(&cfg)]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
}

#[test]
fn injected_fault_fails_the_suite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "checks = [\"czdecomp\"]\ninject_fault = true");
    let o = nhcz(&["suite", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cz4"));
}
