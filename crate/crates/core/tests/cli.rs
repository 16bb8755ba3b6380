use std::fs;
use std::process::{Command, Output};

use coalesce_sim::metrics::{read_csv, CSV_COLUMNS};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coalesce-sim"))
        .args(args)
        .output()
        .expect("spawn binary")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn gen_stencil_writes_matrix_market() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.mtx");
    let o = sim(&["gen-stencil", "--nx", "3", "--ny", "3", "--nz", "3", "--out", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("%%MatrixMarket matrix coordinate real general"));
    let size = text.lines().find(|l| !l.starts_with('%')).unwrap();
    assert_eq!(size.trim(), "27 27 343");
}

#[test]
fn run_prints_one_csv_row() {
    let o = sim(&["run", "--matrix", "stencil:6", "--variant", "mlp", "--window", "64"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(stdout(&o).as_bytes()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(!rows[0].is_error());
    assert_eq!(rows[0].variant, "mlp");
    assert_eq!(rows[0].window, Some(64));
}

#[test]
fn run_spmv_mode_writes_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("events.csv");
    let o = sim(&[
        "run",
        "--matrix",
        "stencil:5",
        "--variant",
        "base",
        "--mode",
        "spmv",
        "--events",
        events.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(events).unwrap();
    assert!(log.starts_with("cycle,tag,popcount,category"));
    assert!(log.lines().count() > 1);
}

#[test]
fn run_rejects_bad_matrix() {
    let o = sim(&["run", "--matrix", "/nonexistent/file.mtx"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn sweep_isolates_failures_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    fs::write(
        &cfg,
        "[runs]\nmatrices = [\"stencil:5\", \"missing.mtx\"]\nvariants = [\"mlpnc\", \"mlp\"]\nwindows = [64]\n",
    )
    .unwrap();
    let out = dir.path().join("out.csv");
    let o = sim(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
    let rows = read_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().filter(|r| r.is_error()).count(), 2);

    let r = sim(&["report", "--in", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let summary = stdout(&r);
    assert!(summary.contains("mlpnc"));
    assert!(summary.contains("error"));
    let b = sim(&["report", "--in", out.to_str().unwrap(), "--emit", "breakdown"]);
    assert!(b.status.success());
}

#[test]
fn default_config_round_trips() {
    let o = sim(&["default-config"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("[coalescer]") || text.contains("[adapter"));
    coalesce_sim::runner::SimConfig::from_toml(&text).unwrap();
}

#[test]
fn shipped_configs_load() {
    for name in ["stencils.toml", "spmv.toml"] {
        let path = format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"));
        let cfg = coalesce_sim::runner::SimConfig::load(&path).unwrap();
        cfg.validate().unwrap();
        assert!(!cfg.expand().is_empty(), "{name}");
    }
}
