use std::path::Path;
use std::process::{Command, Output};

use contactrom::cli::{ComparisonReport, TrajectoryTable};
use contactrom::mor::ReducedModel;
use contactrom::sim::RunSummary;

fn contactrom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contactrom"))
        .args(args)
        .env("CONTACTROM_THREADS", "2")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = contactrom(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen_crack(dir: &Path, n: usize) -> String {
    let d = dir.to_str().unwrap();
    ok(&["gen", "crack", "--n", &n.to_string(), "--out", d]);
    dir.join("crack.toml").to_str().unwrap().to_string()
}

fn summary(path: &Path) -> RunSummary {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_writes_csv_summary_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let scenario = gen_crack(dir.path(), 6);
    ok(&["run", "--scenario", &scenario, "--mode", "full", "--out", d]);
    assert!(dir.path().join("crack_full.csv").exists());
    assert!(!dir.path().join("crack_full.rom").exists());
    let s = summary(&dir.path().join("crack_full.summary.json"));
    assert_eq!(s.steps_completed, 401);
    assert!(s.all_certified);

    ok(&["run", "--scenario", &scenario, "--mode", "rom-cb", "--out", d]);
    let s = summary(&dir.path().join("crack_rom_cb.summary.json"));
    let rm = ReducedModel::load(dir.path().join("crack_rom_cb.rom")).unwrap();
    assert_eq!(rm.n(), s.n);
    assert_eq!(rm.n_full(), s.n_full);

    let table = TrajectoryTable::load(dir.path().join("crack_rom_cb.csv")).unwrap();
    assert_eq!(table.rows.len(), 401);
    assert!(table.complementarity_holds());
}

#[test]
fn reduced_dimension_at_40x40() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let scenario = gen_crack(dir.path(), 40);
    ok(&["run", "--scenario", &scenario, "--mode", "rom-cb", "--out", d]);
    let s = summary(&dir.path().join("crack_rom_cb.summary.json"));
    assert_eq!((s.n, s.n_master, s.n_krylov, s.m), (53, 50, 3, 12));
}

#[test]
fn missing_scenario_exits_2_naming_the_path() {
    let out = contactrom(&["run", "--scenario", "/no/such/dir/crack.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/dir/crack.toml"));
    let out = contactrom(&["run"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identical_runs_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = gen_crack(dir.path(), 8);
    let mut csvs = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        ok(&["run", "--scenario", &scenario, "--out", out.to_str().unwrap()]);
        csvs.push(std::fs::read(out.join("crack_full.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn compare_orders_reduced_models() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let scenario = gen_crack(dir.path(), 10);
    for mode in ["full", "rom-cb", "rom-plain"] {
        ok(&["run", "--scenario", &scenario, "--mode", mode, "--out", d]);
    }
    let path = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let cmp = |b: &str| -> ComparisonReport {
        serde_json::from_str(&ok(&["compare", &path("crack_full.csv"), &path(b)])).unwrap()
    };

    let same = cmp("crack_full.csv");
    assert!(same.columns.iter().all(|c| c.max_abs == 0.0 && c.l2_rel == 0.0));
    assert!(same.sensors.iter().all(|s| s.max_rel == 0.0));

    let cb = cmp("crack_rom_cb.csv");
    let plain = cmp("crack_rom_plain.csv");
    assert!(cb.complementarity_b && plain.complementarity_b);
    assert!(cb.pressure.unwrap().l2_rel < plain.pressure.unwrap().l2_rel);
    assert!(cb.speedup.is_some());

    let table = path("cmp.csv");
    ok(&["compare", &path("crack_full.csv"), &path("crack_rom_cb.csv"), "--csv", &table]);
    assert!(std::fs::read_to_string(&table).unwrap().starts_with("column,max_abs,l2_abs,l2_rel\n"));
}

#[test]
fn compare_rejects_different_grids() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["gen", "crack", "--n", "6", "--t-end", "1", "--out", a.to_str().unwrap()]);
    ok(&["gen", "crack", "--n", "6", "--t-end", "1", "--h", "0.1", "--out", b.to_str().unwrap()]);
    for s in [&a, &b] {
        ok(&["run", "--scenario", s.join("crack.toml").to_str().unwrap(), "--out", s.to_str().unwrap()]);
    }
    let out = contactrom(&[
        "compare",
        a.join("crack_full.csv").to_str().unwrap(),
        b.join("crack_full.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t = 0.05"));
}

#[test]
fn reduce_and_wheelrail() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["gen", "wheelrail", "--t-end", "0.05", "--out", d]);
    let scenario = dir.path().join("wheelrail.toml");
    let rom = dir.path().join("w.rom");
    ok(&[
        "reduce",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        rom.to_str().unwrap(),
    ]);
    let rm = ReducedModel::load(&rom).unwrap();
    assert!(rm.n() < rm.n_full());
    ok(&["run", "--scenario", scenario.to_str().unwrap(), "--mode", "rom-cb", "--out", d]);
    let s = summary(&dir.path().join("wheelrail_rom_cb.summary.json"));
    assert!(s.all_certified);
    let out = contactrom(&["reduce", "--scenario", scenario.to_str().unwrap(), "--mode", "full"]);
    assert_eq!(out.status.code(), Some(2));
}
