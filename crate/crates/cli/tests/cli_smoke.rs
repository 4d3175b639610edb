//! End-to-end checks of the command-line tool: analytic table values,
//! reproducible simulation outputs and option-file layering.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dsme-capr"))
}

fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("spawn dsme-capr");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("read {name}: {e}"))
}

fn temp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("dsme-capr-test-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn analytics_reproduces_the_reference_table() {
    let dir = temp_dir("analytics");
    run_ok(&["analytics", "--so", "3", "--mo", "4..7", "--out", dir.to_str().unwrap()]);
    let csv = read(&dir, "analytics.csv");
    assert!(csv.starts_with("mode,so,mo,tau,wait_slots,access_time_slots,dwell_ms"));
    assert!(csv.contains("ncr,3,4,0.437500,2.250000"));
    assert!(csv.contains("cr,3,7,0.906250,120.609375"));
    assert!(csv.contains("acr,3,7,0.671875,61.429688"));
    assert!(csv.contains("dcr,3,4,0.437500 - 0.687500"));
    let notes = read(&dir, "analytics_notes.txt");
    assert!(notes.contains("0.90625"));
    assert!(notes.contains("13.59375"));
}

#[test]
fn surface_grid_covers_the_anchor_points() {
    let dir = temp_dir("surface");
    run_ok(&["surface", "--so", "3", "--mo", "7", "--out", dir.to_str().unwrap()]);
    let csv = read(&dir, "surface.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n_cap,slots_per_cap,access_time_slots"));
    assert_eq!(csv.lines().count(), 1 + 16 * 8);
    let corner = csv
        .lines()
        .find(|l| l.starts_with("16,8,"))
        .expect("corner point present");
    let v: f64 = corner.rsplit(',').next().unwrap().parse().unwrap();
    assert!((v - 2.3651).abs() < 1e-3);
}

#[test]
fn simulate_outputs_are_reproducible() {
    let dir_a = temp_dir("sim-a");
    let dir_b = temp_dir("sim-b");
    let common = [
        "simulate", "--mode", "dcr", "--mo", "5", "--delta", "2", "--runs", "2", "--seed", "7",
        "--duration", "10",
    ];
    for dir in [&dir_a, &dir_b] {
        let mut args: Vec<&str> = common.to_vec();
        args.push("--out");
        args.push(dir.to_str().unwrap());
        run_ok(&args);
    }
    let a = read(&dir_a, "runs.csv");
    assert_eq!(a, read(&dir_b, "runs.csv"), "identical inputs, identical outputs");
    assert_eq!(a.lines().count(), 3, "header plus one row per seed");
    assert!(a.contains("dcr,3,5,7,2,rate,10,"));
    for name in ["summary.csv", "dwell.csv", "gts.csv"] {
        assert_eq!(read(&dir_a, name), read(&dir_b, name));
    }
}

#[test]
fn parallelism_does_not_change_results() {
    let serial = temp_dir("sim-serial");
    let parallel = temp_dir("sim-par");
    let common = [
        "simulate", "--mode", "ncr", "--mo", "4", "--delta", "1", "--runs", "4", "--seed", "3",
        "--duration", "8",
    ];
    for (dir, threads) in [(&serial, "1"), (&parallel, "4")] {
        let mut args: Vec<&str> = common.to_vec();
        args.push("--out");
        args.push(dir.to_str().unwrap());
        let out = bin()
            .args(&args)
            .env("DSME_CAPR_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    assert_eq!(read(&serial, "runs.csv"), read(&parallel, "runs.csv"));
}

#[test]
fn config_file_is_layered_under_flags() {
    let dir = temp_dir("config");
    let cfg = dir.join("run.conf");
    std::fs::write(
        &cfg,
        "mode = acr\nmo = 4\ndelta = 2\nduration = 6\nruns = 1\nseed = 5\n",
    )
    .unwrap();
    let out_dir = dir.join("out");
    run_ok(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--delta",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let runs = read(&out_dir, "runs.csv");
    // Mode and duration come from the file, delta from the flag.
    assert!(runs.contains("acr,3,4,7,3,rate,6,"), "got: {runs}");
}

#[test]
fn traces_are_written_on_request() {
    let dir = temp_dir("trace");
    run_ok(&[
        "simulate", "--mode", "cr", "--mo", "4", "--delta", "1", "--runs", "1", "--seed", "2",
        "--duration", "5", "--trace", "--out", dir.to_str().unwrap(),
    ]);
    let trace = read(&dir, "trace_cr_mo4_d1_rate_s2.csv");
    assert!(trace.starts_with("time_symbols,event,node,detail"));
    assert!(trace.lines().any(|l| l.contains(",gen,")));
    assert!(trace.lines().last().unwrap().contains("run_end"));
}

#[test]
fn rejects_invalid_configuration() {
    let out = bin()
        .args(["simulate", "--so", "9", "--mo", "4"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("order constraint"), "stderr: {err}");
}

#[test]
fn small_sweep_collates_every_cell() {
    let dir = temp_dir("sweep");
    run_ok(&[
        "sweep", "--mode", "ncr,dcr", "--mo", "4..5", "--delta", "1", "--pattern", "rate",
        "--runs", "2", "--duration", "6", "--out", dir.to_str().unwrap(),
    ]);
    let runs = read(&dir, "runs.csv");
    // 2 modes x 2 MOs x 2 seeds plus the header.
    assert_eq!(runs.lines().count(), 1 + 8);
    let summary = read(&dir, "summary.csv");
    assert!(summary.lines().count() > 4);
}
