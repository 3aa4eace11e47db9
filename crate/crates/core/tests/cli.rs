use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use porecarbon::analysis::import_trajectory;
use porecarbon::image_io::{save_volume, VolumeImage};

fn porecarbon(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_porecarbon"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Writes the lattice volume and its network into `dir`.
fn lattice_network(dir: &Path) {
    ok(&porecarbon(&["synth", "--fixture", "lattice", "--out", "vol.raw"], dir));
    ok(&porecarbon(
        &["extract", "--raw", "vol.raw", "--meta", "vol.json", "--out", "net.json"],
        dir,
    ));
}

#[test]
fn sphere_extracts_to_one_node() {
    let dir = tempfile::tempdir().unwrap();
    ok(&porecarbon(
        &["synth", "--fixture", "sphere", "--out", "s.raw"],
        dir.path(),
    ));
    let stdout = ok(&porecarbon(
        &["extract", "--raw", "s.raw", "--meta", "s.json", "--out", "net.json"],
        dir.path(),
    ));
    assert!(stdout.starts_with("nodes 1 edges 0 porosity"), "{stdout}");
    assert!(dir.path().join("net.json").exists());
}

#[test]
fn missing_sidecar_fails() {
    let dir = tempfile::tempdir().unwrap();
    ok(&porecarbon(
        &["synth", "--fixture", "tube", "--out", "t.raw"],
        dir.path(),
    ));
    let out = porecarbon(
        &[
            "extract",
            "--raw",
            "t.raw",
            "--meta",
            "absent.json",
            "--out",
            "net.json",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
    assert!(!dir.path().join("net.json").exists());
}

#[test]
fn crop_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    lattice_network(dir.path());
    ok(&porecarbon(
        &[
            "extract",
            "--raw",
            "vol.raw",
            "--meta",
            "vol.json",
            "--crop",
            "0:20,0:20,0:20",
            "--out",
            "crop.json",
        ],
        dir.path(),
    ));
    let full = porecarbon::network::import_network(dir.path().join("net.json")).unwrap();
    let crop = porecarbon::network::import_network(dir.path().join("crop.json")).unwrap();
    assert!(crop.node_count() < full.node_count());
    let limit = 20.0 * 24.0;
    for b in &crop.balls {
        assert!(b.center.iter().all(|&c| c > 0.0 && c < limit));
        assert!(b
            .center
            .iter()
            .all(|&c| c - b.radius >= -1e-9 && c + b.radius <= limit + 1e-9));
    }
}

#[test]
fn zero_horizon_writes_initial_record_only() {
    let dir = tempfile::tempdir().unwrap();
    lattice_network(dir.path());
    ok(&porecarbon(
        &[
            "simulate",
            "--network",
            "net.json",
            "--t-end",
            "0",
            "--seed",
            "5",
            "--out",
            "run",
        ],
        dir.path(),
    ));
    let traj = import_trajectory(dir.path().join("run/trajectory.csv")).unwrap();
    assert_eq!(traj.records.len(), 1);
    assert_eq!(traj.records[0].t, 0.0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/report.json")).unwrap()).unwrap();
    assert!(report["attractor"].is_null());
    assert_eq!(report["scenario"]["seed"], 5);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    lattice_network(dir.path());
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"paths": {"network": "net.json", "out": "from_cfg"}, "solver": {"t_end": 3.0, "snapshot_stride": 50}}"#,
    )
    .unwrap();
    ok(&porecarbon(&["simulate", "--config", "cfg.json"], dir.path()));
    let traj = import_trajectory(dir.path().join("from_cfg/trajectory.csv")).unwrap();
    assert_eq!(traj.last().unwrap().t, 3.0);
    assert_eq!(traj.records.len(), 7);

    ok(&porecarbon(
        &["simulate", "--config", "cfg.json", "--t-end", "1", "--out", "from_flag"],
        dir.path(),
    ));
    let traj = import_trajectory(dir.path().join("from_flag/trajectory.csv")).unwrap();
    assert!((traj.last().unwrap().t - 1.0).abs() < 1e-12);

    let printed = ok(&porecarbon(&["config", "--config", "cfg.json"], dir.path()));
    let v: serde_json::Value = serde_json::from_str(&printed).unwrap();
    assert_eq!(v["solver"]["t_end"], 3.0);
    assert_eq!(v["bio"]["k"], 9.6);
}

#[test]
fn bad_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"bio": {"rho": 1.5}}"#).unwrap();
    assert!(!porecarbon(&["config", "--config", "cfg.json"], dir.path())
        .status
        .success());
    fs::write(dir.path().join("typo.json"), r#"{"solvr": {}}"#).unwrap();
    assert!(!porecarbon(&["config", "--config", "typo.json"], dir.path())
        .status
        .success());
}

#[test]
fn batch_writes_one_csv_per_scenario_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    lattice_network(dir.path());
    ok(&porecarbon(
        &[
            "batch",
            "--network",
            "net.json",
            "--count",
            "4",
            "--jobs",
            "2",
            "--seed",
            "100",
            "--t-end",
            "120",
            "--out",
            "batch",
        ],
        dir.path(),
    ));
    for seed in 100..104 {
        assert!(dir.path().join(format!("batch/scenario_{seed}.csv")).exists());
    }
    let summary = fs::read_to_string(dir.path().join("batch/summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 5);
    let header: Vec<&str> = lines[0].split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    for (k, row) in lines[1..].iter().enumerate() {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[col("seed")], (100 + k).to_string());
        assert_eq!(f[col("status")], "ok");
        let frac: f64 = f[col("mb_fraction")].parse().unwrap();
        assert!((0.0005..=0.0015).contains(&frac));
        let b: f64 = f[col("terminal_B")].parse().unwrap();
        assert!(b >= 0.0);
    }
}

#[test]
fn analyze_reads_simulate_output() {
    let dir = tempfile::tempdir().unwrap();
    lattice_network(dir.path());
    ok(&porecarbon(
        &["simulate", "--network", "net.json", "--t-end", "100", "--out", "run"],
        dir.path(),
    ));
    ok(&porecarbon(
        &[
            "analyze",
            "--trajectory",
            "run/trajectory.csv",
            "--window",
            "30",
            "--out",
            "a.json",
        ],
        dir.path(),
    ));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
    assert_eq!(v["records"], 101);
    assert!(v["conservation_error"].as_f64().unwrap() <= 1e-8);
    assert!(v["attractor"]["co2_nondecreasing"].as_bool().unwrap());
}

#[test]
fn oracle_refuses_large_volumes() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = VolumeImage::solid([65, 4, 4], 24.0).unwrap();
    img.set(1, 1, 1, true);
    save_volume(&img, dir.path().join("big.raw"), dir.path().join("big.json"), 0).unwrap();
    let out = porecarbon(
        &["oracle", "--raw", "big.raw", "--meta", "big.json", "--d-n", "0"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at most 64"));
}

#[test]
fn oracle_without_volume_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = porecarbon(&["oracle", "--d-n", "0"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--raw"));
}

#[test]
fn oracle_reaction_only_fixture_agrees() {
    let dir = tempfile::tempdir().unwrap();
    ok(&porecarbon(
        &[
            "oracle",
            "--fixture",
            "sphere",
            "--initial",
            "uniform",
            "--d-n",
            "0",
            "--t-end",
            "2",
            "--network-dt",
            "0.0005",
            "--record-interval",
            "0.5",
            "--tolerance",
            "1e-3",
            "--out",
            "r.json",
        ],
        dir.path(),
    ));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(v["nodes"], 1);
    assert!(v["max_totals_discrepancy"].as_f64().unwrap() <= 1e-3);
    assert_eq!(v["times"].as_array().unwrap().len(), 5);
}

#[test]
fn help_lists_flags() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(&porecarbon(&["simulate", "--help"], dir.path()));
    for flag in [
        "--config",
        "--network",
        "--seed",
        "--t-end",
        "--dt",
        "--d-n",
        "--out",
        "--state",
    ] {
        assert!(help.contains(flag), "missing {flag}");
    }
    let help = ok(&porecarbon(&["batch", "--help"], dir.path()));
    assert!(help.contains("--jobs") && help.contains("--count"));
}
