//! Runs the `curvewarn` binary on small scenarios.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use curvewarn::road::save_profile;
use curvewarn::{RoadProfile, RoadSample};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_curvewarn"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// 300 m road with an optional curve of radius `radius` from s = 40 m.
fn write_case(dir: &Path, radius: Option<f64>, speed: f64) {
    let kappa = radius.map_or(0.0, |r| 1.0 / r);
    let profile = RoadProfile::from_fn(0.0, 1.0, 301, |s| RoadSample {
        kappa: if s >= 40.0 { kappa } else { kappa * (s / 40.0) },
        sigma: 0.0,
        width: 3.5,
        u_limit: 25.0,
    })
    .unwrap();
    save_profile(&profile, dir.join("road.json")).unwrap();
    fs::write(
        dir.join("scenario.toml"),
        format!("[inputs]\nprofile = \"road.json\"\n[initial]\ns0 = 0.0\nspeed = {speed}\n[ocp]\nsteps = 150\n"),
    )
    .unwrap();
}

#[test]
fn straight_road_is_safe() {
    let dir = tempfile::tempdir().unwrap();
    write_case(dir.path(), None, 25.0);
    let out = run(&["run", "scenario.toml"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("safe"));
    assert!(dir.path().join("out/trajectory.csv").is_file());
    assert!(dir.path().join("out/risk.json").is_file());
}

#[test]
fn tight_curve_at_speed_is_danger() {
    let dir = tempfile::tempdir().unwrap();
    write_case(dir.path(), Some(30.0), 25.0);
    let out = run(&["run", "scenario.toml"], dir.path());
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stdout));
    let risk: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/risk.json")).unwrap()).unwrap();
    assert_eq!(risk["overall"], "danger");
}

#[test]
fn missing_file_exits_with_error_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["run", "nowhere.toml"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.toml"));
}

#[test]
fn usage_errors_exit_with_error_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["run"], dir.path())), 3);
    assert_eq!(code(&run(&["frobnicate"], dir.path())), 3);
    assert_eq!(code(&run(&["--help"], dir.path())), 0);
}

#[test]
fn overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    write_case(dir.path(), None, 25.0);
    let out = run(&["run", "scenario.toml", "--steps", "60", "--out", "alt"], dir.path());
    assert_eq!(code(&out), 0);
    let csv = fs::read_to_string(dir.path().join("alt/trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 62);
}

#[test]
fn repeated_runs_write_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    write_case(dir.path(), Some(60.0), 22.0);
    run(&["run", "scenario.toml", "--out", "a"], dir.path());
    run(&["run", "scenario.toml", "--out", "b"], dir.path());
    for name in ["trajectory.csv", "risk.json"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn sweep_and_ablation_report_every_arm() {
    let dir = tempfile::tempdir().unwrap();
    write_case(dir.path(), Some(60.0), 22.0);
    let out = run(&["sweep-horizon", "scenario.toml", "--horizons", "150,50"], dir.path());
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);
    let out = run(&["ablate-slope", "scenario.toml"], dir.path());
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("without"));
}

#[test]
fn profile_and_match_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    // a quarter circle of radius 100 m built from local coordinates
    let (lat0, lon0) = (47.0f64, 8.0f64);
    let m_per_deg = 111_195.0;
    let points: Vec<[f64; 3]> = (0..=40)
        .map(|i| {
            let a = i as f64 / 40.0 * std::f64::consts::FRAC_PI_2;
            let (x, y) = (100.0 * a.sin(), 100.0 * (1.0 - a.cos()));
            [lat0 + y / m_per_deg, lon0 + x / (m_per_deg * lat0.to_radians().cos()), 0.0]
        })
        .collect();
    fs::write(dir.path().join("line.json"), serde_json::to_string(&points).unwrap()).unwrap();
    let out = run(&["profile", "--polyline", "line.json", "--out", "p.json"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let profile = curvewarn::road::load_profile(dir.path().join("p.json")).unwrap();
    let mid = profile.query(0.5 * (profile.start() + profile.end())).unwrap();
    assert!((mid.kappa - 0.01).abs() < 1e-3, "kappa {}", mid.kappa);

    let graph = format!(
        r#"{{"nodes": [{{"id": "a", "lat": {lat0}, "lon": {lon0}}}, {{"id": "b", "lat": {lat0}, "lon": {}}}],
            "edges": [{{"id": "ab", "from": "a", "to": "b"}}]}}"#,
        lon0 + 0.002
    );
    fs::write(dir.path().join("g.json"), graph).unwrap();
    let trace: String = (0..5)
        .map(|k| format!("{k},{lat0},{}\n", lon0 + 0.0003 * k as f64))
        .collect();
    fs::write(dir.path().join("t.csv"), format!("t,lat,lon\n{trace}")).unwrap();
    let out = run(&["match", "--graph", "g.json", "--trace", "t.csv"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["matches"].as_array().unwrap().len(), 5);
    assert_eq!(doc["route"][0], "ab");
}
