use std::path::Path;

use teleop_service::acceptance::fixtures_dir;
use teleop_service::mission::{run_mission, Mission, MissionError};

fn tmp(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("teleop-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn trivial_run_writes_one_row_per_step() {
    let dir = tmp("trivial");
    std::fs::create_dir_all(&dir).unwrap();
    let scenario = dir.join("s.json");
    std::fs::write(&scenario, r#"{"name": "idle", "duration": 0.5}"#).unwrap();
    let out = dir.join("out");
    let report = run_mission(&scenario, None, None, &out, None).unwrap();
    assert!(report.completed);
    assert_eq!(report.steps, 50);
    let csv = std::fs::read_to_string(out.join("log.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    let jsonl = std::fs::read_to_string(out.join("log.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 50);
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(saved["steps"], 50);
}

#[test]
fn missing_scenario_names_the_path() {
    let err = run_mission(Path::new("/no/such/scenario.json"), None, None, &tmp("missing"), None).unwrap_err();
    assert!(err.to_string().contains("/no/such/scenario.json"), "{err}");
}

#[test]
fn bad_tree_reports_position() {
    let dir = tmp("badtree");
    std::fs::create_dir_all(&dir).unwrap();
    let tree = dir.join("t.bt");
    std::fs::write(&tree, "sequence { action(gaze_tracking) ").unwrap();
    let err = Mission::load(&fixtures_dir().join("tracking.json"), Some(&tree), None, None).err().unwrap();
    assert!(matches!(err, MissionError::Tree { .. }));
    assert!(err.to_string().contains("t.bt"), "{err}");
}

#[test]
fn seed_override_changes_noisy_logs() {
    let dir = fixtures_dir();
    let run = |seed| {
        let out = tmp(&format!("seed{seed}"));
        run_mission(&dir.join("transport.json"), None, None, &out, Some(seed)).unwrap();
        std::fs::read(out.join("log.csv")).unwrap()
    };
    assert_ne!(run(1), run(2));
}

#[test]
fn every_fixture_loads() {
    let dir = fixtures_dir();
    for (s, tree, trace) in [
        ("tracking", Some("tracking.bt"), Some("tracking.jsonl")),
        ("transport", None, Some("transport.jsonl")),
        ("vtr_on", None, None),
        ("vtr_off", None, Some("vtr_switch.jsonl")),
    ] {
        let tree = tree.map(|t| dir.join(t));
        let trace = trace.map(|t| dir.join(t));
        Mission::load(&dir.join(format!("{s}.json")), tree.as_deref(), trace.as_deref(), None).unwrap();
    }
}
