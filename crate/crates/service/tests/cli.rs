use std::path::Path;
use std::process::Command;

use rexplain_core::experiment::ExperimentConfig;

fn rexplain(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_rexplain")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "rexplain {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_config(dir: &Path) -> String {
    let mut config = ExperimentConfig::default();
    config.domains.truncate(3);
    config.domains.push(ExperimentConfig::default().domains[3].clone());
    config.replicates = 2;
    config.human.prior_samples = 20;
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_domain_writes_a_domain() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"kind": "threats_waypoints",
            "profile": {"reward_complexity": 3, "feature_complexity": "atomic",
                        "environment_complexity": {"width": 4, "height": 4, "slip": 0.0},
                        "situational_complexity": "none"}}"#,
    )
    .unwrap();
    let out = dir.path().join("domain.json");
    let run = |seed: &str| {
        rexplain(&["gen-domain", "--profile", spec.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()]);
        std::fs::read_to_string(&out).unwrap()
    };
    let first = run("3");
    assert_eq!(first, run("3"));
    let domain: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(domain["mdp"]["num_states"], 64);
    assert_eq!(domain["spec"]["features"].as_array().unwrap().len(), 3);
}

#[test]
fn simulate_is_byte_identical_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        rexplain(&["simulate", "--config", &config, "--seed", "17", "--out", out.to_str().unwrap()]);
    }
    for file in ["results.csv", "results_sd.csv", "sessions.csv", "events.jsonl"] {
        let x = std::fs::read(a.join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
    let header = std::fs::read_to_string(a.join("results.csv")).unwrap();
    assert_eq!(header.lines().count(), 1 + 24);

    let replayed = rexplain(&["replay", "--results", a.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&replayed.stdout).contains("replayed 48 sessions"));

    let analysis = rexplain(&["analyze", "--results", a.to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_slice(&analysis.stdout).unwrap();
    for h in ["h1", "h2", "h3", "h4"] {
        assert!(report[h]["direction"].is_string(), "{h}");
    }
}

#[test]
fn analyze_reports_missing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::default();
    config.domains.truncate(1);
    config.replicates = 1;
    let path = dir.path().join("config.json");
    std::fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    let out = dir.path().join("out");
    rexplain(&["simulate", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let failed = Command::new(env!("CARGO_BIN_EXE_rexplain"))
        .args(["analyze", "--results", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!failed.status.success());
    assert!(String::from_utf8_lossy(&failed.stderr).contains("missing cells"));
}
