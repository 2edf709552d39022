use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

/// Fresh copy of the fixture directory, so outputs land in a temp dir.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(FIXTURES).unwrap() {
        let path = entry.unwrap().path();
        fs::copy(&path, dir.path().join(path.file_name().unwrap())).unwrap();
    }
    dir
}

fn coachrank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coachrank"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Every file under `dir`, by name, with its bytes.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().into(), fs::read(&path).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn validate_clean_corpus() {
    let dir = workspace();
    let out = coachrank(dir.path(), &["--config", "corpus.json", "validate"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = stdout_json(&out);
    assert_eq!(report["errors"], Value::Array(vec![]));
    let seasons: Vec<i64> = report["seasons"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["season"].as_i64().unwrap())
        .collect();
    assert_eq!(seasons, [1975, 1976, 1977]);
    // Providence has no coach in 1977: a warning, not an error.
    let last = &report["seasons"][2];
    assert_eq!(last["unmatched_teams"], serde_json::json!(["Providence"]));
    assert!(stderr(&out).contains("warning: 1977: no coach for Providence"));
}

#[test]
fn validate_reports_tie_with_line() {
    let dir = workspace();
    let out = coachrank(dir.path(), &["--config", "tie.json", "validate"]);
    assert_eq!(code(&out), 2);
    let report = stdout_json(&out);
    let errors = report["errors"].as_array().unwrap();
    assert_eq!(errors.len(), 1);
    assert_eq!(errors[0]["kind"], "TieGame");
    assert_eq!(errors[0]["line"], 3);
}

#[test]
fn missing_config_is_fatal() {
    let dir = workspace();
    assert_eq!(code(&coachrank(dir.path(), &["validate"])), 2);
    assert_eq!(
        code(&coachrank(dir.path(), &["--config", "nope.json", "rank"])),
        2
    );
    fs::write(
        dir.path().join("bad.json"),
        r#"{"games": "games.csv", "coaches": "coaches.csv", "k": 0}"#,
    )
    .unwrap();
    let out = coachrank(dir.path(), &["--config", "bad.json", "rank"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("k must be at least 1"));
}

#[test]
fn rank_writes_every_output() {
    let dir = workspace();
    let out = coachrank(
        dir.path(),
        &["--config", "corpus.json", "--seed", "7", "rank"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out_dir = dir.path().join("out");
    for season in [1975, 1976, 1977] {
        for file in [
            format!("season_{season}.json"),
            format!("centrality_{season}.csv"),
            format!("network_{season}.graphml"),
        ] {
            assert!(out_dir.join(&file).is_file(), "{file}");
        }
        let season_json: Value = serde_json::from_slice(
            &fs::read(out_dir.join(format!("season_{season}.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(season_json["season"], season);
        assert_eq!(season_json["top_k"].as_array().unwrap().len(), 3);
        let trace = season_json["fit"]["cost_trace"].as_array().unwrap();
        assert_eq!(trace.last().unwrap(), &season_json["fit"]["final_cost"]);
    }
    let career = fs::read_to_string(out_dir.join("career.csv")).unwrap();
    assert_eq!(
        career.lines().next().unwrap(),
        "rank,coach,value,n_appearances,n_years"
    );
    let records: Value =
        serde_json::from_slice(&fs::read(out_dir.join("career.json")).unwrap()).unwrap();
    assert_eq!(
        records.as_array().unwrap().len(),
        career.lines().count() - 1
    );
    // John Wooden coached one season only; min_years is 2.
    assert!(!career.contains("John Wooden"));
    assert!(career.contains("Gene Bartow"));
    let failures: Value =
        serde_json::from_slice(&fs::read(out_dir.join("failures.json")).unwrap()).unwrap();
    assert_eq!(failures, serde_json::json!([]));
}

#[test]
fn rerun_is_byte_identical() {
    let dir = workspace();
    assert_eq!(
        code(&coachrank(
            dir.path(),
            &["--config", "corpus.json", "--seed", "3", "rank"]
        )),
        0
    );
    let first = snapshot(&dir.path().join("out"));
    assert_eq!(
        code(&coachrank(
            dir.path(),
            &["--config", "corpus.json", "--seed", "3", "rank"]
        )),
        0
    );
    assert_eq!(first, snapshot(&dir.path().join("out")));
}

#[test]
fn acyclic_season_goes_to_manifest() {
    let dir = workspace();
    let out = coachrank(dir.path(), &["--config", "acyclic.json", "rank"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let out_dir = dir.path().join("out");
    let failures: Value =
        serde_json::from_slice(&fs::read(out_dir.join("failures.json")).unwrap()).unwrap();
    let failed: Vec<i64> = failures
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["season"].as_i64().unwrap())
        .collect();
    assert_eq!(failed, [1978]);
    assert!(!out_dir.join("season_1978.json").exists());
    assert!(out_dir.join("season_1977.json").exists());
    assert!(stderr(&out).contains("season 1978 failed"));
    let summary = stdout_json(&out);
    assert_eq!(summary["seasons"], serde_json::json!([1975, 1976, 1977]));
    assert!(!summary["career"].as_array().unwrap().is_empty());
}

#[test]
fn centrality_only_run() {
    let dir = workspace();
    let out = coachrank(dir.path(), &["--config", "corpus.json", "centrality"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("out/centrality_1976.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(!dir.path().join("out/season_1976.json").exists());
}

#[test]
fn sensitivity_reports_relative_change() {
    let dir = workspace();
    let out = coachrank(
        dir.path(),
        &[
            "--config",
            "corpus.json",
            "sensitivity",
            "perturb_delete.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let reports: Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/sensitivity.json")).unwrap())
            .unwrap();
    assert_eq!(reports, stdout_json(&out));
    let r = &reports[0];
    assert_eq!(r["focus_coach"], "Bob Knight");
    let (base, after) = (
        r["baseline_skill"].as_f64().unwrap(),
        r["perturbed_skill"].as_f64().unwrap(),
    );
    // JSON parsing may round the last bit.
    assert!((r["relative_change"].as_f64().unwrap() - (after - base) / base).abs() < 1e-12);
}

#[test]
fn flip_and_delete_give_two_reports() {
    let dir = workspace();
    let request = |kind: &str| {
        serde_json::json!({
            "kind": kind,
            "target": {"season": 1976, "team_a": "Indiana", "team_b": "Duke", "occurrence": 0},
            "focus_coach": "Bob Knight",
        })
    };
    let list = serde_json::json!([request("delete_game"), request("flip_result")]);
    fs::write(dir.path().join("both.json"), list.to_string()).unwrap();
    let out = coachrank(
        dir.path(),
        &[
            "--config",
            "corpus.json",
            "sensitivity",
            "both.json",
            "--out",
            "both_out.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let reports: Value =
        serde_json::from_slice(&fs::read(dir.path().join("both_out.json")).unwrap()).unwrap();
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0]["perturbation"]["kind"], "delete_game");
    assert_eq!(reports[1]["perturbation"]["kind"], "flip_result");
    let change = |i: usize| reports[i]["relative_change"].as_f64().unwrap().abs();
    assert!(
        change(1) >= change(0),
        "flip {} vs delete {}",
        change(1),
        change(0)
    );
}

#[test]
fn sensitivity_missing_target_is_fatal() {
    let dir = workspace();
    let out = coachrank(
        dir.path(),
        &[
            "--config",
            "corpus.json",
            "sensitivity",
            "perturb_missing.json",
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("perturbation target not found"));
}

#[test]
fn synth_is_deterministic() {
    let dir = workspace();
    assert_eq!(
        code(&coachrank(dir.path(), &["synth", "synth_spec.json", "a"])),
        0
    );
    assert_eq!(
        code(&coachrank(dir.path(), &["synth", "synth_spec.json", "b"])),
        0
    );
    assert_eq!(
        snapshot(&dir.path().join("a")),
        snapshot(&dir.path().join("b"))
    );
    let names: Vec<PathBuf> = snapshot(&dir.path().join("a"))
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    assert_eq!(
        names,
        [
            PathBuf::from("coaches.csv"),
            PathBuf::from("games.csv"),
            PathBuf::from("truth.json")
        ]
    );
    assert_eq!(
        code(&coachrank(
            dir.path(),
            &["--seed", "5", "synth", "synth_spec.json", "c"]
        )),
        0
    );
    // The seed only drives noise and scores, so a different one changes the games file.
    assert_ne!(
        fs::read(dir.path().join("a/games.csv")).unwrap(),
        fs::read(dir.path().join("c/games.csv")).unwrap()
    );
}

#[test]
fn synth_rejects_single_team() {
    let dir = workspace();
    let mut spec: Value =
        serde_json::from_slice(&fs::read(dir.path().join("synth_spec.json")).unwrap()).unwrap();
    spec["n_teams"] = 1.into();
    fs::write(dir.path().join("one.json"), spec.to_string()).unwrap();
    let out = coachrank(dir.path(), &["synth", "one.json", "one"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("invalid synthetic spec"));
}

#[test]
fn synth_output_validates_and_ranks() {
    let dir = workspace();
    assert_eq!(
        code(&coachrank(dir.path(), &["synth", "synth_spec.json", "gen"])),
        0
    );
    let config = serde_json::json!({
        "games": "gen/games.csv",
        "coaches": "gen/coaches.csv",
        "model": {"w_player": 10.0, "w_coach": 10.0},
        "k": 4,
        "min_years": 1,
        "output_dir": "gen_out",
    });
    fs::write(dir.path().join("gen.json"), config.to_string()).unwrap();
    let out = coachrank(dir.path(), &["--config", "gen.json", "validate"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(stdout_json(&out)["errors"], Value::Array(vec![]));
    let out = coachrank(dir.path(), &["--config", "gen.json", "rank"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("gen_out/season_2000.json").is_file());
}

#[test]
#[ignore = "known to fail: centrality-derived player skills are far from the generating ones"]
fn synth_round_trip_recovers_ordering() {
    let dir = workspace();
    assert_eq!(
        code(&coachrank(dir.path(), &["synth", "synth_spec.json", "gen"])),
        0
    );
    let config = serde_json::json!({
        "games": "gen/games.csv",
        "coaches": "gen/coaches.csv",
        "model": {"w_player": 10.0, "w_coach": 10.0},
        "k": 4,
        "min_years": 1,
        "output_dir": "gen_out",
    });
    fs::write(dir.path().join("gen.json"), config.to_string()).unwrap();
    assert_eq!(
        code(&coachrank(dir.path(), &["--config", "gen.json", "rank"])),
        0
    );
    let season: Value =
        serde_json::from_slice(&fs::read(dir.path().join("gen_out/season_2000.json")).unwrap())
            .unwrap();
    let fitted: Vec<&str> = season["top_k"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["coach"].as_str().unwrap())
        .collect();
    assert_eq!(fitted, ["C1", "C2", "C3", "C4"]);
}
