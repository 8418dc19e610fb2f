//! End-to-end checks of the `crewline` binary: exit codes and key output.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const DIWALI: &str = "Diwali, the grand festival of lights, marks the victory of good over evil. \
                      In the evening families perform Lakshmi Puja and light diyas in every doorway.";

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn crewline(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crewline")).args(args).current_dir(root()).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_diwali(config: &str, out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec![
        "run", "--config", config, "--text", DIWALI, "--source", "en", "--target", "hi", "--domain", "festival",
        "--out", out, "--job-id", "cli-test",
    ];
    args.extend_from_slice(extra);
    crewline(&args)
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn validate_accepts_the_default_config() {
    let o = crewline(&["validate", "--config", "configs/default.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("OK configs/default.toml (digest "));
}

#[test]
fn validate_lists_every_violation_by_path() {
    let dir = tempfile::tempdir().unwrap();
    let demo = std::fs::read_to_string(root().join("configs/demo-nevruz-tr.toml")).unwrap();
    let head = demo.split("[backend]").next().unwrap();
    let (before, after) = head.split_at(head.find("[agents.evaluation]").unwrap());
    let broken = format!("{before}{}", after.replace("allow_delegation = false", "allow_delegation = true"));
    let path = write(dir.path(), "bad.toml", &broken);
    let o = crewline(&["validate", "--config", &path]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("agents.evaluation.allow_delegation"), "{err}");
    assert!(err.contains("  backend: "), "{err}");
}

#[test]
fn run_accepted_demo_exits_zero_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_diwali("configs/demo-diwali-hi.toml", dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("Lakshmi Puja"));
    assert!(stdout(&o).contains("deepak"), "{}", stdout(&o));
    let err = stderr(&o);
    assert!(err.contains("status: accepted"), "{err}");
    assert!(err.contains("stage trace: translation interpretation synthesis evaluation synthesis evaluation"), "{err}");
    assert!(dir.path().join("cli-test.transcript").is_file());
    assert!(dir.path().join("cli-test.events").is_file());
}

#[test]
fn exhausted_revisions_exit_two_with_banner() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_diwali("fixtures/configs/always-revise.toml", dir.path(), &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("WARNING: max_revisions_exceeded"), "{out}");
    assert!(out.lines().count() >= 2, "final text follows the banner");
    assert!(stderr(&o).contains("status: max_revisions_exceeded"), "{}", stderr(&o));
}

#[test]
fn failed_stage_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let demo = std::fs::read_to_string(root().join("fixtures/configs/diwali-baseline.toml")).unwrap();
    let mut lines: Vec<String> = demo.lines().map(str::to_string).collect();
    let at = lines.iter().position(|l| l.starts_with("\"synthesis:0:0\"")).unwrap();
    lines[at + 1] = "I cannot produce JSON today.'''".into();
    let config = write(dir.path(), "failing.toml", &(lines.join("\n") + "\n"));
    let o = run_diwali(&config, dir.path(), &[]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("failed stage: synthesis"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_64() {
    for args in [
        vec!["run", "--config", "configs/demo-diwali-hi.toml", "--text", "x", "--target", "hi"],
        vec!["run", "--config", "configs/demo-diwali-hi.toml", "--text", "  ", "--source", "en", "--target", "hi"],
        vec!["run", "--config", "configs/demo-diwali-hi.toml", "--text", "x", "--source", "en", "--target", "hi", "--domain", "sports"],
        vec!["run", "--config", "configs/demo-diwali-hi.toml", "--text", "x", "--source", "e n", "--target", "hi"],
        vec!["translate"],
        vec![],
    ] {
        let o = crewline(&args);
        assert_eq!(code(&o), 64, "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("usage error: "), "{args:?}: {}", stderr(&o));
        assert_eq!(stderr(&o).lines().count(), 1, "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn replay_of_checked_in_transcript_is_ok() {
    let o = crewline(&[
        "replay", "--transcript", "fixtures/transcripts/ours-diwali.transcript", "--config", "configs/demo-diwali-hi.toml",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o), "REPLAY OK\n");
}

fn tampered(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) -> String {
    let text = std::fs::read_to_string(root().join("fixtures/transcripts/ours-diwali.transcript")).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    edit(&mut doc);
    write(dir, "tampered.transcript", &serde_json::to_string_pretty(&doc).unwrap())
}

#[test]
fn replay_of_tampered_transcript_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = tampered(dir.path(), |doc| {
        let events = doc["events"].as_array_mut().unwrap();
        let completed = events
            .iter_mut()
            .find(|e| e["kind"] == "stage_completed" && e["stage"] == "translation")
            .unwrap();
        completed["payload"]["artifact"]["translated_text"] = "tampered".into();
    });
    let o = crewline(&["replay", "--transcript", &path, "--config", "configs/demo-diwali-hi.toml"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("REPLAY DIVERGED: "), "{}", stdout(&o));

    let path = tampered(dir.path(), |doc| {
        let text = doc["final"]["output"]["final_text"].as_str().unwrap().to_string();
        doc["final"]["output"]["final_text"] = format!("{text} (edited)").into();
    });
    let o = crewline(&["replay", "--transcript", &path, "--config", "configs/demo-diwali-hi.toml"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn replay_with_another_config_exits_one() {
    let o = crewline(&[
        "replay", "--transcript", "fixtures/transcripts/ours-diwali.transcript", "--config", "configs/demo-nevruz-tr.toml",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("digest"), "{}", stderr(&o));
}

#[test]
fn diff_of_identical_transcripts() {
    let t = "fixtures/transcripts/ours-diwali.transcript";
    let o = crewline(&["diff", "--a", t, "--b", t]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "NO DIFFERENCES\n");
}

#[test]
fn diff_against_baseline_names_the_preserved_term() {
    let o = crewline(&[
        "diff", "--a", "fixtures/transcripts/ours-diwali.transcript", "--b", "fixtures/transcripts/baseline-diwali.transcript",
    ]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("annotations (preserved terms):\n  only in a: Lakshmi Puja\n"), "{out}");
    assert!(out.contains("revision_count: a=1 b=0"), "{out}");

    let o = crewline(&[
        "diff", "--json", "--a", "fixtures/transcripts/ours-diwali.transcript", "--b",
        "fixtures/transcripts/baseline-diwali.transcript",
    ]);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let sections: Vec<&str> = report["sections"].as_array().unwrap().iter().map(|s| s["section"].as_str().unwrap()).collect();
    assert_eq!(sections, ["revision_count", "stage_trace", "final_text", "annotations", "issues"]);
}

#[test]
fn scaffold_captures_recorded_search_results() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("search");
    let f = fixtures.to_str().unwrap();
    let args = ["scaffold", "--dir", f, "--transcript", "fixtures/transcripts/ours-diwali.transcript", "--query", "Diya lamps"];
    let o = crewline(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let captured: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixtures.join("lakshmi-puja-festival.json")).unwrap()).unwrap();
    let original: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(root().join("fixtures/search/lakshmi-puja-festival.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(captured["results"], original["results"]);
    let empty: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixtures.join("diya-lamps.json")).unwrap()).unwrap();
    assert_eq!(empty["results"], serde_json::json!([]));

    let again = crewline(&args);
    assert!(stdout(&again).lines().all(|l| l.starts_with("kept ")), "{}", stdout(&again));
    let forced = crewline(&[&args[..], &["--force"]].concat());
    assert!(stdout(&forced).lines().all(|l| l.starts_with("wrote ")), "{}", stdout(&forced));
}
