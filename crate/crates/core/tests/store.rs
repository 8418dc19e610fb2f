mod common;

use std::path::Path;

use common::*;
use crewline_core::domain::{RawTranslation, Role, StageArtifact};
use crewline_core::gateway::Gateway;
use crewline_core::store::replay::first_divergence;
use crewline_core::store::{
    diff, read_transcript, replay, run_recorded, write_transcript, DiffSection, EventStore, ReplayError, StoreError,
};
use crewline_core::store::{read_events, transcript_path};
use crewline_core::transcript::{Event, EventKind, EventPayload, EventSink, RunStatus, Transcript};
use proptest::prelude::*;

fn recorded(name: &str, out: &Path) -> (Transcript, std::path::PathBuf) {
    let config = demo(name);
    let gateway = Gateway::from_config(&config.backend).unwrap();
    let run = run_recorded(&demo_job(name), &config, &gateway, &search_for(&config), out).unwrap();
    (run.transcript, run.events_path)
}

/// Byte offsets just past each `\n`, computed straight from the file.
fn line_ends(bytes: &[u8]) -> Vec<usize> {
    bytes.iter().enumerate().filter(|(_, b)| **b == b'\n').map(|(i, _)| i + 1).collect()
}

#[test]
fn event_log_and_transcript_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (t, events_path) = recorded("demo-diwali-hi", dir.path());
    let (events, warnings) = read_events(&events_path).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(events, t.events());
    let from_disk = read_transcript(&transcript_path(dir.path(), "diwali")).unwrap();
    assert_eq!(from_disk, t);
    assert!(!dir.path().join("diwali.transcript.tmp").exists());
}

#[test]
fn open_drops_a_truncated_tail_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let (t, events_path) = recorded("demo-nevruz-tr", dir.path());
    let bytes = std::fs::read(&events_path).unwrap();
    let ends = line_ends(&bytes);
    let cut = ends[4] + 10;
    std::fs::write(&events_path, &bytes[..cut]).unwrap();

    let mut store = EventStore::open(&events_path).unwrap();
    assert_eq!(store.last_seq(), 5);
    assert_eq!(store.warnings().len(), 1);
    assert_eq!(std::fs::metadata(&events_path).unwrap().len() as usize, ends[4]);

    let next = t.events()[5].clone();
    store.emit(next.stage, next.payload.clone()).unwrap();
    let (events, warnings) = read_events(&events_path).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(events.len(), 6);
    assert_eq!(events[5].payload, next.payload);
}

#[test]
fn corrupt_middle_line_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, events_path) = recorded("demo-nevruz-tr", dir.path());
    let text = std::fs::read_to_string(&events_path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{\"seq\": 3, garbage";
    std::fs::write(&events_path, lines.join("\n") + "\n").unwrap();
    match read_events(&events_path) {
        Err(StoreError::Corrupt { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected Corrupt, got {other:?}"),
    }
    assert!(matches!(EventStore::open(&events_path), Err(StoreError::Corrupt { line: 3, .. })));
}

#[test]
fn out_of_order_record_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, events_path) = recorded("demo-nevruz-tr", dir.path());
    let text = std::fs::read_to_string(&events_path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.swap(3, 4);
    std::fs::write(&events_path, lines.join("\n") + "\n").unwrap();
    assert!(matches!(read_events(&events_path), Err(StoreError::Corrupt { line: 4, .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Cutting the log anywhere keeps exactly the complete lines before the cut.
    #[test]
    fn truncation_keeps_complete_prefix(frac in 0.0f64..1.0) {
        let dir = tempfile::tempdir().unwrap();
        let (t, events_path) = recorded("demo-shabbat-he", dir.path());
        let bytes = std::fs::read(&events_path).unwrap();
        let cut = ((bytes.len() as f64) * frac) as usize;
        std::fs::write(&events_path, &bytes[..cut]).unwrap();

        let complete = line_ends(&bytes).into_iter().filter(|e| *e <= cut).count();
        let (events, warnings) = read_events(&events_path).unwrap();
        prop_assert_eq!(events.as_slice(), &t.events()[..complete]);
        let at_boundary = cut == 0 || bytes[cut - 1] == b'\n';
        prop_assert_eq!(warnings.is_empty(), at_boundary);
    }

    #[test]
    fn transcripts_round_trip_through_disk(max in 0u32..=2, schedule in proptest::collection::vec(
        prop_oneof![Just(None), Just(Some(vec![Role::Synthesis])), Just(Some(vec![Role::Translation, Role::Interpretation]))], 3)) {
        let t = run(&crew(schedule_script(&schedule, max), max));
        let dir = tempfile::tempdir().unwrap();
        let path = write_transcript(dir.path(), &t).unwrap();
        prop_assert_eq!(read_transcript(&path).unwrap(), t);
    }
}

#[test]
fn every_demo_replays_to_identical_output() {
    for name in DEMOS {
        let dir = tempfile::tempdir().unwrap();
        let (t, _) = recorded(name, dir.path());
        assert_eq!(t.status(), Some(RunStatus::Accepted), "{name}");
        let from_disk = read_transcript(&transcript_path(dir.path(), t.job().job_id())).unwrap();
        let out = replay(&from_disk, &demo(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(out.final_text().as_bytes(), t.output().unwrap().final_text().as_bytes());
    }
}

#[test]
fn changed_config_is_a_digest_mismatch() {
    let t = run_config(&demo("demo-nevruz-tr"), &demo_job("demo-nevruz-tr"));
    let mut config = demo("demo-nevruz-tr");
    config.max_revisions = 2;
    assert!(matches!(replay(&t, &config), Err(ReplayError::DigestMismatch { .. })));
}

#[test]
fn unaccepted_runs_are_not_replayed() {
    let config = fixture_config("always-revise");
    let t = run_config(&config, &demo_job("always-revise"));
    assert_eq!(t.status(), Some(RunStatus::MaxRevisionsExceeded));
    assert!(matches!(replay(&t, &config), Err(ReplayError::NotAccepted(Some(RunStatus::MaxRevisionsExceeded)))));
}

fn seq_of(t: &Transcript, pred: impl Fn(&Event) -> bool) -> u64 {
    t.events().iter().find(|e| pred(e)).map(|e| e.seq).unwrap()
}

#[test]
fn mutated_artifact_diverges_at_its_seq() {
    let config = demo("demo-diwali-hi");
    let t = run_config(&config, &diwali_job());
    let target = seq_of(&t, |e| e.stage == Some(Role::Translation) && e.kind() == EventKind::StageCompleted);
    let events: Vec<Event> = t
        .events()
        .iter()
        .cloned()
        .map(|mut e| {
            if e.seq == target {
                e.payload = EventPayload::StageCompleted {
                    revision_index: 0,
                    artifact: StageArtifact::Translation(RawTranslation::new("tampered", None).unwrap()),
                };
            }
            e
        })
        .collect();
    let tampered = t.clone().with_events_unchecked(events);
    let err = replay(&tampered, &config).unwrap_err();
    assert_eq!(err.divergent_seq(), Some(target), "{err}");
}

#[test]
fn mutated_response_diverges_where_the_parse_now_fails() {
    let config = demo("demo-nevruz-tr");
    let t = run_config(&config, &demo_job("demo-nevruz-tr"));
    let response = seq_of(&t, |e| e.stage == Some(Role::Synthesis) && e.kind() == EventKind::LlmResponse);
    let events: Vec<Event> = t
        .events()
        .iter()
        .cloned()
        .map(|mut e| {
            if let EventPayload::LlmResponse { content, .. } = &mut e.payload {
                if e.seq == response {
                    *content = Some("I would rather not.".into());
                }
            }
            e
        })
        .collect();
    let tampered = t.clone().with_events_unchecked(events);
    match replay(&tampered, &config) {
        Err(ReplayError::Divergence { seq, detail }) => {
            assert_eq!(seq, response + 1);
            assert!(detail.contains("parse_retry"), "{detail}");
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn swapped_events_diverge_at_the_first_swapped_seq() {
    let t = run_config(&demo("demo-nevruz-tr"), &demo_job("demo-nevruz-tr"));
    let mut events = t.events().to_vec();
    let (i, j) = (6, 9);
    let (pi, pj) = (events[i].payload.clone(), events[j].payload.clone());
    assert_ne!(pi, pj);
    events[i].payload = pj;
    events[j].payload = pi;
    let (seq, _) = first_divergence(&events, t.events()).unwrap();
    assert_eq!(seq, events[i].seq);
}

#[test]
fn changed_final_text_is_an_output_mismatch() {
    let config = demo("demo-nevruz-tr");
    let t = run_config(&config, &demo_job("demo-nevruz-tr"));
    let mut doc = serde_json::to_value(&t).unwrap();
    let text = doc["final"]["output"]["final_text"].as_str().unwrap().to_string();
    doc["final"]["output"]["final_text"] = serde_json::Value::String(format!("{text} "));
    let tampered: Transcript = serde_json::from_value(doc).unwrap();
    assert!(matches!(replay(&tampered, &config), Err(ReplayError::OutputMismatch)));
}

#[test]
fn diff_of_a_transcript_with_itself_is_empty() {
    let t = run_config(&demo("demo-diwali-hi"), &diwali_job());
    let report = diff(&t, &t);
    assert!(report.is_empty());
    assert_eq!(report.to_string(), "NO DIFFERENCES\n");
}

#[test]
fn diff_against_baseline_shows_the_dropped_ritual_name() {
    let ours = run_config(&demo("demo-diwali-hi"), &diwali_job());
    let baseline = run_config(&fixture_config("diwali-baseline"), &diwali_job());
    let report = diff(&ours, &baseline);
    match report.section("annotations") {
        Some(DiffSection::Annotations { only_in_a, .. }) => assert!(only_in_a.contains(&"Lakshmi Puja".to_string())),
        other => panic!("annotations section missing: {other:?}"),
    }
    assert!(report.section("final_text").is_some());
    assert!(report.section("status").is_none());
    let text = report.to_string();
    assert!(text.contains("only in a: Lakshmi Puja"), "{text}");
    let minus = text.find("  - ").unwrap();
    let plus = text.find("  + ").unwrap();
    assert!(minus < plus);
}

#[test]
fn diff_reports_status_and_trace_changes() {
    let accepted = run(&crew(schedule_script(&[None], 1), 1));
    let exhausted = run(&crew(schedule_script(&vec![Some(vec![Role::Synthesis]); 2], 1), 1));
    let report = diff(&accepted, &exhausted);
    assert!(matches!(
        report.section("status"),
        Some(DiffSection::Status { a: Some(RunStatus::Accepted), b: Some(RunStatus::MaxRevisionsExceeded) })
    ));
    assert!(report.section("stage_trace").is_some());
    assert!(report.section("revision_count").is_some());
    assert!(report.section("issues").is_some());
}

fn outcome() -> impl Strategy<Value = Outcome> {
    prop_oneof![
        Just(None),
        Just(Some(vec![Role::Translation])),
        Just(Some(vec![Role::Interpretation])),
        Just(Some(vec![Role::Synthesis, Role::Interpretation])),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn diff_is_antisymmetric(
        (ma, sa) in (0u32..=2, proptest::collection::vec(outcome(), 3)),
        (mb, sb) in (0u32..=2, proptest::collection::vec(outcome(), 3)),
    ) {
        let a = run(&crew(schedule_script(&sa, ma), ma));
        let b = run(&crew(schedule_script(&sb, mb), mb));
        prop_assert_eq!(diff(&b, &a), diff(&a, &b).mirror());
        prop_assert!(diff(&a, &a).is_empty());
    }
}
