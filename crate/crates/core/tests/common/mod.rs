//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use crewline_core::config::{load_config, CrewConfig};
use crewline_core::domain::{CulturalDomain, LanguageTag, Role, TranslationJob};
use crewline_core::gateway::{BackendConfig, Gateway};
use crewline_core::orchestrator::run_pipeline;
use crewline_core::search::SearchTool;
use crewline_core::transcript::{MemorySink, RunStatus, Transcript};
use regex::Regex;

pub mod fetchers;
pub mod http_stub;
pub mod strategies;
use serde_json::json;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn demo(name: &str) -> CrewConfig {
    load_config(&repo_root().join("configs").join(format!("{name}.toml"))).expect("demo config is valid")
}

pub const SOURCE: &str = "Families perform Lakshmi Puja and light diyas.";

pub fn job() -> TranslationJob {
    TranslationJob::with_id(
        "test-job",
        SOURCE,
        LanguageTag::parse("en").unwrap(),
        LanguageTag::parse("hi").unwrap(),
        CulturalDomain::Festival,
        "2025-01-01T00:00:00Z".parse().unwrap(),
    )
    .unwrap()
}

fn fixed_job(id: &str, text: &str, target: &str, domain: CulturalDomain) -> TranslationJob {
    TranslationJob::with_id(
        id,
        text,
        LanguageTag::parse("en").unwrap(),
        LanguageTag::parse(target).unwrap(),
        domain,
        "2025-01-01T00:00:00Z".parse().unwrap(),
    )
    .unwrap()
}

pub fn diwali_job() -> TranslationJob {
    demo_job("demo-diwali-hi")
}

/// The job each demo config's script was written for.
pub fn demo_job(name: &str) -> TranslationJob {
    match name {
        "demo-diwali-hi" | "diwali-baseline" | "always-revise" => fixed_job(
            "diwali",
            "Diwali, the grand festival of lights, marks the victory of good over evil. In the evening families perform Lakshmi Puja and light diyas in every doorway.",
            "hi",
            CulturalDomain::Festival,
        ),
        "demo-nevruz-tr" => fixed_job(
            "nevruz",
            "During Nevruz, neighbours gather for bonfire jumping and folk dances to welcome spring, then share baklava and pilav.",
            "tr",
            CulturalDomain::Festival,
        ),
        "demo-shabbat-he" => fixed_job(
            "shabbat",
            "Shabbat, the weekly day of rest, begins at sunset on Friday. Families light Shabbat candles, recite Kiddush and share Challah bread.",
            "he",
            CulturalDomain::Religion,
        ),
        other => panic!("no job for {other}"),
    }
}

pub fn fixture_config(name: &str) -> CrewConfig {
    load_config(&repo_root().join("fixtures/configs").join(format!("{name}.toml"))).expect("fixture config is valid")
}

pub fn search_for(config: &CrewConfig) -> SearchTool {
    SearchTool::new(config.search.clone()).expect("search tool builds")
}

/// Runs a config file as shipped, with its own backend and search settings.
pub fn run_config(config: &CrewConfig, job: &TranslationJob) -> Transcript {
    run_with(config, job, &search_for(config))
}

pub const DEMOS: [&str; 3] = ["demo-diwali-hi", "demo-nevruz-tr", "demo-shabbat-he"];

/// A valid crew (search disabled) driven by `script`.
pub fn crew(script: BTreeMap<String, String>, max_revisions: u32) -> CrewConfig {
    let mut c = demo("demo-nevruz-tr");
    c.backend = BackendConfig::scripted(script);
    c.max_revisions = max_revisions;
    c
}

pub fn t_doc(text: &str) -> String {
    json!({ "translated_text": text }).to_string()
}

pub fn i_doc(adapted: &str, preserve: &[&str]) -> String {
    let annotations: Vec<_> = preserve
        .iter()
        .map(|s| json!({ "source_span": s, "decision": "preserve", "rationale": "kept" }))
        .collect();
    json!({ "adapted_text": adapted, "annotations": annotations }).to_string()
}

pub fn s_doc(final_text: &str) -> String {
    json!({ "final_text": final_text, "applied_annotations": [] }).to_string()
}

pub fn accept_doc() -> String {
    json!({ "verdict": "accept", "issues": [] }).to_string()
}

pub fn revise_doc(responsible: &[Role]) -> String {
    let issues: Vec<_> = responsible
        .iter()
        .map(|r| {
            json!({
                "category": "coherence",
                "severity": "blocking",
                "responsible": r.as_str(),
                "description": format!("{r} output needs work"),
            })
        })
        .collect();
    json!({ "verdict": "revise", "issues": issues }).to_string()
}

/// One evaluator outcome: `None` accepts, `Some(roles)` raises one blocking
/// issue per role.
pub type Outcome = Option<Vec<Role>>;

/// Script where every non-evaluation stage succeeds at every revision and
/// evaluation number `k` answers with `schedule[k]`.
pub fn schedule_script(schedule: &[Outcome], max_revisions: u32) -> BTreeMap<String, String> {
    let mut script = BTreeMap::new();
    for rev in 0..=max_revisions {
        script.insert(format!("translation:{rev}:0"), t_doc(&format!("Parivaar puja karte hain {rev}.")));
        script.insert(format!("interpretation:{rev}:0"), i_doc(&format!("Parivaar puja karte hain {rev}."), &[]));
        script.insert(format!("synthesis:{rev}:0"), s_doc(&format!("Parivaar puja karte hain {rev}.")));
    }
    for (k, outcome) in schedule.iter().enumerate() {
        let doc = match outcome {
            None => accept_doc(),
            Some(roles) => revise_doc(roles),
        };
        script.insert(format!("evaluation:{k}:0"), doc);
    }
    script
}

pub fn run_with(config: &CrewConfig, job: &TranslationJob, search: &SearchTool) -> Transcript {
    let gateway = Gateway::from_config(&config.backend).unwrap();
    let mut sink = MemorySink::new();
    run_pipeline(job, config, &gateway, search, &mut sink).expect("pipeline runs")
}

pub fn run(config: &CrewConfig) -> Transcript {
    run_with(config, &job(), &SearchTool::disabled())
}

pub fn letter(r: Role) -> char {
    match r {
        Role::Translation => 'T',
        Role::Interpretation => 'I',
        Role::Synthesis => 'S',
        Role::Evaluation => 'E',
    }
}

pub fn trace_letters(t: &Transcript) -> String {
    t.stage_trace().into_iter().map(letter).collect()
}

/// Checks the stage trace against `TISE((TIS|IS|S)E){0,max}`.
pub fn assert_valid_trace(t: &Transcript, max_revisions: u32) {
    let re = Regex::new(&format!("^TISE((TIS|IS|S)E){{0,{max_revisions}}}$")).unwrap();
    let trace = trace_letters(t);
    assert!(re.is_match(&trace), "invalid trace {trace} for max_revisions={max_revisions}");
}

/// Reference state machine, written independently of the engine: walks the
/// evaluator schedule and returns the stage trace and final status.
pub fn reference(schedule: &[Outcome], max_revisions: u32) -> (String, RunStatus) {
    let mut trace = String::from("TISE");
    for (revisions, outcome) in (0u32..).zip(schedule) {
        let Some(roles) = outcome else { return (trace, RunStatus::Accepted) };
        if revisions == max_revisions {
            return (trace, RunStatus::MaxRevisionsExceeded);
        }
        let target = if roles.contains(&Role::Translation) {
            "TIS"
        } else if roles.contains(&Role::Interpretation) {
            "IS"
        } else {
            "S"
        };
        trace.push_str(target);
        trace.push('E');
    }
    panic!("schedule ran out before the run finished");
}

/// Every schedule of exactly `len` outcomes drawn from `outcomes`.
pub fn schedules(outcomes: &[Outcome], len: usize) -> Vec<Vec<Outcome>> {
    let mut all: Vec<Vec<Outcome>> = vec![Vec::new()];
    for _ in 0..len {
        all = all
            .into_iter()
            .flat_map(|prefix| {
                outcomes.iter().map(move |o| {
                    let mut next = prefix.clone();
                    next.push(o.clone());
                    next
                })
            })
            .collect();
    }
    all
}

pub fn single_role_outcomes() -> Vec<Outcome> {
    vec![
        None,
        Some(vec![Role::Translation]),
        Some(vec![Role::Interpretation]),
        Some(vec![Role::Synthesis]),
    ]
}
