//! Deterministic re-execution of a recorded run.
//!
//! Model replies become a scripted backend keyed by script key; search
//! results become in-memory fixtures. Events are compared after dropping
//! wall-clock and transport details.

use std::collections::{BTreeMap, HashMap};

use serde_json::{json, Value};

use crate::config::CrewConfig;
use crate::domain::{SearchResult, SynthesizedText};
use crate::gateway::{BackendConfig, Gateway};
use crate::orchestrator::{run_pipeline, PipelineError};
use crate::search::{SearchMode, SearchTool};
use crate::stages::BACKEND_ERROR_PREFIX;
use crate::transcript::{Event, EventPayload, MemorySink, RunStatus, Transcript};

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("config digest {actual} does not match transcript digest {expected}")]
    DigestMismatch { expected: String, actual: String },
    #[error("transcript status is {}, only accepted runs can be replayed", .0.map_or("unfinalized", |s| s.as_str()))]
    NotAccepted(Option<RunStatus>),
    #[error("replay diverged at seq {seq}: {detail}")]
    Divergence { seq: u64, detail: String },
    #[error("replayed final text differs from the recorded output")]
    OutputMismatch,
    #[error("replay run failed: {0}")]
    Pipeline(#[from] PipelineError),
}

impl ReplayError {
    /// The first diverging seq, when the divergence is at an event.
    pub fn divergent_seq(&self) -> Option<u64> {
        match self {
            ReplayError::Divergence { seq, .. } => Some(*seq),
            _ => None,
        }
    }
}

/// Script entries recovered from the transcript's model replies.
pub fn script_from_events(events: &[Event]) -> BTreeMap<String, String> {
    let mut keys: HashMap<&str, &str> = HashMap::new();
    let mut script = BTreeMap::new();
    for e in events {
        match &e.payload {
            EventPayload::LlmRequest { correlation_id, script_key, .. } => {
                keys.insert(correlation_id, script_key);
            }
            EventPayload::LlmResponse { correlation_id, content: Some(content), .. } => {
                if let Some(key) = keys.get(correlation_id.as_str()) {
                    script.insert(key.to_string(), content.clone());
                }
            }
            _ => {}
        }
    }
    script
}

/// Search fixtures recovered from the transcript's tool results.
pub fn fixtures_from_events(events: &[Event]) -> BTreeMap<String, Vec<SearchResult>> {
    let mut queries: HashMap<&str, &str> = HashMap::new();
    let mut fixtures = BTreeMap::new();
    for e in events {
        match &e.payload {
            EventPayload::ToolCall { correlation_id, query } => {
                queries.insert(correlation_id, query);
            }
            EventPayload::ToolResult { correlation_id, evidence: Some(ev), .. } => {
                if let Some(q) = queries.get(correlation_id.as_str()) {
                    fixtures.insert(q.to_string(), ev.results.clone());
                }
            }
            _ => {}
        }
    }
    fixtures
}

const VOLATILE_KEYS: [&str; 5] = ["at", "fetched_at", "origin", "latency_ms", "model"];

fn strip_volatile(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for k in VOLATILE_KEYS {
                map.remove(k);
            }
            map.values_mut().for_each(strip_volatile);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_volatile),
        _ => {}
    }
}

/// The comparable projection of an event.
pub fn normalize_event(e: &Event) -> Value {
    let payload = match &e.payload {
        EventPayload::LlmRequest { script_key, messages, .. } => json!({ "script_key": script_key, "messages": messages }),
        EventPayload::LlmResponse { content: Some(c), .. } => json!({ "content": c }),
        EventPayload::LlmResponse { content: None, .. } => json!({ "error": true }),
        EventPayload::ToolCall { query, .. } => json!({ "query": query }),
        EventPayload::ToolResult { evidence, .. } => {
            json!({ "results": evidence.as_ref().map(|ev| ev.results.clone()).unwrap_or_default() })
        }
        // Backend error text depends on the transport; only the fact of an error is compared.
        EventPayload::ParseRetry { attempt, reason } if reason.starts_with(BACKEND_ERROR_PREFIX) => {
            json!({ "attempt": attempt, "reason": BACKEND_ERROR_PREFIX })
        }
        EventPayload::DelegationAnswered { target, answer: None, .. } => json!({ "target": target, "error": true }),
        other => {
            let mut v = serde_json::to_value(other).expect("payload serializes");
            strip_volatile(&mut v);
            v
        }
    };
    json!({ "seq": e.seq, "kind": e.kind(), "stage": e.stage, "payload": payload })
}

/// First position where the two event lists differ after normalization.
pub fn first_divergence(recorded: &[Event], replayed: &[Event]) -> Option<(u64, String)> {
    for (i, a) in recorded.iter().enumerate() {
        let Some(b) = replayed.get(i) else {
            return Some((a.seq, "replayed run ended early".to_string()));
        };
        let (na, nb) = (normalize_event(a), normalize_event(b));
        if na != nb {
            return Some((a.seq, format!("recorded {} vs replayed {}", describe(a), describe(b))));
        }
    }
    replayed
        .get(recorded.len())
        .map(|b| (b.seq, format!("replayed run emitted extra {}", describe(b))))
}

fn describe(e: &Event) -> String {
    let kind = serde_json::to_value(e.kind()).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    match e.stage {
        Some(s) => format!("{kind} ({s})"),
        None => kind,
    }
}

/// Re-runs an accepted transcript and returns the reproduced output.
pub fn replay(transcript: &Transcript, config: &CrewConfig) -> Result<SynthesizedText, ReplayError> {
    let actual = config.digest();
    if actual != transcript.config_digest() {
        return Err(ReplayError::DigestMismatch { expected: transcript.config_digest().to_string(), actual });
    }
    if transcript.status() != Some(RunStatus::Accepted) {
        return Err(ReplayError::NotAccepted(transcript.status()));
    }
    let events = transcript.events();
    let gateway = Gateway::from_config(&BackendConfig::scripted(script_from_events(events)))
        .expect("scripted backend needs no setup");
    let search = match config.search.mode {
        SearchMode::Disabled => SearchTool::disabled(),
        _ => SearchTool::with_memory_fixtures(config.search.clone(), fixtures_from_events(events)),
    };
    let mut sink = MemorySink::new();
    let rerun = run_pipeline(transcript.job(), config, &gateway, &search, &mut sink)?;
    if let Some((seq, detail)) = first_divergence(events, rerun.events()) {
        return Err(ReplayError::Divergence { seq, detail });
    }
    let recorded = transcript.output().ok_or(ReplayError::NotAccepted(transcript.status()))?;
    match rerun.output() {
        Some(out) if out.final_text().as_bytes() == recorded.final_text().as_bytes() => Ok(out.clone()),
        _ => Err(ReplayError::OutputMismatch),
    }
}
