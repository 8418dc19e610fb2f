//! Run transcripts: the ordered event log of one pipeline run plus its final
//! record.

use std::collections::HashSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{DomainError, EvaluationReport, Role, SearchEvidence, StageArtifact, SynthesizedText, TranslationJob};
use crate::gateway::ChatMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    StageStarted,
    LlmRequest,
    LlmResponse,
    ToolCall,
    ToolResult,
    DelegationRequested,
    DelegationAnswered,
    RevisionTriggered,
    StageCompleted,
    ParseRetry,
}

/// What happened to a delegation request found in a stage's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelegationDisposition {
    Granted,
    /// The stage's agent may not delegate. Recorded as a warning.
    Refused,
    /// The per-stage delegation budget is spent.
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventPayload {
    StageStarted {
        revision_index: u32,
    },
    LlmRequest {
        correlation_id: String,
        script_key: String,
        /// The agent whose spec produced the prompt; differs from the event's
        /// stage only for delegation sub-calls.
        agent: Role,
        model: String,
        temperature: f64,
        max_tokens: u32,
        messages: Vec<ChatMessage>,
    },
    LlmResponse {
        correlation_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        content: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
        #[serde(default)]
        model: String,
        #[serde(default)]
        latency_ms: u64,
    },
    ToolCall {
        correlation_id: String,
        query: String,
    },
    ToolResult {
        correlation_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        evidence: Option<SearchEvidence>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        warning: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    DelegationRequested {
        target: Role,
        question: String,
        disposition: DelegationDisposition,
    },
    DelegationAnswered {
        target: Role,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        answer: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    RevisionTriggered {
        revision: u32,
        target: Role,
        /// Indices into the triggering report's issue list.
        issue_ids: Vec<usize>,
    },
    StageCompleted {
        revision_index: u32,
        #[serde(flatten)]
        artifact: StageArtifact,
    },
    ParseRetry {
        attempt: u32,
        reason: String,
    },
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::StageStarted { .. } => EventKind::StageStarted,
            EventPayload::LlmRequest { .. } => EventKind::LlmRequest,
            EventPayload::LlmResponse { .. } => EventKind::LlmResponse,
            EventPayload::ToolCall { .. } => EventKind::ToolCall,
            EventPayload::ToolResult { .. } => EventKind::ToolResult,
            EventPayload::DelegationRequested { .. } => EventKind::DelegationRequested,
            EventPayload::DelegationAnswered { .. } => EventKind::DelegationAnswered,
            EventPayload::RevisionTriggered { .. } => EventKind::RevisionTriggered,
            EventPayload::StageCompleted { .. } => EventKind::StageCompleted,
            EventPayload::ParseRetry { .. } => EventKind::ParseRetry,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub stage: Option<Role>,
    #[serde(flatten)]
    pub payload: EventPayload,
    pub at: DateTime<Utc>,
}

impl Event {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }
}

/// Error raised by an event sink (usually an I/O failure in the store).
#[derive(Debug, thiserror::Error)]
#[error("event sink: {0}")]
pub struct SinkError(pub String);

/// Receives pipeline events in order and assigns sequence numbers.
pub trait EventSink {
    fn emit(&mut self, stage: Option<Role>, payload: EventPayload) -> Result<u64, SinkError>;
    fn events(&self) -> &[Event];
}

/// Keeps events in memory only.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    events: Vec<Event>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

impl EventSink for MemorySink {
    fn emit(&mut self, stage: Option<Role>, payload: EventPayload) -> Result<u64, SinkError> {
        let seq = self.events.len() as u64 + 1;
        self.events.push(Event {
            seq,
            stage,
            payload,
            at: Utc::now(),
        });
        Ok(seq)
    }

    fn events(&self) -> &[Event] {
        &self.events
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Accepted,
    MaxRevisionsExceeded,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Accepted => "accepted",
            RunStatus::MaxRevisionsExceeded => "max_revisions_exceeded",
            RunStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: Role,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub status: RunStatus,
    pub revision_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<SynthesizedText>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<EvaluationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
}

/// The replayable record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TranscriptDoc")]
pub struct Transcript {
    job: TranslationJob,
    config_digest: String,
    events: Vec<Event>,
    #[serde(rename = "final", default, skip_serializing_if = "Option::is_none")]
    final_record: Option<FinalRecord>,
}

#[derive(Deserialize)]
struct TranscriptDoc {
    job: TranslationJob,
    config_digest: String,
    events: Vec<Event>,
    #[serde(rename = "final", default)]
    final_record: Option<FinalRecord>,
}

impl TryFrom<TranscriptDoc> for Transcript {
    type Error = DomainError;
    fn try_from(d: TranscriptDoc) -> Result<Self, Self::Error> {
        Transcript::new(d.job, d.config_digest, d.events, d.final_record)
    }
}

impl Transcript {
    pub fn new(
        job: TranslationJob,
        config_digest: String,
        events: Vec<Event>,
        final_record: Option<FinalRecord>,
    ) -> Result<Self, DomainError> {
        check_event_order(&events)?;
        if let Some(f) = &final_record {
            if f.status == RunStatus::Accepted && f.output.is_none() {
                return Err(DomainError::new("final.output", "accepted run must carry output"));
            }
        }
        Ok(Self {
            job,
            config_digest,
            events,
            final_record,
        })
    }

    pub fn job(&self) -> &TranslationJob {
        &self.job
    }
    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }
    pub fn events(&self) -> &[Event] {
        &self.events
    }
    pub fn final_record(&self) -> Option<&FinalRecord> {
        self.final_record.as_ref()
    }
    pub fn status(&self) -> Option<RunStatus> {
        self.final_record.as_ref().map(|f| f.status)
    }
    pub fn output(&self) -> Option<&SynthesizedText> {
        self.final_record.as_ref().and_then(|f| f.output.as_ref())
    }

    /// Stages in the order they were started.
    pub fn stage_trace(&self) -> Vec<Role> {
        stage_trace(&self.events)
    }

    /// Replaces the event list without re-checking order; test-only hook for
    /// building corrupted transcripts.
    #[doc(hidden)]
    pub fn with_events_unchecked(mut self, events: Vec<Event>) -> Self {
        self.events = events;
        self
    }
}

pub fn stage_trace(events: &[Event]) -> Vec<Role> {
    events
        .iter()
        .filter(|e| e.kind() == EventKind::StageStarted)
        .filter_map(|e| e.stage)
        .collect()
}

/// Strictly increasing `seq`, and every llm/tool response closes an open
/// request with the same correlation id.
pub fn check_event_order(events: &[Event]) -> Result<(), DomainError> {
    let mut open_llm = HashSet::new();
    let mut open_tool = HashSet::new();
    let mut last = 0u64;
    for (i, e) in events.iter().enumerate() {
        if e.seq <= last {
            return Err(DomainError::new(
                format!("events[{i}].seq"),
                format!("{} does not follow {last}", e.seq),
            ));
        }
        last = e.seq;
        match &e.payload {
            EventPayload::LlmRequest { correlation_id, .. } => {
                open_llm.insert(correlation_id.clone());
            }
            EventPayload::LlmResponse { correlation_id, .. } => {
                if !open_llm.remove(correlation_id) {
                    return Err(DomainError::new(
                        format!("events[{i}]"),
                        format!("llm_response `{correlation_id}` has no matching request"),
                    ));
                }
            }
            EventPayload::ToolCall { correlation_id, .. } => {
                open_tool.insert(correlation_id.clone());
            }
            EventPayload::ToolResult { correlation_id, .. }
                if !open_tool.remove(correlation_id) => {
                    return Err(DomainError::new(
                        format!("events[{i}]"),
                        format!("tool_result `{correlation_id}` has no matching call"),
                    ));
                }
            _ => {}
        }
    }
    Ok(())
}
