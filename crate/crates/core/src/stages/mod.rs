//! The four agent stages: prompt rendering, model call, artifact parsing with
//! bounded corrective retries, and single-hop delegation for the stages that
//! allow it.

pub mod parse;
pub mod prompt;

use serde::{Deserialize, Serialize};

use crate::config::{AgentSpec, CrewConfig};
use crate::domain::{
    missing_preserved_terms, nfc, AnnotationDecision, CulturalAdaptation, DomainError, Issue, RawTranslation, Role,
    SearchEvidence, StageArtifact, SynthesizedText, TranslationJob,
};
use crate::gateway::{script_key, ChatMessage, ChatRequest, ChatResponse, Gateway, GatewayError};
use crate::search::{SearchMode, SearchTool};
use crate::transcript::{DelegationDisposition, EventPayload, EventSink, SinkError};

pub use parse::{encode_artifact, parse_stage_output, ParseFailure, ParsedOutput};
pub use prompt::render_prompt;

/// Attempts per stage invocation (one initial call plus corrective retries).
pub const PARSE_ATTEMPTS: u32 = 3;
/// At most this many validation queries per evaluation.
pub const MAX_VALIDATION_QUERIES: usize = 3;
/// Prefix of parse-retry reasons caused by gateway errors.
pub const BACKEND_ERROR_PREFIX: &str = "backend error";

/// Upstream artifacts a stage consumes.
#[derive(Debug, Clone, PartialEq)]
pub enum Upstream {
    Translation,
    Interpretation { raw: RawTranslation },
    Synthesis { raw: RawTranslation, adaptation: CulturalAdaptation },
    Evaluation { synthesized: SynthesizedText, adaptation: CulturalAdaptation },
}

impl Upstream {
    pub fn role(&self) -> Role {
        match self {
            Upstream::Translation => Role::Translation,
            Upstream::Interpretation { .. } => Role::Interpretation,
            Upstream::Synthesis { .. } => Role::Synthesis,
            Upstream::Evaluation { .. } => Role::Evaluation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageInput {
    pub job: TranslationJob,
    pub upstream: Upstream,
    pub revision_index: u32,
    /// Present exactly when `revision_index > 0`.
    pub revision_feedback: Option<Vec<Issue>>,
}

impl StageInput {
    pub fn new(
        job: TranslationJob,
        upstream: Upstream,
        revision_index: u32,
        revision_feedback: Option<Vec<Issue>>,
    ) -> Result<Self, DomainError> {
        if revision_feedback.is_some() != (revision_index > 0) {
            return Err(DomainError::new(
                "revision_feedback",
                "must be present exactly when revision_index > 0",
            ));
        }
        Ok(Self { job, upstream, revision_index, revision_feedback })
    }

    pub fn first_pass(job: TranslationJob, upstream: Upstream) -> Self {
        Self { job, upstream, revision_index: 0, revision_feedback: None }
    }

    pub fn role(&self) -> Role {
        self.upstream.role()
    }
}

/// A stage's request to ask another agent one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegationRequest {
    target: Role,
    question: String,
}

impl DelegationRequest {
    pub fn new(requester: Role, target: Role, question: &str) -> Result<Self, DomainError> {
        if target == requester {
            return Err(DomainError::new("delegate.target", "a stage cannot delegate to itself"));
        }
        if question.trim().is_empty() {
            return Err(DomainError::new("delegate.question", "must not be blank"));
        }
        Ok(Self { target, question: nfc(question) })
    }
    pub fn target(&self) -> Role {
        self.target
    }
    pub fn question(&self) -> &str {
        &self.question
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error("unresolvable placeholder {{{0}}}")]
    BadPlaceholder(String),
    #[error("{role} stage failed after {attempts} attempts: {cause}")]
    StageFailed { role: Role, attempts: u32, cause: String },
    #[error("invalid stage input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Sink(#[from] SinkError),
}

/// Everything a stage needs besides its spec and input.
pub struct StageContext<'a> {
    pub crew: &'a CrewConfig,
    pub gateway: &'a Gateway,
    pub search: &'a SearchTool,
    pub sink: &'a mut dyn EventSink,
}

/// Per-invocation call counter that yields script keys and correlation ids.
struct CallCounter {
    role: Role,
    revision: u32,
    next: u32,
}

impl CallCounter {
    fn next_key(&mut self) -> String {
        let key = script_key(self.role, self.revision, self.next);
        self.next += 1;
        key
    }
}

/// Runs a stage without search. For evaluation the report carries no evidence.
pub fn run_stage(ctx: &mut StageContext<'_>, spec: &AgentSpec, input: &StageInput) -> Result<StageArtifact, StageError> {
    check_spec(spec, input)?;
    emit_started(ctx, input)?;
    let artifact = execute(ctx, spec, input, None)?;
    emit_completed(ctx, input, &artifact)?;
    Ok(artifact)
}

/// Runs the evaluation stage with search-grounded evidence.
pub fn evaluate_with_search(
    ctx: &mut StageContext<'_>,
    spec: &AgentSpec,
    input: &StageInput,
) -> Result<crate::domain::EvaluationReport, StageError> {
    check_spec(spec, input)?;
    let Upstream::Evaluation { adaptation, .. } = &input.upstream else {
        return Err(StageError::InvalidInput("evaluation needs the synthesized text and adaptation".into()));
    };
    emit_started(ctx, input)?;
    let evidence = gather_evidence(ctx, input, adaptation)?;
    let artifact = execute(ctx, spec, input, Some(&evidence))?;
    emit_completed(ctx, input, &artifact)?;
    match artifact {
        StageArtifact::Evaluation(report) => Ok(report),
        _ => unreachable!("evaluation stage yields a report"),
    }
}

/// Validation queries: one per preserved or transliterated span, in
/// annotation order, capped at three.
pub fn validation_queries(job: &TranslationJob, adaptation: &CulturalAdaptation) -> Vec<String> {
    let mut queries: Vec<String> = Vec::new();
    for a in adaptation.annotations() {
        if queries.len() == MAX_VALIDATION_QUERIES {
            break;
        }
        if matches!(a.decision(), AnnotationDecision::Preserve | AnnotationDecision::TransliterateWithClarifier) {
            let q = format!("{} {}", a.source_span(), job.cultural_domain());
            if !queries.contains(&q) {
                queries.push(q);
            }
        }
    }
    queries
}

fn gather_evidence(
    ctx: &mut StageContext<'_>,
    input: &StageInput,
    adaptation: &CulturalAdaptation,
) -> Result<Vec<SearchEvidence>, StageError> {
    let mut evidence = Vec::new();
    if ctx.search.mode() == SearchMode::Disabled {
        return Ok(evidence);
    }
    for (i, query) in validation_queries(&input.job, adaptation).into_iter().enumerate() {
        let correlation_id = format!("search:{}:{i}", input.revision_index);
        ctx.sink.emit(
            Some(Role::Evaluation),
            EventPayload::ToolCall { correlation_id: correlation_id.clone(), query: query.clone() },
        )?;
        let payload = match ctx.search.search(&query) {
            Ok(outcome) => {
                let warning = outcome.warning.map(|w| w.to_string());
                if !outcome.evidence.results.is_empty() {
                    evidence.push(outcome.evidence.clone());
                }
                EventPayload::ToolResult { correlation_id, evidence: Some(outcome.evidence), warning, error: None }
            }
            Err(e) => {
                tracing::warn!(error = %e, query, "search failed; continuing without evidence");
                EventPayload::ToolResult { correlation_id, evidence: None, warning: None, error: Some(e.to_string()) }
            }
        };
        ctx.sink.emit(Some(Role::Evaluation), payload)?;
    }
    Ok(evidence)
}

fn check_spec(spec: &AgentSpec, input: &StageInput) -> Result<(), StageError> {
    if spec.role != input.role() {
        return Err(StageError::InvalidInput(format!(
            "spec for {} used with {} input",
            spec.role,
            input.role()
        )));
    }
    if input.revision_feedback.is_some() != (input.revision_index > 0) {
        return Err(StageError::InvalidInput(
            "revision_feedback must be present exactly when revision_index > 0".into(),
        ));
    }
    Ok(())
}

fn emit_started(ctx: &mut StageContext<'_>, input: &StageInput) -> Result<(), SinkError> {
    ctx.sink
        .emit(Some(input.role()), EventPayload::StageStarted { revision_index: input.revision_index })
        .map(drop)
}

fn emit_completed(ctx: &mut StageContext<'_>, input: &StageInput, artifact: &StageArtifact) -> Result<(), SinkError> {
    ctx.sink
        .emit(
            Some(input.role()),
            EventPayload::StageCompleted { revision_index: input.revision_index, artifact: artifact.clone() },
        )
        .map(drop)
}

/// Calls the gateway and records the request/response pair.
fn call_model(
    ctx: &mut StageContext<'_>,
    stage: Role,
    agent: &AgentSpec,
    messages: Vec<ChatMessage>,
    counter: &mut CallCounter,
) -> Result<Result<ChatResponse, GatewayError>, SinkError> {
    let key = counter.next_key();
    let correlation_id = key.clone();
    ctx.sink.emit(
        Some(stage),
        EventPayload::LlmRequest {
            correlation_id: correlation_id.clone(),
            script_key: key.clone(),
            agent: agent.role,
            model: ctx.gateway.model_name().to_string(),
            temperature: agent.model_params.temperature,
            max_tokens: agent.model_params.max_tokens,
            messages: messages.clone(),
        },
    )?;
    let result = ChatRequest::new(
        ctx.gateway.model_name(),
        messages,
        agent.model_params.temperature,
        agent.model_params.max_tokens,
        correlation_id.clone(),
    )
    .and_then(|req| ctx.gateway.chat(&req.with_script_key(key)));
    let payload = match &result {
        Ok(resp) => EventPayload::LlmResponse {
            correlation_id,
            content: Some(resp.content.clone()),
            error: None,
            model: resp.model.clone(),
            latency_ms: resp.latency_ms,
        },
        Err(e) => EventPayload::LlmResponse {
            correlation_id,
            content: None,
            error: Some(e.to_string()),
            model: String::new(),
            latency_ms: 0,
        },
    };
    ctx.sink.emit(Some(stage), payload)?;
    Ok(result)
}

/// Checks invariants that depend on the stage input, not just the reply.
fn check_against_input(artifact: &StageArtifact, input: &StageInput) -> Result<(), ParseFailure> {
    let fail = |reason: String| Err(ParseFailure { reason });
    match (artifact, &input.upstream) {
        (StageArtifact::Interpretation(adaptation), Upstream::Interpretation { raw }) => {
            if let Err(e) = adaptation.check_spans(&[input.job.source_text(), raw.translated_text()]) {
                return fail(format!("contract violation: {e}"));
            }
        }
        (StageArtifact::Synthesis(synth), Upstream::Synthesis { adaptation, .. }) => {
            let missing = missing_preserved_terms(synth.final_text(), adaptation.annotations());
            if !missing.is_empty() {
                return fail(format!(
                    "contract violation: preserved terms missing from final_text: {}",
                    missing.join(", ")
                ));
            }
        }
        _ => {}
    }
    Ok(())
}

/// Up to [`PARSE_ATTEMPTS`] calls, each retry quoting the previous failure.
fn attempt_loop(
    ctx: &mut StageContext<'_>,
    spec: &AgentSpec,
    input: &StageInput,
    base: &[ChatMessage],
    evidence: Option<&[SearchEvidence]>,
    counter: &mut CallCounter,
) -> Result<ParsedOutput, StageError> {
    let role = input.role();
    let mut messages = base.to_vec();
    let mut last_cause = String::new();
    for attempt in 1..=PARSE_ATTEMPTS {
        if attempt > 1 {
            ctx.sink.emit(Some(role), EventPayload::ParseRetry { attempt, reason: last_cause.clone() })?;
        }
        let reply = match call_model(ctx, role, spec, messages.clone(), counter)? {
            Ok(resp) => resp.content,
            Err(e) => {
                last_cause = format!("{BACKEND_ERROR_PREFIX}: {e}");
                messages = base.to_vec();
                continue;
            }
        };
        let parsed = parse::parse_with_evidence(role, &reply, evidence)
            .and_then(|p| check_against_input(&p.artifact, input).map(|_| p));
        match parsed {
            Ok(p) => return Ok(p),
            Err(failure) => {
                last_cause = failure.reason.clone();
                messages = base.to_vec();
                messages.push(ChatMessage::assistant(reply));
                messages.push(ChatMessage::user(format!(
                    "Your previous reply could not be used: {}. Reply again with only the JSON document described in the instructions.",
                    failure.reason
                )));
            }
        }
    }
    Err(StageError::StageFailed { role, attempts: PARSE_ATTEMPTS, cause: last_cause })
}

fn execute(
    ctx: &mut StageContext<'_>,
    spec: &AgentSpec,
    input: &StageInput,
    evidence: Option<&[SearchEvidence]>,
) -> Result<StageArtifact, StageError> {
    let role = input.role();
    let mut counter = CallCounter { role, revision: input.revision_index, next: 0 };
    let mut base = prompt::render_prompt_with_evidence(spec, input, evidence.unwrap_or_default())?;
    let mut parsed = attempt_loop(ctx, spec, input, &base, evidence, &mut counter)?;
    let mut budget = ctx.crew.max_delegations_per_stage;

    while let Some(request) = parsed.delegation.take() {
        let disposition = if !spec.allow_delegation || !role.may_delegate() {
            DelegationDisposition::Refused
        } else if budget == 0 {
            DelegationDisposition::Ignored
        } else {
            DelegationDisposition::Granted
        };
        ctx.sink.emit(
            Some(role),
            EventPayload::DelegationRequested {
                target: request.target(),
                question: request.question().to_string(),
                disposition,
            },
        )?;
        if disposition != DelegationDisposition::Granted {
            if disposition == DelegationDisposition::Refused {
                tracing::warn!(stage = %role, target = %request.target(), "delegation refused");
            }
            break;
        }
        budget -= 1;

        let target_spec = ctx.crew.agent(request.target()).clone();
        let sub_messages = vec![
            ChatMessage::system(format!(
                "{}\n\n{}\n\nA colleague on the translation crew asks you one question. Answer it concisely in plain text.",
                target_spec.goal.trim(),
                target_spec.backstory.trim()
            )),
            ChatMessage::user(format!(
                "Source text ({}):\n{}\n\nQuestion from the {role} agent:\n{}",
                input.job.source_lang(),
                input.job.source_text(),
                request.question()
            )),
        ];
        let answer = call_model(ctx, role, &target_spec, sub_messages, &mut counter)?;
        let (answer, error) = match answer {
            Ok(resp) => (Some(resp.content), None),
            Err(e) => (None, Some(e.to_string())),
        };
        ctx.sink.emit(
            Some(role),
            EventPayload::DelegationAnswered { target: request.target(), answer: answer.clone(), error },
        )?;
        let Some(answer) = answer else {
            // Keep the pre-delegation artifact when the colleague is unreachable.
            break;
        };
        base.push(ChatMessage::user(format!(
            "You asked the {} agent: {}\nTheir answer:\n{}\n\nTake the answer into account and reply with the final JSON document.",
            request.target(),
            request.question(),
            answer
        )));
        parsed = attempt_loop(ctx, spec, input, &base, evidence, &mut counter)?;
    }
    Ok(parsed.artifact)
}
