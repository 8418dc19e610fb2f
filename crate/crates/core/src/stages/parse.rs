//! Extraction of stage artifacts from free-form model replies.
//!
//! Candidates are tried in order: the whole reply, each fenced code block,
//! then every balanced `{...}` object found by scanning. The first candidate
//! that decodes into the role's artifact wins.

use serde::Deserialize;
use serde_json::Value;

use crate::domain::{
    CulturalAdaptation, EvaluationReport, Issue, RawTranslation, Role, SearchEvidence, StageArtifact, SynthesizedText,
    Verdict,
};

use super::DelegationRequest;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{reason}")]
pub struct ParseFailure {
    pub reason: String,
}

impl ParseFailure {
    fn new(reason: impl Into<String>) -> Self {
        Self { reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOutput {
    pub artifact: StageArtifact,
    pub delegation: Option<DelegationRequest>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DelegateDoc {
    target: Role,
    question: String,
}

/// Parses a reply for `role`, using any `evidence` carried in the document.
pub fn parse_stage_output(role: Role, raw: &str) -> Result<ParsedOutput, ParseFailure> {
    parse_with_evidence(role, raw, None)
}

/// As [`parse_stage_output`]; when `evidence` is given it replaces whatever
/// the document carries, and evidence references are checked against it.
pub(crate) fn parse_with_evidence(
    role: Role,
    raw: &str,
    evidence: Option<&[SearchEvidence]>,
) -> Result<ParsedOutput, ParseFailure> {
    let candidates = candidate_objects(raw);
    if candidates.is_empty() {
        return Err(ParseFailure::new(if raw.contains('{') {
            "malformed document: no well-formed JSON object found"
        } else {
            "no document found"
        }));
    }
    let mut first_error = None;
    for candidate in candidates {
        match decode(role, candidate, evidence) {
            Ok(parsed) => return Ok(parsed),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    Err(first_error.expect("at least one candidate"))
}

fn decode(role: Role, mut doc: serde_json::Map<String, Value>, evidence: Option<&[SearchEvidence]>) -> Result<ParsedOutput, ParseFailure> {
    let delegation = match doc.remove("delegate") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let d: DelegateDoc = serde_json::from_value(v)
                .map_err(|e| ParseFailure::new(format!("schema violation in delegate: {e}")))?;
            Some(DelegationRequest::new(role, d.target, &d.question).map_err(|e| ParseFailure::new(format!("schema violation: {e}")))?)
        }
    };
    let doc = Value::Object(doc);
    let schema = |e: serde_json::Error| ParseFailure::new(format!("schema violation for {role} artifact: {e}"));
    let artifact = match role {
        Role::Translation => StageArtifact::Translation(serde_json::from_value::<RawTranslation>(doc).map_err(schema)?),
        Role::Interpretation => {
            StageArtifact::Interpretation(serde_json::from_value::<CulturalAdaptation>(doc).map_err(schema)?)
        }
        Role::Synthesis => StageArtifact::Synthesis(serde_json::from_value::<SynthesizedText>(doc).map_err(schema)?),
        Role::Evaluation => StageArtifact::Evaluation(decode_report(doc, evidence)?),
    };
    Ok(ParsedOutput { artifact, delegation })
}

fn decode_report(doc: Value, evidence: Option<&[SearchEvidence]>) -> Result<EvaluationReport, ParseFailure> {
    let schema = |e: String| ParseFailure::new(format!("schema violation for evaluation artifact: {e}"));
    match evidence {
        None => serde_json::from_value(doc).map_err(|e| schema(e.to_string())),
        Some(evidence) => {
            #[derive(Deserialize)]
            struct ReportDoc {
                verdict: Verdict,
                #[serde(default)]
                issues: Vec<Issue>,
            }
            let d: ReportDoc = serde_json::from_value(doc).map_err(|e| schema(e.to_string()))?;
            EvaluationReport::new(d.verdict, d.issues, evidence.to_vec()).map_err(|e| schema(e.to_string()))
        }
    }
}

/// JSON objects embedded in `raw`, in priority order.
fn candidate_objects(raw: &str) -> Vec<serde_json::Map<String, Value>> {
    let mut out = Vec::new();
    let mut push = |text: &str| {
        if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(text.trim()) {
            if !out.contains(&map) {
                out.push(map);
            }
        }
    };
    push(raw);
    for block in fenced_blocks(raw) {
        push(block);
    }
    for (start, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            if !out.contains(&map) {
                out.push(map);
            }
        }
    }
    out
}

/// Bodies of ``` fenced blocks, with any info string dropped.
fn fenced_blocks(raw: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    blocks
}

/// The canonical document for an artifact; `parse_stage_output` inverts it.
pub fn encode_artifact(artifact: &StageArtifact) -> String {
    let value = match artifact {
        StageArtifact::Translation(a) => serde_json::to_value(a),
        StageArtifact::Interpretation(a) => serde_json::to_value(a),
        StageArtifact::Synthesis(a) => serde_json::to_value(a),
        StageArtifact::Evaluation(a) => serde_json::to_value(a),
    };
    serde_json::to_string(&value.expect("artifact serializes")).expect("value serializes")
}
