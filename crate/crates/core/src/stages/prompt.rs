//! Prompt templates with a closed set of `{name}` placeholders.
//!
//! `{{` and `}}` render as literal braces. Any other `{` that does not open a
//! `{identifier}` is copied through unchanged.

use crate::config::AgentSpec;
use crate::domain::{Annotation, AnnotationDecision, Issue, Role, SearchEvidence};
use crate::gateway::ChatMessage;

use super::{StageError, StageInput, Upstream};

/// Every placeholder a template may use.
pub const PLACEHOLDERS: [&str; 9] = [
    "source_text",
    "source_lang",
    "target_lang",
    "cultural_domain",
    "upstream_translation",
    "upstream_adaptation",
    "upstream_final",
    "feedback",
    "evidence",
];

/// Placeholders a given stage can resolve from its input.
pub fn available_placeholders(role: Role) -> &'static [&'static str] {
    match role {
        Role::Translation => &["source_text", "source_lang", "target_lang", "cultural_domain", "feedback"],
        Role::Interpretation => &[
            "source_text",
            "source_lang",
            "target_lang",
            "cultural_domain",
            "feedback",
            "upstream_translation",
        ],
        Role::Synthesis => &[
            "source_text",
            "source_lang",
            "target_lang",
            "cultural_domain",
            "feedback",
            "upstream_translation",
            "upstream_adaptation",
        ],
        Role::Evaluation => &[
            "source_text",
            "source_lang",
            "target_lang",
            "cultural_domain",
            "upstream_adaptation",
            "upstream_final",
            "evidence",
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece<'a> {
    Text(&'a str),
    Placeholder(&'a str),
}

fn pieces(template: &str) -> Vec<Piece<'_>> {
    let bytes = template.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push(Piece::Text(&template[start..i + 1]));
                i += 2;
                start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push(Piece::Text(&template[start..i + 1]));
                i += 2;
                start = i;
            }
            b'{' => {
                let name_len = bytes[i + 1..]
                    .iter()
                    .take_while(|b| b.is_ascii_alphanumeric() || **b == b'_')
                    .count();
                if name_len > 0 && bytes.get(i + 1 + name_len) == Some(&b'}') {
                    out.push(Piece::Text(&template[start..i]));
                    out.push(Piece::Placeholder(&template[i + 1..i + 1 + name_len]));
                    i += name_len + 2;
                    start = i;
                } else {
                    i += 1;
                }
            }
            _ => i += 1,
        }
    }
    out.push(Piece::Text(&template[start..]));
    out
}

/// Placeholder names referenced by a template, in order of appearance.
pub fn placeholders_in(template: &str) -> Vec<&str> {
    pieces(template)
        .into_iter()
        .filter_map(|p| match p {
            Piece::Placeholder(name) => Some(name),
            Piece::Text(_) => None,
        })
        .collect()
}

/// Human-readable problems with a template for `role`; empty when valid.
pub fn template_violations(role: Role, template: &str) -> Vec<String> {
    let available = available_placeholders(role);
    placeholders_in(template)
        .into_iter()
        .filter_map(|name| {
            if !PLACEHOLDERS.contains(&name) {
                Some(format!("unknown placeholder {{{name}}}"))
            } else if !available.contains(&name) {
                Some(format!("placeholder {{{name}}} is not available to the {role} stage"))
            } else {
                None
            }
        })
        .collect()
}

pub fn default_template(role: Role) -> &'static str {
    match role {
        Role::Translation => {
            "Translate the following {cultural_domain} text from {source_lang} to {target_lang}.\n\n\
             Source text:\n{source_text}"
        }
        Role::Interpretation => {
            "Adapt this {target_lang} translation of a {cultural_domain} text for a native audience. \
             Annotate every culturally significant span of the source text.\n\n\
             Source text ({source_lang}):\n{source_text}\n\n\
             Raw translation:\n{upstream_translation}"
        }
        Role::Synthesis => {
            "Produce the final {target_lang} text. Apply every annotation; preserved terms must appear verbatim.\n\n\
             Source text ({source_lang}):\n{source_text}\n\n\
             Raw translation:\n{upstream_translation}\n\n\
             Cultural adaptation:\n{upstream_adaptation}"
        }
        Role::Evaluation => {
            "Review this {target_lang} translation of a {cultural_domain} text for accuracy, bias \
             and misrepresentation of cultural elements.\n\n\
             Source text ({source_lang}):\n{source_text}\n\n\
             Cultural decisions:\n{upstream_adaptation}\n\n\
             Final text:\n{upstream_final}\n\n\
             Search evidence:\n{evidence}"
        }
    }
}

/// The artifact document each stage must reply with.
pub fn output_contract(role: Role) -> &'static str {
    match role {
        Role::Translation => {
            "Reply with a single JSON object and nothing else:\n\
             {\"translated_text\": string, \"notes\": string (optional)}\n\
             You may add \"delegate\": {\"target\": \"interpretation\"|\"synthesis\"|\"evaluation\", \"question\": string} \
             to ask another agent one question before finalizing."
        }
        Role::Interpretation => {
            "Reply with a single JSON object and nothing else:\n\
             {\"adapted_text\": string, \"annotations\": [{\"source_span\": string (verbatim from the source text), \
             \"decision\": \"preserve\"|\"adapt\"|\"transliterate_with_clarifier\", \
             \"replacement\": string (omit for preserve), \"rationale\": string}]}\n\
             You may add \"delegate\": {\"target\": \"translation\"|\"synthesis\"|\"evaluation\", \"question\": string} \
             to ask another agent one question before finalizing."
        }
        Role::Synthesis => {
            "Reply with a single JSON object and nothing else:\n\
             {\"final_text\": string, \"applied_annotations\": [annotation objects you applied]}\n\
             Every span annotated with decision \"preserve\" must appear verbatim in final_text."
        }
        Role::Evaluation => {
            "Reply with a single JSON object and nothing else:\n\
             {\"verdict\": \"accept\"|\"revise\", \"issues\": [{\"category\": \"grammar\"|\"cultural_inaccuracy\"|\"bias\"|\"factual\"|\"coherence\", \
             \"severity\": \"minor\"|\"blocking\", \"responsible\": \"translation\"|\"interpretation\"|\"synthesis\", \
             \"description\": string, \"evidence_refs\": [indices into the search evidence]}]}\n\
             Use \"revise\" only with at least one blocking issue; \"accept\" allows minor issues only."
        }
    }
}

fn format_annotations(annotations: &[Annotation]) -> String {
    if annotations.is_empty() {
        return "(no annotations)".to_string();
    }
    annotations
        .iter()
        .map(|a| {
            let decision = match a.decision() {
                AnnotationDecision::Preserve => "preserve".to_string(),
                AnnotationDecision::Adapt => format!("adapt -> {}", a.replacement().unwrap_or_default()),
                AnnotationDecision::TransliterateWithClarifier => {
                    format!("transliterate with clarifier -> {}", a.replacement().unwrap_or_default())
                }
            };
            if a.rationale().is_empty() {
                format!("- \"{}\": {decision}", a.source_span())
            } else {
                format!("- \"{}\": {decision} ({})", a.source_span(), a.rationale())
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub(crate) fn format_feedback(issues: &[Issue]) -> String {
    issues
        .iter()
        .map(|i| format!("- {}", i.description()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub(crate) fn format_evidence(evidence: &[SearchEvidence]) -> String {
    if evidence.is_empty() {
        return "(no search evidence available)".to_string();
    }
    let mut out = Vec::new();
    for (i, e) in evidence.iter().enumerate() {
        out.push(format!("[{i}] query: {}", e.query));
        for r in &e.results {
            out.push(format!("  - {}: {} ({})", r.title, r.snippet, r.url));
        }
    }
    out.join("\n")
}

fn resolve(name: &str, input: &StageInput, evidence: &[SearchEvidence]) -> Option<String> {
    let job = &input.job;
    Some(match name {
        "source_text" => job.source_text().to_string(),
        "source_lang" => job.source_lang().to_string(),
        "target_lang" => job.target_lang().to_string(),
        "cultural_domain" => job.cultural_domain().to_string(),
        "feedback" if input.role() != Role::Evaluation => input
            .revision_feedback
            .as_deref()
            .map(format_feedback)
            .unwrap_or_default(),
        "upstream_translation" => match &input.upstream {
            Upstream::Interpretation { raw } | Upstream::Synthesis { raw, .. } => raw.translated_text().to_string(),
            _ => return None,
        },
        "upstream_adaptation" => match &input.upstream {
            Upstream::Synthesis { adaptation, .. } | Upstream::Evaluation { adaptation, .. } => {
                format!("{}\n\nAnnotations:\n{}", adaptation.adapted_text(), format_annotations(adaptation.annotations()))
            }
            _ => return None,
        },
        "upstream_final" => match &input.upstream {
            Upstream::Evaluation { synthesized, .. } => synthesized.final_text().to_string(),
            _ => return None,
        },
        "evidence" if input.role() == Role::Evaluation => format_evidence(evidence),
        _ => return None,
    })
}

pub(crate) fn render_template(template: &str, input: &StageInput, evidence: &[SearchEvidence]) -> Result<String, StageError> {
    let mut out = String::with_capacity(template.len() + input.job.source_text().len());
    for piece in pieces(template) {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Placeholder(name) => {
                let value = resolve(name, input, evidence).ok_or_else(|| StageError::BadPlaceholder(name.to_string()))?;
                out.push_str(&value);
            }
        }
    }
    Ok(out)
}

/// Builds the system and user messages for one stage invocation.
pub fn render_prompt(spec: &AgentSpec, input: &StageInput) -> Result<Vec<ChatMessage>, StageError> {
    render_prompt_with_evidence(spec, input, &[])
}

pub(crate) fn render_prompt_with_evidence(
    spec: &AgentSpec,
    input: &StageInput,
    evidence: &[SearchEvidence],
) -> Result<Vec<ChatMessage>, StageError> {
    let system = format!(
        "{}\n\n{}\n\n{}",
        spec.goal.trim(),
        spec.backstory.trim(),
        output_contract(input.role())
    );
    let mut user = render_template(&spec.prompt_template, input, evidence)?;
    let used = placeholders_in(&spec.prompt_template);
    if let Some(issues) = input.revision_feedback.as_deref() {
        if !issues.is_empty() && !used.contains(&"feedback") {
            user.push_str("\n\nFeedback from the quality review (address every point):\n");
            user.push_str(&format_feedback(issues));
        }
    }
    if input.role() == Role::Evaluation && !evidence.is_empty() && !used.contains(&"evidence") {
        user.push_str("\n\nSearch evidence:\n");
        user.push_str(&format_evidence(evidence));
    }
    Ok(vec![ChatMessage::system(system), ChatMessage::user(user)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_placeholders_and_escapes() {
        assert_eq!(placeholders_in("a {source_text} b {{not}} {x y} {"), vec!["source_text"]);
        let p = pieces("{{source_text}}");
        assert_eq!(p, vec![Piece::Text("{"), Piece::Text("source_text}"), Piece::Text("")]);
    }

    #[test]
    fn default_templates_are_valid() {
        for role in Role::ALL {
            assert!(template_violations(role, default_template(role)).is_empty(), "{role}");
        }
    }

    #[test]
    fn violations_distinguish_unknown_and_unavailable() {
        let v = template_violations(Role::Translation, "{unknown} {evidence}");
        assert_eq!(v.len(), 2);
        assert!(v[0].contains("unknown placeholder {unknown}"));
        assert!(v[1].contains("not available"));
    }
}
