//! Proptest generators for valid stage artifacts.

use crewline_core::domain::{
    Annotation, AnnotationDecision, CulturalAdaptation, EvaluationReport, Issue, IssueCategory, RawTranslation, Role,
    Severity, StageArtifact, SynthesizedText, Verdict,
};
use proptest::prelude::*;

pub fn text() -> impl Strategy<Value = String> {
    "[A-Za-z\u{e0}-\u{ff}\u{905}-\u{939}{}\"\\\\`][A-Za-z\u{e0}-\u{ff}\u{905}-\u{939}{}\"\\\\` .,]{0,30}"
}

pub fn role() -> impl Strategy<Value = Role> {
    prop_oneof![Just(Role::Translation), Just(Role::Interpretation), Just(Role::Synthesis)]
}

pub fn annotation() -> impl Strategy<Value = Annotation> {
    (text(), 0..3u8, text(), text()).prop_map(|(span, d, repl, why)| match d {
        0 => Annotation::preserve(&span, &why).unwrap(),
        1 => Annotation::new(&span, AnnotationDecision::Adapt, Some(&repl), &why).unwrap(),
        _ => Annotation::new(&span, AnnotationDecision::TransliterateWithClarifier, Some(&repl), &why).unwrap(),
    })
}

pub fn issue() -> impl Strategy<Value = Issue> {
    let category = prop_oneof![
        Just(IssueCategory::Grammar),
        Just(IssueCategory::CulturalInaccuracy),
        Just(IssueCategory::Bias),
        Just(IssueCategory::Factual),
        Just(IssueCategory::Coherence),
    ];
    let severity = prop_oneof![Just(Severity::Minor), Just(Severity::Blocking)];
    (category, severity, role(), text()).prop_map(|(c, s, r, d)| Issue::new(c, s, r, &d, vec![]).unwrap())
}

pub fn artifact() -> impl Strategy<Value = StageArtifact> {
    prop_oneof![
        (text(), proptest::option::of(text()))
            .prop_map(|(t, n)| StageArtifact::Translation(RawTranslation::new(&t, n.as_deref()).unwrap())),
        (text(), proptest::collection::vec(annotation(), 0..4)).prop_map(|(t, anns)| {
            let input: String = anns.iter().map(|a| a.source_span()).collect::<Vec<_>>().join(" ");
            StageArtifact::Interpretation(CulturalAdaptation::new(&t, anns, &[&input]).unwrap())
        }),
        (text(), proptest::collection::vec(annotation(), 0..4)).prop_map(|(t, anns)| {
            // Make the text carry every preserved span so the artifact is valid.
            let spans: Vec<&str> = anns.iter().map(|a| a.source_span()).collect();
            let full = format!("{t} {}", spans.join(" "));
            StageArtifact::Synthesis(SynthesizedText::new(&full, anns).unwrap())
        }),
        proptest::collection::vec(issue(), 0..4).prop_map(|issues| {
            let verdict = if issues.iter().any(Issue::is_blocking) { Verdict::Revise } else { Verdict::Accept };
            StageArtifact::Evaluation(EvaluationReport::new(verdict, issues, vec![]).unwrap())
        }),
    ]
}

/// Embeds a document in one of four reply styles: bare, fenced, prose around it, or both.
pub fn wrap(doc: &str, style: u8) -> String {
    match style {
        0 => doc.to_string(),
        1 => format!("```json\n{doc}\n```"),
        2 => format!("Sure, here it is:\n{doc}\nAnything else?"),
        _ => format!("Result:\n```\n{doc}\n```\nThanks."),
    }
}
