//! Values that cross module boundaries: jobs, stage artifacts, issues,
//! annotations and search evidence.
//!
//! Every type with an invariant has private fields, a checked constructor and
//! a `serde(try_from)` shim, so a decoded document is held to the same rules
//! as a hand-built value.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Violation of a domain-type invariant.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{field}: {reason}")]
pub struct DomainError {
    pub field: String,
    pub reason: String,
}

impl DomainError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Normalizes ingested text to Unicode NFC.
pub fn nfc(text: &str) -> String {
    text.nfc().collect()
}

/// Pipeline roles in execution order. The derived `Ord` is the pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Translation,
    Interpretation,
    Synthesis,
    Evaluation,
}

impl Role {
    pub const ALL: [Role; 4] = [
        Role::Translation,
        Role::Interpretation,
        Role::Synthesis,
        Role::Evaluation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Translation => "translation",
            Role::Interpretation => "interpretation",
            Role::Synthesis => "synthesis",
            Role::Evaluation => "evaluation",
        }
    }

    /// Roles whose agents may delegate.
    pub fn may_delegate(self) -> bool {
        matches!(self, Role::Translation | Role::Interpretation)
    }

    /// Roles an evaluation issue can be assigned to.
    pub fn is_revisable(self) -> bool {
        self != Role::Evaluation
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| DomainError::new("role", format!("unknown role `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CulturalDomain {
    Festival,
    Religion,
    History,
    #[default]
    General,
}

impl CulturalDomain {
    pub fn as_str(self) -> &'static str {
        match self {
            CulturalDomain::Festival => "festival",
            CulturalDomain::Religion => "religion",
            CulturalDomain::History => "history",
            CulturalDomain::General => "general",
        }
    }
}

impl fmt::Display for CulturalDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CulturalDomain {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "festival" => Ok(CulturalDomain::Festival),
            "religion" => Ok(CulturalDomain::Religion),
            "history" => Ok(CulturalDomain::History),
            "general" => Ok(CulturalDomain::General),
            other => Err(DomainError::new(
                "cultural_domain",
                format!("unknown domain `{other}`"),
            )),
        }
    }
}

fn language_tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z]{2,8}(-[A-Za-z0-9]{1,8})*$").unwrap())
}

/// A BCP-47 style language tag such as `en`, `hi` or `pt-BR`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageTag(String);

impl LanguageTag {
    pub fn parse(tag: &str) -> Result<Self, DomainError> {
        let tag = tag.trim();
        if language_tag_re().is_match(tag) {
            Ok(Self(tag.to_string()))
        } else {
            Err(DomainError::new(
                "language",
                format!("`{tag}` is not a language tag"),
            ))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Tags compare case-insensitively.
    pub fn same_language(&self, other: &LanguageTag) -> bool {
        self.0.eq_ignore_ascii_case(&other.0)
    }
}

impl TryFrom<String> for LanguageTag {
    type Error = DomainError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        LanguageTag::parse(&value)
    }
}

impl From<LanguageTag> for String {
    fn from(tag: LanguageTag) -> Self {
        tag.0
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A user's translation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TranslationJobDoc")]
pub struct TranslationJob {
    job_id: String,
    source_text: String,
    source_lang: LanguageTag,
    target_lang: LanguageTag,
    cultural_domain: CulturalDomain,
    created_at: DateTime<Utc>,
}

#[derive(Deserialize)]
struct TranslationJobDoc {
    job_id: String,
    source_text: String,
    source_lang: LanguageTag,
    target_lang: LanguageTag,
    #[serde(default)]
    cultural_domain: CulturalDomain,
    created_at: DateTime<Utc>,
}

impl TryFrom<TranslationJobDoc> for TranslationJob {
    type Error = DomainError;
    fn try_from(d: TranslationJobDoc) -> Result<Self, Self::Error> {
        TranslationJob::with_id(
            d.job_id,
            &d.source_text,
            d.source_lang,
            d.target_lang,
            d.cultural_domain,
            d.created_at,
        )
    }
}

impl TranslationJob {
    /// Creates a job with a fresh id and the current time.
    pub fn new(
        source_text: &str,
        source_lang: LanguageTag,
        target_lang: LanguageTag,
        cultural_domain: CulturalDomain,
    ) -> Result<Self, DomainError> {
        Self::with_id(
            uuid::Uuid::new_v4().to_string(),
            source_text,
            source_lang,
            target_lang,
            cultural_domain,
            Utc::now(),
        )
    }

    pub fn with_id(
        job_id: impl Into<String>,
        source_text: &str,
        source_lang: LanguageTag,
        target_lang: LanguageTag,
        cultural_domain: CulturalDomain,
        created_at: DateTime<Utc>,
    ) -> Result<Self, DomainError> {
        let job_id = job_id.into();
        if job_id.trim().is_empty()
            || !job_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(DomainError::new(
                "job_id",
                "must be nonempty and contain only [A-Za-z0-9_-]",
            ));
        }
        if source_text.trim().is_empty() {
            return Err(DomainError::new("source_text", "must not be blank"));
        }
        if source_lang.same_language(&target_lang) {
            return Err(DomainError::new(
                "target_lang",
                "must differ from source_lang",
            ));
        }
        Ok(Self {
            job_id,
            source_text: nfc(source_text),
            source_lang,
            target_lang,
            cultural_domain,
            created_at,
        })
    }

    pub fn job_id(&self) -> &str {
        &self.job_id
    }
    pub fn source_text(&self) -> &str {
        &self.source_text
    }
    pub fn source_lang(&self) -> &LanguageTag {
        &self.source_lang
    }
    pub fn target_lang(&self) -> &LanguageTag {
        &self.target_lang
    }
    pub fn cultural_domain(&self) -> CulturalDomain {
        self.cultural_domain
    }
    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationDecision {
    Preserve,
    Adapt,
    TransliterateWithClarifier,
}

/// A decision about one culturally significant source span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "AnnotationDoc")]
pub struct Annotation {
    source_span: String,
    decision: AnnotationDecision,
    #[serde(skip_serializing_if = "Option::is_none")]
    replacement: Option<String>,
    rationale: String,
}

#[derive(Deserialize)]
struct AnnotationDoc {
    source_span: String,
    decision: AnnotationDecision,
    #[serde(default)]
    replacement: Option<String>,
    #[serde(default)]
    rationale: String,
}

impl TryFrom<AnnotationDoc> for Annotation {
    type Error = DomainError;
    fn try_from(d: AnnotationDoc) -> Result<Self, Self::Error> {
        Annotation::new(&d.source_span, d.decision, d.replacement.as_deref(), &d.rationale)
    }
}

impl Annotation {
    pub fn new(
        source_span: &str,
        decision: AnnotationDecision,
        replacement: Option<&str>,
        rationale: &str,
    ) -> Result<Self, DomainError> {
        if source_span.trim().is_empty() {
            return Err(DomainError::new("source_span", "must not be blank"));
        }
        match (decision, replacement) {
            (AnnotationDecision::Preserve, Some(_)) => {
                return Err(DomainError::new(
                    "replacement",
                    "must be absent when decision is preserve",
                ))
            }
            (AnnotationDecision::Preserve, None) => {}
            (_, Some(r)) if !r.trim().is_empty() => {}
            _ => {
                return Err(DomainError::new(
                    "replacement",
                    "required when decision is adapt or transliterate_with_clarifier",
                ))
            }
        }
        Ok(Self {
            source_span: nfc(source_span),
            decision,
            replacement: replacement.map(nfc),
            rationale: nfc(rationale),
        })
    }

    pub fn preserve(source_span: &str, rationale: &str) -> Result<Self, DomainError> {
        Self::new(source_span, AnnotationDecision::Preserve, None, rationale)
    }

    pub fn source_span(&self) -> &str {
        &self.source_span
    }
    pub fn decision(&self) -> AnnotationDecision {
        self.decision
    }
    pub fn replacement(&self) -> Option<&str> {
        self.replacement.as_deref()
    }
    pub fn rationale(&self) -> &str {
        &self.rationale
    }
}

fn require_text(field: &str, text: &str) -> Result<String, DomainError> {
    if text.trim().is_empty() {
        Err(DomainError::new(field, "must not be blank"))
    } else {
        Ok(nfc(text))
    }
}

/// Output of the translation stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTranslationDoc")]
pub struct RawTranslation {
    translated_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    notes: Option<String>,
}

#[derive(Deserialize)]
struct RawTranslationDoc {
    translated_text: String,
    #[serde(default)]
    notes: Option<String>,
}

impl TryFrom<RawTranslationDoc> for RawTranslation {
    type Error = DomainError;
    fn try_from(d: RawTranslationDoc) -> Result<Self, Self::Error> {
        RawTranslation::new(&d.translated_text, d.notes.as_deref())
    }
}

impl RawTranslation {
    pub fn new(translated_text: &str, notes: Option<&str>) -> Result<Self, DomainError> {
        Ok(Self {
            translated_text: require_text("translated_text", translated_text)?,
            notes: notes.map(nfc),
        })
    }
    pub fn translated_text(&self) -> &str {
        &self.translated_text
    }
    pub fn notes(&self) -> Option<&str> {
        self.notes.as_deref()
    }
}

/// Output of the interpretation stage.
///
/// Whether each span occurs in the annotated input is a property of the
/// pair (adaptation, input); [`CulturalAdaptation::new`] checks it and
/// [`CulturalAdaptation::check_spans`] re-checks a decoded value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CulturalAdaptationDoc")]
pub struct CulturalAdaptation {
    adapted_text: String,
    annotations: Vec<Annotation>,
}

#[derive(Deserialize)]
struct CulturalAdaptationDoc {
    adapted_text: String,
    #[serde(default)]
    annotations: Vec<Annotation>,
}

impl TryFrom<CulturalAdaptationDoc> for CulturalAdaptation {
    type Error = DomainError;
    fn try_from(d: CulturalAdaptationDoc) -> Result<Self, Self::Error> {
        Ok(Self {
            adapted_text: require_text("adapted_text", &d.adapted_text)?,
            annotations: d.annotations,
        })
    }
}

impl CulturalAdaptation {
    /// `inputs` are the texts the annotations may point into (the source text
    /// and the raw translation). Each span must be a substring of one of them.
    pub fn new(
        adapted_text: &str,
        annotations: Vec<Annotation>,
        inputs: &[&str],
    ) -> Result<Self, DomainError> {
        let value = Self {
            adapted_text: require_text("adapted_text", adapted_text)?,
            annotations,
        };
        value.check_spans(inputs)?;
        Ok(value)
    }

    pub fn check_spans(&self, inputs: &[&str]) -> Result<(), DomainError> {
        for (i, a) in self.annotations.iter().enumerate() {
            let span = a.source_span();
            if !inputs.iter().any(|input| nfc(input).contains(span)) {
                return Err(DomainError::new(
                    format!("annotations[{i}].source_span"),
                    format!("`{span}` does not occur in the annotated input"),
                ));
            }
        }
        Ok(())
    }

    pub fn adapted_text(&self) -> &str {
        &self.adapted_text
    }
    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }
    pub fn preserved_terms(&self) -> impl Iterator<Item = &str> {
        preserved_terms(&self.annotations)
    }
}

/// Spans of every `preserve` annotation, in order.
pub fn preserved_terms(annotations: &[Annotation]) -> impl Iterator<Item = &str> {
    annotations
        .iter()
        .filter(|a| a.decision() == AnnotationDecision::Preserve)
        .map(Annotation::source_span)
}

/// Returns the preserved spans that are missing verbatim from `text`.
pub fn missing_preserved_terms<'a>(text: &str, annotations: &'a [Annotation]) -> Vec<&'a str> {
    preserved_terms(annotations)
        .filter(|term| !text.contains(term))
        .collect()
}

/// Output of the synthesis stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SynthesizedTextDoc")]
pub struct SynthesizedText {
    final_text: String,
    applied_annotations: Vec<Annotation>,
}

#[derive(Deserialize)]
struct SynthesizedTextDoc {
    final_text: String,
    #[serde(default)]
    applied_annotations: Vec<Annotation>,
}

impl TryFrom<SynthesizedTextDoc> for SynthesizedText {
    type Error = DomainError;
    fn try_from(d: SynthesizedTextDoc) -> Result<Self, Self::Error> {
        SynthesizedText::new(&d.final_text, d.applied_annotations)
    }
}

impl SynthesizedText {
    pub fn new(final_text: &str, applied_annotations: Vec<Annotation>) -> Result<Self, DomainError> {
        let final_text = require_text("final_text", final_text)?;
        let missing = missing_preserved_terms(&final_text, &applied_annotations);
        if !missing.is_empty() {
            return Err(DomainError::new(
                "final_text",
                format!("preserved terms missing: {}", missing.join(", ")),
            ));
        }
        Ok(Self {
            final_text,
            applied_annotations,
        })
    }
    pub fn final_text(&self) -> &str {
        &self.final_text
    }
    pub fn applied_annotations(&self) -> &[Annotation] {
        &self.applied_annotations
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueCategory {
    Grammar,
    CulturalInaccuracy,
    Bias,
    Factual,
    Coherence,
}

/// Only blocking issues force a revision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Minor,
    Blocking,
}

/// One evaluator finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "IssueDoc")]
pub struct Issue {
    category: IssueCategory,
    severity: Severity,
    responsible: Role,
    description: String,
    #[serde(default)]
    evidence_refs: Vec<usize>,
}

#[derive(Deserialize)]
struct IssueDoc {
    category: IssueCategory,
    severity: Severity,
    responsible: Role,
    description: String,
    #[serde(default)]
    evidence_refs: Vec<usize>,
}

impl TryFrom<IssueDoc> for Issue {
    type Error = DomainError;
    fn try_from(d: IssueDoc) -> Result<Self, Self::Error> {
        Issue::new(d.category, d.severity, d.responsible, &d.description, d.evidence_refs)
    }
}

impl Issue {
    pub fn new(
        category: IssueCategory,
        severity: Severity,
        responsible: Role,
        description: &str,
        evidence_refs: Vec<usize>,
    ) -> Result<Self, DomainError> {
        if !responsible.is_revisable() {
            return Err(DomainError::new(
                "responsible",
                "must be translation, interpretation or synthesis",
            ));
        }
        Ok(Self {
            category,
            severity,
            responsible,
            description: require_text("description", description)?,
            evidence_refs,
        })
    }

    pub fn blocking(category: IssueCategory, responsible: Role, description: &str) -> Result<Self, DomainError> {
        Self::new(category, Severity::Blocking, responsible, description, Vec::new())
    }

    pub fn category(&self) -> IssueCategory {
        self.category
    }
    pub fn severity(&self) -> Severity {
        self.severity
    }
    pub fn is_blocking(&self) -> bool {
        self.severity == Severity::Blocking
    }
    pub fn responsible(&self) -> Role {
        self.responsible
    }
    pub fn description(&self) -> &str {
        &self.description
    }
    pub fn evidence_refs(&self) -> &[usize] {
        &self.evidence_refs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Revise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceOrigin {
    Live,
    Fixture,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub title: String,
    pub snippet: String,
    pub url: String,
}

/// Normalized results of one search query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchEvidence {
    pub query: String,
    pub results: Vec<SearchResult>,
    pub fetched_at: DateTime<Utc>,
    pub origin: EvidenceOrigin,
}

/// Output of the evaluation stage.
///
/// `revise` requires at least one blocking issue and `accept` forbids them,
/// so the verdict and the gating decision can never disagree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "EvaluationReportDoc")]
pub struct EvaluationReport {
    verdict: Verdict,
    issues: Vec<Issue>,
    evidence: Vec<SearchEvidence>,
}

#[derive(Deserialize)]
struct EvaluationReportDoc {
    verdict: Verdict,
    #[serde(default)]
    issues: Vec<Issue>,
    #[serde(default)]
    evidence: Vec<SearchEvidence>,
}

impl TryFrom<EvaluationReportDoc> for EvaluationReport {
    type Error = DomainError;
    fn try_from(d: EvaluationReportDoc) -> Result<Self, Self::Error> {
        EvaluationReport::new(d.verdict, d.issues, d.evidence)
    }
}

impl EvaluationReport {
    pub fn new(
        verdict: Verdict,
        issues: Vec<Issue>,
        evidence: Vec<SearchEvidence>,
    ) -> Result<Self, DomainError> {
        let blocking = issues.iter().any(Issue::is_blocking);
        match verdict {
            Verdict::Revise if issues.is_empty() => {
                return Err(DomainError::new("issues", "verdict revise requires issues"))
            }
            Verdict::Revise if !blocking => {
                return Err(DomainError::new(
                    "issues",
                    "verdict revise requires at least one blocking issue",
                ))
            }
            Verdict::Accept if blocking => {
                return Err(DomainError::new(
                    "verdict",
                    "verdict accept is not allowed with blocking issues",
                ))
            }
            _ => {}
        }
        for (i, issue) in issues.iter().enumerate() {
            if let Some(bad) = issue.evidence_refs().iter().find(|&&r| r >= evidence.len()) {
                return Err(DomainError::new(
                    format!("issues[{i}].evidence_refs"),
                    format!("index {bad} out of bounds for {} evidence entries", evidence.len()),
                ));
            }
        }
        Ok(Self {
            verdict,
            issues,
            evidence,
        })
    }

    pub fn accept() -> Self {
        Self {
            verdict: Verdict::Accept,
            issues: Vec::new(),
            evidence: Vec::new(),
        }
    }

    pub fn verdict(&self) -> Verdict {
        self.verdict
    }
    pub fn issues(&self) -> &[Issue] {
        &self.issues
    }
    pub fn evidence(&self) -> &[SearchEvidence] {
        &self.evidence
    }
    pub fn blocking_issues(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.is_blocking())
    }
    pub fn is_accepted(&self) -> bool {
        self.verdict == Verdict::Accept
    }
}

/// The typed payload each stage produces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", content = "artifact", rename_all = "snake_case")]
pub enum StageArtifact {
    Translation(RawTranslation),
    Interpretation(CulturalAdaptation),
    Synthesis(SynthesizedText),
    Evaluation(EvaluationReport),
}

impl StageArtifact {
    pub fn role(&self) -> Role {
        match self {
            StageArtifact::Translation(_) => Role::Translation,
            StageArtifact::Interpretation(_) => Role::Interpretation,
            StageArtifact::Synthesis(_) => Role::Synthesis,
            StageArtifact::Evaluation(_) => Role::Evaluation,
        }
    }
}
