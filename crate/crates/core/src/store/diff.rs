//! Structural comparison of two transcripts.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use serde::Serialize;
use similar::{ChangeTag, TextDiff};

use crate::domain::{preserved_terms, Role, StageArtifact};
use crate::transcript::{EventPayload, RunStatus, Transcript};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "change", content = "line", rename_all = "snake_case")]
pub enum DiffLine {
    Same(String),
    OnlyA(String),
    OnlyB(String),
}

impl DiffLine {
    fn mirror(self) -> Self {
        match self {
            DiffLine::Same(l) => DiffLine::Same(l),
            DiffLine::OnlyA(l) => DiffLine::OnlyB(l),
            DiffLine::OnlyB(l) => DiffLine::OnlyA(l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "section", rename_all = "snake_case")]
pub enum DiffSection {
    Status { a: Option<RunStatus>, b: Option<RunStatus> },
    RevisionCount { a: Option<u32>, b: Option<u32> },
    StageTrace { a: Vec<Role>, b: Vec<Role> },
    FinalText { lines: Vec<DiffLine> },
    /// Preserved terms present on one side only.
    Annotations { only_in_a: Vec<String>, only_in_b: Vec<String> },
    /// Final-report issues present on one side only.
    Issues { only_in_a: Vec<String>, only_in_b: Vec<String> },
}

impl DiffSection {
    fn mirror(self) -> Self {
        match self {
            DiffSection::Status { a, b } => DiffSection::Status { a: b, b: a },
            DiffSection::RevisionCount { a, b } => DiffSection::RevisionCount { a: b, b: a },
            DiffSection::StageTrace { a, b } => DiffSection::StageTrace { a: b, b: a },
            DiffSection::FinalText { lines } => {
                DiffSection::FinalText { lines: lines.into_iter().map(DiffLine::mirror).collect() }
            }
            DiffSection::Annotations { only_in_a, only_in_b } => {
                DiffSection::Annotations { only_in_a: only_in_b, only_in_b: only_in_a }
            }
            DiffSection::Issues { only_in_a, only_in_b } => DiffSection::Issues { only_in_a: only_in_b, only_in_b: only_in_a },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DiffReport {
    pub sections: Vec<DiffSection>,
}

impl DiffReport {
    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    /// The same report with sides a and b swapped.
    pub fn mirror(self) -> Self {
        Self { sections: self.sections.into_iter().map(DiffSection::mirror).collect() }
    }

    pub fn section(&self, name: &str) -> Option<&DiffSection> {
        self.sections.iter().find(|s| s.name() == name)
    }
}

impl DiffSection {
    pub fn name(&self) -> &'static str {
        match self {
            DiffSection::Status { .. } => "status",
            DiffSection::RevisionCount { .. } => "revision_count",
            DiffSection::StageTrace { .. } => "stage_trace",
            DiffSection::FinalText { .. } => "final_text",
            DiffSection::Annotations { .. } => "annotations",
            DiffSection::Issues { .. } => "issues",
        }
    }
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), T::to_string)
}

fn trace(roles: &[Role]) -> String {
    roles.iter().map(|r| r.as_str()).collect::<Vec<_>>().join(" ")
}

impl fmt::Display for DiffReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return writeln!(f, "NO DIFFERENCES");
        }
        let mut out = String::new();
        for section in &self.sections {
            match section {
                DiffSection::Status { a, b } => {
                    let s = |v: &Option<RunStatus>| v.map_or("-", RunStatus::as_str);
                    writeln!(out, "status: a={} b={}", s(a), s(b))?;
                }
                DiffSection::RevisionCount { a, b } => writeln!(out, "revision_count: a={} b={}", opt(a), opt(b))?,
                DiffSection::StageTrace { a, b } => {
                    writeln!(out, "stage_trace:\n  a: {}\n  b: {}", trace(a), trace(b))?;
                }
                DiffSection::FinalText { lines } => {
                    writeln!(out, "final_text:")?;
                    // Within each changed block, a-side lines print before b-side lines.
                    for block in lines.chunk_by(|x, y| matches!(x, DiffLine::Same(_)) == matches!(y, DiffLine::Same(_))) {
                        for line in block {
                            match line {
                                DiffLine::Same(l) => writeln!(out, "    {l}")?,
                                DiffLine::OnlyA(l) => writeln!(out, "  - {l}")?,
                                DiffLine::OnlyB(_) => {}
                            }
                        }
                        for line in block {
                            if let DiffLine::OnlyB(l) = line {
                                writeln!(out, "  + {l}")?;
                            }
                        }
                    }
                }
                DiffSection::Annotations { only_in_a, only_in_b } => {
                    writeln!(out, "annotations (preserved terms):")?;
                    for t in only_in_a {
                        writeln!(out, "  only in a: {t}")?;
                    }
                    for t in only_in_b {
                        writeln!(out, "  only in b: {t}")?;
                    }
                }
                DiffSection::Issues { only_in_a, only_in_b } => {
                    writeln!(out, "issues:")?;
                    for t in only_in_a {
                        writeln!(out, "  only in a: {t}")?;
                    }
                    for t in only_in_b {
                        writeln!(out, "  only in b: {t}")?;
                    }
                }
            }
        }
        f.write_str(&out)
    }
}

/// Preserved terms from the last interpretation artifact and the output.
fn preserve_set(t: &Transcript) -> BTreeSet<String> {
    let mut terms = BTreeSet::new();
    let last_adaptation = t.events().iter().rev().find_map(|e| match &e.payload {
        EventPayload::StageCompleted { artifact: StageArtifact::Interpretation(c), .. } => Some(c),
        _ => None,
    });
    if let Some(c) = last_adaptation {
        terms.extend(c.preserved_terms().map(str::to_string));
    }
    if let Some(out) = t.output() {
        terms.extend(preserved_terms(out.applied_annotations()).map(str::to_string));
    }
    terms
}

fn issue_lines(t: &Transcript) -> Vec<String> {
    let mut lines: Vec<String> = t
        .final_record()
        .and_then(|f| f.report.as_ref())
        .map(|r| {
            r.issues()
                .iter()
                .map(|i| {
                    format!(
                        "[{} {} {}] {}",
                        wire_name(&i.severity()),
                        wire_name(&i.category()),
                        i.responsible(),
                        i.description()
                    )
                })
                .collect()
        })
        .unwrap_or_default();
    lines.sort();
    lines
}

fn wire_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Multiset difference of two sorted lists.
fn only_in(a: &[String], b: &[String]) -> Vec<String> {
    let mut rest: Vec<&String> = b.iter().collect();
    let mut out = Vec::new();
    for x in a {
        match rest.iter().position(|y| *y == x) {
            Some(i) => {
                rest.remove(i);
            }
            None => out.push(x.clone()),
        }
    }
    out
}

fn line_diff(a: &str, b: &str) -> Vec<DiffLine> {
    // Diff in a fixed argument order so that swapping sides mirrors the result exactly.
    if a > b {
        return line_diff(b, a).into_iter().map(DiffLine::mirror).collect();
    }
    TextDiff::from_lines(a, b)
        .iter_all_changes()
        .map(|c| {
            let line = c.value().trim_end_matches('\n').to_string();
            match c.tag() {
                ChangeTag::Equal => DiffLine::Same(line),
                ChangeTag::Delete => DiffLine::OnlyA(line),
                ChangeTag::Insert => DiffLine::OnlyB(line),
            }
        })
        .collect()
}

/// Field-by-field differences between two transcripts; empty when equal.
pub fn diff(a: &Transcript, b: &Transcript) -> DiffReport {
    let mut sections = Vec::new();
    if a.status() != b.status() {
        sections.push(DiffSection::Status { a: a.status(), b: b.status() });
    }
    let revisions = |t: &Transcript| t.final_record().map(|f| f.revision_count);
    if revisions(a) != revisions(b) {
        sections.push(DiffSection::RevisionCount { a: revisions(a), b: revisions(b) });
    }
    let (ta, tb) = (a.stage_trace(), b.stage_trace());
    if ta != tb {
        sections.push(DiffSection::StageTrace { a: ta, b: tb });
    }
    let text = |t: &Transcript| t.output().map(|o| o.final_text().to_string()).unwrap_or_default();
    let (xa, xb) = (text(a), text(b));
    if xa != xb {
        sections.push(DiffSection::FinalText { lines: line_diff(&xa, &xb) });
    }
    let (pa, pb) = (preserve_set(a), preserve_set(b));
    if pa != pb {
        sections.push(DiffSection::Annotations {
            only_in_a: pa.difference(&pb).cloned().collect(),
            only_in_b: pb.difference(&pa).cloned().collect(),
        });
    }
    let (ia, ib) = (issue_lines(a), issue_lines(b));
    if ia != ib {
        sections.push(DiffSection::Issues { only_in_a: only_in(&ia, &ib), only_in_b: only_in(&ib, &ia) });
    }
    DiffReport { sections }
}
