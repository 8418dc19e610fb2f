//! The T → I → S → E pipeline with a bounded revision loop.

use crate::config::{CrewConfig, ValidationError, MAX_REVISIONS_CAP};
use crate::domain::{
    CulturalAdaptation, EvaluationReport, Issue, RawTranslation, Role, StageArtifact, SynthesizedText, TranslationJob,
};
use crate::gateway::Gateway;
use crate::search::SearchTool;
use crate::stages::{evaluate_with_search, run_stage, StageContext, StageError, StageInput, Upstream};
use crate::transcript::{EventPayload, EventSink, Failure, FinalRecord, RunStatus, SinkError, Transcript};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ValidationError),
    #[error(transparent)]
    Sink(#[from] SinkError),
    #[error("transcript rejected: {0}")]
    Transcript(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Translating,
    Interpreting,
    Synthesizing,
    Evaluating,
    Revising(Role),
    Done(RunStatus),
}

impl Phase {
    fn for_stage(role: Role) -> Phase {
        match role {
            Role::Translation => Phase::Translating,
            Role::Interpretation => Phase::Interpreting,
            Role::Synthesis => Phase::Synthesizing,
            Role::Evaluation => Phase::Evaluating,
        }
    }
}

/// Latest artifact of each kind.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub translation: Option<RawTranslation>,
    pub adaptation: Option<CulturalAdaptation>,
    pub synthesized: Option<SynthesizedText>,
    pub report: Option<EvaluationReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState {
    pub phase: Phase,
    pub revision_count: u32,
    pub artifacts: Artifacts,
}

/// The most upstream role responsible for a blocking issue, if any.
pub fn route_revision(report: &EvaluationReport) -> Option<Role> {
    report.blocking_issues().map(Issue::responsible).min()
}

/// Stages re-run after `role` is revised, in pipeline order (evaluation excluded).
pub fn downstream_of(role: Role) -> &'static [Role] {
    match role {
        Role::Translation => &[Role::Interpretation, Role::Synthesis],
        Role::Interpretation => &[Role::Synthesis],
        Role::Synthesis | Role::Evaluation => &[],
    }
}

/// Upper bound on stage executions for a given revision budget.
pub fn max_stage_executions(max_revisions: u32) -> u32 {
    4 + 4 * max_revisions
}

struct Run<'a, 'b> {
    job: &'a TranslationJob,
    ctx: StageContext<'b>,
    state: PipelineState,
}

impl Run<'_, '_> {
    fn upstream(&self, role: Role) -> Upstream {
        let a = &self.state.artifacts;
        let missing = "pipeline order guarantees upstream artifacts";
        match role {
            Role::Translation => Upstream::Translation,
            Role::Interpretation => Upstream::Interpretation { raw: a.translation.clone().expect(missing) },
            Role::Synthesis => Upstream::Synthesis {
                raw: a.translation.clone().expect(missing),
                adaptation: a.adaptation.clone().expect(missing),
            },
            Role::Evaluation => Upstream::Evaluation {
                synthesized: a.synthesized.clone().expect(missing),
                adaptation: a.adaptation.clone().expect(missing),
            },
        }
    }

    fn execute(&mut self, role: Role, feedback: Option<Vec<Issue>>) -> Result<(), StageError> {
        self.state.phase = Phase::for_stage(role);
        let input = StageInput {
            job: self.job.clone(),
            upstream: self.upstream(role),
            revision_index: self.state.revision_count,
            revision_feedback: feedback,
        };
        let spec = self.ctx.crew.agent(role);
        let a = &mut self.state.artifacts;
        if role == Role::Evaluation {
            a.report = Some(evaluate_with_search(&mut self.ctx, spec, &input)?);
            return Ok(());
        }
        match run_stage(&mut self.ctx, spec, &input)? {
            StageArtifact::Translation(t) => a.translation = Some(t),
            StageArtifact::Interpretation(c) => a.adaptation = Some(c),
            StageArtifact::Synthesis(s) => a.synthesized = Some(s),
            StageArtifact::Evaluation(r) => a.report = Some(r),
        }
        Ok(())
    }

    fn feedback_for(&self, role: Role, report: &EvaluationReport) -> Option<Vec<Issue>> {
        if self.state.revision_count == 0 {
            return None;
        }
        if role == Role::Evaluation {
            return Some(Vec::new());
        }
        Some(report.blocking_issues().filter(|i| i.responsible() == role).cloned().collect())
    }

    /// Runs to completion; `Err` only for sink failures.
    fn drive(&mut self) -> Result<FinalRecord, SinkError> {
        let mut pending: Vec<Role> = Role::ALL.to_vec();
        let mut last_report: Option<EvaluationReport> = None;
        loop {
            for role in pending.drain(..) {
                let feedback = match &last_report {
                    Some(r) => self.feedback_for(role, r),
                    None => None,
                };
                if let Err(e) = self.execute(role, feedback) {
                    return match e {
                        StageError::Sink(s) => Err(s),
                        other => Ok(self.finish(RunStatus::Failed, Some(Failure { stage: role, cause: other.to_string() }))),
                    };
                }
            }
            let report = self.state.artifacts.report.clone().expect("evaluation ran");
            let Some(target) = route_revision(&report) else {
                return Ok(self.finish(RunStatus::Accepted, None));
            };
            if self.state.revision_count >= self.ctx.crew.max_revisions {
                return Ok(self.finish(RunStatus::MaxRevisionsExceeded, None));
            }
            self.state.revision_count += 1;
            self.state.phase = Phase::Revising(target);
            let issue_ids = report
                .issues()
                .iter()
                .enumerate()
                .filter(|(_, i)| i.is_blocking() && i.responsible() == target)
                .map(|(n, _)| n)
                .collect();
            self.ctx.sink.emit(
                None,
                EventPayload::RevisionTriggered { revision: self.state.revision_count, target, issue_ids },
            )?;
            pending.push(target);
            pending.extend_from_slice(downstream_of(target));
            pending.push(Role::Evaluation);
            last_report = Some(report);
        }
    }

    fn finish(&mut self, status: RunStatus, failure: Option<Failure>) -> FinalRecord {
        self.state.phase = Phase::Done(status);
        let a = &self.state.artifacts;
        FinalRecord {
            status,
            revision_count: self.state.revision_count,
            output: if status == RunStatus::Failed { None } else { a.synthesized.clone() },
            report: a.report.clone(),
            failure,
        }
    }
}

/// Runs one job through the pipeline and returns its finalized transcript.
///
/// Stage failures end the run with status `failed`; only configuration and
/// sink errors are returned as `Err`.
pub fn run_pipeline(
    job: &TranslationJob,
    config: &CrewConfig,
    gateway: &Gateway,
    search: &SearchTool,
    sink: &mut dyn EventSink,
) -> Result<Transcript, PipelineError> {
    config.validate()?;
    debug_assert!(config.max_revisions <= MAX_REVISIONS_CAP);
    let mut run = Run {
        job,
        ctx: StageContext { crew: config, gateway, search, sink },
        state: PipelineState { phase: Phase::Translating, revision_count: 0, artifacts: Artifacts::default() },
    };
    let record = run.drive()?;
    tracing::info!(job = job.job_id(), status = record.status.as_str(), revisions = record.revision_count, "run finished");
    let events = run.ctx.sink.events().to_vec();
    Transcript::new(job.clone(), config.digest(), events, Some(record)).map_err(|e| PipelineError::Transcript(e.to_string()))
}
