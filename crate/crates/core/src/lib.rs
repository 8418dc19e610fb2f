//! Engine for a four-stage, culturally adaptive translation pipeline.
//!
//! A job flows through translation, cultural interpretation, synthesis and
//! evaluation agents. Blocking evaluation issues send the run back to the
//! responsible stage, bounded by `max_revisions`. Every model call, search
//! and decision is recorded as an event so runs can be replayed and diffed.

pub mod config;
pub mod domain;
pub mod gateway;
pub mod orchestrator;
pub mod search;
pub mod stages;
pub mod store;
pub mod transcript;

pub use config::{load_config, validate_config, CrewConfig, ValidationError};
pub use domain::{Role, TranslationJob};
pub use gateway::{build_wire_body, Gateway, GatewayError};
pub use orchestrator::{run_pipeline, PipelineError};
pub use search::SearchTool;
pub use stages::{parse_stage_output, render_prompt, run_stage, StageError};
pub use store::{diff, read_transcript, replay, write_transcript, EventStore};
pub use transcript::{RunStatus, Transcript};
