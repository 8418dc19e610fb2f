//! Append-only event logs and finalized transcript files.
//!
//! A run writes `<out>/<job_id>.events` (one JSON event per line) while it
//! executes and `<out>/<job_id>.transcript` (one JSON document) when done.

pub mod diff;
pub mod replay;

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::Utc;

use crate::config::CrewConfig;
use crate::domain::{Role, TranslationJob};
use crate::gateway::Gateway;
use crate::orchestrator::{run_pipeline, PipelineError};
use crate::search::SearchTool;
use crate::transcript::{Event, EventPayload, EventSink, SinkError, Transcript};

pub use diff::{diff, DiffLine, DiffReport, DiffSection};
pub use replay::{replay, ReplayError};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("event seq {got} does not follow {last}")]
    SeqGap { last: u64, got: u64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: corrupt event record: {reason}")]
    Corrupt { path: String, line: usize, reason: String },
    #[error("{path}: invalid transcript: {reason}")]
    InvalidTranscript { path: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

pub fn events_path(out_dir: &Path, job_id: &str) -> PathBuf {
    out_dir.join(format!("{job_id}.events"))
}

pub fn transcript_path(out_dir: &Path, job_id: &str) -> PathBuf {
    out_dir.join(format!("{job_id}.transcript"))
}

/// Writer for one run's event log. Also usable as the pipeline's event sink.
#[derive(Debug)]
pub struct EventStore {
    path: PathBuf,
    file: File,
    events: Vec<Event>,
    warnings: Vec<String>,
}

impl EventStore {
    /// Starts a fresh log, replacing any existing file.
    pub fn create(out_dir: &Path, job_id: &str) -> Result<Self, StoreError> {
        fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        let path = events_path(out_dir, job_id);
        let file = File::create(&path).map_err(io_err(&path))?;
        Ok(Self { path, file, events: Vec::new(), warnings: Vec::new() })
    }

    /// Opens an existing log for appending. A trailing record cut short by a
    /// crash is dropped and the file truncated to the last complete record.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let (events, good_len, warnings) = scan_log(path, &bytes)?;
        let file = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
        if good_len < bytes.len() {
            file.set_len(good_len as u64).map_err(io_err(path))?;
        }
        for w in &warnings {
            tracing::warn!(path = %path.display(), "{w}");
        }
        Ok(Self { path: path.to_path_buf(), file, events, warnings })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    /// Appends one event; its seq must be exactly one past the last.
    pub fn append_event(&mut self, event: Event) -> Result<(), StoreError> {
        let last = self.last_seq();
        if event.seq != last + 1 {
            return Err(StoreError::SeqGap { last, got: event.seq });
        }
        let mut line = serde_json::to_string(&event).expect("events serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))?;
        self.events.push(event);
        Ok(())
    }
}

impl EventSink for EventStore {
    fn emit(&mut self, stage: Option<Role>, payload: EventPayload) -> Result<u64, SinkError> {
        let seq = self.last_seq() + 1;
        self.append_event(Event { seq, stage, payload, at: Utc::now() })
            .map_err(|e| SinkError(e.to_string()))?;
        Ok(seq)
    }

    fn events(&self) -> &[Event] {
        &self.events
    }
}

/// Parses a log, returning the events, the byte length of the valid prefix,
/// and warnings about a dropped tail.
fn scan_log(path: &Path, bytes: &[u8]) -> Result<(Vec<Event>, usize, Vec<String>), StoreError> {
    let mut events: Vec<Event> = Vec::new();
    let mut warnings = Vec::new();
    let mut offset = 0;
    let mut line_no = 0;
    while offset < bytes.len() {
        line_no += 1;
        let rest = &bytes[offset..];
        let (line, complete) = match rest.iter().position(|b| *b == b'\n') {
            Some(i) => (&rest[..i], true),
            None => (rest, false),
        };
        let parsed = std::str::from_utf8(line)
            .map_err(|e| e.to_string())
            .and_then(|s| serde_json::from_str::<Event>(s).map_err(|e| e.to_string()));
        match parsed {
            Ok(event) if complete => {
                let last = events.last().map_or(0, |e| e.seq);
                if event.seq != last + 1 {
                    return Err(StoreError::Corrupt {
                        path: path.display().to_string(),
                        line: line_no,
                        reason: format!("seq {} does not follow {last}", event.seq),
                    });
                }
                events.push(event);
                offset += line.len() + 1;
            }
            Err(reason) if complete => {
                return Err(StoreError::Corrupt { path: path.display().to_string(), line: line_no, reason })
            }
            _ => {
                warnings.push(format!(
                    "dropped truncated record at line {line_no} ({} bytes)",
                    line.len()
                ));
                break;
            }
        }
    }
    Ok((events, offset, warnings))
}

/// Reads every complete event from a log without modifying it.
pub fn read_events(path: &Path) -> Result<(Vec<Event>, Vec<String>), StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (events, _, warnings) = scan_log(path, &bytes)?;
    Ok((events, warnings))
}

/// Writes `<out>/<job_id>.transcript` and returns its path.
pub fn write_transcript(out_dir: &Path, transcript: &Transcript) -> Result<PathBuf, StoreError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let path = transcript_path(out_dir, transcript.job().job_id());
    let tmp = path.with_extension("transcript.tmp");
    {
        let file = File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, transcript).map_err(|e| io_err(&tmp)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(&tmp))?;
        w.into_inner().map_err(|e| io_err(&tmp)(e.into_error()))?.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(path)
}

pub fn read_transcript(path: &Path) -> Result<Transcript, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|e| StoreError::InvalidTranscript { path: path.display().to_string(), reason: e.to_string() })
}

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// A run persisted under an output directory.
#[derive(Debug)]
pub struct RecordedRun {
    pub transcript: Transcript,
    pub events_path: PathBuf,
    pub transcript_path: PathBuf,
}

/// Runs the pipeline with an on-disk event log and writes the transcript.
pub fn run_recorded(
    job: &TranslationJob,
    config: &CrewConfig,
    gateway: &Gateway,
    search: &SearchTool,
    out_dir: &Path,
) -> Result<RecordedRun, RecordError> {
    let mut store = EventStore::create(out_dir, job.job_id())?;
    let transcript = run_pipeline(job, config, gateway, search, &mut store)?;
    let transcript_path = write_transcript(out_dir, &transcript)?;
    Ok(RecordedRun { transcript, events_path: store.path().to_path_buf(), transcript_path })
}
