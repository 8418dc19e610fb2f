//! Python bindings: configs, scripted or live runs, replay, diff and the
//! parser and wire helpers.
//!
//! ```python
//! import crewline
//! cfg = crewline.Config.load("configs/demo-diwali-hi.toml")
//! t = crewline.run(cfg, text, "en", "hi", domain="festival")
//! print(t.status, t.final_text)
//! ```

use std::path::PathBuf;

use crewline_core::config::CrewConfig;
use crewline_core::gateway::{ChatMessage, ChatRequest};
use crewline_core::store::replay::ReplayError;
use crewline_core::transcript::MemorySink;
use crewline_core::{Gateway, Role, SearchTool, TranslationJob};
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde_json::json;

create_exception!(crewline, CrewlineError, pyo3::exceptions::PyException);
create_exception!(crewline, ConfigError, CrewlineError);
create_exception!(crewline, ReplayDiverged, CrewlineError);
create_exception!(crewline, ReplayRejected, CrewlineError);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn config_err(e: crewline_core::ValidationError) -> PyErr {
    let lines: Vec<String> = e.violations.iter().map(|v| format!("{}: {}", v.path, v.message)).collect();
    ConfigError::new_err(lines.join("\n"))
}

fn enum_from_str<T: serde::de::DeserializeOwned>(field: &str, s: &str) -> PyResult<T> {
    serde_json::from_value(json!(s)).map_err(|_| PyValueError::new_err(format!("{field}: unknown value {s:?}")))
}

/// A validated crew configuration.
#[pyclass(frozen, module = "crewline")]
struct Config {
    inner: CrewConfig,
}

#[pymethods]
impl Config {
    /// Loads a TOML file; relative fixture directories resolve against it.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        crewline_core::load_config(&path).map(|inner| Self { inner }).map_err(config_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        crewline_core::validate_config(text).map(|inner| Self { inner }).map_err(config_err)
    }

    #[getter]
    fn digest(&self) -> String {
        self.inner.digest()
    }

    #[getter]
    fn max_revisions(&self) -> u32 {
        self.inner.max_revisions
    }

    fn __repr__(&self) -> String {
        format!("Config(digest={:?})", self.inner.digest())
    }
}

/// A finished run: job, events and final record.
#[pyclass(frozen, module = "crewline")]
struct Transcript {
    inner: crewline_core::Transcript,
}

#[pymethods]
impl Transcript {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        crewline_core::read_transcript(&path).map(|inner| Self { inner }).map_err(|e| PyOSError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(|inner| Self { inner }).map_err(value_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(value_err)
    }

    /// Writes `<out_dir>/<job_id>.transcript` and returns the path.
    fn save(&self, out_dir: PathBuf) -> PyResult<PathBuf> {
        crewline_core::write_transcript(&out_dir, &self.inner).map_err(|e| PyOSError::new_err(e.to_string()))
    }

    #[getter]
    fn job_id(&self) -> &str {
        self.inner.job().job_id()
    }

    #[getter]
    fn config_digest(&self) -> &str {
        self.inner.config_digest()
    }

    #[getter]
    fn status(&self) -> Option<&'static str> {
        self.inner.status().map(|s| s.as_str())
    }

    #[getter]
    fn revision_count(&self) -> Option<u32> {
        self.inner.final_record().map(|f| f.revision_count)
    }

    #[getter]
    fn final_text(&self) -> Option<&str> {
        self.inner.output().map(|o| o.final_text())
    }

    #[getter]
    fn stage_trace(&self) -> Vec<&'static str> {
        self.inner.stage_trace().into_iter().map(Role::as_str).collect()
    }

    #[getter]
    fn event_count(&self) -> usize {
        self.inner.events().len()
    }

    fn __repr__(&self) -> String {
        format!("Transcript(job_id={:?}, status={:?})", self.job_id(), self.status().unwrap_or("unfinalized"))
    }
}

/// Runs one job through the pipeline, keeping events in memory.
#[pyfunction]
#[pyo3(signature = (config, text, source, target, domain="general", job_id=None, created_at=None))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    config: &Config,
    text: &str,
    source: &str,
    target: &str,
    domain: &str,
    job_id: Option<String>,
    created_at: Option<String>,
) -> PyResult<Transcript> {
    let job_id = job_id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    let created_at = created_at.unwrap_or_else(|| chrono::Utc::now().to_rfc3339());
    let job: TranslationJob = serde_json::from_value(json!({
        "job_id": job_id,
        "source_text": text,
        "source_lang": source,
        "target_lang": target,
        "cultural_domain": domain,
        "created_at": created_at,
    }))
    .map_err(value_err)?;
    let crew = config.inner.clone();
    let transcript = py.detach(move || {
        let gateway = Gateway::from_config(&crew.backend).map_err(|e| e.to_string())?;
        let search = SearchTool::new(crew.search.clone()).map_err(|e| e.to_string())?;
        let mut sink = MemorySink::new();
        crewline_core::run_pipeline(&job, &crew, &gateway, &search, &mut sink).map_err(|e| e.to_string())
    });
    transcript.map(|inner| Transcript { inner }).map_err(CrewlineError::new_err)
}

/// Re-executes an accepted transcript and returns the reproduced final text.
#[pyfunction]
fn replay(py: Python<'_>, transcript: &Transcript, config: &Config) -> PyResult<String> {
    let result = py.detach(|| crewline_core::replay(&transcript.inner, &config.inner));
    match result {
        Ok(out) => Ok(out.final_text().to_string()),
        Err(e @ (ReplayError::Divergence { .. } | ReplayError::OutputMismatch)) => Err(ReplayDiverged::new_err(e.to_string())),
        Err(e) => Err(ReplayRejected::new_err(e.to_string())),
    }
}

/// Compares two transcripts; text by default, JSON with `as_json=True`.
#[pyfunction]
#[pyo3(signature = (a, b, as_json=false))]
fn diff(a: &Transcript, b: &Transcript, as_json: bool) -> PyResult<String> {
    let report = crewline_core::diff(&a.inner, &b.inner);
    if as_json {
        serde_json::to_string_pretty(&report).map_err(value_err)
    } else {
        Ok(report.to_string())
    }
}

/// Extracts and validates one stage artifact; returns it as compact JSON.
#[pyfunction]
fn parse_stage_output(role: &str, raw: &str) -> PyResult<String> {
    let role: Role = enum_from_str("role", role)?;
    let parsed = crewline_core::parse_stage_output(role, raw).map_err(|e| PyValueError::new_err(e.reason))?;
    Ok(crewline_core::stages::parse::encode_artifact(&parsed.artifact))
}

/// Fixture file stem for a search query.
#[pyfunction]
fn slug(query: &str) -> String {
    crewline_core::search::slug(query)
}

/// The exact JSON body sent to a chat-completions endpoint.
#[pyfunction]
#[pyo3(signature = (model, system, user, temperature=0.3, max_tokens=1024, correlation_id="python"))]
fn build_wire_body(
    model: &str,
    system: &str,
    user: &str,
    temperature: f64,
    max_tokens: u32,
    correlation_id: &str,
) -> PyResult<String> {
    let messages = vec![ChatMessage::system(system), ChatMessage::user(user)];
    let request = ChatRequest::new(model, messages, temperature, max_tokens, correlation_id).map_err(value_err)?;
    Ok(crewline_core::build_wire_body(&request, model))
}

#[pymodule]
fn crewline(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("CrewlineError", py.get_type::<CrewlineError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("ReplayDiverged", py.get_type::<ReplayDiverged>())?;
    m.add("ReplayRejected", py.get_type::<ReplayRejected>())?;
    m.add_class::<Config>()?;
    m.add_class::<Transcript>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(diff, m)?)?;
    m.add_function(wrap_pyfunction!(parse_stage_output, m)?)?;
    m.add_function(wrap_pyfunction!(slug, m)?)?;
    m.add_function(wrap_pyfunction!(build_wire_body, m)?)?;
    Ok(())
}
