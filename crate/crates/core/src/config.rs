//! Crew configuration: loading, validation and content digest.
//!
//! Validation walks the raw TOML tree instead of deserializing in one shot so
//! that every violated field is reported by path, not just the first.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Value;

use crate::domain::Role;
use crate::gateway::{BackendConfig, BackendKind, DEFAULT_TIMEOUT_MS};
use crate::search::{SearchConfig, SearchMode, DEFAULT_ENDPOINT, DEFAULT_MAX_RESULTS, DEFAULT_TTL_SECONDS};
use crate::stages::prompt::{default_template, template_violations};

/// Engine hard cap on `max_revisions`.
pub const MAX_REVISIONS_CAP: u32 = 16;
pub const DEFAULT_MAX_REVISIONS: u32 = 3;
pub const DEFAULT_MAX_DELEGATIONS: u32 = 1;
pub const DEFAULT_TEMPERATURE: f64 = 0.3;
pub const DEFAULT_MAX_TOKENS: u32 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { temperature: DEFAULT_TEMPERATURE, max_tokens: DEFAULT_MAX_TOKENS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub role: Role,
    pub goal: String,
    pub backstory: String,
    pub allow_delegation: bool,
    pub prompt_template: String,
    pub model_params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrewConfig {
    pub agents: BTreeMap<Role, AgentSpec>,
    pub max_revisions: u32,
    pub max_delegations_per_stage: u32,
    pub backend: BackendConfig,
    pub search: SearchConfig,
}

impl CrewConfig {
    pub fn agent(&self, role: Role) -> &AgentSpec {
        // Validation guarantees all four roles are present.
        &self.agents[&role]
    }

    pub fn digest(&self) -> String {
        digest_config(self)
    }

    /// Replaces the backend kind and/or search mode, then re-validates.
    pub fn with_overrides(mut self, backend: Option<BackendKind>, search: Option<SearchMode>) -> Result<Self, ValidationError> {
        if let Some(kind) = backend {
            self.backend.kind = kind;
        }
        if let Some(mode) = search {
            self.search.mode = mode;
        }
        self.validate()?;
        check_fixture_dir(&self)?;
        Ok(self)
    }

    /// Re-checks the invariants of a programmatically built config.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let doc = toml::Value::try_from(self).map_err(|e| ValidationError::single("", ViolationKind::Malformed, e.to_string()))?;
        validate_value(&doc).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Malformed,
    Missing,
    Invalid,
    MissingRole,
    UnknownRole,
    ForbiddenDelegation,
    BadPlaceholder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl ValidationError {
    fn single(path: &str, kind: ViolationKind, message: String) -> Self {
        Self { violations: vec![Violation { path: path.to_string(), kind, message }] }
    }

    pub fn paths(&self) -> Vec<&str> {
        self.violations.iter().map(|v| v.path.as_str()).collect()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem(s)):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// Parses and validates a TOML configuration document.
pub fn validate_config(raw: &str) -> Result<CrewConfig, ValidationError> {
    let doc: Value = toml::from_str(raw)
        .map_err(|e| ValidationError::single("", ViolationKind::Malformed, format!("not a well-formed document: {e}")))?;
    validate_value(&doc)
}

/// Loads a config file; relative `search.fixture_dir` resolves against the
/// file's directory, and fixture mode requires that directory to exist.
pub fn load_config(path: &Path) -> Result<CrewConfig, ValidationError> {
    let raw = std::fs::read_to_string(path).map_err(|e| {
        ValidationError::single("", ViolationKind::Malformed, format!("cannot read {}: {e}", path.display()))
    })?;
    let mut config = validate_config(&raw)?;
    config.search.base_dir = path.parent().map(|p| p.to_path_buf());
    check_fixture_dir(&config)?;
    Ok(config)
}

pub fn check_fixture_dir(config: &CrewConfig) -> Result<(), ValidationError> {
    if config.search.mode == SearchMode::Fixture {
        if let Some(dir) = config.search.resolved_fixture_dir() {
            if !dir.is_dir() {
                return Err(ValidationError::single(
                    "search.fixture_dir",
                    ViolationKind::Invalid,
                    format!("directory {} does not exist", dir.display()),
                ));
            }
        }
    }
    Ok(())
}

struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn push(&mut self, path: impl Into<String>, kind: ViolationKind, message: impl Into<String>) {
        self.violations.push(Violation { path: path.into(), kind, message: message.into() });
    }

    fn table<'a>(&mut self, parent: &'a Value, key: &str, path: &str) -> Option<&'a toml::Table> {
        match parent.get(key) {
            None => {
                self.push(path, ViolationKind::Missing, "required section is missing");
                None
            }
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.push(path, ViolationKind::Invalid, "must be a table");
                None
            }
        }
    }

    fn string(&mut self, t: &toml::Table, key: &str, path: &str, required: bool) -> Option<String> {
        match t.get(key) {
            None if required => {
                self.push(path, ViolationKind::Missing, "required field is missing");
                None
            }
            None => None,
            Some(Value::String(s)) if required && s.trim().is_empty() => {
                self.push(path, ViolationKind::Invalid, "must not be blank");
                None
            }
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                self.push(path, ViolationKind::Invalid, "must be a string");
                None
            }
        }
    }

    fn int(&mut self, t: &toml::Table, key: &str, path: &str, min: i64, max: i64) -> Option<i64> {
        match t.get(key)? {
            Value::Integer(i) if (min..=max).contains(i) => Some(*i),
            Value::Integer(i) => {
                self.push(path, ViolationKind::Invalid, format!("{i} is outside [{min}, {max}]"));
                None
            }
            _ => {
                self.push(path, ViolationKind::Invalid, "must be an integer");
                None
            }
        }
    }

    fn bool(&mut self, t: &toml::Table, key: &str, path: &str) -> Option<bool> {
        match t.get(key)? {
            Value::Boolean(b) => Some(*b),
            _ => {
                self.push(path, ViolationKind::Invalid, "must be a boolean");
                None
            }
        }
    }
}

fn validate_value(doc: &Value) -> Result<CrewConfig, ValidationError> {
    let mut c = Checker { violations: Vec::new() };
    let Some(root) = doc.as_table() else {
        return Err(ValidationError::single("", ViolationKind::Malformed, "document must be a table".into()));
    };

    for key in root.keys() {
        if !matches!(key.as_str(), "agents" | "max_revisions" | "max_delegations_per_stage" | "backend" | "search") {
            c.push(key.clone(), ViolationKind::Invalid, "unknown field");
        }
    }

    let max_revisions = c
        .int(root, "max_revisions", "max_revisions", 0, MAX_REVISIONS_CAP as i64)
        .map_or(DEFAULT_MAX_REVISIONS, |v| v as u32);
    let max_delegations = c
        .int(root, "max_delegations_per_stage", "max_delegations_per_stage", 0, u32::MAX as i64)
        .map_or(DEFAULT_MAX_DELEGATIONS, |v| v as u32);

    let agents = validate_agents(&mut c, doc);
    let backend = c.table(doc, "backend", "backend").and_then(|t| validate_backend(&mut c, t));
    let search = match root.get("search") {
        None => Some(SearchConfig::default()),
        Some(Value::Table(t)) => validate_search(&mut c, t),
        Some(_) => {
            c.push("search", ViolationKind::Invalid, "must be a table");
            None
        }
    };

    match (agents, backend, search) {
        (Some(agents), Some(backend), Some(search)) if c.violations.is_empty() => Ok(CrewConfig {
            agents,
            max_revisions,
            max_delegations_per_stage: max_delegations,
            backend,
            search,
        }),
        _ => Err(ValidationError { violations: c.violations }),
    }
}

fn validate_agents(c: &mut Checker, doc: &Value) -> Option<BTreeMap<Role, AgentSpec>> {
    let table = c.table(doc, "agents", "agents")?;
    let mut agents = BTreeMap::new();
    for (name, value) in table {
        let path = format!("agents.{name}");
        let Ok(role) = name.parse::<Role>() else {
            c.push(path, ViolationKind::UnknownRole, format!("`{name}` is not a pipeline role"));
            continue;
        };
        let Value::Table(t) = value else {
            c.push(path, ViolationKind::Invalid, "must be a table");
            continue;
        };
        if let Some(spec) = validate_agent(c, role, t, &path) {
            agents.insert(role, spec);
        }
    }
    for role in Role::ALL {
        if !table.contains_key(role.as_str()) {
            c.push(format!("agents.{role}"), ViolationKind::MissingRole, format!("the {role} agent is missing"));
        }
    }
    (agents.len() == Role::ALL.len()).then_some(agents)
}

fn validate_agent(c: &mut Checker, role: Role, t: &toml::Table, path: &str) -> Option<AgentSpec> {
    for key in t.keys() {
        if !matches!(key.as_str(), "role" | "goal" | "backstory" | "allow_delegation" | "prompt_template" | "model_params") {
            c.push(format!("{path}.{key}"), ViolationKind::Invalid, "unknown field");
        }
    }
    if let Some(declared) = c.string(t, "role", &format!("{path}.role"), false) {
        if declared != role.as_str() {
            c.push(format!("{path}.role"), ViolationKind::Invalid, format!("`{declared}` does not match the section name"));
        }
    }
    let goal = c.string(t, "goal", &format!("{path}.goal"), true);
    let backstory = c.string(t, "backstory", &format!("{path}.backstory"), true);
    let allow_delegation = c.bool(t, "allow_delegation", &format!("{path}.allow_delegation")).unwrap_or(false);
    if allow_delegation && !role.may_delegate() {
        c.push(
            format!("{path}.allow_delegation"),
            ViolationKind::ForbiddenDelegation,
            format!("the {role} agent may not delegate"),
        );
    }
    let template = c
        .string(t, "prompt_template", &format!("{path}.prompt_template"), false)
        .unwrap_or_else(|| default_template(role).to_string());
    for problem in template_violations(role, &template) {
        c.push(format!("{path}.prompt_template"), ViolationKind::BadPlaceholder, problem);
    }

    let mut params = ModelParams::default();
    match t.get("model_params") {
        None => {}
        Some(Value::Table(mp)) => {
            let mp_path = format!("{path}.model_params");
            match mp.get("temperature") {
                None => {}
                Some(v) => match v.as_float().or_else(|| v.as_integer().map(|i| i as f64)) {
                    Some(x) if (0.0..=2.0).contains(&x) => params.temperature = x,
                    Some(x) => c.push(format!("{mp_path}.temperature"), ViolationKind::Invalid, format!("{x} is outside [0, 2]")),
                    None => c.push(format!("{mp_path}.temperature"), ViolationKind::Invalid, "must be a number"),
                },
            }
            if let Some(n) = c.int(mp, "max_tokens", &format!("{mp_path}.max_tokens"), 1, u32::MAX as i64) {
                params.max_tokens = n as u32;
            }
            for key in mp.keys() {
                if !matches!(key.as_str(), "temperature" | "max_tokens") {
                    c.push(format!("{mp_path}.{key}"), ViolationKind::Invalid, "unknown field");
                }
            }
        }
        Some(_) => c.push(format!("{path}.model_params"), ViolationKind::Invalid, "must be a table"),
    }

    Some(AgentSpec {
        role,
        goal: goal?,
        backstory: backstory?,
        allow_delegation,
        prompt_template: template,
        model_params: params,
    })
}

fn validate_backend(c: &mut Checker, t: &toml::Table) -> Option<BackendConfig> {
    for key in t.keys() {
        if !matches!(key.as_str(), "kind" | "base_url" | "model" | "timeout_ms" | "script") {
            c.push(format!("backend.{key}"), ViolationKind::Invalid, "unknown field");
        }
    }
    let kind = c.string(t, "kind", "backend.kind", true).and_then(|k| match k.parse::<BackendKind>() {
        Ok(kind) => Some(kind),
        Err(e) => {
            c.push("backend.kind", ViolationKind::Invalid, e);
            None
        }
    });
    let base_url = c.string(t, "base_url", "backend.base_url", false);
    let model = c.string(t, "model", "backend.model", false);
    let timeout_ms = c
        .int(t, "timeout_ms", "backend.timeout_ms", 1, i64::MAX)
        .map_or(DEFAULT_TIMEOUT_MS, |v| v as u64);
    let script = match t.get("script") {
        None => None,
        Some(Value::Table(s)) => {
            let mut map = BTreeMap::new();
            for (k, v) in s {
                match v {
                    Value::String(text) => {
                        map.insert(k.clone(), text.clone());
                    }
                    _ => c.push(format!("backend.script.{k}"), ViolationKind::Invalid, "must be a string"),
                }
            }
            Some(map)
        }
        Some(_) => {
            c.push("backend.script", ViolationKind::Invalid, "must be a table");
            None
        }
    };
    let config = BackendConfig { kind: kind?, base_url, model, timeout_ms, script };
    let before = c.violations.len();
    for (field, reason) in config.violations() {
        c.push(format!("backend.{field}"), ViolationKind::Missing, reason);
    }
    (c.violations.len() == before).then_some(config)
}

fn validate_search(c: &mut Checker, t: &toml::Table) -> Option<SearchConfig> {
    for key in t.keys() {
        if !matches!(key.as_str(), "mode" | "fixture_dir" | "ttl_seconds" | "max_results" | "endpoint") {
            c.push(format!("search.{key}"), ViolationKind::Invalid, "unknown field");
        }
    }
    let mode = c.string(t, "mode", "search.mode", true).and_then(|m| match m.parse::<SearchMode>() {
        Ok(mode) => Some(mode),
        Err(e) => {
            c.push("search.mode", ViolationKind::Invalid, e);
            None
        }
    });
    let fixture_dir = c.string(t, "fixture_dir", "search.fixture_dir", false);
    if mode == Some(SearchMode::Fixture) && fixture_dir.is_none() {
        c.push("search.fixture_dir", ViolationKind::Missing, "required in fixture mode");
    }
    let ttl_seconds = c
        .int(t, "ttl_seconds", "search.ttl_seconds", 1, i64::MAX)
        .map_or(DEFAULT_TTL_SECONDS, |v| v as u64);
    let max_results = c
        .int(t, "max_results", "search.max_results", 1, 100)
        .map_or(DEFAULT_MAX_RESULTS, |v| v as usize);
    let endpoint = c
        .string(t, "endpoint", "search.endpoint", false)
        .unwrap_or_else(|| DEFAULT_ENDPOINT.to_string());
    if let Err(e) = url::Url::parse(&endpoint) {
        c.push("search.endpoint", ViolationKind::Invalid, format!("not a URL: {e}"));
    }
    Some(SearchConfig {
        mode: mode?,
        fixture_dir: fixture_dir.map(Into::into),
        ttl_seconds,
        max_results,
        endpoint,
        base_dir: None,
    })
}

/// Canonical JSON: object keys sorted, no insignificant whitespace.
pub fn canonical_json(value: &serde_json::Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &serde_json::Value, out: &mut String) {
    match value {
        serde_json::Value::Object(map) => {
            let mut entries: Vec<_> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            out.push('{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string key"));
                out.push(':');
                write_canonical(v, out);
            }
            out.push('}');
        }
        serde_json::Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&serde_json::to_string(scalar).expect("scalar")),
    }
}

/// SHA-256 of the canonical JSON encoding, as 64 lowercase hex digits.
pub fn digest_config(config: &CrewConfig) -> String {
    let value = serde_json::to_value(config).expect("config serializes");
    let hash = Sha256::digest(canonical_json(&value).as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}
