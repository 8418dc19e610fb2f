//! Web search used by the evaluation stage to ground cultural claims.
//!
//! Three modes: `live` scrapes a DuckDuckGo-compatible lite results page,
//! `fixture` reads one JSON document per query from disk (or memory, for
//! replay) and `disabled` refuses every query. Results are cached per
//! normalized query for `ttl_seconds`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::{nfc, EvidenceOrigin, SearchEvidence, SearchResult};

pub const DEFAULT_ENDPOINT: &str = "https://lite.duckduckgo.com/lite/";
pub const DEFAULT_TTL_SECONDS: u64 = 3600;
pub const DEFAULT_MAX_RESULTS: usize = 5;
pub const MAX_SNIPPET_CHARS: usize = 500;
pub const MAX_SLUG_CHARS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Live,
    Fixture,
    Disabled,
}

impl std::str::FromStr for SearchMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(SearchMode::Live),
            "fixture" => Ok(SearchMode::Fixture),
            "disabled" => Ok(SearchMode::Disabled),
            other => Err(format!("unknown search mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub mode: SearchMode,
    /// As written in the config document; relative paths are resolved
    /// against `base_dir`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_dir: Option<PathBuf>,
    pub ttl_seconds: u64,
    pub max_results: usize,
    pub endpoint: String,
    /// Directory of the config file; not part of the config's identity.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            mode: SearchMode::Disabled,
            fixture_dir: None,
            ttl_seconds: DEFAULT_TTL_SECONDS,
            max_results: DEFAULT_MAX_RESULTS,
            endpoint: DEFAULT_ENDPOINT.to_string(),
            base_dir: None,
        }
    }
}

impl SearchConfig {
    pub fn fixture(dir: impl Into<PathBuf>) -> Self {
        Self {
            mode: SearchMode::Fixture,
            fixture_dir: Some(dir.into()),
            ..Self::default()
        }
    }

    pub fn resolved_fixture_dir(&self) -> Option<PathBuf> {
        let dir = self.fixture_dir.as_ref()?;
        Some(match &self.base_dir {
            Some(base) if dir.is_relative() => base.join(dir),
            _ => dir.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SearchError {
    #[error("search tool is disabled")]
    ToolDisabled,
    #[error("search query is empty")]
    EmptyQuery,
    #[error("fixture directory {0} does not exist")]
    MissingFixtureDir(String),
    #[error("fixture {path} is malformed: {reason}")]
    BadFixture { path: String, reason: String },
    #[error("search upstream failed: {0}")]
    Upstream(String),
}

/// Non-fatal conditions; the evidence is empty but the run continues.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchWarning {
    FixtureMiss { path: String },
    ParseDegraded { reason: String },
}

impl fmt::Display for SearchWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SearchWarning::FixtureMiss { path } => write!(f, "fixture miss: {path}"),
            SearchWarning::ParseDegraded { reason } => write!(f, "results page not parsed: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub evidence: SearchEvidence,
    pub warning: Option<SearchWarning>,
}

/// Filename-safe key for a query: lowercase, non-alphanumeric runs collapsed
/// to `-`, trimmed of leading/trailing `-`, at most 100 characters.
pub fn slug(query: &str) -> String {
    let mut out = String::new();
    let mut pending_dash = false;
    for c in query.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            if pending_dash && !out.is_empty() {
                out.push('-');
            }
            pending_dash = false;
            out.push(c);
        } else {
            pending_dash = true;
        }
    }
    let truncated: String = out.chars().take(MAX_SLUG_CHARS).collect();
    truncated.trim_end_matches('-').to_string()
}

/// Cache key: trimmed, single-spaced query.
pub fn normalize_query(query: &str) -> String {
    query.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone)]
pub struct FetchError {
    pub transient: bool,
    pub message: String,
}

/// Fetches a results page. Swappable so tests can run without a network.
pub trait Fetcher: Send + Sync {
    fn fetch(&self, endpoint: &str, query: &str) -> Result<String, FetchError>;
}

/// HTTP GET `<endpoint>?q=<query>`.
pub struct HttpFetcher {
    agent: ureq::Agent,
}

impl HttpFetcher {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .user_agent("crewline/0.1")
            .build()
            .into();
        Self { agent }
    }
}

impl Fetcher for HttpFetcher {
    fn fetch(&self, endpoint: &str, query: &str) -> Result<String, FetchError> {
        let mut url = url::Url::parse(endpoint).map_err(|e| FetchError {
            transient: false,
            message: format!("bad endpoint: {e}"),
        })?;
        url.query_pairs_mut().append_pair("q", query);
        let mut resp = self.agent.get(url.as_str()).call().map_err(|e| FetchError {
            transient: true,
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(FetchError { transient: true, message: format!("HTTP {status}") });
        }
        if !(200..300).contains(&status) {
            return Err(FetchError { transient: false, message: format!("HTTP {status}") });
        }
        resp.body_mut().read_to_string().map_err(|e| FetchError {
            transient: true,
            message: e.to_string(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct FixtureDoc {
    #[serde(default)]
    query: Option<String>,
    results: Vec<SearchResult>,
}

enum FixtureSource {
    None,
    Dir(PathBuf),
    Memory(BTreeMap<String, Vec<SearchResult>>),
}

struct CacheEntry {
    results: Vec<SearchResult>,
    stored_at: Instant,
    fetched_at: DateTime<Utc>,
}

pub type Clock = Arc<dyn Fn() -> Instant + Send + Sync>;

/// Search front end with a TTL cache and per-query request coalescing.
pub struct SearchTool {
    config: SearchConfig,
    fixtures: FixtureSource,
    fetcher: Box<dyn Fetcher>,
    cache: Mutex<HashMap<String, CacheEntry>>,
    in_flight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    reads: AtomicU64,
    clock: Clock,
}

impl fmt::Debug for SearchTool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SearchTool")
            .field("mode", &self.config.mode)
            .field("reads", &self.reads())
            .finish_non_exhaustive()
    }
}

impl SearchTool {
    /// Fails when fixture mode points at a directory that does not exist.
    pub fn new(config: SearchConfig) -> Result<Self, SearchError> {
        Self::with_fetcher(config, Box::new(HttpFetcher::new(Duration::from_secs(20))))
    }

    pub fn with_fetcher(config: SearchConfig, fetcher: Box<dyn Fetcher>) -> Result<Self, SearchError> {
        let fixtures = match config.mode {
            SearchMode::Fixture => {
                let dir = config
                    .resolved_fixture_dir()
                    .ok_or_else(|| SearchError::MissingFixtureDir("<unset>".into()))?;
                if !dir.is_dir() {
                    return Err(SearchError::MissingFixtureDir(dir.display().to_string()));
                }
                FixtureSource::Dir(dir)
            }
            _ => FixtureSource::None,
        };
        Ok(Self::build(config, fixtures, fetcher))
    }

    /// Fixture mode backed by an in-memory map of normalized query → results.
    pub fn with_memory_fixtures(mut config: SearchConfig, fixtures: BTreeMap<String, Vec<SearchResult>>) -> Self {
        config.mode = SearchMode::Fixture;
        let fixtures = fixtures
            .into_iter()
            .map(|(q, r)| (normalize_query(&q), r))
            .collect();
        Self::build(config, FixtureSource::Memory(fixtures), Box::new(OfflineFetcher))
    }

    pub fn disabled() -> Self {
        Self::build(SearchConfig::default(), FixtureSource::None, Box::new(OfflineFetcher))
    }

    fn build(config: SearchConfig, fixtures: FixtureSource, fetcher: Box<dyn Fetcher>) -> Self {
        Self {
            config,
            fixtures,
            fetcher,
            cache: Mutex::new(HashMap::new()),
            in_flight: Mutex::new(HashMap::new()),
            reads: AtomicU64::new(0),
            clock: Arc::new(Instant::now),
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn mode(&self) -> SearchMode {
        self.config.mode
    }

    /// Number of upstream fetches plus fixture reads performed so far.
    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::SeqCst)
    }

    pub fn search(&self, query: &str) -> Result<SearchOutcome, SearchError> {
        if self.config.mode == SearchMode::Disabled {
            return Err(SearchError::ToolDisabled);
        }
        let key = normalize_query(&nfc(query));
        if key.is_empty() {
            return Err(SearchError::EmptyQuery);
        }
        if let Some(hit) = self.cached(&key) {
            return Ok(hit);
        }

        let gate = {
            let mut in_flight = self.in_flight.lock().unwrap();
            in_flight.entry(key.clone()).or_default().clone()
        };
        let _guard = gate.lock().unwrap();
        // A concurrent caller may have filled the cache while we waited.
        if let Some(hit) = self.cached(&key) {
            return Ok(hit);
        }

        let (results, origin, warning) = match self.config.mode {
            SearchMode::Fixture => {
                let (results, warning) = self.read_fixture(&key)?;
                (results, EvidenceOrigin::Fixture, warning)
            }
            SearchMode::Live => {
                let (results, warning) = self.fetch_live(&key)?;
                (results, EvidenceOrigin::Live, warning)
            }
            SearchMode::Disabled => unreachable!(),
        };
        let results = self.normalize(results);
        let fetched_at = Utc::now();
        if warning.is_none() {
            self.cache.lock().unwrap().insert(
                key.clone(),
                CacheEntry { results: results.clone(), stored_at: (self.clock)(), fetched_at },
            );
        }
        self.in_flight.lock().unwrap().remove(&key);
        Ok(SearchOutcome {
            evidence: SearchEvidence { query: key, results, fetched_at, origin },
            warning,
        })
    }

    fn cached(&self, key: &str) -> Option<SearchOutcome> {
        let mut cache = self.cache.lock().unwrap();
        let ttl = Duration::from_secs(self.config.ttl_seconds);
        let entry = cache.get(key)?;
        if (self.clock)().saturating_duration_since(entry.stored_at) >= ttl {
            cache.remove(key);
            return None;
        }
        Some(SearchOutcome {
            evidence: SearchEvidence {
                query: key.to_string(),
                results: entry.results.clone(),
                fetched_at: entry.fetched_at,
                origin: EvidenceOrigin::Cache,
            },
            warning: None,
        })
    }

    fn read_fixture(&self, key: &str) -> Result<(Vec<SearchResult>, Option<SearchWarning>), SearchError> {
        match &self.fixtures {
            FixtureSource::Dir(dir) => {
                let path = fixture_path(dir, key);
                self.reads.fetch_add(1, Ordering::SeqCst);
                let text = match std::fs::read_to_string(&path) {
                    Ok(t) => t,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                        tracing::warn!(path = %path.display(), "search fixture missing");
                        return Ok((Vec::new(), Some(SearchWarning::FixtureMiss { path: path.display().to_string() })));
                    }
                    Err(e) => {
                        return Err(SearchError::BadFixture { path: path.display().to_string(), reason: e.to_string() })
                    }
                };
                let doc: FixtureDoc = serde_json::from_str(&text).map_err(|e| SearchError::BadFixture {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
                Ok((doc.results, None))
            }
            FixtureSource::Memory(map) => {
                self.reads.fetch_add(1, Ordering::SeqCst);
                match map.get(key) {
                    Some(r) => Ok((r.clone(), None)),
                    None => Ok((Vec::new(), Some(SearchWarning::FixtureMiss { path: format!("memory:{key}") }))),
                }
            }
            FixtureSource::None => Err(SearchError::MissingFixtureDir("<unset>".into())),
        }
    }

    fn fetch_live(&self, key: &str) -> Result<(Vec<SearchResult>, Option<SearchWarning>), SearchError> {
        let mut attempt = 0;
        let page = loop {
            attempt += 1;
            self.reads.fetch_add(1, Ordering::SeqCst);
            match self.fetcher.fetch(&self.config.endpoint, key) {
                Ok(page) => break page,
                Err(e) if e.transient && attempt < 2 => {
                    tracing::debug!(error = %e.message, "retrying search fetch");
                }
                Err(e) => return Err(SearchError::Upstream(e.message)),
            }
        };
        let results = extract_results(&page);
        if results.is_empty() {
            let reason = if page.trim().is_empty() { "empty page" } else { "no result anchors found" };
            return Ok((Vec::new(), Some(SearchWarning::ParseDegraded { reason: reason.to_string() })));
        }
        Ok((results, None))
    }

    fn normalize(&self, results: Vec<SearchResult>) -> Vec<SearchResult> {
        results
            .into_iter()
            .take(self.config.max_results)
            .map(|r| SearchResult {
                title: clean_text(&r.title),
                snippet: clean_text(&r.snippet).chars().take(MAX_SNIPPET_CHARS).collect(),
                url: r.url.trim().to_string(),
            })
            .collect()
    }
}

/// Writes a fixture file for `query`. An existing file is left alone unless
/// `overwrite` is set; returns the path and whether it was written.
pub fn write_fixture(
    dir: &Path,
    query: &str,
    results: &[SearchResult],
    overwrite: bool,
) -> std::io::Result<(PathBuf, bool)> {
    let path = fixture_path(dir, query);
    if path.exists() && !overwrite {
        return Ok((path, false));
    }
    std::fs::create_dir_all(dir)?;
    let doc = FixtureDoc { query: Some(normalize_query(query)), results: results.to_vec() };
    let mut text = serde_json::to_string_pretty(&doc).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok((path, true))
}

/// Path of the fixture file for a query.
pub fn fixture_path(dir: &Path, query: &str) -> PathBuf {
    dir.join(format!("{}.json", slug(query)))
}

struct OfflineFetcher;

impl Fetcher for OfflineFetcher {
    fn fetch(&self, _endpoint: &str, _query: &str) -> Result<String, FetchError> {
        Err(FetchError { transient: false, message: "network access is not available".into() })
    }
}

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)<[^>]*>").unwrap())
}

/// Strips markup, decodes common entities and collapses whitespace.
pub fn clean_text(raw: &str) -> String {
    let without_tags = tag_re().replace_all(raw, " ");
    let decoded = decode_entities(&without_tags);
    nfc(&normalize_query(&decoded))
}

fn decode_entities(s: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"&(#x[0-9a-fA-F]+|#[0-9]+|[a-zA-Z]+);").unwrap());
    re.replace_all(s, |caps: &regex::Captures| {
        let name = &caps[1];
        let decoded = if let Some(hex) = name.strip_prefix("#x").or_else(|| name.strip_prefix("#X")) {
            u32::from_str_radix(hex, 16).ok().and_then(char::from_u32)
        } else if let Some(dec) = name.strip_prefix('#') {
            dec.parse().ok().and_then(char::from_u32)
        } else {
            match name {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some(' '),
                _ => None,
            }
        };
        decoded.map(String::from).unwrap_or_else(|| caps[0].to_string())
    })
    .into_owned()
}

/// Tolerant extractor for DuckDuckGo lite/html results pages: pairs result
/// anchors with the snippet that follows each of them.
pub fn extract_results(page: &str) -> Vec<SearchResult> {
    static ANCHOR: OnceLock<Regex> = OnceLock::new();
    static SNIPPET: OnceLock<Regex> = OnceLock::new();
    let anchor = ANCHOR.get_or_init(|| {
        Regex::new(
            r#"(?is)<a\b([^>]*class\s*=\s*["'][^"']*(?:result-link|result__a)[^"']*["'][^>]*)>(.*?)</a>"#,
        )
        .unwrap()
    });
    let snippet = SNIPPET.get_or_init(|| {
        Regex::new(
            r#"(?is)<(td|a|div|span)\b[^>]*class\s*=\s*["'][^"']*(?:result-snippet|result__snippet)[^"']*["'][^>]*>(.*?)</(?:td|a|div|span)>"#,
        )
        .unwrap()
    });
    static HREF: OnceLock<Regex> = OnceLock::new();
    let href = HREF.get_or_init(|| Regex::new(r#"(?i)href\s*=\s*["']([^"']+)["']"#).unwrap());

    let anchors: Vec<_> = anchor.captures_iter(page).collect();
    let mut out = Vec::new();
    for (i, cap) in anchors.iter().enumerate() {
        let whole = cap.get(0).unwrap();
        let Some(link) = href.captures(&cap[1]).map(|h| decode_entities(&h[1])) else {
            continue;
        };
        let end = anchors.get(i + 1).map_or(page.len(), |next| next.get(0).unwrap().start());
        let snippet_text = snippet
            .captures(&page[whole.end()..end])
            .map(|s| s[2].to_string())
            .unwrap_or_default();
        out.push(SearchResult {
            title: clean_text(&cap[2]),
            snippet: clean_text(&snippet_text),
            url: unwrap_redirect(&link),
        });
    }
    out
}

/// DuckDuckGo wraps result links as `//duckduckgo.com/l/?uddg=<target>`.
fn unwrap_redirect(link: &str) -> String {
    let absolute = if link.starts_with("//") { format!("https:{link}") } else { link.to_string() };
    if let Ok(url) = url::Url::parse(&absolute) {
        if let Some((_, target)) = url.query_pairs().find(|(k, _)| k == "uddg") {
            return target.into_owned();
        }
    }
    absolute
}
