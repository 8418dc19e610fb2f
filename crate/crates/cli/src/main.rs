//! `crewline` command-line front end.
//!
//! Exit codes: 0 accepted / ok, 1 failed run or config/I-O error,
//! 2 max revisions exceeded, 3 replay divergence, 64 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crewline_core::config::load_config;
use crewline_core::domain::{CulturalDomain, LanguageTag, Severity, TranslationJob};
use crewline_core::gateway::{BackendKind, Gateway};
use crewline_core::search::{write_fixture, SearchMode, SearchTool};
use crewline_core::store::replay::fixtures_from_events;
use crewline_core::store::{diff, read_transcript, replay, run_recorded, ReplayError};
use crewline_core::transcript::{RunStatus, Transcript};
use crewline_core::CrewConfig;

const EXIT_OK: u8 = 0;
const EXIT_FAILED: u8 = 1;
const EXIT_MAX_REVISIONS: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "crewline", version, about = "Culturally adaptive translation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Translate one text through the four-stage pipeline.
    Run(RunArgs),
    /// Check a crew config and list every violation.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-execute an accepted transcript and compare the output byte for byte.
    Replay {
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare two transcripts.
    Diff {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Create a search fixture directory with one file per query.
    Scaffold {
        #[arg(long)]
        dir: PathBuf,
        /// Query to create an empty fixture for (repeatable).
        #[arg(long = "query")]
        queries: Vec<String>,
        /// Capture the search results recorded in a transcript.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Replace existing fixture files.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// File holding the source text.
    #[arg(long, conflicts_with = "text", required_unless_present = "text")]
    input: Option<PathBuf>,
    /// Source text given inline.
    #[arg(long)]
    text: Option<String>,
    #[arg(long)]
    source: String,
    #[arg(long)]
    target: String,
    #[arg(long, value_enum, default_value = "general")]
    domain: DomainArg,
    #[arg(long, default_value = "./runs")]
    out: PathBuf,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long, value_enum)]
    search: Option<SearchArg>,
    /// Job id used for output file names (default: random).
    #[arg(long)]
    job_id: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Festival,
    Religion,
    History,
    General,
}

impl From<DomainArg> for CulturalDomain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Festival => CulturalDomain::Festival,
            DomainArg::Religion => CulturalDomain::Religion,
            DomainArg::History => CulturalDomain::History,
            DomainArg::General => CulturalDomain::General,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Http,
    Scripted,
}

#[derive(Clone, Copy, ValueEnum)]
enum SearchArg {
    Live,
    Fixture,
    Disabled,
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("usage error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_FAILED)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::from(EXIT_OK);
        }
        Err(e) => {
            let text = e.to_string();
            let head = text.split("\n\nUsage:").next().unwrap_or_default();
            let line = head.split_whitespace().collect::<Vec<_>>().join(" ");
            return usage(line.trim_start_matches("error: "));
        }
    };

    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate { config } => cmd_validate(&config),
        Command::Replay { transcript, config } => cmd_replay(&transcript, &config),
        Command::Diff { a, b, json } => cmd_diff(&a, &b, json),
        Command::Scaffold { dir, queries, transcript, force } => cmd_scaffold(&dir, &queries, transcript.as_deref(), force),
    }
}

fn load(path: &Path) -> Result<CrewConfig, ExitCode> {
    load_config(path).map_err(|e| {
        eprintln!("invalid config {}:", path.display());
        for v in &e.violations {
            eprintln!("  {}: {}", v.path, v.message);
        }
        ExitCode::from(EXIT_FAILED)
    })
}

fn build_job(args: &RunArgs) -> Result<TranslationJob, ExitCode> {
    let text = match (&args.text, &args.input) {
        (Some(t), _) => t.clone(),
        (None, Some(path)) => std::fs::read_to_string(path).map_err(|e| fail(format!("{}: {e}", path.display())))?,
        (None, None) => return Err(usage("one of --text or --input is required")),
    };
    if text.trim().is_empty() {
        return Err(usage("source text is empty"));
    }
    let source = LanguageTag::parse(&args.source).map_err(|e| usage(format!("--source: {e}")))?;
    let target = LanguageTag::parse(&args.target).map_err(|e| usage(format!("--target: {e}")))?;
    let job = match &args.job_id {
        Some(id) => TranslationJob::with_id(id.clone(), &text, source, target, args.domain.into(), chrono::Utc::now()),
        None => TranslationJob::new(&text, source, target, args.domain.into()),
    };
    job.map_err(usage)
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let job = match build_job(&args) {
        Ok(job) => job,
        Err(code) => return code,
    };
    let config = match load(&args.config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let backend = args.backend.map(|b| match b {
        BackendArg::Http => BackendKind::Http,
        BackendArg::Scripted => BackendKind::Scripted,
    });
    let search = args.search.map(|s| match s {
        SearchArg::Live => SearchMode::Live,
        SearchArg::Fixture => SearchMode::Fixture,
        SearchArg::Disabled => SearchMode::Disabled,
    });
    let config = match config.with_overrides(backend, search) {
        Ok(c) => c,
        Err(e) => return fail(format!("config after overrides: {e}")),
    };
    let gateway = match Gateway::from_config(&config.backend) {
        Ok(g) => g,
        Err(e) => return fail(e),
    };
    let search_tool = match SearchTool::new(config.search.clone()) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };

    let run = match run_recorded(&job, &config, &gateway, &search_tool, &args.out) {
        Ok(run) => run,
        Err(e) => return fail(e),
    };
    let t = &run.transcript;
    let status = t.status().unwrap_or(RunStatus::Failed);
    if status == RunStatus::MaxRevisionsExceeded {
        println!("WARNING: max_revisions_exceeded; the evaluator still reports blocking issues.");
    }
    if let Some(out) = t.output() {
        println!("{}", out.final_text());
    }
    print_summary(t);
    eprintln!("transcript: {}", run.transcript_path.display());
    ExitCode::from(match status {
        RunStatus::Accepted => EXIT_OK,
        RunStatus::MaxRevisionsExceeded => EXIT_MAX_REVISIONS,
        RunStatus::Failed => EXIT_FAILED,
    })
}

fn print_summary(t: &Transcript) {
    let Some(f) = t.final_record() else { return };
    eprintln!("status: {}", f.status.as_str());
    let trace: Vec<&str> = t.stage_trace().iter().map(|r| r.as_str()).collect();
    eprintln!("stage trace: {}", trace.join(" "));
    eprintln!("revisions: {}", f.revision_count);
    if let Some(failure) = &f.failure {
        eprintln!("failed stage: {} ({})", failure.stage, failure.cause);
    }
    if let Some(report) = &f.report {
        let blocking = report.issues().iter().filter(|i| i.severity() == Severity::Blocking).count();
        eprintln!("issues: {} blocking, {} minor", blocking, report.issues().len() - blocking);
        for issue in report.issues() {
            let sev = if issue.is_blocking() { "blocking" } else { "minor" };
            eprintln!("  [{sev}, {}] {}", issue.responsible(), issue.description());
        }
    }
}

fn cmd_validate(path: &Path) -> ExitCode {
    match load(path) {
        Ok(config) => {
            println!("OK {} (digest {})", path.display(), config.digest());
            ExitCode::from(EXIT_OK)
        }
        Err(code) => code,
    }
}

fn cmd_replay(transcript: &Path, config: &Path) -> ExitCode {
    let t = match read_transcript(transcript) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let config = match load(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match replay(&t, &config) {
        Ok(_) => {
            println!("REPLAY OK");
            ExitCode::from(EXIT_OK)
        }
        Err(e @ (ReplayError::Divergence { .. } | ReplayError::OutputMismatch)) => {
            println!("REPLAY DIVERGED: {e}");
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(e) => fail(e),
    }
}

fn cmd_diff(a: &Path, b: &Path, json: bool) -> ExitCode {
    let (ta, tb) = match (read_transcript(a), read_transcript(b)) {
        (Ok(ta), Ok(tb)) => (ta, tb),
        (Err(e), _) | (_, Err(e)) => return fail(e),
    };
    let report = diff(&ta, &tb);
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{report}");
    }
    ExitCode::from(EXIT_OK)
}

fn cmd_scaffold(dir: &Path, queries: &[String], transcript: Option<&Path>, force: bool) -> ExitCode {
    let mut entries: Vec<(String, Vec<crewline_core::domain::SearchResult>)> =
        queries.iter().map(|q| (q.clone(), Vec::new())).collect();
    if let Some(path) = transcript {
        match read_transcript(path) {
            Ok(t) => entries.extend(fixtures_from_events(t.events())),
            Err(e) => return fail(e),
        }
    }
    if let Err(e) = std::fs::create_dir_all(dir) {
        return fail(format!("{}: {e}", dir.display()));
    }
    for (query, results) in entries {
        match write_fixture(dir, &query, &results, force) {
            Ok((path, true)) => println!("wrote {}", path.display()),
            Ok((path, false)) => println!("kept {}", path.display()),
            Err(e) => return fail(format!("{query}: {e}")),
        }
    }
    ExitCode::from(EXIT_OK)
}
