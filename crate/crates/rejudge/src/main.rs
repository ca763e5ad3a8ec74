//! Command-line entry point: wires config, provider, controller, and
//! reporting into subcommands.
//!
//! Exit codes: 0 complete, 1 failed, 2 partial (progress persisted and
//! resumable), 64 usage.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use rejudge::controller::{run_audit, RunManifest};
use rejudge::corpus::config::{validate_config, AuditConfig, ConfigError, ProviderKind};
use rejudge::prompting::render_open_target_prompt;
use rejudge::provider::{
    ChatProvider, CompletionRequest, ExchangeKey, LiveProvider, ProviderError, ScriptedMock,
    StochasticMock,
};
use rejudge::reporting::transcript::{RecordClass, TranscriptRecord, TranscriptStore};
use rejudge::reporting::{
    emit_report, recount_from_transcript, rows_for, ReportFormat, StructuredReport,
};

const EXIT_COMPLETE: u8 = 0;
const EXIT_FAILED: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "rejudge",
    version,
    about = "Two-stage stereotype audit harness for chat models",
    long_about = "Collects analogy completions from a chat model, counts stereotypical ones, \
then asks the same model to judge each collected statement and counts endorsements. \
Reports both numbers and their inconsistency per attribute pair."
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the two-stage audit, writing transcript, manifest, and reports
    Run(RunArgs),
    /// Recount an existing transcript and regenerate reports (no provider calls)
    Replay(ReplayArgs),
    /// Print a report recomputed from an existing transcript
    Report(ReportArgs),
    /// Validate a config file and exit (no network)
    Validate {
        /// Config file (TOML)
        #[arg(long)]
        config: PathBuf,
    },
    /// Send one open-ended analogy prompt and print the raw response
    DemoOpenTarget(DemoArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory for transcript, manifest, and reports
    #[arg(long)]
    out: PathBuf,
    /// Override the provider kind (live | mock-scripted | mock-stochastic)
    #[arg(long)]
    provider: Option<String>,
    /// Override the model name
    #[arg(long)]
    model: Option<String>,
    /// Override the run seed
    #[arg(long)]
    seed: Option<u64>,
    /// Resume from an existing transcript in the output directory
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    resume: bool,
    /// Which report documents to write (structured | human | both)
    #[arg(long, default_value = "both")]
    format: String,
}

#[derive(Args)]
struct ReplayArgs {
    /// Config file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory holding the transcript to recount
    #[arg(long)]
    out: PathBuf,
    /// Transcript path override (defaults to <out>/transcript.jsonl)
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Which report documents to write (structured | human | both)
    #[arg(long, default_value = "both")]
    format: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Config file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory holding the transcript
    #[arg(long)]
    out: PathBuf,
    /// Format to print (structured | human)
    #[arg(long, default_value = "human")]
    format: String,
}

#[derive(Args)]
struct DemoArgs {
    /// Config file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the transcript record
    #[arg(long)]
    out: PathBuf,
    /// First target name
    #[arg(long)]
    target_a: String,
    /// Second target name
    #[arg(long)]
    target_b: String,
    /// Number of results to request
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    count: u32,
    /// Override the provider kind (live | mock-scripted | mock-stochastic)
    #[arg(long)]
    provider: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_COMPLETE,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let code = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Report(args) => cmd_report(args),
        Command::Validate { config } => cmd_validate(&config),
        Command::DemoOpenTarget(args) => cmd_demo_open_target(args),
    };
    ExitCode::from(code)
}

fn fail(message: impl std::fmt::Display) -> u8 {
    eprintln!("error: {message}");
    EXIT_FAILED
}

fn usage(message: impl std::fmt::Display) -> u8 {
    eprintln!("usage error: {message}");
    EXIT_USAGE
}

fn load_config(
    path: &Path,
    provider_override: Option<&str>,
    model_override: Option<&str>,
    seed_override: Option<u64>,
) -> Result<AuditConfig, ConfigError> {
    let mut config = AuditConfig::from_file(path)?;
    if let Some(kind) = provider_override {
        match ProviderKind::parse(kind) {
            Some(kind) => config.provider.kind = kind,
            None => {
                return Err(ConfigError::Parse(format!(
                    "unknown provider override {kind:?} (expected live, mock-scripted, or mock-stochastic)"
                )))
            }
        }
    }
    if let Some(model) = model_override {
        config.provider.model = model.to_string();
    }
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    validate_config(config)
}

fn build_provider(config: &AuditConfig) -> Result<Box<dyn ChatProvider>, ProviderError> {
    match config.provider.kind {
        ProviderKind::Live => Ok(Box::new(LiveProvider::new(&config.provider)?)),
        ProviderKind::MockScripted => {
            let path = config
                .provider
                .script_path
                .as_ref()
                .expect("validated scripted config has a script path");
            let mut scripted = ScriptedMock::from_file(path)?;
            // An explicit generator block turns on stochastic fallback for
            // keys the script does not cover.
            if config.provider.generator.is_some() {
                scripted = scripted.with_fallback(StochasticMock::from_config(config));
            }
            Ok(Box::new(scripted))
        }
        ProviderKind::MockStochastic => Ok(Box::new(StochasticMock::from_config(config))),
    }
}

fn parse_formats(raw: &str) -> Option<Vec<ReportFormat>> {
    match raw {
        "both" => Some(vec![ReportFormat::Structured, ReportFormat::HumanTable]),
        "structured" => Some(vec![ReportFormat::Structured]),
        "human" | "human_table" => Some(vec![ReportFormat::HumanTable]),
        _ => None,
    }
}

fn write_reports(
    out: &Path,
    report: &StructuredReport,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>, String> {
    let mut written = Vec::new();
    for format in formats {
        let (name, body) = match format {
            ReportFormat::Structured => (
                "report.json",
                emit_report(report, ReportFormat::Structured).map_err(|e| e.to_string())?,
            ),
            ReportFormat::HumanTable => (
                "report.md",
                emit_report(report, ReportFormat::HumanTable).map_err(|e| e.to_string())?,
            ),
        };
        let path = out.join(name);
        std::fs::write(&path, body).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

fn cmd_validate(config_path: &Path) -> u8 {
    match AuditConfig::from_file(config_path) {
        Ok(config) => {
            println!(
                "config valid: {} pair(s), {} template(s), provider {:?}, protocol hash {}",
                config.pairs.len(),
                config.templates.len(),
                config.provider.kind,
                &config.protocol_hash()[..12],
            );
            EXIT_COMPLETE
        }
        Err(err) => fail(err),
    }
}

fn cmd_run(args: RunArgs) -> u8 {
    let Some(formats) = parse_formats(&args.format) else {
        return usage(format!("unknown --format {:?}", args.format));
    };
    let config = match load_config(
        &args.config,
        args.provider.as_deref(),
        args.model.as_deref(),
        args.seed,
    ) {
        Ok(config) => config,
        Err(err) => return fail(err),
    };

    // Build the provider before touching the output directory so that
    // credential problems surface with zero side effects.
    let provider = match build_provider(&config) {
        Ok(p) => p,
        Err(err) => return fail(err),
    };

    let transcript_path = args.out.join("transcript.jsonl");
    if !args.resume && transcript_path.exists() {
        return fail(format!(
            "{} already exists; rerun with --resume true to continue it or choose a fresh --out",
            transcript_path.display()
        ));
    }
    let mut store = match TranscriptStore::open(&transcript_path) {
        Ok(store) => store,
        Err(err) => return fail(err),
    };

    match run_audit(&config, provider.as_ref(), &mut store) {
        Ok(outcomes) => {
            let manifest = match RunManifest::load(&store.manifest_path()) {
                Ok(Some(manifest)) => manifest,
                Ok(None) => RunManifest::new(&config),
                Err(err) => return fail(err),
            };
            let rows = match rows_for(&outcomes, config.bold_threshold) {
                Ok(rows) => rows,
                Err(err) => return fail(err),
            };
            let report = StructuredReport::new(manifest, config.bold_threshold, rows);
            match write_reports(&args.out, &report, &formats) {
                Ok(paths) => {
                    for path in paths {
                        println!("wrote {}", path.display());
                    }
                    println!("audit complete: {} pair(s)", report.rows.len());
                    EXIT_COMPLETE
                }
                Err(err) => fail(err),
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            if store.is_empty() {
                EXIT_FAILED
            } else {
                eprintln!(
                    "run is partial; rerun the same command to resume from {}",
                    store.path().display()
                );
                EXIT_PARTIAL
            }
        }
    }
}

fn cmd_replay(args: ReplayArgs) -> u8 {
    let Some(formats) = parse_formats(&args.format) else {
        return usage(format!("unknown --format {:?}", args.format));
    };
    let config = match load_config(&args.config, None, None, None) {
        Ok(config) => config,
        Err(err) => return fail(err),
    };
    let transcript_path = args
        .transcript
        .unwrap_or_else(|| args.out.join("transcript.jsonl"));
    if !transcript_path.exists() {
        return fail(format!("no transcript at {}", transcript_path.display()));
    }

    let rows = match recount_from_transcript(&transcript_path, &config) {
        Ok(rows) => rows,
        Err(err) => return fail(err),
    };

    let manifest_path = args.out.join("manifest.json");
    let (manifest, recount_note) = match RunManifest::load(&manifest_path) {
        Ok(Some(manifest)) => {
            let current = config.analysis_hash();
            let note = (manifest.analysis_hash != current).then(|| {
                format!(
                    "rows recounted under analysis config {} (run was recorded under {})",
                    &current[..12],
                    &manifest.analysis_hash[..12.min(manifest.analysis_hash.len())]
                )
            });
            (manifest, note)
        }
        Ok(None) => (
            RunManifest::new(&config),
            Some("rows recounted from transcript; original manifest missing".to_string()),
        ),
        Err(err) => return fail(err),
    };

    let mut report = StructuredReport::new(manifest, config.bold_threshold, rows);
    report.recount_note = recount_note;
    match write_reports(&args.out, &report, &formats) {
        Ok(paths) => {
            for path in paths {
                println!("wrote {}", path.display());
            }
            EXIT_COMPLETE
        }
        Err(err) => fail(err),
    }
}

fn cmd_report(args: ReportArgs) -> u8 {
    let format = match args.format.as_str() {
        "human" | "human_table" => ReportFormat::HumanTable,
        "structured" => ReportFormat::Structured,
        other => return usage(format!("unknown --format {other:?}")),
    };
    let config = match load_config(&args.config, None, None, None) {
        Ok(config) => config,
        Err(err) => return fail(err),
    };
    let transcript_path = args.out.join("transcript.jsonl");
    let rows = match recount_from_transcript(&transcript_path, &config) {
        Ok(rows) => rows,
        Err(err) => return fail(err),
    };
    let manifest = match RunManifest::load(&args.out.join("manifest.json")) {
        Ok(Some(manifest)) => manifest,
        Ok(None) => RunManifest::new(&config),
        Err(err) => return fail(err),
    };
    let report = StructuredReport::new(manifest, config.bold_threshold, rows);
    match emit_report(&report, format) {
        Ok(body) => {
            print!("{body}");
            EXIT_COMPLETE
        }
        Err(err) => fail(err),
    }
}

fn cmd_demo_open_target(args: DemoArgs) -> u8 {
    if args.target_a.trim().is_empty() || args.target_b.trim().is_empty() {
        return usage("targets must be nonempty");
    }
    let config = match load_config(&args.config, args.provider.as_deref(), None, None) {
        Ok(config) => config,
        Err(err) => return fail(err),
    };
    let provider = match build_provider(&config) {
        Ok(p) => p,
        Err(err) => return fail(err),
    };
    let prompt = match render_open_target_prompt(&args.target_a, &args.target_b, args.count) {
        Ok(p) => p,
        Err(err) => return usage(err),
    };

    let mut store = match TranscriptStore::open(&args.out.join("transcript.jsonl")) {
        Ok(store) => store,
        Err(err) => return fail(err),
    };
    let key = ExchangeKey::OpenTarget {
        sample_index: store.demo_count(&prompt.subject),
    };
    let request = CompletionRequest {
        prompt: prompt.text.clone(),
        model: config.provider.model.clone(),
        temperature: config.provider.temperature_stage_one,
        max_tokens: config.provider.max_tokens,
        pair: prompt.subject.clone(),
        key,
    };
    let response = match provider.complete(&request) {
        Ok(r) => r,
        Err(err) => return fail(err),
    };
    let record = TranscriptRecord::new(
        &config.run_id(),
        &prompt.subject,
        key,
        prompt.text,
        response.text.clone(),
        RecordClass::Unclassified,
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        response.latency.as_millis() as u64,
    );
    if let Err(err) = store.append(record) {
        return fail(err);
    }
    println!("{}", response.text);
    EXIT_COMPLETE
}
