//! Report rows, report documents, and transcript recounting.
//!
//! `recount_from_transcript` re-runs the classifier over stored raw
//! responses and rebuilds every row without provider calls; a completed
//! run's recount equals its live rows, and reclassification after a
//! keyword-list change is just a recount under the new config.

pub mod transcript;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{classify_rejudgement, classify_statement, RejudgeLabel, StatementClass};
use crate::controller::{
    AcceptedStatement, PairOutcome, RejudgedStatement, RunManifest, StageOneCounts,
    StageOneResult, StageTwoCounts, StageTwoResult, TemplateSamples,
};
use crate::corpus::config::AuditConfig;
use crate::prompting::REJUDGE_INSTRUCTION;
use transcript::{read_transcript, TranscriptError, TranscriptRecord};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One pair's row: the automatic and re-judgement stereotype numbers with
/// their inconsistency ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub pair: String,
    pub s_auto: u32,
    pub s_rejudge: u32,
    pub anti_count: u32,
    pub ambiguous_count: u32,
    pub shortfall: bool,
    /// `(s_auto - s_rejudge) / s_auto`; absent when nothing was collected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inconsistency: Option<f64>,
    /// Whether `s_auto` meets the notable threshold.
    pub bold_auto: bool,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("stage results refer to different pairs: {0:?} vs {1:?}")]
    PairMismatch(String, String),
    #[error("report requires at least one row")]
    EmptyRows,
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("transcript record {line} references pair {pair:?} not present in the config")]
    UnknownPair { pair: String, line: usize },
    #[error("cannot parse report: {0}")]
    Parse(String),
}

/// Builds a row from both stage results for the same pair.
pub fn compute_row(
    stage_one: &StageOneResult,
    stage_two: &StageTwoResult,
    bold_threshold: u32,
) -> Result<ReportRow, ReportError> {
    if stage_one.pair != stage_two.pair {
        return Err(ReportError::PairMismatch(
            stage_one.pair.clone(),
            stage_two.pair.clone(),
        ));
    }
    let s_auto = stage_one.s_auto();
    let s_rejudge = stage_two.s_rejudge();
    debug_assert!(s_rejudge <= s_auto, "endorsements bounded by statements");
    let inconsistency = (s_auto > 0).then(|| f64::from(s_auto - s_rejudge) / f64::from(s_auto));
    Ok(ReportRow {
        pair: stage_one.pair.clone(),
        s_auto,
        s_rejudge,
        anti_count: stage_one.counts.anti_stereotype,
        ambiguous_count: stage_two.counts.ambiguous,
        shortfall: stage_one.any_shortfall(),
        inconsistency,
        bold_auto: s_auto >= bold_threshold,
    })
}

pub fn rows_for(
    outcomes: &[PairOutcome],
    bold_threshold: u32,
) -> Result<Vec<ReportRow>, ReportError> {
    outcomes
        .iter()
        .map(|o| compute_row(&o.stage_one, &o.stage_two, bold_threshold))
        .collect()
}

/// Output shape selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Structured,
    HumanTable,
}

/// The machine-readable report document: every row plus the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredReport {
    pub schema: u32,
    pub manifest: RunManifest,
    pub bold_threshold: u32,
    /// Present when rows were recomputed under a config differing from
    /// the one that produced the transcript.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recount_note: Option<String>,
    pub rows: Vec<ReportRow>,
}

impl StructuredReport {
    pub fn new(manifest: RunManifest, bold_threshold: u32, rows: Vec<ReportRow>) -> StructuredReport {
        StructuredReport {
            schema: REPORT_SCHEMA_VERSION,
            manifest,
            bold_threshold,
            recount_note: None,
            rows,
        }
    }
}

/// Serializes the report in the chosen format. The human table mirrors
/// the row shape of the published results: one line per pair, automatic
/// counts bolded at the threshold, plus the ambiguous column and
/// shortfall footnotes.
pub fn emit_report(report: &StructuredReport, format: ReportFormat) -> Result<String, ReportError> {
    if report.rows.is_empty() {
        return Err(ReportError::EmptyRows);
    }
    match format {
        ReportFormat::Structured => {
            let mut out =
                serde_json::to_string_pretty(report).map_err(|e| ReportError::Parse(e.to_string()))?;
            out.push('\n');
            Ok(out)
        }
        ReportFormat::HumanTable => Ok(emit_human_table(report)),
    }
}

/// Parses a structured report document.
pub fn parse_report(raw: &str) -> Result<StructuredReport, ReportError> {
    serde_json::from_str(raw).map_err(|e| ReportError::Parse(e.to_string()))
}

fn emit_human_table(report: &StructuredReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# Stereotype audit — run {}\n\n",
        report.manifest.run_id
    ));
    out.push_str(&format!(
        "Seed {} · config {} · started {}\n\n",
        report.manifest.seed,
        &report.manifest.config_hash[..12.min(report.manifest.config_hash.len())],
        report.manifest.started_at
    ));
    if let Some(note) = &report.recount_note {
        out.push_str(&format!("> {note}\n\n"));
    }

    out.push_str(
        "| Attribute pair | Automatic | Re-judgement | Anti-stereotype | Ambiguous | Inconsistency |\n",
    );
    out.push_str("| --- | ---: | ---: | ---: | ---: | ---: |\n");
    for row in &report.rows {
        let pair = if row.shortfall {
            format!("{} \u{2020}", row.pair)
        } else {
            row.pair.clone()
        };
        let auto = if row.bold_auto {
            format!("**{}**", row.s_auto)
        } else {
            row.s_auto.to_string()
        };
        let inconsistency = match row.inconsistency {
            Some(v) => format!("{v:.2}"),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "| {pair} | {auto} | {} | {} | {} | {inconsistency} |\n",
            row.s_rejudge, row.anti_count, row.ambiguous_count
        ));
    }

    out.push('\n');
    out.push_str(&format!(
        "**Bold** marks automatic counts at or above {}.\n",
        report.bold_threshold
    ));
    if report.rows.iter().any(|r| r.shortfall) {
        out.push_str(
            "\u{2020} at least one template fell short of its sample quota; see the transcript.\n",
        );
    }
    if report.rows.iter().any(|r| r.ambiguous_count > 0) {
        out.push_str(
            "Ambiguous verdicts are counted in neither column and need manual review.\n",
        );
    }
    out
}

// ---------------------------------------------------------------------------
// Recounting
// ---------------------------------------------------------------------------

/// Rebuilds every row by re-running the classifier over the stored raw
/// responses. No provider calls.
pub fn recount_from_transcript(
    path: &Path,
    config: &AuditConfig,
) -> Result<Vec<ReportRow>, ReportError> {
    let outcomes = recount_outcomes_from_transcript(path, config)?;
    rows_for(&outcomes, config.bold_threshold)
}

/// Recount down to full stage results, for callers that need more than
/// rows.
pub fn recount_outcomes_from_transcript(
    path: &Path,
    config: &AuditConfig,
) -> Result<Vec<PairOutcome>, ReportError> {
    let records = read_transcript(path)?;
    recount_outcomes(&records, config)
}

fn recount_outcomes(
    records: &[TranscriptRecord],
    config: &AuditConfig,
) -> Result<Vec<PairOutcome>, ReportError> {
    for (i, record) in records.iter().enumerate() {
        if record.stage != 0 && config.pair(&record.pair).is_none() {
            return Err(ReportError::UnknownPair {
                pair: record.pair.clone(),
                line: i + 1,
            });
        }
    }

    let mut outcomes = Vec::new();
    for pair in &config.pairs {
        let stage_one = recount_stage_one(records, config, &pair.name)?;
        let stage_two = recount_stage_two(records, config, &stage_one);
        outcomes.push(PairOutcome {
            stage_one,
            stage_two,
        });
    }
    Ok(outcomes)
}

fn recount_stage_one(
    records: &[TranscriptRecord],
    config: &AuditConfig,
    pair_name: &str,
) -> Result<StageOneResult, ReportError> {
    let pair = config.pair(pair_name).expect("caller validated pair");
    let mut templates = Vec::new();
    let mut counts = StageOneCounts::default();

    for template in config.resolved_templates() {
        let mut attempts: Vec<&TranscriptRecord> = records
            .iter()
            .filter(|r| {
                r.stage == 1 && r.pair == pair_name && r.template_id == Some(template.id)
            })
            .collect();
        attempts.sort_by_key(|r| r.sample_index);

        let mut accepted = Vec::new();
        for record in &attempts {
            let parsed = classify_statement(&record.response, pair, &config.lexicon);
            match parsed.class {
                StatementClass::Stereotype | StatementClass::AntiStereotype
                    if (accepted.len() as u32) < config.samples_per_template =>
                {
                    if parsed.class == StatementClass::Stereotype {
                        counts.stereotype += 1;
                    } else {
                        counts.anti_stereotype += 1;
                    }
                    accepted.push(AcceptedStatement {
                        sample_index: record.sample_index.unwrap_or_default(),
                        parsed,
                    });
                }
                StatementClass::Stereotype | StatementClass::AntiStereotype => {}
                StatementClass::NonGendered => counts.non_gendered_discarded += 1,
                StatementClass::Unparseable => counts.unparseable_discarded += 1,
            }
        }

        let shortfall = (accepted.len() as u32) < config.samples_per_template;
        templates.push(TemplateSamples {
            template_id: template.id,
            accepted,
            attempts_used: attempts.len() as u32,
            shortfall,
        });
    }

    Ok(StageOneResult {
        pair: pair_name.to_string(),
        templates,
        counts,
    })
}

fn recount_stage_two(
    records: &[TranscriptRecord],
    config: &AuditConfig,
    stage_one: &StageOneResult,
) -> StageTwoResult {
    let mut rejudged: Vec<&TranscriptRecord> = records
        .iter()
        .filter(|r| r.stage == 2 && r.pair == stage_one.pair)
        .collect();
    rejudged.sort_by_key(|r| r.statement_index);

    let stereo_total = stage_one.s_auto();
    let mut verdicts = Vec::new();
    let mut anti_verdicts = Vec::new();
    let mut counts = StageTwoCounts::default();

    for record in rejudged {
        let statement_index = record.statement_index.unwrap_or_default();
        let class = classify_rejudgement(&record.response, &config.bias_keywords);
        let judged = RejudgedStatement {
            statement_index,
            statement: statement_of_prompt(&record.prompt).to_string(),
            class,
        };
        if statement_index < stereo_total {
            match judged.class.label {
                RejudgeLabel::Endorsed => counts.endorsed += 1,
                RejudgeLabel::Rejected => counts.rejected += 1,
                RejudgeLabel::Ambiguous => counts.ambiguous += 1,
            }
            verdicts.push(judged);
        } else {
            anti_verdicts.push(judged);
        }
    }

    StageTwoResult {
        pair: stage_one.pair.clone(),
        verdicts,
        anti_verdicts,
        counts,
    }
}

/// Recovers the statement a stage-2 prompt carried.
fn statement_of_prompt(prompt: &str) -> &str {
    prompt
        .strip_prefix(REJUDGE_INSTRUCTION)
        .map(|rest| rest.trim_start_matches('\n'))
        .unwrap_or(prompt)
}
