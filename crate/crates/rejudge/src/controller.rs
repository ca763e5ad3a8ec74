//! Two-stage orchestration per attribute pair.
//!
//! Stage 1 samples completions per template until the gendered-statement
//! quota is met (or attempts run out), classifying and persisting every
//! exchange before the next request. Stage 2 re-judges each stereotypical
//! statement verbatim. Persisted exchanges are replayed from the
//! transcript instead of re-requested, which makes interrupted runs
//! resumable and completed pairs free to re-execute.

use std::path::Path;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    classify_rejudgement, classify_statement, ParsedStatement, RejudgeClass, RejudgeLabel,
    StatementClass,
};
use crate::corpus::config::AuditConfig;
use crate::corpus::AttributePair;
use crate::prompting::{render_completion_prompt, render_rejudge_prompt, PromptMode, RenderError};
use crate::provider::{ChatProvider, CompletionRequest, ExchangeKey, ProviderError};
use crate::reporting::transcript::{
    RecordClass, TranscriptError, TranscriptRecord, TranscriptStore,
};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("output directory holds a run with config hash {recorded}, but the current config hashes to {current}; use a fresh directory or restore the original config")]
    ConfigMismatch { recorded: String, current: String },
    #[error("cannot access manifest {path}: {message}")]
    Manifest { path: String, message: String },
}

// ---------------------------------------------------------------------------
// Stage results
// ---------------------------------------------------------------------------

/// One accepted (gendered) statement with its sampling provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptedStatement {
    /// Attempt number within the template that produced it.
    pub sample_index: u32,
    pub parsed: ParsedStatement,
}

/// Per-template sampling outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSamples {
    pub template_id: u8,
    pub accepted: Vec<AcceptedStatement>,
    pub attempts_used: u32,
    /// True when attempts ran out before the quota was met.
    pub shortfall: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageOneCounts {
    pub stereotype: u32,
    pub anti_stereotype: u32,
    pub non_gendered_discarded: u32,
    pub unparseable_discarded: u32,
}

/// Stage-1 outcome for one pair; `counts.stereotype` is the automatic
/// stereotype number.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOneResult {
    pub pair: String,
    pub templates: Vec<TemplateSamples>,
    pub counts: StageOneCounts,
}

impl StageOneResult {
    pub fn s_auto(&self) -> u32 {
        self.counts.stereotype
    }

    pub fn accepted_total(&self) -> u32 {
        self.counts.stereotype + self.counts.anti_stereotype
    }

    pub fn attempts_total(&self) -> u32 {
        self.templates.iter().map(|t| t.attempts_used).sum()
    }

    pub fn any_shortfall(&self) -> bool {
        self.templates.iter().any(|t| t.shortfall)
    }

    /// Accepted statements of one class, in template-then-sample order —
    /// the order stage 2 re-judges them in.
    pub fn statements_of(&self, class: StatementClass) -> Vec<&str> {
        self.templates
            .iter()
            .flat_map(|t| t.accepted.iter())
            .filter(|a| a.parsed.class == class)
            .map(|a| {
                a.parsed
                    .statement
                    .as_deref()
                    .expect("accepted statements carry a sentence")
            })
            .collect()
    }

    /// Number of distinct accepted statement strings; duplicates are
    /// accepted toward the quota but worth surfacing.
    pub fn distinct_accepted(&self) -> usize {
        let mut seen: Vec<&str> = self
            .templates
            .iter()
            .flat_map(|t| t.accepted.iter())
            .filter_map(|a| a.parsed.statement.as_deref())
            .collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

/// One re-judged statement.
#[derive(Debug, Clone, PartialEq)]
pub struct RejudgedStatement {
    pub statement_index: u32,
    pub statement: String,
    pub class: RejudgeClass,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageTwoCounts {
    pub endorsed: u32,
    pub rejected: u32,
    pub ambiguous: u32,
}

/// Stage-2 outcome for one pair; `counts.endorsed` is the re-judgement
/// stereotype number. Anti-stereotype verdicts (optional symmetry mode)
/// are kept apart and never counted.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTwoResult {
    pub pair: String,
    pub verdicts: Vec<RejudgedStatement>,
    pub anti_verdicts: Vec<RejudgedStatement>,
    pub counts: StageTwoCounts,
}

impl StageTwoResult {
    pub fn s_rejudge(&self) -> u32 {
        self.counts.endorsed
    }
}

/// Both stages for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub stage_one: StageOneResult,
    pub stage_two: StageTwoResult,
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Pending,
    StageOneDone,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairProgress {
    pub pair: String,
    pub status: PairStatus,
}

/// Run bookkeeping persisted next to the transcript. The config hash
/// covers every protocol-affecting field, so resuming under a changed
/// protocol is refused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    /// Hash covering the protocol plus report-only knobs (bias keywords,
    /// bold threshold); a replay under a different analysis hash is
    /// flagged in the report.
    pub analysis_hash: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub pairs: Vec<PairProgress>,
}

impl RunManifest {
    pub fn new(config: &AuditConfig) -> RunManifest {
        RunManifest {
            run_id: config.run_id(),
            config_hash: config.protocol_hash(),
            analysis_hash: config.analysis_hash(),
            seed: config.seed,
            started_at: now_rfc3339(),
            finished_at: None,
            pairs: config
                .pairs
                .iter()
                .map(|p| PairProgress {
                    pair: p.name.clone(),
                    status: PairStatus::Pending,
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Option<RunManifest>, AuditError> {
        if !path.exists() {
            return Ok(None);
        }
        let raw = std::fs::read_to_string(path).map_err(|e| AuditError::Manifest {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&raw)
            .map(Some)
            .map_err(|e| AuditError::Manifest {
                path: path.display().to_string(),
                message: e.to_string(),
            })
    }

    pub fn save(&self, path: &Path) -> Result<(), AuditError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json).map_err(|e| AuditError::Manifest {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn completed_pairs(&self) -> usize {
        self.pairs
            .iter()
            .filter(|p| p.status == PairStatus::Complete)
            .count()
    }

    pub fn is_complete(&self) -> bool {
        self.finished_at.is_some()
            && self.pairs.iter().all(|p| p.status == PairStatus::Complete)
    }

    fn set_status(&mut self, pair: &str, status: PairStatus) {
        if let Some(entry) = self.pairs.iter_mut().find(|p| p.pair == pair) {
            entry.status = status;
        }
    }
}

fn now_rfc3339() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

// ---------------------------------------------------------------------------
// Stage execution
// ---------------------------------------------------------------------------

/// Issues one exchange, replaying from the transcript when the key is
/// already persisted. Fresh exchanges are classified and appended before
/// this returns.
#[allow(clippy::too_many_arguments)]
fn exchange(
    config: &AuditConfig,
    provider: &dyn ChatProvider,
    store: &mut TranscriptStore,
    pair_name: &str,
    key: ExchangeKey,
    prompt: &str,
    temperature: f64,
    classify: impl FnOnce(&str) -> RecordClass,
) -> Result<(String, bool), AuditError> {
    if let Some(record) = store.lookup(pair_name, &key) {
        return Ok((record.response.clone(), true));
    }
    let request = CompletionRequest {
        prompt: prompt.to_string(),
        model: config.provider.model.clone(),
        temperature,
        max_tokens: config.provider.max_tokens,
        pair: pair_name.to_string(),
        key,
    };
    let response = provider.complete(&request)?;
    let class = classify(&response.text);
    store.append(TranscriptRecord::new(
        &config.run_id(),
        pair_name,
        key,
        request.prompt,
        response.text.clone(),
        class,
        now_rfc3339(),
        response.latency.as_millis() as u64,
    ))?;
    Ok((response.text, false))
}

/// Stage 1 for one pair: per template, request completions until
/// `samples_per_template` gendered statements are accepted or
/// `max_attempts_per_template` is reached. Every exchange is persisted
/// before the next request; quota shortfalls are flagged, not fatal.
pub fn run_stage_one(
    pair: &AttributePair,
    config: &AuditConfig,
    provider: &dyn ChatProvider,
    store: &mut TranscriptStore,
) -> Result<StageOneResult, AuditError> {
    let mut templates = Vec::new();
    let mut counts = StageOneCounts::default();

    for template in config.resolved_templates() {
        let prompt = render_completion_prompt(&template, pair, PromptMode::FillTargets)?;
        let mut accepted = Vec::new();
        let mut attempts: u32 = 0;

        while (accepted.len() as u32) < config.samples_per_template
            && attempts < config.max_attempts_per_template
        {
            let key = ExchangeKey::Completion {
                template_id: template.id,
                sample_index: attempts,
            };
            let (response, _replayed) = exchange(
                config,
                provider,
                store,
                &pair.name,
                key,
                &prompt.text,
                config.provider.temperature_stage_one,
                |text| RecordClass::Statement {
                    class: classify_statement(text, pair, &config.lexicon).class,
                },
            )?;
            let parsed = classify_statement(&response, pair, &config.lexicon);
            match parsed.class {
                StatementClass::Stereotype => {
                    counts.stereotype += 1;
                    accepted.push(AcceptedStatement {
                        sample_index: attempts,
                        parsed,
                    });
                }
                StatementClass::AntiStereotype => {
                    counts.anti_stereotype += 1;
                    accepted.push(AcceptedStatement {
                        sample_index: attempts,
                        parsed,
                    });
                }
                StatementClass::NonGendered => counts.non_gendered_discarded += 1,
                StatementClass::Unparseable => counts.unparseable_discarded += 1,
            }
            attempts += 1;
        }

        let shortfall = (accepted.len() as u32) < config.samples_per_template;
        if shortfall {
            log::warn!(
                "{} template {}: quota shortfall ({} of {} after {} attempts)",
                pair.name,
                template.id,
                accepted.len(),
                config.samples_per_template,
                attempts
            );
        }
        templates.push(TemplateSamples {
            template_id: template.id,
            accepted,
            attempts_used: attempts,
            shortfall,
        });
    }

    let result = StageOneResult {
        pair: pair.name.clone(),
        templates,
        counts,
    };
    log::info!(
        "{}: stage 1 accepted {} ({} distinct), stereotype {}, anti {}, discarded {}+{}",
        pair.name,
        result.accepted_total(),
        result.distinct_accepted(),
        counts.stereotype,
        counts.anti_stereotype,
        counts.non_gendered_discarded,
        counts.unparseable_discarded,
    );
    Ok(result)
}

/// Stage 2 for one pair: re-judge every stereotypical statement, verbatim
/// and in collection order. Anti-stereotype statements are included only
/// when the config asks for the symmetry study, and their verdicts stay
/// out of the counts.
pub fn run_stage_two(
    stage_one: &StageOneResult,
    config: &AuditConfig,
    provider: &dyn ChatProvider,
    store: &mut TranscriptStore,
) -> Result<StageTwoResult, AuditError> {
    let stereo: Vec<String> = stage_one
        .statements_of(StatementClass::Stereotype)
        .into_iter()
        .map(str::to_string)
        .collect();
    let anti: Vec<String> = if config.rejudge_anti_stereotypes {
        stage_one
            .statements_of(StatementClass::AntiStereotype)
            .into_iter()
            .map(str::to_string)
            .collect()
    } else {
        Vec::new()
    };

    let mut verdicts = Vec::new();
    let mut anti_verdicts = Vec::new();
    let mut counts = StageTwoCounts::default();

    for (i, statement) in stereo.iter().chain(anti.iter()).enumerate() {
        let statement_index = i as u32;
        let key = ExchangeKey::Rejudge { statement_index };
        let prompt = render_rejudge_prompt(statement)?;
        let (response, _replayed) = exchange(
            config,
            provider,
            store,
            &stage_one.pair,
            key,
            &prompt.text,
            config.provider.temperature_stage_two,
            |text| RecordClass::rejudge(&classify_rejudgement(text, &config.bias_keywords)),
        )?;
        let class = classify_rejudgement(&response, &config.bias_keywords);
        let judged = RejudgedStatement {
            statement_index,
            statement: statement.clone(),
            class,
        };
        if (statement_index as usize) < stereo.len() {
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

    log::info!(
        "{}: stage 2 endorsed {}, rejected {}, ambiguous {}",
        stage_one.pair,
        counts.endorsed,
        counts.rejected,
        counts.ambiguous,
    );
    Ok(StageTwoResult {
        pair: stage_one.pair.clone(),
        verdicts,
        anti_verdicts,
        counts,
    })
}

/// Runs both stages for every configured pair. On restart with the same
/// output directory, persisted exchanges replay from the transcript with
/// zero provider calls and execution continues at the first missing one.
pub fn run_audit(
    config: &AuditConfig,
    provider: &dyn ChatProvider,
    store: &mut TranscriptStore,
) -> Result<Vec<PairOutcome>, AuditError> {
    let manifest_path = store.manifest_path();
    let mut manifest = match RunManifest::load(&manifest_path)? {
        Some(existing) => {
            let current = config.protocol_hash();
            if existing.config_hash != current {
                return Err(AuditError::ConfigMismatch {
                    recorded: existing.config_hash,
                    current,
                });
            }
            existing
        }
        None => RunManifest::new(config),
    };
    manifest.save(&manifest_path)?;

    if !store.is_empty() {
        log::info!(
            "resuming run {}: {} persisted exchange(s) replay without provider calls",
            manifest.run_id,
            store.records().len()
        );
    }

    let mut outcomes = Vec::new();
    for pair in &config.pairs {
        let stage_one = run_stage_one(pair, config, provider, store)?;
        manifest.set_status(&pair.name, PairStatus::StageOneDone);
        manifest.save(&manifest_path)?;

        let stage_two = run_stage_two(&stage_one, config, provider, store)?;
        manifest.set_status(&pair.name, PairStatus::Complete);
        manifest.save(&manifest_path)?;

        outcomes.push(PairOutcome {
            stage_one,
            stage_two,
        });
    }

    if manifest.finished_at.is_none() {
        manifest.finished_at = Some(now_rfc3339());
    }
    manifest.save(&manifest_path)?;
    Ok(outcomes)
}
