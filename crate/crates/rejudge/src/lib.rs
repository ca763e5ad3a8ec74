//! Batch audit harness measuring the gap between a chat model's automatic
//! analogy-completion stereotypes and its own explicit judgements of the
//! very statements it produced.
//!
//! Per attribute pair the audit runs two stages. Stage 1 renders
//! open-ended analogy prompts from ten paraphrase templates, samples
//! completions until a quota of gendered statements is collected, and
//! counts the stereotypical ones (the automatic stereotype number).
//! Stage 2 feeds each stereotypical statement back to the same model for
//! a right/wrong verdict and counts endorsements (the re-judgement
//! stereotype number). The spread between the two is the re-judge
//! inconsistency reported per pair.
//!
//! Every exchange is persisted to an append-only transcript before the
//! next request, so runs are resumable, reproducible under mock
//! providers, and recountable offline after classifier changes.

pub mod classifier;
pub mod controller;
pub mod corpus;
pub mod prompting;
pub mod provider;
pub mod reporting;
mod text;

pub use classifier::{
    classify_rejudgement, classify_statement, extract_gender_targets, ParsedStatement,
    RejudgeClass, RejudgeLabel, StatementClass,
};
pub use controller::{
    run_audit, run_stage_one, run_stage_two, AuditError, PairOutcome, RunManifest, StageOneResult,
    StageTwoResult,
};
pub use corpus::config::{validate_config, AuditConfig, ConfigError, ProviderKind};
pub use corpus::{builtin_lexicon, builtin_pairs, builtin_templates};
pub use prompting::{
    render_completion_prompt, render_open_target_prompt, render_rejudge_prompt, PromptMode,
    RenderedPrompt,
};
pub use provider::{
    ChatProvider, CompletionRequest, CompletionResponse, ExchangeKey, LiveProvider, ProviderError,
    ScriptedMock, StochasticMock,
};
pub use reporting::transcript::{read_transcript, TranscriptRecord, TranscriptStore};
pub use reporting::{
    compute_row, emit_report, parse_report, recount_from_transcript, ReportFormat, ReportRow,
    StructuredReport,
};
