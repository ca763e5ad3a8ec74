//! Shared helpers for the integration and acceptance suites.

#![allow(dead_code)]

use std::sync::atomic::{AtomicU32, Ordering};

use rejudge::corpus::config::AuditConfig;
use rejudge::corpus::{builtin_lexicon, builtin_pairs};
use rejudge::prompting::render_statement;
use rejudge::provider::{
    ChatProvider, CompletionRequest, CompletionResponse, ExchangeKey, ProviderError,
};

/// Rejection text used by scripted fixtures; carries a default bias
/// keyword so it classifies as a bias-identifying rejection.
pub const SCRIPTED_REJECT: &str =
    "Wrong. This statement implies a gender stereotype and does not describe either group fairly.";

/// Counts provider calls passing through to an inner provider.
pub struct CountingProvider<P> {
    pub inner: P,
    pub calls: AtomicU32,
}

impl<P> CountingProvider<P> {
    pub fn new(inner: P) -> CountingProvider<P> {
        CountingProvider {
            inner,
            calls: AtomicU32::new(0),
        }
    }

    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: ChatProvider> ChatProvider for CountingProvider<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

/// Fails every request after a budget of successful calls, simulating an
/// interrupted run.
pub struct FlakyProvider<P> {
    pub inner: P,
    pub budget: u32,
    used: AtomicU32,
}

impl<P> FlakyProvider<P> {
    pub fn new(inner: P, budget: u32) -> FlakyProvider<P> {
        FlakyProvider {
            inner,
            budget,
            used: AtomicU32::new(0),
        }
    }
}

impl<P: ChatProvider> ChatProvider for FlakyProvider<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        let used = self.used.fetch_add(1, Ordering::SeqCst);
        if used >= self.budget {
            return Err(ProviderError::Transport {
                attempts: 1,
                last_status: Some(503),
                message: "simulated outage".to_string(),
            });
        }
        self.inner.complete(request)
    }
}

/// Transcript lines with volatile fields (timestamps, latency) removed,
/// re-serialized deterministically for comparison.
pub fn masked_transcript(path: &std::path::Path) -> Vec<String> {
    let raw = std::fs::read_to_string(path).expect("transcript readable");
    raw.lines()
        .map(|line| {
            let mut value: serde_json::Value = serde_json::from_str(line).expect("valid record");
            let map = value.as_object_mut().expect("record is an object");
            map.remove("ts");
            map.remove("latency_ms");
            serde_json::to_string(&value).expect("reserializes")
        })
        .collect()
}

/// A default-quota config for one builtin pair, backed by the stochastic
/// mock.
pub fn single_pair_config(pair_name: &str, seed: u64) -> AuditConfig {
    let mut config = AuditConfig::default();
    config.seed = seed;
    config.pairs = builtin_pairs()
        .into_iter()
        .filter(|p| p.name == pair_name)
        .collect();
    assert_eq!(config.pairs.len(), 1, "unknown builtin pair {pair_name}");
    config
}

/// Script entries reproducing one published results row end-to-end:
/// every stage-1 draw is a gendered analogy (so ten attempts fill each
/// template's quota), the first `stereo_count` of the 100 are
/// stereotype-oriented, and the first `endorse_count` verdicts endorse.
pub fn table_row_script(
    config: &AuditConfig,
    pair_name: &str,
    stereo_count: u32,
    endorse_count: u32,
) -> Vec<(String, ExchangeKey, String)> {
    let lexicon = builtin_lexicon();
    let pair = config
        .pair(pair_name)
        .expect("pair present in config")
        .clone();
    let templates = config.resolved_templates();
    let samples = config.samples_per_template;

    let mut entries = Vec::new();
    let mut global: u32 = 0;
    for template in &templates {
        for sample_index in 0..samples {
            let stereotypical = global < stereo_count;
            let target_pair = &lexicon.pairs[(global as usize) % lexicon.pairs.len()];
            let statement = render_statement(template, &pair, target_pair, stereotypical)
                .expect("builtin corpus renders");
            entries.push((
                pair_name.to_string(),
                ExchangeKey::Completion {
                    template_id: template.id,
                    sample_index,
                },
                statement,
            ));
            global += 1;
        }
    }
    for statement_index in 0..stereo_count {
        let verdict = if statement_index < endorse_count {
            "Right.".to_string()
        } else {
            SCRIPTED_REJECT.to_string()
        };
        entries.push((
            pair_name.to_string(),
            ExchangeKey::Rejudge { statement_index },
            verdict,
        ));
    }
    entries
}

/// Serializes script entries into the JSON-lines script file format.
pub fn script_to_jsonl(entries: &[(String, ExchangeKey, String)]) -> String {
    let mut out = String::new();
    for (pair, key, response) in entries {
        let line = match key {
            ExchangeKey::Completion {
                template_id,
                sample_index,
            } => serde_json::json!({
                "pair": pair,
                "stage": 1,
                "template_id": template_id,
                "sample_index": sample_index,
                "response": response,
            }),
            ExchangeKey::Rejudge { statement_index } => serde_json::json!({
                "pair": pair,
                "stage": 2,
                "statement_index": statement_index,
                "response": response,
            }),
            ExchangeKey::OpenTarget { sample_index } => serde_json::json!({
                "pair": pair,
                "stage": 0,
                "sample_index": sample_index,
                "response": response,
            }),
        };
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}
