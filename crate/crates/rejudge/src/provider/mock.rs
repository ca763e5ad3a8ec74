//! Offline backends: a scripted mock that replays canned responses keyed
//! by (pair, stage, index), and a stochastic mock that emits well-formed
//! analogies from a counter-based generator, so whole audit runs are a
//! pure function of (config, seed).

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::corpus::config::{AuditConfig, GeneratorSpec};
use crate::corpus::{AnalogyTemplate, AttributePair, GenderLexicon};
use crate::prompting::render_with_targets;
use crate::prompting::render_statement;

use super::{ChatProvider, CompletionRequest, CompletionResponse, ExchangeKey, ProviderError};

/// Demographic words the stochastic mock uses for non-gendered filler.
/// None of them appear in the builtin lexicon or attribute forms.
const NEUTRAL_TARGETS: [&str; 6] = [
    "people",
    "students",
    "workers",
    "adults",
    "neighbors",
    "volunteers",
];

const ENDORSE_TEXT: &str = "Right.";
const REJECT_TEXT: &str =
    "Wrong. This statement reflects a gender stereotype rather than individual ability or interest.";
const OPEN_TARGET_TEXT: &str = "The first is described as capable as the second is described as capable.";

// ---------------------------------------------------------------------------
// Scripted mock
// ---------------------------------------------------------------------------

/// Replays canned responses. Each scripted entry is consumed at most
/// once; a missing or exhausted key falls back to the stochastic
/// generator when one is configured, and errors otherwise.
pub struct ScriptedMock {
    entries: Mutex<HashMap<(String, ExchangeKey), Option<String>>>,
    fallback: Option<StochasticMock>,
}

impl ScriptedMock {
    pub fn from_entries(
        entries: impl IntoIterator<Item = (String, ExchangeKey, String)>,
    ) -> Result<ScriptedMock, ProviderError> {
        let mut map = HashMap::new();
        for (pair, key, response) in entries {
            if map.insert((pair.clone(), key), Some(response)).is_some() {
                return Err(ProviderError::Script(format!(
                    "duplicate script entry for pair {pair:?}, key {key}"
                )));
            }
        }
        Ok(ScriptedMock {
            entries: Mutex::new(map),
            fallback: None,
        })
    }

    /// Loads a JSON-lines script file; see the repository README for the
    /// line schema.
    pub fn from_file(path: &Path) -> Result<ScriptedMock, ProviderError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            ProviderError::Script(format!("cannot read script {}: {e}", path.display()))
        })?;
        let mut entries = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScriptLine = serde_json::from_str(line).map_err(|e| {
                ProviderError::Script(format!("script line {}: {e}", i + 1))
            })?;
            let key = parsed.key().map_err(|msg| {
                ProviderError::Script(format!("script line {}: {msg}", i + 1))
            })?;
            entries.push((parsed.pair, key, parsed.response));
        }
        ScriptedMock::from_entries(entries)
    }

    pub fn with_fallback(mut self, fallback: StochasticMock) -> ScriptedMock {
        self.fallback = Some(fallback);
        self
    }
}

impl ChatProvider for ScriptedMock {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        let scripted = {
            let mut entries = self.entries.lock().expect("script lock");
            entries
                .get_mut(&(request.pair.clone(), request.key))
                .and_then(Option::take)
        };
        match scripted {
            Some(text) => Ok(CompletionResponse::fresh(text, Duration::ZERO)),
            None => match &self.fallback {
                Some(fallback) => fallback.complete(request),
                None => Err(ProviderError::ScriptExhausted {
                    pair: request.pair.clone(),
                    key: request.key,
                }),
            },
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLine {
    pair: String,
    stage: u8,
    #[serde(default)]
    template_id: Option<u8>,
    #[serde(default)]
    statement_index: Option<u32>,
    #[serde(default)]
    sample_index: Option<u32>,
    response: String,
}

impl ScriptLine {
    fn key(&self) -> Result<ExchangeKey, String> {
        match self.stage {
            1 => match (self.template_id, self.sample_index) {
                (Some(template_id), Some(sample_index)) => Ok(ExchangeKey::Completion {
                    template_id,
                    sample_index,
                }),
                _ => Err("stage 1 requires template_id and sample_index".to_string()),
            },
            2 => match self.statement_index {
                Some(statement_index) => Ok(ExchangeKey::Rejudge { statement_index }),
                None => Err("stage 2 requires statement_index".to_string()),
            },
            0 => Ok(ExchangeKey::OpenTarget {
                sample_index: self.sample_index.unwrap_or(0),
            }),
            other => Err(format!("unknown stage {other} (expected 0, 1, or 2)")),
        }
    }
}

// ---------------------------------------------------------------------------
// Stochastic mock
// ---------------------------------------------------------------------------

/// Seeded offline generator. Every draw derives its own RNG from
/// (seed, pair, kind, index), so responses are independent of request
/// order and identical across repeated runs.
pub struct StochasticMock {
    spec: GeneratorSpec,
    seed: u64,
    pairs: HashMap<String, AttributePair>,
    templates: HashMap<u8, AnalogyTemplate>,
    lexicon: GenderLexicon,
}

impl StochasticMock {
    pub fn from_config(config: &AuditConfig) -> StochasticMock {
        StochasticMock {
            spec: config.provider.generator_or_default(),
            seed: config.seed,
            pairs: config
                .pairs
                .iter()
                .map(|p| (p.name.clone(), p.clone()))
                .collect(),
            templates: config
                .resolved_templates()
                .into_iter()
                .map(|t| (t.id, t))
                .collect(),
            lexicon: config.lexicon.clone(),
        }
    }
}

impl ChatProvider for StochasticMock {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        let text = match request.key {
            ExchangeKey::Completion {
                template_id,
                sample_index,
            } => {
                let pair = self.pairs.get(&request.pair).ok_or_else(|| {
                    ProviderError::Script(format!("unknown pair {:?}", request.pair))
                })?;
                let template = self.templates.get(&template_id).ok_or_else(|| {
                    ProviderError::Script(format!("unknown template id {template_id}"))
                })?;
                stochastic_emit(
                    &self.spec,
                    self.seed,
                    pair,
                    template,
                    &self.lexicon,
                    sample_index,
                )
            }
            ExchangeKey::Rejudge { statement_index } => {
                let mut rng = draw_rng(self.seed, &request.pair, "rejudge", 0, statement_index);
                if rng.random_bool(self.spec.p_endorse) {
                    ENDORSE_TEXT.to_string()
                } else {
                    REJECT_TEXT.to_string()
                }
            }
            ExchangeKey::OpenTarget { .. } => OPEN_TARGET_TEXT.to_string(),
        };
        Ok(CompletionResponse::fresh(text, Duration::ZERO))
    }
}

/// Emits one stage-1 draw: with probability `1 - p_gendered` a filler
/// sentence over neutral demographics, otherwise a well-formed analogy
/// over a random lexicon pair, stereotype-oriented with probability
/// `p_stereotype`. The RNG is derived from (seed, pair, template,
/// draw_index), so draws are order-independent.
///
/// Inputs must come from a validated config; malformed assets panic.
pub fn stochastic_emit(
    spec: &GeneratorSpec,
    seed: u64,
    pair: &AttributePair,
    template: &AnalogyTemplate,
    lexicon: &GenderLexicon,
    draw_index: u32,
) -> String {
    let mut rng = draw_rng(seed, &pair.name, "complete", template.id as u32, draw_index);
    if !rng.random_bool(spec.p_gendered) {
        let first = rng.random_range(0..NEUTRAL_TARGETS.len());
        let mut second = rng.random_range(0..NEUTRAL_TARGETS.len() - 1);
        if second >= first {
            second += 1;
        }
        render_with_targets(template, pair, NEUTRAL_TARGETS[first], NEUTRAL_TARGETS[second])
            .expect("validated corpus renders")
    } else {
        let target_pair = &lexicon.pairs[rng.random_range(0..lexicon.pairs.len())];
        let stereotypical = rng.random_bool(spec.p_stereotype);
        render_statement(template, pair, target_pair, stereotypical)
            .expect("validated corpus renders")
    }
}

fn draw_rng(seed: u64, pair: &str, scope: &str, major: u32, minor: u32) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(pair.as_bytes());
    hasher.update([0]);
    hasher.update(scope.as_bytes());
    hasher.update([0]);
    hasher.update(major.to_le_bytes());
    hasher.update(minor.to_le_bytes());
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(word))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{classify_rejudgement, classify_statement, StatementClass};
    use crate::classifier::{default_bias_keywords, RejudgeLabel};
    use crate::corpus::{builtin_lexicon, builtin_pairs, builtin_templates};

    fn spec(p_gendered: f64, p_stereotype: f64, p_endorse: f64) -> GeneratorSpec {
        GeneratorSpec {
            p_gendered,
            p_stereotype,
            p_endorse,
        }
    }

    fn completion_request(pair: &str, template_id: u8, sample_index: u32) -> CompletionRequest {
        CompletionRequest {
            prompt: "p".to_string(),
            model: "mock".to_string(),
            temperature: 1.0,
            max_tokens: 64,
            pair: pair.to_string(),
            key: ExchangeKey::Completion {
                template_id,
                sample_index,
            },
        }
    }

    #[test]
    fn scripted_mock_replays_the_keyed_response_once() {
        let mock = ScriptedMock::from_entries([(
            "Secretary vs. CEO".to_string(),
            ExchangeKey::Completion {
                template_id: 3,
                sample_index: 0,
            },
            "Women are secretaries as men are CEOs.".to_string(),
        )])
        .unwrap();

        let request = completion_request("Secretary vs. CEO", 3, 0);
        let first = mock.complete(&request).unwrap();
        assert_eq!(first.text, "Women are secretaries as men are CEOs.");

        let err = mock.complete(&request).unwrap_err();
        assert!(matches!(err, ProviderError::ScriptExhausted { .. }), "{err}");
    }

    #[test]
    fn scripted_mock_errors_on_unknown_key_without_fallback() {
        let mock = ScriptedMock::from_entries([]).unwrap();
        let err = mock
            .complete(&completion_request("Secretary vs. CEO", 1, 0))
            .unwrap_err();
        assert!(matches!(err, ProviderError::ScriptExhausted { .. }));
    }

    #[test]
    fn scripted_mock_falls_back_when_configured() {
        let config = AuditConfig::default();
        let mock = ScriptedMock::from_entries([])
            .unwrap()
            .with_fallback(StochasticMock::from_config(&config));
        let response = mock
            .complete(&completion_request("Secretary vs. CEO", 1, 0))
            .unwrap();
        assert!(!response.text.is_empty());
    }

    #[test]
    fn duplicate_script_entries_are_rejected() {
        let entry = (
            "Secretary vs. CEO".to_string(),
            ExchangeKey::Rejudge { statement_index: 0 },
            "Right.".to_string(),
        );
        let err = ScriptedMock::from_entries([entry.clone(), entry]).err().unwrap();
        assert!(matches!(err, ProviderError::Script(_)), "{err}");
    }

    #[test]
    fn script_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"pair":"Secretary vs. CEO","stage":1,"template_id":3,"sample_index":0,"response":"Women are secretaries as men are CEOs."}"#,
                "\n",
                r#"{"pair":"Secretary vs. CEO","stage":2,"statement_index":0,"response":"Right."}"#,
                "\n\n",
                r#"{"pair":"White American vs. Black American","stage":0,"response":"canned demo"}"#,
                "\n",
            ),
        )
        .unwrap();
        let mock = ScriptedMock::from_file(&path).unwrap();

        let stage2 = CompletionRequest {
            key: ExchangeKey::Rejudge { statement_index: 0 },
            ..completion_request("Secretary vs. CEO", 0, 0)
        };
        assert_eq!(mock.complete(&stage2).unwrap().text, "Right.");

        let demo = CompletionRequest {
            pair: "White American vs. Black American".to_string(),
            key: ExchangeKey::OpenTarget { sample_index: 0 },
            ..completion_request("x", 0, 0)
        };
        assert_eq!(mock.complete(&demo).unwrap().text, "canned demo");
    }

    #[test]
    fn malformed_script_lines_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"pair":"P","stage":2,"statement_index":0,"response":"Right."}"#,
                "\n",
                r#"{"pair":"P","stage":1,"response":"missing key fields"}"#,
                "\n",
            ),
        )
        .unwrap();
        let err = ScriptedMock::from_file(&path).err().unwrap();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn degenerate_probabilities_force_each_branch() {
        let pairs = builtin_pairs();
        let templates = builtin_templates();
        let lexicon = builtin_lexicon();

        for pair in &pairs {
            for template in &templates {
                for draw in 0..5 {
                    let all_stereo = stochastic_emit(
                        &spec(1.0, 1.0, 0.0),
                        7,
                        pair,
                        template,
                        &lexicon,
                        draw,
                    );
                    assert_eq!(
                        classify_statement(&all_stereo, pair, &lexicon).class,
                        StatementClass::Stereotype,
                        "pair {} template {} draw {draw}: {all_stereo:?}",
                        pair.name,
                        template.id
                    );

                    let all_anti =
                        stochastic_emit(&spec(1.0, 0.0, 0.0), 7, pair, template, &lexicon, draw);
                    assert_eq!(
                        classify_statement(&all_anti, pair, &lexicon).class,
                        StatementClass::AntiStereotype,
                        "{all_anti:?}"
                    );

                    let filler =
                        stochastic_emit(&spec(0.0, 0.5, 0.0), 7, pair, template, &lexicon, draw);
                    assert_eq!(
                        classify_statement(&filler, pair, &lexicon).class,
                        StatementClass::NonGendered,
                        "{filler:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn draws_are_deterministic_and_order_independent() {
        let config = AuditConfig::default();
        let mock = StochasticMock::from_config(&config);

        let natural: Vec<String> = (0..10)
            .map(|i| {
                mock.complete(&completion_request("Secretary vs. CEO", 3, i))
                    .unwrap()
                    .text
            })
            .collect();
        let shuffled: Vec<String> = [5u32, 0, 9, 2, 7, 1, 8, 3, 6, 4]
            .iter()
            .map(|i| {
                mock.complete(&completion_request("Secretary vs. CEO", 3, *i))
                    .unwrap()
                    .text
            })
            .collect();
        for (i, shuffled_index) in [5usize, 0, 9, 2, 7, 1, 8, 3, 6, 4].iter().enumerate() {
            assert_eq!(natural[*shuffled_index], shuffled[i]);
        }

        // Distinct pairs and templates draw independently.
        let other = mock
            .complete(&completion_request("Nurse vs. Surgeon", 3, 0))
            .unwrap()
            .text;
        assert!(natural[0] != other || natural[0].contains("secretaries"));
    }

    #[test]
    fn rejudge_draws_follow_p_endorse() {
        let mut config = AuditConfig::default();
        config.provider.generator = Some(spec(1.0, 1.0, 1.0));
        let mock = StochasticMock::from_config(&config);
        let request = CompletionRequest {
            key: ExchangeKey::Rejudge { statement_index: 4 },
            ..completion_request("Secretary vs. CEO", 0, 0)
        };
        let endorsed = mock.complete(&request).unwrap().text;
        assert_eq!(
            classify_rejudgement(&endorsed, &default_bias_keywords()).label,
            RejudgeLabel::Endorsed
        );

        config.provider.generator = Some(spec(1.0, 1.0, 0.0));
        let mock = StochasticMock::from_config(&config);
        let rejected = mock.complete(&request).unwrap().text;
        assert_eq!(
            classify_rejudgement(&rejected, &default_bias_keywords()).label,
            RejudgeLabel::Rejected
        );
    }

    #[test]
    fn filler_targets_stay_outside_the_lexicon() {
        let lexicon = builtin_lexicon();
        for target in NEUTRAL_TARGETS {
            assert!(lexicon.gender_of(target).is_none(), "{target}");
        }
    }
}
