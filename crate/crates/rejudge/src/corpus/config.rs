//! Audit configuration: defaults, TOML loading, and validation.
//!
//! A config file only needs the fields it overrides; pairs, lexicon,
//! templates, and bias keywords all default to the builtin assets.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::default_bias_keywords;
use crate::corpus::{
    builtin_lexicon, builtin_pairs, builtin_templates, AnalogyTemplate, Attribute, AttributePair,
    GenderLexicon, GenderPair, SLOT_MARKERS,
};
use crate::text;

pub const DEFAULT_SAMPLES_PER_TEMPLATE: u32 = 10;
pub const DEFAULT_MAX_ATTEMPTS_PER_TEMPLATE: u32 = 50;
pub const DEFAULT_BOLD_THRESHOLD: u32 = 90;
pub const DEFAULT_SEED: u64 = 0;

/// Which backend serves chat completions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    /// HTTP chat-completions endpoint.
    Live,
    /// Canned responses keyed by (pair, stage, index) from a script file.
    MockScripted,
    /// Seeded generator emitting analogy completions and verdicts.
    MockStochastic,
}

impl ProviderKind {
    pub fn parse(s: &str) -> Option<ProviderKind> {
        match s {
            "live" => Some(ProviderKind::Live),
            "mock-scripted" => Some(ProviderKind::MockScripted),
            "mock-stochastic" => Some(ProviderKind::MockStochastic),
            _ => None,
        }
    }
}

/// Emission probabilities for the stochastic mock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// Probability a stage-1 draw is a gendered analogy rather than filler.
    pub p_gendered: f64,
    /// Probability a gendered draw is stereotype-oriented.
    pub p_stereotype: f64,
    /// Probability a stage-2 verdict endorses the statement.
    pub p_endorse: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            p_gendered: 0.95,
            p_stereotype: 0.9,
            p_endorse: 0.0,
        }
    }
}

/// Backend settings shared by all provider kinds.
///
/// Stage 1 defaults to temperature 1.0 (diverse completions are needed to
/// fill the per-template quota) and stage 2 to 0.0 (verdicts should be
/// modal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSettings {
    pub kind: ProviderKind,
    pub model: String,
    pub temperature_stage_one: f64,
    pub temperature_stage_two: f64,
    pub max_tokens: u32,
    /// Base URL of the chat-completions endpoint (live only).
    pub base_url: String,
    /// Name of the environment variable holding the bearer token. The key
    /// itself never appears in config files or transcripts.
    pub api_key_env: String,
    pub requests_per_minute: u32,
    pub max_retries: u32,
    pub retry_initial_ms: u64,
    /// Script file for [`ProviderKind::MockScripted`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<PathBuf>,
    /// Generator probabilities. The stochastic mock falls back to
    /// [`GeneratorSpec::default`] when omitted; for the scripted mock an
    /// explicit generator enables stochastic fallback on unscripted keys,
    /// and omitting it makes unscripted keys an error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        ProviderSettings {
            kind: ProviderKind::MockStochastic,
            model: "gpt-4".to_string(),
            temperature_stage_one: 1.0,
            temperature_stage_two: 0.0,
            max_tokens: 256,
            base_url: "https://api.openai.com/v1".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            requests_per_minute: 60,
            max_retries: 5,
            retry_initial_ms: 500,
            script_path: None,
            generator: None,
        }
    }
}

impl ProviderSettings {
    pub fn generator_or_default(&self) -> GeneratorSpec {
        self.generator.clone().unwrap_or_default()
    }
}

/// A fully resolved audit configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditConfig {
    pub pairs: Vec<AttributePair>,
    pub lexicon: GenderLexicon,
    /// Builtin template ids to use, in execution order.
    pub templates: Vec<u8>,
    pub samples_per_template: u32,
    pub max_attempts_per_template: u32,
    pub bold_threshold: u32,
    pub seed: u64,
    pub bias_keywords: Vec<String>,
    /// Also re-judge anti-stereotype statements (reported separately,
    /// never counted toward the endorsement number).
    pub rejudge_anti_stereotypes: bool,
    pub provider: ProviderSettings,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            pairs: builtin_pairs(),
            lexicon: builtin_lexicon(),
            templates: (1..=10).collect(),
            samples_per_template: DEFAULT_SAMPLES_PER_TEMPLATE,
            max_attempts_per_template: DEFAULT_MAX_ATTEMPTS_PER_TEMPLATE,
            bold_threshold: DEFAULT_BOLD_THRESHOLD,
            seed: DEFAULT_SEED,
            bias_keywords: default_bias_keywords(),
            rejudge_anti_stereotypes: false,
            provider: ProviderSettings::default(),
        }
    }
}

impl AuditConfig {
    /// Loads, resolves defaults, and validates a TOML config file.
    /// A relative `provider.script_path` is resolved against the config
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<AuditConfig, ConfigError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        let mut config = AuditConfig::from_toml_str(&raw)?;
        if let Some(script) = config.provider.script_path.take() {
            let resolved = if script.is_relative() {
                path.parent().unwrap_or(Path::new(".")).join(script)
            } else {
                script
            };
            config.provider.script_path = Some(resolved);
        }
        validate_config(config)
    }

    /// Parses TOML and applies defaults; does not validate.
    pub fn from_toml_str(raw: &str) -> Result<AuditConfig, ConfigError> {
        let file: ConfigFile = toml::from_str(raw).map_err(|e| ConfigError::Parse(e.to_string()))?;
        file.resolve()
    }

    /// The builtin templates selected by this config, in config order.
    /// Unknown ids are skipped here; validation rejects them.
    pub fn resolved_templates(&self) -> Vec<AnalogyTemplate> {
        let builtin = builtin_templates();
        self.templates
            .iter()
            .filter_map(|id| builtin.iter().find(|t| t.id == *id).cloned())
            .collect()
    }

    pub fn pair(&self, name: &str) -> Option<&AttributePair> {
        self.pairs.iter().find(|p| p.name == name)
    }

    /// Hash over every protocol-affecting field: anything that changes
    /// which prompts are issued, in what order, or how completions are
    /// generated. Report-only knobs (bold threshold) and transport knobs
    /// (endpoint URL, rate limits, retries) are excluded, as is the bias
    /// keyword list, which reclassifies stored responses without altering
    /// the exchange sequence.
    pub fn protocol_hash(&self) -> String {
        #[derive(Serialize)]
        struct ProtocolView<'a> {
            pairs: &'a [AttributePair],
            lexicon: &'a GenderLexicon,
            templates: &'a [u8],
            samples_per_template: u32,
            max_attempts_per_template: u32,
            seed: u64,
            rejudge_anti_stereotypes: bool,
            provider_kind: ProviderKind,
            model: &'a str,
            temperature_stage_one: f64,
            temperature_stage_two: f64,
            max_tokens: u32,
            script_path: Option<&'a Path>,
            generator: Option<&'a GeneratorSpec>,
        }
        let view = ProtocolView {
            pairs: &self.pairs,
            lexicon: &self.lexicon,
            templates: &self.templates,
            samples_per_template: self.samples_per_template,
            max_attempts_per_template: self.max_attempts_per_template,
            seed: self.seed,
            rejudge_anti_stereotypes: self.rejudge_anti_stereotypes,
            provider_kind: self.provider.kind,
            model: &self.provider.model,
            temperature_stage_one: self.provider.temperature_stage_one,
            temperature_stage_two: self.provider.temperature_stage_two,
            max_tokens: self.provider.max_tokens,
            script_path: self.provider.script_path.as_deref(),
            generator: self.provider.generator.as_ref(),
        };
        let json = serde_json::to_vec(&view).expect("protocol view serializes");
        let mut hasher = Sha256::new();
        hasher.update(&json);
        hex(&hasher.finalize())
    }

    /// Stable run identifier derived from the protocol hash.
    pub fn run_id(&self) -> String {
        self.protocol_hash()[..12].to_string()
    }

    /// Hash over everything that shapes report rows: the protocol plus
    /// the report-only knobs (bias keywords, bold threshold). Replaying a
    /// transcript under a config with a different analysis hash gets a
    /// provenance note in the report.
    pub fn analysis_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.protocol_hash().as_bytes());
        for keyword in &self.bias_keywords {
            hasher.update([0]);
            hasher.update(keyword.as_bytes());
        }
        hasher.update(self.bold_threshold.to_le_bytes());
        hex(&hasher.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// One validation failure with a path to the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Checks every invariant and returns the config unchanged when all hold;
/// otherwise reports every violation at once. Idempotent.
pub fn validate_config(config: AuditConfig) -> Result<AuditConfig, ConfigError> {
    let mut violations = Vec::new();
    fn push(violations: &mut Vec<Violation>, path: &str, message: String) {
        violations.push(Violation {
            path: path.to_string(),
            message,
        });
    }

    if config.samples_per_template < 1 {
        push(
            &mut violations,
            "samples_per_template",
            "samples_per_template must be ≥ 1".to_string(),
        );
    }
    if config.max_attempts_per_template < 1 {
        push(
            &mut violations,
            "max_attempts_per_template",
            "must be ≥ 1".to_string(),
        );
    }
    if config.samples_per_template > config.max_attempts_per_template {
        push(
            &mut violations,
            "samples_per_template",
            format!(
                "must not exceed max_attempts_per_template ({} > {})",
                config.samples_per_template, config.max_attempts_per_template
            ),
        );
    }

    if config.templates.is_empty() {
        push(
            &mut violations,
            "templates",
            "at least one template id is required".to_string(),
        );
    }
    let builtin_ids: Vec<u8> = builtin_templates().iter().map(|t| t.id).collect();
    for (i, id) in config.templates.iter().enumerate() {
        if !builtin_ids.contains(id) {
            violations.push(Violation {
                path: format!("templates[{i}]"),
                message: format!("unknown template id {id} (builtin ids are 1..=10)"),
            });
        }
        if config.templates[..i].contains(id) {
            violations.push(Violation {
                path: format!("templates[{i}]"),
                message: format!("duplicate template id {id}"),
            });
        }
    }

    if config.pairs.is_empty() {
        push(
            &mut violations,
            "pairs",
            "at least one attribute pair is required".to_string(),
        );
    }
    for (i, pair) in config.pairs.iter().enumerate() {
        validate_pair(i, pair, &mut violations);
        if config.pairs[..i].iter().any(|p| p.name == pair.name) {
            violations.push(Violation {
                path: format!("pairs[{i}].name"),
                message: format!("duplicate pair name {:?}", pair.name),
            });
        }
    }

    validate_lexicon(&config.lexicon, &mut violations);

    if config.bias_keywords.is_empty() {
        violations.push(Violation {
            path: "classifier.bias_keywords".to_string(),
            message: "at least one bias keyword is required".to_string(),
        });
    }
    for (i, kw) in config.bias_keywords.iter().enumerate() {
        if kw.trim().is_empty() {
            violations.push(Violation {
                path: format!("classifier.bias_keywords[{i}]"),
                message: "keyword must be nonempty".to_string(),
            });
        }
    }

    validate_provider(&config.provider, &mut violations);

    if violations.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError::Invalid(violations))
    }
}

fn validate_pair(index: usize, pair: &AttributePair, violations: &mut Vec<Violation>) {
    let base = format!("pairs[{index}]");
    if pair.name.trim().is_empty() {
        violations.push(Violation {
            path: format!("{base}.name"),
            message: "pair name must be nonempty".to_string(),
        });
    }
    for (side, attr) in [("female", &pair.female_assoc), ("male", &pair.male_assoc)] {
        for (j, form) in attr.surface_forms().iter().enumerate() {
            let path = format!("{base}.{side}.surface_forms[{j}]");
            if form.trim().is_empty() {
                violations.push(Violation {
                    path,
                    message: "surface form must be nonempty".to_string(),
                });
                continue;
            }
            for marker in SLOT_MARKERS {
                if text::contains_whole_word(form, marker.encode_utf8(&mut [0; 4])) {
                    violations.push(Violation {
                        path: path.clone(),
                        message: format!("surface form {form:?} contains slot marker {marker}"),
                    });
                }
            }
        }
    }
    for f in pair.female_assoc.surface_forms() {
        for m in pair.male_assoc.surface_forms() {
            if f.eq_ignore_ascii_case(m) {
                violations.push(Violation {
                    path: base.clone(),
                    message: format!(
                        "female and male attributes share surface form {f:?}; forms must be disjoint"
                    ),
                });
            }
        }
    }
}

fn validate_lexicon(lexicon: &GenderLexicon, violations: &mut Vec<Violation>) {
    if lexicon.pairs.is_empty() {
        violations.push(Violation {
            path: "lexicon.pairs".to_string(),
            message: "at least one gender pair is required".to_string(),
        });
    }
    let mut seen: Vec<(String, usize)> = Vec::new();
    for (i, pair) in lexicon.pairs.iter().enumerate() {
        for word in [&pair.female, &pair.male] {
            let path = format!("lexicon.pairs[{i}]");
            if word.trim().is_empty() {
                violations.push(Violation {
                    path,
                    message: "lexicon word must be nonempty".to_string(),
                });
                continue;
            }
            let lower = word.to_ascii_lowercase();
            if let Some((_, first)) = seen.iter().find(|(w, _)| *w == lower) {
                violations.push(Violation {
                    path,
                    message: format!(
                        "word {word:?} already appears in lexicon.pairs[{first}]"
                    ),
                });
            } else {
                seen.push((lower, i));
            }
        }
    }
}

fn validate_provider(provider: &ProviderSettings, violations: &mut Vec<Violation>) {
    if provider.model.trim().is_empty() {
        violations.push(Violation {
            path: "provider.model".to_string(),
            message: "model name must be nonempty".to_string(),
        });
    }
    for (path, temp) in [
        ("provider.temperature_stage_one", provider.temperature_stage_one),
        ("provider.temperature_stage_two", provider.temperature_stage_two),
    ] {
        if temp.is_nan() || temp < 0.0 {
            violations.push(Violation {
                path: path.to_string(),
                message: format!("temperature must be ≥ 0, got {temp}"),
            });
        }
    }
    if provider.max_tokens < 1 {
        violations.push(Violation {
            path: "provider.max_tokens".to_string(),
            message: "must be ≥ 1".to_string(),
        });
    }
    if provider.requests_per_minute < 1 {
        violations.push(Violation {
            path: "provider.requests_per_minute".to_string(),
            message: "must be ≥ 1".to_string(),
        });
    }
    match provider.kind {
        ProviderKind::Live => {
            if provider.base_url.trim().is_empty() {
                violations.push(Violation {
                    path: "provider.base_url".to_string(),
                    message: "live provider requires a base URL".to_string(),
                });
            }
            if provider.api_key_env.trim().is_empty() {
                violations.push(Violation {
                    path: "provider.api_key_env".to_string(),
                    message: "live provider requires an API key environment variable name"
                        .to_string(),
                });
            }
        }
        ProviderKind::MockScripted => {
            if provider.script_path.is_none() {
                violations.push(Violation {
                    path: "provider.script_path".to_string(),
                    message: "scripted mock requires a script file path".to_string(),
                });
            }
        }
        ProviderKind::MockStochastic => {
            let spec = provider.generator_or_default();
            for (name, p) in [
                ("p_gendered", spec.p_gendered),
                ("p_stereotype", spec.p_stereotype),
                ("p_endorse", spec.p_endorse),
            ] {
                if !(0.0..=1.0).contains(&p) {
                    violations.push(Violation {
                        path: format!("provider.generator.{name}"),
                        message: format!("probability must be in [0, 1], got {p}"),
                    });
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// TOML schema
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    samples_per_template: Option<u32>,
    max_attempts_per_template: Option<u32>,
    bold_threshold: Option<u32>,
    templates: Option<Vec<u8>>,
    provider: Option<ProviderFile>,
    pairs: Option<Vec<PairFile>>,
    lexicon: Option<LexiconFile>,
    classifier: Option<ClassifierFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProviderFile {
    kind: Option<String>,
    model: Option<String>,
    temperature_stage_one: Option<f64>,
    temperature_stage_two: Option<f64>,
    max_tokens: Option<u32>,
    base_url: Option<String>,
    api_key_env: Option<String>,
    requests_per_minute: Option<u32>,
    max_retries: Option<u32>,
    retry_initial_ms: Option<u64>,
    script_path: Option<PathBuf>,
    p_gendered: Option<f64>,
    p_stereotype: Option<f64>,
    p_endorse: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairFile {
    name: String,
    female: Attribute,
    male: Attribute,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    pairs: Vec<GenderPair>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierFile {
    bias_keywords: Option<Vec<String>>,
    rejudge_anti_stereotypes: Option<bool>,
}

impl ConfigFile {
    fn resolve(self) -> Result<AuditConfig, ConfigError> {
        let mut config = AuditConfig::default();
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(v) = self.samples_per_template {
            config.samples_per_template = v;
        }
        if let Some(v) = self.max_attempts_per_template {
            config.max_attempts_per_template = v;
        }
        if let Some(v) = self.bold_threshold {
            config.bold_threshold = v;
        }
        if let Some(v) = self.templates {
            config.templates = v;
        }
        if let Some(pairs) = self.pairs {
            config.pairs = pairs
                .into_iter()
                .map(|p| AttributePair {
                    name: p.name,
                    female_assoc: p.female,
                    male_assoc: p.male,
                })
                .collect();
        }
        if let Some(lexicon) = self.lexicon {
            config.lexicon = GenderLexicon {
                pairs: lexicon.pairs,
            };
        }
        if let Some(classifier) = self.classifier {
            if let Some(keywords) = classifier.bias_keywords {
                config.bias_keywords = keywords;
            }
            if let Some(flag) = classifier.rejudge_anti_stereotypes {
                config.rejudge_anti_stereotypes = flag;
            }
        }
        if let Some(p) = self.provider {
            let d = &mut config.provider;
            if let Some(kind) = p.kind {
                d.kind = ProviderKind::parse(&kind).ok_or_else(|| {
                    ConfigError::Parse(format!(
                        "unknown provider.kind {kind:?} (expected live, mock-scripted, or mock-stochastic)"
                    ))
                })?;
            }
            if let Some(v) = p.model {
                d.model = v;
            }
            if let Some(v) = p.temperature_stage_one {
                d.temperature_stage_one = v;
            }
            if let Some(v) = p.temperature_stage_two {
                d.temperature_stage_two = v;
            }
            if let Some(v) = p.max_tokens {
                d.max_tokens = v;
            }
            if let Some(v) = p.base_url {
                d.base_url = v;
            }
            if let Some(v) = p.api_key_env {
                d.api_key_env = v;
            }
            if let Some(v) = p.requests_per_minute {
                d.requests_per_minute = v;
            }
            if let Some(v) = p.max_retries {
                d.max_retries = v;
            }
            if let Some(v) = p.retry_initial_ms {
                d.retry_initial_ms = v;
            }
            if let Some(v) = p.script_path {
                d.script_path = Some(v);
            }
            if p.p_gendered.is_some() || p.p_stereotype.is_some() || p.p_endorse.is_some() {
                let spec = d.generator.get_or_insert_with(GeneratorSpec::default);
                if let Some(v) = p.p_gendered {
                    spec.p_gendered = v;
                }
                if let Some(v) = p.p_stereotype {
                    spec.p_stereotype = v;
                }
                if let Some(v) = p.p_endorse {
                    spec.p_endorse = v;
                }
            }
        }
        Ok(config)
    }
}
