//! Append-only JSON-lines transcript: one schema-versioned record per
//! exchange, written and flushed before the next request is issued.
//!
//! The transcript is the source of truth for a run. Resume replays it,
//! recounting reclassifies it, and every count in a report can be rebuilt
//! from it without provider calls. One writer at a time (enforced by
//! ownership); any number of readers.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{RejudgeClass, RejudgeLabel, StatementClass};
use crate::provider::ExchangeKey;

pub const TRANSCRIPT_SCHEMA_VERSION: u32 = 1;

/// Classification stored with a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordClass {
    /// Stage-1 statement classification.
    Statement { class: StatementClass },
    /// Stage-2 verdict classification with its evidence.
    Rejudge {
        class: RejudgeLabel,
        verdict_token: Option<String>,
        bias_keywords_found: Vec<String>,
    },
    /// Demonstration exchanges are recorded but never classified.
    Unclassified,
}

impl RecordClass {
    pub fn rejudge(class: &RejudgeClass) -> RecordClass {
        RecordClass::Rejudge {
            class: class.label,
            verdict_token: class.verdict_token.clone(),
            bias_keywords_found: class.bias_keywords_found.clone(),
        }
    }
}

/// One persisted exchange. The response is stored verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub v: u32,
    pub run_id: String,
    pub pair: String,
    /// 1 or 2 for the audit stages, 0 for demonstration exchanges.
    pub stage: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statement_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
    pub prompt: String,
    pub response: String,
    pub class: RecordClass,
    pub ts: String,
    pub latency_ms: u64,
    pub from_cache: bool,
}

impl TranscriptRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        run_id: &str,
        pair: &str,
        key: ExchangeKey,
        prompt: String,
        response: String,
        class: RecordClass,
        ts: String,
        latency_ms: u64,
    ) -> TranscriptRecord {
        let (template_id, statement_index, sample_index) = match key {
            ExchangeKey::Completion {
                template_id,
                sample_index,
            } => (Some(template_id), None, Some(sample_index)),
            ExchangeKey::Rejudge { statement_index } => (None, Some(statement_index), None),
            ExchangeKey::OpenTarget { sample_index } => (None, None, Some(sample_index)),
        };
        TranscriptRecord {
            v: TRANSCRIPT_SCHEMA_VERSION,
            run_id: run_id.to_string(),
            pair: pair.to_string(),
            stage: key.stage(),
            template_id,
            statement_index,
            sample_index,
            prompt,
            response,
            class,
            ts,
            latency_ms,
            from_cache: false,
        }
    }

    /// Reconstructs the exchange key, validating the stage's field shape.
    pub fn key(&self) -> Result<ExchangeKey, String> {
        match self.stage {
            1 => match (self.template_id, self.sample_index) {
                (Some(template_id), Some(sample_index)) => Ok(ExchangeKey::Completion {
                    template_id,
                    sample_index,
                }),
                _ => Err("stage 1 record requires template_id and sample_index".to_string()),
            },
            2 => match self.statement_index {
                Some(statement_index) => Ok(ExchangeKey::Rejudge { statement_index }),
                None => Err("stage 2 record requires statement_index".to_string()),
            },
            0 => match self.sample_index {
                Some(sample_index) => Ok(ExchangeKey::OpenTarget { sample_index }),
                None => Err("stage 0 record requires sample_index".to_string()),
            },
            other => Err(format!("unknown stage {other} (expected 0, 1, or 2)")),
        }
    }

    fn check(&self, line: usize, path: &Path) -> Result<ExchangeKey, TranscriptError> {
        if self.v != TRANSCRIPT_SCHEMA_VERSION {
            return Err(TranscriptError::Schema {
                path: path.display().to_string(),
                line,
                message: format!(
                    "unsupported schema version {} (this build reads {TRANSCRIPT_SCHEMA_VERSION})",
                    self.v
                ),
            });
        }
        self.key().map_err(|message| TranscriptError::Schema {
            path: path.display().to_string(),
            line,
            message,
        })
    }
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("cannot access transcript {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("transcript {path} line {line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate transcript record for pair {pair:?}, key {key}")]
    Duplicate { pair: String, key: ExchangeKey },
}

fn io_err(path: &Path, source: std::io::Error) -> TranscriptError {
    TranscriptError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Strict reader: every line must parse against the current schema and
/// keys must be unique. Errors name the offending line, so a truncated
/// or corrupted file is rejected at the exact offset.
pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, TranscriptError> {
    let raw = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut records = Vec::new();
    let mut seen: HashMap<(String, ExchangeKey), usize> = HashMap::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            return Err(TranscriptError::Schema {
                path: path.display().to_string(),
                line: line_no,
                message: "blank line in append-only transcript".to_string(),
            });
        }
        let record: TranscriptRecord =
            serde_json::from_str(line).map_err(|e| TranscriptError::Schema {
                path: path.display().to_string(),
                line: line_no,
                message: e.to_string(),
            })?;
        let key = record.check(line_no, path)?;
        if seen.insert((record.pair.clone(), key), line_no).is_some() {
            return Err(TranscriptError::Duplicate {
                pair: record.pair.clone(),
                key,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// The single transcript writer with an in-memory replay index.
pub struct TranscriptStore {
    path: PathBuf,
    writer: BufWriter<File>,
    index: HashMap<(String, ExchangeKey), usize>,
    records: Vec<TranscriptRecord>,
}

impl TranscriptStore {
    /// Opens (or creates) a transcript for appending, loading existing
    /// records for replay. A torn final line — the artifact of a crash
    /// mid-write — is dropped with a warning; corruption anywhere else is
    /// an error.
    pub fn open(path: &Path) -> Result<TranscriptStore, TranscriptError> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
            }
        }

        let mut missing_newline = false;
        if path.exists() {
            let raw = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let complete = match raw.rfind('\n') {
                Some(last) => &raw[..last + 1],
                None => "",
            };
            let tail = &raw[complete.len()..];
            if !tail.is_empty() {
                if serde_json::from_str::<TranscriptRecord>(tail).is_ok() {
                    // The record survived the crash, only its newline is
                    // missing; restore it before appending anything else.
                    missing_newline = true;
                } else {
                    log::warn!(
                        "dropping torn final line ({} bytes) from {}",
                        tail.len(),
                        path.display()
                    );
                    let file = OpenOptions::new()
                        .write(true)
                        .open(path)
                        .map_err(|e| io_err(path, e))?;
                    file.set_len(complete.len() as u64)
                        .map_err(|e| io_err(path, e))?;
                }
            }
        }

        let records = if path.exists() {
            read_transcript(path)?
        } else {
            Vec::new()
        };
        let mut index = HashMap::new();
        for (i, record) in records.iter().enumerate() {
            let key = record.key().expect("read_transcript validated keys");
            index.insert((record.pair.clone(), key), i);
        }

        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        let mut writer = BufWriter::new(file);
        if missing_newline {
            writer
                .write_all(b"\n")
                .and_then(|_| writer.flush())
                .map_err(|e| io_err(path, e))?;
        }
        Ok(TranscriptStore {
            path: path.to_path_buf(),
            writer,
            index,
            records,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Sibling manifest file in the same output directory.
    pub fn manifest_path(&self) -> PathBuf {
        self.path
            .parent()
            .unwrap_or(Path::new("."))
            .join("manifest.json")
    }

    pub fn records(&self) -> &[TranscriptRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The persisted exchange for a key, if any.
    pub fn lookup(&self, pair: &str, key: &ExchangeKey) -> Option<&TranscriptRecord> {
        self.index
            .get(&(pair.to_string(), *key))
            .map(|i| &self.records[*i])
    }

    /// Number of demonstration exchanges already recorded for a subject.
    pub fn demo_count(&self, pair: &str) -> u32 {
        self.records
            .iter()
            .filter(|r| r.stage == 0 && r.pair == pair)
            .count() as u32
    }

    /// Appends one record and flushes it before returning.
    pub fn append(&mut self, record: TranscriptRecord) -> Result<(), TranscriptError> {
        let key = record
            .key()
            .map_err(|message| TranscriptError::Schema {
                path: self.path.display().to_string(),
                line: self.records.len() + 1,
                message,
            })?;
        if self.index.contains_key(&(record.pair.clone(), key)) {
            return Err(TranscriptError::Duplicate {
                pair: record.pair.clone(),
                key,
            });
        }
        let line = serde_json::to_string(&record).map_err(|e| TranscriptError::Schema {
            path: self.path.display().to_string(),
            line: self.records.len() + 1,
            message: format!("cannot serialize record: {e}"),
        })?;
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.write_all(b"\n"))
            .and_then(|_| self.writer.flush())
            .map_err(|e| io_err(&self.path, e))?;
        self.index.insert((record.pair.clone(), key), self.records.len());
        self.records.push(record);
        Ok(())
    }
}
