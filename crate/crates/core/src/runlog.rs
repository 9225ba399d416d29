//! Per-record run results as JSON lines.
//!
//! One line per (household, pipeline, mode) attempt. Lines hold everything
//! evaluation needs, so reports are rebuilt from logs alone.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AssessmentLabel, ViewMode};
use crate::provider::TokenUsage;

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} line {line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PipelineKind {
    A,
    B,
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            PipelineKind::A => "A",
            PipelineKind::B => "B",
        })
    }
}

impl FromStr for PipelineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(PipelineKind::A),
            "B" | "b" => Ok(PipelineKind::B),
            other => Err(format!("unknown pipeline '{other}' (expected A or B)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub household_id: String,
    pub pipeline: PipelineKind,
    pub mode: ViewMode,
    pub n_images: usize,
    pub status: RecordStatus,
    /// The pipeline's answer: the direct label, or the adjudicator's label.
    pub label: Option<AssessmentLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_label: Option<AssessmentLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_label: Option<AssessmentLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indicators: Option<BTreeMap<String, bool>>,
    pub usage: TokenUsage,
    #[serde(default)]
    pub usage_estimated: bool,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_stage2: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Summed model-call latency.
    pub latency_ms: u64,
    /// Unix epoch milliseconds when the record finished.
    pub timestamp_ms: u64,
}

impl RunLogEntry {
    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok && self.label.is_some()
    }

    /// Copy with timing fields zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> RunLogEntry {
        RunLogEntry { latency_ms: 0, timestamp_ms: 0, ..self.clone() }
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub entries: Vec<RunLogEntry>,
}

impl RunLog {
    pub fn read(path: &Path) -> Result<Self, RunLogError> {
        let p = path.display().to_string();
        let file = File::open(path).map_err(|source| RunLogError::Io { path: p.clone(), source })?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| RunLogError::Io { path: p.clone(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line).map_err(|e| RunLogError::Parse {
                path: p.clone(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(RunLog { entries })
    }

    pub fn write(&self, path: &Path) -> Result<(), RunLogError> {
        let mut w = RunLogWriter::create(path)?;
        for e in &self.entries {
            w.append(e)?;
        }
        w.finish()
    }

    pub fn total_usage(&self) -> TokenUsage {
        self.entries.iter().map(|e| e.usage).sum()
    }

    /// True when both logs hold the same results in the same order,
    /// ignoring latency and timestamps.
    pub fn same_results(&self, other: &RunLog) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| a.without_timing() == b.without_timing())
    }
}

/// Single appender; each entry is flushed as written.
pub struct RunLogWriter {
    out: BufWriter<File>,
    path: String,
}

impl RunLogWriter {
    pub fn create(path: &Path) -> Result<Self, RunLogError> {
        let p = path.display().to_string();
        let file = File::create(path).map_err(|source| RunLogError::Io { path: p.clone(), source })?;
        Ok(RunLogWriter { out: BufWriter::new(file), path: p })
    }

    pub fn append(&mut self, entry: &RunLogEntry) -> Result<(), RunLogError> {
        let io = |source| RunLogError::Io { path: self.path.clone(), source };
        let line = serde_json::to_string(entry).expect("log entry serializes");
        self.out.write_all(line.as_bytes()).map_err(io)?;
        self.out.write_all(b"\n").map_err(io)?;
        self.out.flush().map_err(io)
    }

    pub fn finish(mut self) -> Result<(), RunLogError> {
        self.out.flush().map_err(|source| RunLogError::Io { path: self.path.clone(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, label: Option<AssessmentLabel>) -> RunLogEntry {
        RunLogEntry {
            household_id: id.into(),
            pipeline: PipelineKind::B,
            mode: ViewMode::MultiView,
            n_images: 2,
            status: if label.is_some() { RecordStatus::Ok } else { RecordStatus::Error },
            label,
            llm_label: label,
            rule_label: label,
            agreement: Some(true),
            indicators: Some(BTreeMap::from([("house_destroyed".to_string(), false)])),
            usage: TokenUsage::new(100, 7),
            usage_estimated: false,
            attempts: 1,
            raw_text: Some("{}".into()),
            raw_stage2: None,
            error_kind: None,
            error: None,
            latency_ms: 12,
            timestamp_ms: now_ms(),
        }
    }

    #[test]
    fn round_trip_and_compare() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        let log = RunLog { entries: vec![entry("a", Some(AssessmentLabel::Affected)), entry("b", None)] };
        log.write(&p).unwrap();
        let back = RunLog::read(&p).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.total_usage(), TokenUsage::new(200, 14));
        assert!(!back.entries[1].is_ok());

        let mut later = log.clone();
        later.entries[0].timestamp_ms += 5000;
        later.entries[0].latency_ms = 99;
        assert!(log.same_results(&later));
        later.entries[1].attempts = 2;
        assert!(!log.same_results(&later));
    }

    #[test]
    fn pipeline_names() {
        assert_eq!("a".parse::<PipelineKind>().unwrap(), PipelineKind::A);
        assert!("C".parse::<PipelineKind>().is_err());
        assert_eq!(serde_json::to_string(&PipelineKind::B).unwrap(), "\"B\"");
    }

    #[test]
    fn bad_line_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        std::fs::write(&p, "\nnot json\n").unwrap();
        assert!(matches!(RunLog::read(&p), Err(RunLogError::Parse { line: 2, .. })));
    }
}
