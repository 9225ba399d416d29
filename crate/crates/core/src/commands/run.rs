use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::CommandError;
use crate::config::RunConfig;
use crate::domain::{select_views, HouseholdRecord, ViewMode};
use crate::ingestion::DatasetManifest;
use crate::pipeline::direct::classify_direct;
use crate::pipeline::guided::classify_indicator_guided;
use crate::pipeline::indicators::IndicatorLibrary;
use crate::pipeline::PipelineError;
use crate::provider::{cost_of, ModelRequest, ModelResponse, Provider, ProviderError, TokenUsage};
use crate::runlog::{now_ms, PipelineKind, RecordStatus, RunLogEntry, RunLogWriter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub pipeline: PipelineKind,
    pub mode: ViewMode,
    pub records: usize,
    pub ok: usize,
    pub errors: usize,
    pub usage: TokenUsage,
    #[serde(with = "rust_decimal::serde::str")]
    pub cost: Decimal,
}

/// Per-record view of the provider that sums latency and notes estimated
/// usage.
struct Tracked<'a> {
    inner: &'a dyn Provider,
    latency_ms: AtomicU64,
    estimated: AtomicBool,
}

impl Provider for Tracked<'_> {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        let started = Instant::now();
        let r = self.inner.complete(request)?;
        let ms = if r.latency_ms > 0 { r.latency_ms } else { started.elapsed().as_millis() as u64 };
        self.latency_ms.fetch_add(ms, Ordering::Relaxed);
        if r.usage_estimated {
            self.estimated.store(true, Ordering::Relaxed);
        }
        Ok(r)
    }
}

/// Errors that end the whole run rather than one record.
fn is_fatal(e: &PipelineError) -> bool {
    matches!(
        e,
        PipelineError::Provider(ProviderError::TransportError(_))
            | PipelineError::Provider(ProviderError::EndpointError { status: 401 | 403 | 404, .. })
    )
}

fn error_kind(e: &PipelineError) -> &'static str {
    match e {
        PipelineError::InvalidRecord(_) => "invalid_record",
        PipelineError::Image(_) => "image_error",
        PipelineError::Provider(_) => "provider_error",
        PipelineError::ClassificationUnparseable { .. } => "classification_unparseable",
        PipelineError::IndicatorParseError { .. } => "indicator_parse_error",
    }
}

struct Job<'a> {
    manifest: &'a DatasetManifest,
    config: &'a RunConfig,
    library: &'a IndicatorLibrary,
    provider: &'a dyn Provider,
    pipeline: PipelineKind,
    mode: ViewMode,
}

impl Job<'_> {
    fn process(&self, record: &HouseholdRecord) -> (RunLogEntry, bool) {
        let tracked = Tracked { inner: self.provider, latency_ms: AtomicU64::new(0), estimated: AtomicBool::new(false) };
        let mut entry = RunLogEntry {
            household_id: record.id.clone(),
            pipeline: self.pipeline,
            mode: self.mode,
            n_images: select_views(record, self.mode).len(),
            status: RecordStatus::Ok,
            label: None,
            llm_label: None,
            rule_label: None,
            agreement: None,
            indicators: None,
            usage: TokenUsage::default(),
            usage_estimated: false,
            attempts: 0,
            raw_text: None,
            raw_stage2: None,
            error_kind: None,
            error: None,
            latency_ms: 0,
            timestamp_ms: 0,
        };
        let outcome = match self.pipeline {
            PipelineKind::A => {
                classify_direct(record, self.mode, self.manifest, &tracked, &self.config.direct_options()).map(|r| {
                    entry.label = Some(r.label);
                    entry.usage = r.usage;
                    entry.attempts = r.attempts;
                    entry.raw_text = Some(r.raw_text);
                })
            }
            PipelineKind::B => classify_indicator_guided(
                record,
                self.mode,
                self.library,
                self.manifest,
                &tracked,
                &self.config.guided_options(),
            )
            .map(|r| {
                entry.label = Some(r.llm_label);
                entry.llm_label = Some(r.llm_label);
                entry.rule_label = Some(r.rule_label);
                entry.agreement = Some(r.agreement);
                entry.indicators = Some(r.indicators.values().clone());
                entry.usage = r.usage;
                entry.attempts = r.attempts;
                entry.raw_text = Some(r.raw_stage1);
                entry.raw_stage2 = Some(r.raw_stage2);
            }),
        };
        let mut fatal = false;
        if let Err(e) = outcome {
            fatal = is_fatal(&e);
            entry.status = RecordStatus::Error;
            entry.usage = e.usage();
            entry.error_kind = Some(error_kind(&e).to_string());
            entry.error = Some(e.to_string());
            match e {
                PipelineError::ClassificationUnparseable { raw_text, attempts, .. }
                | PipelineError::IndicatorParseError { raw_text, attempts, .. } => {
                    entry.raw_text = Some(raw_text);
                    entry.attempts = attempts;
                }
                _ => {}
            }
        }
        entry.latency_ms = tracked.latency_ms.load(Ordering::Relaxed);
        entry.usage_estimated = tracked.estimated.load(Ordering::Relaxed);
        entry.timestamp_ms = now_ms();
        (entry, fatal)
    }
}

/// Runs one pipeline over every manifest record with up to
/// `config.parallelism` workers. Entries are appended to `log_path` in
/// manifest order by a single writer. Per-record failures are logged and
/// the run continues; a transport-level failure stops it after the records
/// already finished in order have been written.
pub fn cmd_run(
    manifest: &DatasetManifest,
    config: &RunConfig,
    provider: &dyn Provider,
    pipeline: PipelineKind,
    mode: ViewMode,
    log_path: &Path,
    progress: &mut dyn Write,
) -> Result<RunSummary, CommandError> {
    config.validate()?;
    let library = config.indicator_library()?;
    let job = Job { manifest, config, library: &library, provider, pipeline, mode };
    let mut writer = RunLogWriter::create(log_path)?;
    let n = manifest.len();
    let workers = config.parallelism.min(n.max(1));
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);

    let mut summary = RunSummary {
        pipeline,
        mode,
        records: 0,
        ok: 0,
        errors: 0,
        usage: TokenUsage::default(),
        cost: Decimal::ZERO,
    };
    let mut abort: Option<(String, String)> = None;

    std::thread::scope(|scope| -> Result<(), CommandError> {
        let (tx, rx) = mpsc::channel::<(usize, RunLogEntry, bool)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (job, next, stop) = (&job, &next, &stop);
            scope.spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(record) = job.manifest.records.get(i) else { break };
                    let (entry, fatal) = job.process(record);
                    if fatal {
                        stop.store(true, Ordering::Relaxed);
                    }
                    if tx.send((i, entry, fatal)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<usize, (RunLogEntry, bool)> = BTreeMap::new();
        let mut written = 0usize;
        for (i, entry, fatal) in rx {
            pending.insert(i, (entry, fatal));
            while abort.is_none() {
                let Some((entry, fatal)) = pending.remove(&written) else { break };
                if fatal {
                    abort = Some((entry.household_id.clone(), entry.error.clone().unwrap_or_default()));
                    stop.store(true, Ordering::Relaxed);
                    break;
                }
                writer.append(&entry)?;
                written += 1;
                summary.records += 1;
                if entry.is_ok() {
                    summary.ok += 1;
                } else {
                    summary.errors += 1;
                }
                summary.usage += entry.usage;
                summary.cost = cost_of(summary.usage, &config.cost);
                let shown = entry.label.map(|l| l.display_name()).unwrap_or("error");
                writeln!(progress, "[{written}/{n}] {} {shown} cost {}", entry.household_id, summary.cost)?;
            }
        }
        Ok(())
    })?;
    writer.finish()?;

    if abort.is_none() && summary.records < n {
        // a fatal record ahead of the written prefix stopped the workers
        abort = Some(("?".into(), "run stopped early".into()));
    }
    match abort {
        Some((household_id, reason)) => Err(CommandError::Aborted { household_id, reason }),
        None => Ok(summary),
    }
}
