use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::CommandError;
use crate::domain::{AssessmentLabel, RawDamageCategory, ViewMode};
use crate::ingestion::DatasetManifest;
use crate::provider::TokenUsage;
use crate::runlog::{PipelineKind, RunLog, RunLogEntry};
use crate::similarity::{aggregation_recommendation, similarity_report, EmbeddingStore, Merge, SimilarityReport};
use crate::stats::{build_confusion, mcnemar_from_cells, summarize, ConfusionMatrix, EvaluationReport, McNemarCells, McNemarMethod, McNemarResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutput {
    pub pipeline: Option<PipelineKind>,
    pub mode: Option<ViewMode>,
    pub evaluated: u64,
    /// Records without a usable label (errors, unparseable replies).
    pub excluded: u64,
    pub excluded_ids: Vec<String>,
    /// Pipeline B only: records where the LLM and the local rule disagree.
    pub rule_disagreements: u64,
    pub usage: TokenUsage,
    pub confusion: ConfusionMatrix,
    pub report: EvaluationReport,
}

/// Checks every entry joins to the manifest, ids are unique and the log
/// covers one pipeline and mode.
fn index_log<'a>(log: &'a RunLog, manifest: &DatasetManifest) -> Result<BTreeMap<&'a str, &'a RunLogEntry>, CommandError> {
    let missing: Vec<String> = log
        .entries
        .iter()
        .filter(|e| manifest.get(&e.household_id).is_none())
        .map(|e| e.household_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(CommandError::JoinError(missing));
    }
    let kinds: BTreeSet<(PipelineKind, &str)> = log.entries.iter().map(|e| (e.pipeline, e.mode.as_str())).collect();
    if kinds.len() > 1 {
        return Err(CommandError::MixedLog);
    }
    let mut by_id = BTreeMap::new();
    for e in &log.entries {
        if by_id.insert(e.household_id.as_str(), e).is_some() {
            return Err(CommandError::DuplicateEntry(e.household_id.clone()));
        }
    }
    Ok(by_id)
}

/// Joins predictions to aggregated ground truth and scores them. Records
/// with no label are excluded and counted.
pub fn cmd_evaluate(log: &RunLog, manifest: &DatasetManifest) -> Result<EvaluationOutput, CommandError> {
    index_log(log, manifest)?;
    let mut pairs = Vec::new();
    let mut excluded_ids = Vec::new();
    let mut rule_disagreements = 0;
    for e in &log.entries {
        let truth = manifest.get(&e.household_id).map(|r| r.truth_label()).expect("joined above");
        match e.label.filter(|_| e.is_ok()) {
            Some(pred) => pairs.push((truth, pred)),
            None => excluded_ids.push(e.household_id.clone()),
        }
        if e.agreement == Some(false) {
            rule_disagreements += 1;
        }
    }
    let confusion = build_confusion(pairs);
    let report = summarize(&confusion)?;
    Ok(EvaluationOutput {
        pipeline: log.entries.first().map(|e| e.pipeline),
        mode: log.entries.first().map(|e| e.mode),
        evaluated: confusion.total(),
        excluded: excluded_ids.len() as u64,
        excluded_ids,
        rule_disagreements,
        usage: log.total_usage(),
        confusion,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemarRow {
    pub category: AssessmentLabel,
    pub result: McNemarResult,
    /// Paired households of this category with more than one image.
    pub multi_image_households: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemarReport {
    pub paired: u64,
    /// Households dropped because either log has no label for them.
    pub excluded: u64,
    pub rows: Vec<McNemarRow>,
}

/// Per-category paired test of two logs over the same households. `b`
/// counts households the first log gets right and the second wrong.
pub fn cmd_mcnemar(
    first: &RunLog,
    second: &RunLog,
    manifest: &DatasetManifest,
    method: McNemarMethod,
) -> Result<McNemarReport, CommandError> {
    let a = index_log(first, manifest)?;
    let b = index_log(second, manifest)?;
    let only_first: Vec<String> = a.keys().filter(|k| !b.contains_key(*k)).map(|k| k.to_string()).collect();
    let only_second: Vec<String> = b.keys().filter(|k| !a.contains_key(*k)).map(|k| k.to_string()).collect();
    if !only_first.is_empty() || !only_second.is_empty() {
        return Err(CommandError::PairingError { only_first, only_second });
    }

    let mut cells: HashMap<AssessmentLabel, McNemarCells> = HashMap::new();
    let mut multi: HashMap<AssessmentLabel, u64> = HashMap::new();
    let (mut paired, mut excluded) = (0, 0);
    for (id, e1) in &a {
        let e2 = b[id];
        let record = manifest.get(id).expect("joined above");
        let (Some(p1), Some(p2)) = (e1.label.filter(|_| e1.is_ok()), e2.label.filter(|_| e2.is_ok())) else {
            excluded += 1;
            continue;
        };
        paired += 1;
        let truth = record.truth_label();
        if record.images.len() > 1 {
            *multi.entry(truth).or_default() += 1;
        }
        let c = cells.entry(truth).or_default();
        match (p1 == truth, p2 == truth) {
            (true, true) => c.both_correct += 1,
            (true, false) => c.only_first_correct += 1,
            (false, true) => c.only_second_correct += 1,
            (false, false) => c.both_wrong += 1,
        }
    }
    let rows = AssessmentLabel::ALL
        .iter()
        .map(|&category| McNemarRow {
            category,
            result: mcnemar_from_cells(cells.get(&category).copied().unwrap_or_default(), method),
            multi_image_households: multi.get(&category).copied().unwrap_or(0),
        })
        .collect();
    Ok(McNemarReport { paired, excluded, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityOutput {
    pub report: SimilarityReport,
    pub threshold: f64,
    pub merges: Vec<Merge>,
}

/// Image uris per raw category, as written in the manifest.
pub fn category_groups(manifest: &DatasetManifest) -> BTreeMap<RawDamageCategory, Vec<String>> {
    let mut groups: BTreeMap<RawDamageCategory, Vec<String>> = BTreeMap::new();
    for r in &manifest.records {
        groups.entry(r.ground_truth).or_default().extend(r.images.iter().map(|i| i.uri.clone()));
    }
    groups
}

pub fn cmd_similarity(
    store: &EmbeddingStore,
    manifest: &DatasetManifest,
    pairs: &[(RawDamageCategory, RawDamageCategory)],
    threshold: f64,
) -> Result<SimilarityOutput, CommandError> {
    let report = similarity_report(store, &category_groups(manifest), pairs)?;
    let merges = aggregation_recommendation(&report, threshold);
    Ok(SimilarityOutput { report, threshold, merges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Event, HouseholdRecord, ImageRef};
    use crate::runlog::RecordStatus;
    use crate::similarity::{default_pairs, EmbeddingVector};
    use approx::assert_abs_diff_eq;
    use AssessmentLabel::*;

    pub(crate) fn record(id: &str, cat: RawDamageCategory, n_images: usize) -> HouseholdRecord {
        let mut images = vec![ImageRef::front(format!("{id}_0.jpg"))];
        images.extend((1..n_images).map(|v| ImageRef::other(format!("{id}_{v}.jpg"))));
        HouseholdRecord { id: id.into(), event: Event::Eaton, ground_truth: cat, images }
    }

    pub(crate) fn entry(id: &str, label: Option<AssessmentLabel>) -> RunLogEntry {
        RunLogEntry {
            household_id: id.into(),
            pipeline: PipelineKind::A,
            mode: ViewMode::SingleFront,
            n_images: 1,
            status: if label.is_some() { RecordStatus::Ok } else { RecordStatus::Error },
            label,
            llm_label: None,
            rule_label: None,
            agreement: None,
            indicators: None,
            usage: TokenUsage::new(10, 1),
            usage_estimated: false,
            attempts: 1,
            raw_text: None,
            raw_stage2: None,
            error_kind: None,
            error: None,
            latency_ms: 0,
            timestamp_ms: 0,
        }
    }

    /// Manifest and log reproducing a 3x3 matrix of (truth, pred) counts.
    fn fixture(counts: [[u64; 3]; 3]) -> (DatasetManifest, RunLog) {
        let raw = [RawDamageCategory::NoDamage, RawDamageCategory::Affected, RawDamageCategory::Destroyed];
        let mut records = Vec::new();
        let mut entries = Vec::new();
        for (t, row) in counts.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    let id = format!("r{:04}", records.len());
                    records.push(record(&id, raw[t], 1));
                    entries.push(entry(&id, Some(AssessmentLabel::ALL[p])));
                }
            }
        }
        (DatasetManifest::new("fx", records), RunLog { entries })
    }

    #[test]
    fn perfect_log() {
        let (m, log) = fixture([[3, 0, 0], [0, 4, 0], [0, 0, 5]]);
        let out = cmd_evaluate(&log, &m).unwrap();
        assert_eq!(out.report.accuracy, 1.0);
        assert!(out.report.per_class.values().all(|c| c.f1 == 1.0));
    }

    #[test]
    fn eaton_direct_single_view() {
        let (m, log) = fixture([[151, 4, 0], [130, 53, 7], [0, 0, 155]]);
        let out = cmd_evaluate(&log, &m).unwrap();
        assert_eq!(out.report.accuracy, 0.718);
        assert_eq!(out.evaluated, 500);
    }

    #[test]
    fn unparseable_excluded() {
        let (m, mut log) = fixture([[2, 0, 0], [0, 2, 0], [0, 0, 2]]);
        log.entries[1] = entry(&log.entries[1].household_id, None);
        let out = cmd_evaluate(&log, &m).unwrap();
        assert_eq!(out.excluded, 1);
        assert_eq!(out.evaluated, 5);
    }

    #[test]
    fn join_and_shape_errors() {
        let (m, mut log) = fixture([[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
        let mut bad = log.clone();
        bad.entries.push(entry("ghost", Some(NoDamage)));
        assert!(matches!(cmd_evaluate(&bad, &m), Err(CommandError::JoinError(ids)) if ids == vec!["ghost".to_string()]));
        let mut dup = log.clone();
        dup.entries.push(dup.entries[0].clone());
        assert!(matches!(cmd_evaluate(&dup, &m), Err(CommandError::DuplicateEntry(_))));
        log.entries[0].pipeline = PipelineKind::B;
        assert!(matches!(cmd_evaluate(&log, &m), Err(CommandError::MixedLog)));
    }

    #[test]
    fn mcnemar_self_comparison() {
        let (m, log) = fixture([[5, 1, 0], [2, 3, 1], [0, 0, 4]]);
        let r = cmd_mcnemar(&log, &log, &m, McNemarMethod::default()).unwrap();
        for row in &r.rows {
            assert_eq!(row.result.cells.discordant(), 0);
            assert_eq!(row.result.p_value, 1.0);
        }
    }

    #[test]
    fn mcnemar_fixed_errors() {
        let (m, first) = fixture([[0, 116, 0], [0, 0, 0], [0, 0, 0]]);
        let second = RunLog { entries: first.entries.iter().map(|e| entry(&e.household_id, Some(NoDamage))).collect() };
        let r = cmd_mcnemar(&first, &second, &m, McNemarMethod::default()).unwrap();
        let nd = &r.rows[0].result;
        assert_eq!((nd.cells.only_first_correct, nd.cells.only_second_correct), (0, 116));
        assert_abs_diff_eq!(nd.statistic.unwrap(), 114.01, epsilon = 0.01);
    }

    #[test]
    fn mcnemar_pairing_error() {
        let (m, log) = fixture([[2, 0, 0], [0, 0, 0], [0, 0, 0]]);
        let a = RunLog { entries: vec![log.entries[0].clone()] };
        let b = RunLog { entries: vec![log.entries[1].clone()] };
        assert!(matches!(cmd_mcnemar(&a, &b, &m, McNemarMethod::default()), Err(CommandError::PairingError { .. })));
    }

    #[test]
    fn similarity_identical_vectors() {
        let m = DatasetManifest::new(
            "s",
            RawDamageCategory::ALL.iter().enumerate().map(|(i, &c)| record(&format!("h{i}"), c, 2)).collect(),
        );
        let mut store = EmbeddingStore::new();
        for r in &m.records {
            for img in &r.images {
                store.insert(img.uri.clone(), EmbeddingVector::new(vec![0.0, 1.0]).unwrap()).unwrap();
            }
        }
        let out = cmd_similarity(&store, &m, &default_pairs(), 0.7).unwrap();
        assert!(out.report.rows.iter().all(|r| (r.mean_cosine - 1.0).abs() < 1e-12));
        assert_eq!(out.merges.len(), 2);

        let empty = DatasetManifest::new("s", vec![record("x", RawDamageCategory::Affected, 1)]);
        assert!(matches!(cmd_similarity(&store, &empty, &default_pairs(), 0.7), Err(CommandError::Similarity(_))));
    }
}
