use std::collections::BTreeMap;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::CommandError;
use crate::config::{RunConfig, TokenProfile};
use crate::domain::{select_views, ViewMode};
use crate::ingestion::DatasetManifest;
use crate::provider::{cost_of, CostModel, TokenUsage};
use crate::runlog::PipelineKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLine {
    pub pipeline: PipelineKind,
    pub images: u8,
    pub households: u64,
    pub usage_per_10: TokenUsage,
    #[serde(with = "rust_decimal::serde::str")]
    pub per_10: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub per_sample: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub total: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub lines: Vec<CostLine>,
    #[serde(with = "rust_decimal::serde::str")]
    pub total: Decimal,
}

/// Price of one profile's ten-sample token counts, and per sample.
pub fn profile_cost(profile: &TokenProfile, model: &CostModel) -> (Decimal, Decimal) {
    let per_10 = cost_of(profile.usage(), model);
    (per_10, per_10 / Decimal::from(TokenProfile::PER_SAMPLES))
}

/// Projects the cost of running `pipeline` in `mode` over the manifest from
/// the configured per-sample token averages, grouping households by how
/// many images the mode would send.
pub fn cmd_cost_estimate(
    manifest: &DatasetManifest,
    pipeline: PipelineKind,
    mode: ViewMode,
    config: &RunConfig,
) -> Result<CostEstimate, CommandError> {
    let mut by_images: BTreeMap<u8, u64> = BTreeMap::new();
    for r in &manifest.records {
        let n = select_views(r, mode).len().clamp(1, ViewMode::MAX_VIEWS) as u8;
        *by_images.entry(n).or_default() += 1;
    }
    let mut lines = Vec::new();
    for (images, households) in by_images {
        let profile = config
            .token_profile(pipeline, images)
            .ok_or(CommandError::MissingProfile { pipeline, images })?;
        let (per_10, per_sample) = profile_cost(&profile, &config.cost);
        lines.push(CostLine {
            pipeline,
            images,
            households,
            usage_per_10: profile.usage(),
            per_10,
            per_sample,
            total: per_sample * Decimal::from(households),
        });
    }
    let total = lines.iter().map(|l| l.total).sum();
    Ok(CostEstimate { lines, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Event, HouseholdRecord, ImageRef, RawDamageCategory};
    use std::str::FromStr;

    fn manifest(n: usize, views: usize) -> DatasetManifest {
        let records = (0..n)
            .map(|i| {
                let mut images = vec![ImageRef::front(format!("{i}_0"))];
                images.extend((1..views).map(|v| ImageRef::other(format!("{i}_{v}"))));
                HouseholdRecord { id: format!("h{i}"), event: Event::Eaton, ground_truth: RawDamageCategory::Affected, images }
            })
            .collect();
        DatasetManifest::new("m", records)
    }

    #[test]
    fn five_hundred_three_image_guided() {
        let est = cmd_cost_estimate(&manifest(500, 3), PipelineKind::B, ViewMode::MultiView, &RunConfig::default()).unwrap();
        assert_eq!(est.lines.len(), 1);
        assert_eq!(est.lines[0].per_sample, Decimal::from_str("0.005127").unwrap());
        assert_eq!(est.total, Decimal::from_str("2.5635").unwrap());
    }

    #[test]
    fn single_mode_uses_one_image_profile() {
        let est = cmd_cost_estimate(&manifest(10, 3), PipelineKind::A, ViewMode::SingleFront, &RunConfig::default()).unwrap();
        assert_eq!(est.lines[0].images, 1);
        assert_eq!(est.total, Decimal::from_str("0.01328").unwrap());
    }

    #[test]
    fn empty_and_free() {
        let est = cmd_cost_estimate(&manifest(0, 1), PipelineKind::B, ViewMode::MultiView, &RunConfig::default()).unwrap();
        assert_eq!(est.total, Decimal::ZERO);
        let free = RunConfig { cost: CostModel::new(Decimal::ZERO, Decimal::ZERO), ..RunConfig::default() };
        let est = cmd_cost_estimate(&manifest(50, 2), PipelineKind::B, ViewMode::MultiView, &free).unwrap();
        assert_eq!(est.total, Decimal::ZERO);
    }

    #[test]
    fn missing_profile() {
        let cfg = RunConfig { token_profiles: Vec::new(), ..RunConfig::default() };
        assert!(matches!(
            cmd_cost_estimate(&manifest(1, 1), PipelineKind::A, ViewMode::SingleFront, &cfg),
            Err(CommandError::MissingProfile { .. })
        ));
    }
}
