//! The two classification pipelines.
//!
//! * [`direct`]: one VLM call per household returning a bare label.
//! * [`guided`]: a VLM call extracting boolean damage indicators, then a
//!   text-only LLM call (cross-checked by a local rule) turning them into a
//!   label.

pub mod direct;
pub mod guided;
pub mod indicators;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{select_views, HouseholdRecord, RecordError, ViewMode};
use crate::ingestion::{EncodedImage, ImageError, ImageSource};
use crate::provider::{ProviderError, TokenUsage};

/// Decoding knobs for one model call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Decoding {
    /// Bare-label classification (Pipeline A).
    pub const DIRECT: Decoding = Decoding { temperature: 0.5, max_tokens: 10 };
    /// Indicator extraction; output is a JSON object.
    pub const INDICATORS: Decoding = Decoding { temperature: 0.1, max_tokens: 300 };
    /// Indicator adjudication; output is a bare label.
    pub const ADJUDICATION: Decoding = Decoding { temperature: 0.1, max_tokens: 10 };
}

/// Temperature used when re-asking after an unparseable reply.
pub const RETRY_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    InvalidRecord(#[from] RecordError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("household {household_id}: unparseable classification {raw_text:?} after {attempts} attempt(s)")]
    ClassificationUnparseable {
        household_id: String,
        raw_text: String,
        attempts: u32,
        usage: TokenUsage,
    },
    #[error("household {household_id}: indicator reply rejected ({reason}) after {attempts} attempt(s)")]
    IndicatorParseError {
        household_id: String,
        reason: String,
        raw_text: String,
        attempts: u32,
        usage: TokenUsage,
    },
}

impl PipelineError {
    /// Tokens spent before the failure, when known.
    pub fn usage(&self) -> TokenUsage {
        match self {
            PipelineError::ClassificationUnparseable { usage, .. }
            | PipelineError::IndicatorParseError { usage, .. } => *usage,
            _ => TokenUsage::default(),
        }
    }
}

/// Validates the record and encodes the views `mode` selects, front first.
pub(crate) fn encode_views(
    record: &HouseholdRecord,
    mode: ViewMode,
    images: &dyn ImageSource,
) -> Result<Vec<EncodedImage>, PipelineError> {
    record.validate()?;
    select_views(record, mode)
        .iter()
        .map(|img| images.encode(img).map_err(PipelineError::from))
        .collect()
}
