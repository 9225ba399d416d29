//! Pipeline A: direct zero-shot classification.

use serde::{Deserialize, Serialize};

use super::{encode_views, Decoding, PipelineError, RETRY_TEMPERATURE};
use crate::domain::{parse_label, AssessmentLabel, HouseholdRecord, ViewMode};
use crate::ingestion::ImageSource;
use crate::provider::{ModelRequest, Provider, TokenUsage};

/// Classification prompt, sent as a single user message followed by the
/// household's images.
pub const DIRECT_PROMPT: &str = "You are an expert in post wildfire disaster building damage assessment.\n\
Given a building's image, decide if it is 'Affected', 'No Damage', or 'Destroyed'.\n\
Just output the label of the classification.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectOptions {
    pub model_id: String,
    pub decoding: Decoding,
    /// Extra attempts (at temperature 0) after an unparseable reply.
    pub unparseable_retries: u32,
}

impl DirectOptions {
    pub fn new(model_id: impl Into<String>) -> Self {
        DirectOptions { model_id: model_id.into(), decoding: Decoding::DIRECT, unparseable_retries: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineAResult {
    pub household_id: String,
    pub mode: ViewMode,
    pub label: AssessmentLabel,
    /// Summed over all attempts.
    pub usage: TokenUsage,
    pub attempts: u32,
    pub raw_text: String,
}

pub fn classify_direct(
    record: &HouseholdRecord,
    mode: ViewMode,
    images: &dyn ImageSource,
    provider: &dyn Provider,
    options: &DirectOptions,
) -> Result<PipelineAResult, PipelineError> {
    let encoded = encode_views(record, mode, images)?;
    let mut request = ModelRequest {
        model_id: options.model_id.clone(),
        prompt: DIRECT_PROMPT.to_string(),
        images: encoded,
        max_tokens: options.decoding.max_tokens,
        temperature: options.decoding.temperature,
    };

    let mut usage = TokenUsage::default();
    let mut attempts = 0;
    loop {
        attempts += 1;
        let response = provider.complete(&request)?;
        usage += response.usage;
        match parse_label(&response.text) {
            Ok(label) => {
                return Ok(PipelineAResult {
                    household_id: record.id.clone(),
                    mode,
                    label,
                    usage,
                    attempts,
                    raw_text: response.text,
                })
            }
            Err(_) if attempts <= options.unparseable_retries => {
                log::debug!("household {}: unparseable reply {:?}, retrying", record.id, response.text);
                request.temperature = RETRY_TEMPERATURE;
            }
            Err(_) => {
                return Err(PipelineError::ClassificationUnparseable {
                    household_id: record.id.clone(),
                    raw_text: response.text,
                    attempts,
                    usage,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Event, ImageRef, RawDamageCategory};
    use crate::ingestion::{EncodedImage, VerbatimUris};
    use crate::provider::{fingerprint, MockProvider};
    use std::path::Path;

    fn household(dir: &Path, n_images: usize) -> HouseholdRecord {
        let images = (0..n_images)
            .map(|i| {
                let p = dir.join(format!("img{i}.png"));
                std::fs::write(&p, [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A, i as u8]).unwrap();
                let uri = p.to_string_lossy().into_owned();
                if i == 0 {
                    ImageRef::front(uri)
                } else {
                    ImageRef::other(uri)
                }
            })
            .collect();
        HouseholdRecord { id: "h1".into(), event: Event::Eaton, ground_truth: RawDamageCategory::Major, images }
    }

    #[test]
    fn prompt_is_golden() {
        let golden = include_str!("../../tests/golden/direct_prompt.txt");
        assert_eq!(DIRECT_PROMPT, golden.strip_suffix('\n').unwrap_or(golden));
    }

    #[test]
    fn mock_pass_through() {
        let dir = tempfile::tempdir().unwrap();
        let mock = MockProvider::always("Destroyed");
        let r = classify_direct(&household(dir.path(), 1), ViewMode::SingleFront, &VerbatimUris, &mock, &DirectOptions::new("m"))
            .unwrap();
        assert_eq!(r.label, AssessmentLabel::Destroyed);
        assert_eq!(r.attempts, 1);
        assert_eq!(r.raw_text, "Destroyed");
    }

    #[test]
    fn multi_view_sends_three_images_and_one_prompt() {
        let dir = tempfile::tempdir().unwrap();
        let mock = MockProvider::always("Affected");
        let h = household(dir.path(), 4);
        classify_direct(&h, ViewMode::MultiView, &VerbatimUris, &mock, &DirectOptions::new("m")).unwrap();
        classify_direct(&h, ViewMode::SingleFront, &VerbatimUris, &mock, &DirectOptions::new("m")).unwrap();
        let calls = mock.calls();
        assert_eq!(calls[0].n_images, 3);
        assert_eq!(calls[0].prompt, DIRECT_PROMPT);
        assert_eq!(calls[0].temperature, 0.5);
        assert_eq!(calls[0].max_tokens, 10);
        assert_eq!(calls[1].n_images, 1);
    }

    #[test]
    fn unparseable_then_valid_takes_two_attempts() {
        let dir = tempfile::tempdir().unwrap();
        let h = household(dir.path(), 1);
        let front = VerbatimUris.encode(&h.images[0]).unwrap();
        let fp = fingerprint(DIRECT_PROMPT, &[front]);
        let mock = MockProvider::new().script_sequence(fp, vec!["maybe affected?".into(), "Affected".into()]);
        let r = classify_direct(&h, ViewMode::SingleFront, &VerbatimUris, &mock, &DirectOptions::new("m")).unwrap();
        assert_eq!(r.label, AssessmentLabel::Affected);
        assert_eq!(r.attempts, 2);
        let calls = mock.calls();
        assert_eq!(calls[1].temperature, RETRY_TEMPERATURE);
        assert_eq!(r.usage, calls.iter().map(|c| crate::provider::estimate_usage(
            &ModelRequest {
                model_id: "m".into(),
                prompt: c.prompt.clone(),
                images: vec![EncodedImage::from_bytes("image/png", b"x")],
                max_tokens: 10,
                temperature: 0.5,
            },
            &c.reply,
        )).sum());
    }

    #[test]
    fn persistent_garbage_fails_after_retries() {
        let dir = tempfile::tempdir().unwrap();
        let mock = MockProvider::always("I cannot tell");
        let err = classify_direct(&household(dir.path(), 1), ViewMode::SingleFront, &VerbatimUris, &mock, &DirectOptions::new("m"))
            .unwrap_err();
        assert!(matches!(err, PipelineError::ClassificationUnparseable { attempts: 2, .. }));
        assert_eq!(mock.call_count(), 2);
    }

    #[test]
    fn unreadable_image_is_reported() {
        let h = HouseholdRecord {
            id: "h".into(),
            event: Event::Eaton,
            ground_truth: RawDamageCategory::NoDamage,
            images: vec![ImageRef::front("/nonexistent/x.jpg")],
        };
        let mock = MockProvider::new();
        let err = classify_direct(&h, ViewMode::SingleFront, &VerbatimUris, &mock, &DirectOptions::new("m")).unwrap_err();
        assert!(matches!(err, PipelineError::Image(_)));
        assert_eq!(mock.call_count(), 0);
    }
}
