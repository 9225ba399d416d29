//! Damage taxonomies, household records and label parsing shared by every
//! other module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Five-way damage category as recorded by field inspectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RawDamageCategory {
    NoDamage,
    Affected,
    Minor,
    Major,
    Destroyed,
}

impl RawDamageCategory {
    pub const ALL: [RawDamageCategory; 5] = [
        RawDamageCategory::NoDamage,
        RawDamageCategory::Affected,
        RawDamageCategory::Minor,
        RawDamageCategory::Major,
        RawDamageCategory::Destroyed,
    ];

    /// Manifest spelling (`no_damage`, `affected`, ...).
    pub fn as_str(self) -> &'static str {
        match self {
            RawDamageCategory::NoDamage => "no_damage",
            RawDamageCategory::Affected => "affected",
            RawDamageCategory::Minor => "minor",
            RawDamageCategory::Major => "major",
            RawDamageCategory::Destroyed => "destroyed",
        }
    }
}

impl fmt::Display for RawDamageCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown damage category '{0}'")]
pub struct UnknownCategory(pub String);

impl FromStr for RawDamageCategory {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .flat_map(char::to_lowercase)
            .collect();
        match folded.as_str() {
            "nodamage" => Ok(RawDamageCategory::NoDamage),
            "affected" => Ok(RawDamageCategory::Affected),
            "minor" => Ok(RawDamageCategory::Minor),
            "major" => Ok(RawDamageCategory::Major),
            "destroyed" => Ok(RawDamageCategory::Destroyed),
            _ => Err(UnknownCategory(s.to_string())),
        }
    }
}

impl Serialize for RawDamageCategory {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RawDamageCategory {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The three-way label both pipelines emit.
///
/// Variants are declared in severity order, so `Ord` gives
/// `NoDamage < Affected < Destroyed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AssessmentLabel {
    NoDamage,
    Affected,
    Destroyed,
}

impl AssessmentLabel {
    /// Fixed row/column order used by confusion matrices and reports.
    pub const ALL: [AssessmentLabel; 3] = [
        AssessmentLabel::NoDamage,
        AssessmentLabel::Affected,
        AssessmentLabel::Destroyed,
    ];

    pub fn index(self) -> usize {
        match self {
            AssessmentLabel::NoDamage => 0,
            AssessmentLabel::Affected => 1,
            AssessmentLabel::Destroyed => 2,
        }
    }

    /// Spelling used inside prompts and model replies.
    pub fn display_name(self) -> &'static str {
        match self {
            AssessmentLabel::NoDamage => "No Damage",
            AssessmentLabel::Affected => "Affected",
            AssessmentLabel::Destroyed => "Destroyed",
        }
    }

    /// Spelling used in machine-readable files.
    pub fn as_str(self) -> &'static str {
        match self {
            AssessmentLabel::NoDamage => "no_damage",
            AssessmentLabel::Affected => "affected",
            AssessmentLabel::Destroyed => "destroyed",
        }
    }
}

impl fmt::Display for AssessmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for AssessmentLabel {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_label(s)
    }
}

impl Serialize for AssessmentLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for AssessmentLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_label(&s).map_err(serde::de::Error::custom)
    }
}

/// Collapses the inspector taxonomy onto the three assessment labels.
/// Affected, minor and major are merged into `Affected`.
pub fn aggregate_category(raw: RawDamageCategory) -> AssessmentLabel {
    match raw {
        RawDamageCategory::NoDamage => AssessmentLabel::NoDamage,
        RawDamageCategory::Affected | RawDamageCategory::Minor | RawDamageCategory::Major => {
            AssessmentLabel::Affected
        }
        RawDamageCategory::Destroyed => AssessmentLabel::Destroyed,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("unparseable label: {0:?}")]
    UnparseableLabel(String),
}

/// Parses a model reply into a label.
///
/// Surrounding whitespace, quotes and punctuation are stripped and matching
/// is case-insensitive; "No Damage" is accepted with or without the inner
/// space (also with `_`/`-`). The remaining text must be exactly one label:
/// replies that hedge or name several labels are rejected.
pub fn parse_label(text: &str) -> Result<AssessmentLabel, LabelError> {
    let trimmed = text.trim_matches(|c: char| {
        c.is_whitespace() || c.is_ascii_punctuation() || matches!(c, '\u{2018}' | '\u{2019}' | '\u{201c}' | '\u{201d}')
    });
    let folded: String = trimmed
        .split(|c: char| c.is_whitespace() || c == '_' || c == '-')
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    match folded.as_str() {
        "no damage" | "nodamage" => Ok(AssessmentLabel::NoDamage),
        "affected" => Ok(AssessmentLabel::Affected),
        "destroyed" => Ok(AssessmentLabel::Destroyed),
        _ => Err(LabelError::UnparseableLabel(text.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Event {
    Eaton,
    Palisades,
    Other(String),
}

impl Event {
    pub fn as_str(&self) -> &str {
        match self {
            Event::Eaton => "eaton",
            Event::Palisades => "palisades",
            Event::Other(s) => s,
        }
    }
}

impl From<&str> for Event {
    fn from(s: &str) -> Self {
        match s.trim().to_lowercase().as_str() {
            "eaton" => Event::Eaton,
            "palisades" => Event::Palisades,
            _ => Event::Other(s.to_string()),
        }
    }
}

impl Serialize for Event {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Event {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(Event::from(s.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Front,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub uri: String,
    pub view: View,
}

impl ImageRef {
    pub fn front(uri: impl Into<String>) -> Self {
        ImageRef { uri: uri.into(), view: View::Front }
    }

    pub fn other(uri: impl Into<String>) -> Self {
        ImageRef { uri: uri.into(), view: View::Other }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    #[serde(alias = "single")]
    SingleFront,
    #[serde(alias = "multi")]
    MultiView,
}

impl ViewMode {
    pub const MAX_VIEWS: usize = 3;

    /// Short CLI/run-log spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            ViewMode::SingleFront => "single",
            ViewMode::MultiView => "multi",
        }
    }
}

impl fmt::Display for ViewMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for ViewMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "single" | "single_front" | "singlefront" => Ok(ViewMode::SingleFront),
            "multi" | "multi_view" | "multiview" => Ok(ViewMode::MultiView),
            other => Err(format!("unknown view mode '{other}' (expected single|multi)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("household {0}: no images")]
    NoImages(String),
    #[error("household {id}: expected exactly one front view, found {found}")]
    MissingFrontView { id: String, found: usize },
    #[error("household {0}: empty image uri")]
    EmptyUri(String),
    #[error("household has an empty id")]
    EmptyId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdRecord {
    pub id: String,
    pub event: Event,
    pub ground_truth: RawDamageCategory,
    pub images: Vec<ImageRef>,
}

impl HouseholdRecord {
    /// Checks the per-record invariants: non-empty id and images, non-empty
    /// uris, exactly one front view.
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.id.is_empty() {
            return Err(RecordError::EmptyId);
        }
        if self.images.is_empty() {
            return Err(RecordError::NoImages(self.id.clone()));
        }
        if self.images.iter().any(|img| img.uri.is_empty()) {
            return Err(RecordError::EmptyUri(self.id.clone()));
        }
        let fronts = self.images.iter().filter(|img| img.view == View::Front).count();
        if fronts != 1 {
            return Err(RecordError::MissingFrontView { id: self.id.clone(), found: fronts });
        }
        Ok(())
    }

    pub fn front(&self) -> Option<&ImageRef> {
        self.images.iter().find(|img| img.view == View::Front)
    }

    pub fn truth_label(&self) -> AssessmentLabel {
        aggregate_category(self.ground_truth)
    }
}

/// Images sent to the model for `record` under `mode`: the front view first,
/// then (multi-view only) the other views in manifest order, at most three.
pub fn select_views(record: &HouseholdRecord, mode: ViewMode) -> Vec<ImageRef> {
    let Some(front) = record.front() else {
        return Vec::new();
    };
    let mut views = vec![front.clone()];
    if mode == ViewMode::MultiView {
        views.extend(
            record
                .images
                .iter()
                .filter(|img| img.view == View::Other)
                .take(ViewMode::MAX_VIEWS - 1)
                .cloned(),
        );
    }
    views
}
