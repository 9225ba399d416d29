//! Offline stand-in for the hosted models.
//!
//! A [`Scene`] says what each image shows: a set of visible damage
//! indicators and, optionally, a direct label. Images are identified by the
//! SHA-256 of their bytes, so the scene works on whatever the pipelines
//! actually send. [`scene_provider`] answers the three request kinds the
//! pipelines issue:
//!
//! * indicator extraction: the union of indicators visible in the attached
//!   images, for exactly the questions listed in the prompt;
//! * adjudication: the decision rule as written in the prompt text, applied
//!   to the JSON it carries (see [`adjudicate_prompt`]);
//! * direct classification: the most severe label among the images.
//!
//! [`synthetic_dataset`] writes a manifest, image files and a matching
//! scene for end-to-end runs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{AssessmentLabel, Event, HouseholdRecord, ImageRef, RawDamageCategory};
use crate::ingestion::{write_manifest, DatasetManifest};
use crate::pipeline::indicators::IndicatorLibrary;
use crate::provider::{hex, MockProvider, ModelRequest};

const ADJUDICATION_MARKER: &str = "Now, decide for this building:";
const EXTRACTION_PREFIX: &str = "Analyze the image";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read scene {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("scene image {digest}: unknown indicator '{name}'")]
    UnknownIndicator { digest: String, name: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneImage {
    /// Indicator keys or question texts visible in this image.
    #[serde(default)]
    pub indicators: BTreeSet<String>,
    /// Direct-classification answer; derived from the indicators if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<AssessmentLabel>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    /// Keyed by lowercase hex SHA-256 of the image bytes.
    pub images: BTreeMap<String, SceneImage>,
}

/// Normalized visible questions and optional direct label of one image.
type ImageFacts = (BTreeSet<String>, Option<AssessmentLabel>);

pub fn image_digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Every indicator the built-in libraries know, as (key, question).
fn known_indicators() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for lib in [IndicatorLibrary::appendix_full(), IndicatorLibrary::alg2_min()] {
        for ind in lib.indicators() {
            if !out.iter().any(|(k, _)| *k == ind.key) {
                out.push((ind.key.clone(), ind.question.clone()));
            }
        }
    }
    out
}

fn norm(q: &str) -> String {
    q.trim().trim_end_matches('?').trim().to_lowercase()
}

impl Scene {
    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let err = |reason: String| SceneError::Read { path: path.display().to_string(), reason };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let scene: Scene = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        scene.questions()?;
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("scene serializes"))?;
        Ok(())
    }

    pub fn insert(&mut self, bytes: &[u8], image: SceneImage) {
        self.images.insert(image_digest(bytes), image);
    }

    /// Visible questions (normalized) per image digest. Keys are mapped to
    /// the questions of the built-in libraries; anything else is taken as a
    /// question only if it is not snake_case.
    fn questions(&self) -> Result<BTreeMap<String, ImageFacts>, SceneError> {
        let known = known_indicators();
        let mut out = BTreeMap::new();
        for (digest, img) in &self.images {
            let mut qs = BTreeSet::new();
            for name in &img.indicators {
                let q = match known.iter().find(|(k, _)| k == name) {
                    Some((_, q)) => q.clone(),
                    None if name.contains(' ') => name.clone(),
                    None => return Err(SceneError::UnknownIndicator { digest: digest.clone(), name: name.clone() }),
                };
                qs.insert(norm(&q));
            }
            out.insert(digest.clone(), (qs, img.label));
        }
        Ok(out)
    }
}

/// Applies the adjudication prompt's own rule to the JSON object it
/// carries: a true attribute mentioning "destroyed" gives Destroyed, any
/// other true attribute gives Affected, otherwise No Damage. Works from
/// the prompt text alone.
pub fn adjudicate_prompt(prompt: &str) -> Option<AssessmentLabel> {
    let (_, rest) = prompt.split_once(ADJUDICATION_MARKER)?;
    let line = rest.trim_start().lines().next()?;
    let attrs: serde_json::Map<String, serde_json::Value> = serde_json::from_str(line).ok()?;
    let truthy: Vec<&String> = attrs.iter().filter(|(_, v)| v.as_bool() == Some(true)).map(|(k, _)| k).collect();
    Some(if truthy.iter().any(|k| k.to_lowercase().contains("destroyed")) {
        AssessmentLabel::Destroyed
    } else if !truthy.is_empty() {
        AssessmentLabel::Affected
    } else {
        AssessmentLabel::NoDamage
    })
}

/// Questions listed in an extraction prompt, in prompt order.
fn prompt_questions(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .filter_map(|l| {
            let l = l.trim();
            let inner = l.strip_prefix('\'')?;
            let (q, tail) = inner.split_once("':")?;
            tail.trim().starts_with("true/false").then(|| q.to_string())
        })
        .collect()
}

fn label_from_questions(visible: &BTreeSet<String>) -> AssessmentLabel {
    if visible.iter().any(|q| q.contains("destroyed")) {
        AssessmentLabel::Destroyed
    } else if !visible.is_empty() {
        AssessmentLabel::Affected
    } else {
        AssessmentLabel::NoDamage
    }
}

/// Mock provider whose answers follow `scene`. Unknown images show
/// nothing.
pub fn scene_provider(scene: &Scene) -> Result<MockProvider, SceneError> {
    let table = scene.questions()?;
    Ok(MockProvider::new().with_responder(move |request: &ModelRequest| {
        if request.prompt.contains(ADJUDICATION_MARKER) {
            return adjudicate_prompt(&request.prompt).map(|l| l.display_name().to_string());
        }
        let seen: Vec<&ImageFacts> = request
            .images
            .iter()
            .filter_map(|img| img.decode().ok())
            .filter_map(|bytes| table.get(&image_digest(&bytes)))
            .collect();
        let visible: BTreeSet<String> = seen.iter().flat_map(|(qs, _)| qs.iter().cloned()).collect();

        if request.prompt.starts_with(EXTRACTION_PREFIX) {
            let answers: serde_json::Map<String, serde_json::Value> = prompt_questions(&request.prompt)
                .into_iter()
                .map(|q| {
                    let hit = visible.contains(&norm(&q));
                    (q, serde_json::Value::Bool(hit))
                })
                .collect();
            return Some(serde_json::Value::Object(answers).to_string());
        }
        let label = seen
            .iter()
            .map(|(qs, label)| label.unwrap_or_else(|| label_from_questions(qs)))
            .max()
            .unwrap_or(AssessmentLabel::NoDamage);
        Some(label.display_name().to_string())
    }))
}

/// Where a synthetic household's damage can be seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    Front,
    OtherViewsOnly,
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_records: usize,
    pub seed: u64,
    pub event: Event,
    /// Fraction of damaged households whose damage shows only on non-front
    /// views (and which therefore have extra views).
    pub hidden_fraction: f64,
}

impl SyntheticSpec {
    pub fn new(n_records: usize, seed: u64) -> Self {
        SyntheticSpec { n_records, seed, event: Event::Eaton, hidden_fraction: 0.3 }
    }
}

fn fake_jpeg(tag: &str) -> Vec<u8> {
    let mut bytes = vec![0xFF, 0xD8, 0xFF, 0xE0];
    bytes.extend_from_slice(tag.as_bytes());
    bytes.extend_from_slice(&[0xFF, 0xD9]);
    bytes
}

fn indicators_for(category: RawDamageCategory, rng: &mut ChaCha8Rng) -> BTreeSet<String> {
    let affect = [
        "structure_damaged",
        "glass_or_windows_broken",
        "burn_marks_on_structure",
        "vegetation_burnt",
        "roof_damaged",
        "debris_around_house",
    ];
    let mut out = BTreeSet::new();
    match category {
        RawDamageCategory::NoDamage => {}
        RawDamageCategory::Destroyed => {
            out.insert("house_destroyed".to_string());
            out.insert("debris_around_house".to_string());
        }
        _ => {
            let n = 1 + (rng.next_u32() % 2) as usize;
            for _ in 0..n {
                out.insert(affect[(rng.next_u32() as usize) % affect.len()].to_string());
            }
        }
    }
    out
}

/// Writes `manifest.jsonl`, `scene.json` and image files under `dir`.
/// Categories cycle through the five raw categories; the output is a pure
/// function of `spec`.
pub fn synthetic_dataset(dir: &Path, spec: &SyntheticSpec) -> Result<DatasetManifest, SceneError> {
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut scene = Scene::default();
    let mut records = Vec::with_capacity(spec.n_records);
    let weights = [
        (RawDamageCategory::NoDamage, 31u32),
        (RawDamageCategory::Affected, 36),
        (RawDamageCategory::Minor, 2),
        (RawDamageCategory::Major, 1),
        (RawDamageCategory::Destroyed, 30),
    ];

    for i in 0..spec.n_records {
        let id = format!("h{i:05}");
        let mut pick = rng.next_u32() % 100;
        let category = weights
            .iter()
            .find(|(_, w)| {
                let hit = pick < *w;
                pick = pick.saturating_sub(*w);
                hit
            })
            .map(|(c, _)| *c)
            .unwrap_or(RawDamageCategory::NoDamage);
        let damage = indicators_for(category, &mut rng);
        let hidden = !damage.is_empty()
            && category != RawDamageCategory::Destroyed
            && (rng.next_u64() as f64 / u64::MAX as f64) < spec.hidden_fraction;
        let n_views = if hidden { 2 + (rng.next_u32() % 2) as usize } else { 1 + (rng.next_u32() % 3) as usize };

        let mut images = Vec::with_capacity(n_views);
        for v in 0..n_views {
            let name = format!("{id}_{v}.jpg");
            let bytes = fake_jpeg(&format!("{}:{id}:{v}", spec.seed));
            std::fs::write(img_dir.join(&name), &bytes)?;
            let shows = match (hidden, v) {
                (true, 0) => BTreeSet::new(),
                (true, _) => damage.clone(),
                (false, 0) => damage.clone(),
                (false, _) => BTreeSet::new(),
            };
            scene.insert(&bytes, SceneImage { indicators: shows, label: None });
            let uri = format!("images/{name}");
            images.push(if v == 0 { ImageRef::front(uri) } else { ImageRef::other(uri) });
        }
        records.push(HouseholdRecord { id, event: spec.event.clone(), ground_truth: category, images });
    }

    let mut manifest = DatasetManifest::new(format!("synthetic-{}", spec.seed), records);
    manifest.base_dir = Some(dir.to_path_buf());
    write_manifest(&dir.join("manifest.jsonl"), &manifest)?;
    scene.save(&dir.join("scene.json"))?;
    Ok(manifest)
}
