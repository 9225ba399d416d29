//! Damage-indicator libraries, indicator answers, and the tolerant parser
//! for indicator replies.
//!
//! Two libraries ship built in:
//!
//! * `alg2-min`: the six questions of the original two-stage prompt.
//! * `appendix-full` (default): the eleven literature-derived questions.
//!
//! Custom libraries are JSON arrays of `{"key", "question", "role"}` objects
//! with `role` either `"destruction"` or `"affect"`.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorRole {
    /// A true answer means the house is destroyed.
    Destruction,
    /// A true answer means the house is at least affected.
    Affect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Indicator {
    pub key: String,
    pub question: String,
    pub role: IndicatorRole,
}

impl Indicator {
    fn new(key: &str, question: &str, role: IndicatorRole) -> Self {
        Indicator { key: key.into(), question: question.into(), role }
    }
}

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("cannot read indicator library {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("invalid indicator library: {0}")]
    Invalid(String),
    #[error("unknown indicator preset '{0}' (expected alg2-min or appendix-full)")]
    UnknownPreset(String),
}

/// Ordered list of indicator questions. Order drives both the prompt and
/// the JSON rendering handed to the adjudicator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Indicator>", into = "Vec<Indicator>")]
pub struct IndicatorLibrary {
    indicators: Vec<Indicator>,
}

impl TryFrom<Vec<Indicator>> for IndicatorLibrary {
    type Error = LibraryError;

    fn try_from(indicators: Vec<Indicator>) -> Result<Self, Self::Error> {
        IndicatorLibrary::new(indicators)
    }
}

impl From<IndicatorLibrary> for Vec<Indicator> {
    fn from(lib: IndicatorLibrary) -> Self {
        lib.indicators
    }
}

impl IndicatorLibrary {
    pub const ALG2_MIN: &'static str = "alg2-min";
    pub const APPENDIX_FULL: &'static str = "appendix-full";
    pub const DEFAULT_PRESET: &'static str = Self::APPENDIX_FULL;

    pub fn new(indicators: Vec<Indicator>) -> Result<Self, LibraryError> {
        let invalid = |m: String| Err(LibraryError::Invalid(m));
        if indicators.is_empty() {
            return invalid("library is empty".into());
        }
        let mut keys = HashSet::new();
        let mut questions = HashSet::new();
        for ind in &indicators {
            let snake = !ind.key.is_empty()
                && ind.key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
            if !snake {
                return invalid(format!("key '{}' is not snake_case", ind.key));
            }
            if ind.question.trim().is_empty() {
                return invalid(format!("indicator '{}' has an empty question", ind.key));
            }
            if !keys.insert(ind.key.as_str()) {
                return invalid(format!("duplicate key '{}'", ind.key));
            }
            if !questions.insert(normalize_question(&ind.question)) {
                return invalid(format!("duplicate question '{}'", ind.question));
            }
        }
        let destruction = indicators.iter().filter(|i| i.role == IndicatorRole::Destruction).count();
        if destruction != 1 {
            return invalid(format!("expected exactly one destruction indicator, found {destruction}"));
        }
        Ok(IndicatorLibrary { indicators })
    }

    /// The six-question library.
    pub fn alg2_min() -> Self {
        use IndicatorRole::*;
        IndicatorLibrary {
            indicators: vec![
                Indicator::new("house_destroyed", "is the house destroyed", Destruction),
                Indicator::new("structure_damaged", "is the structure damaged", Affect),
                Indicator::new("glass_or_windows_broken", "is the glass or windows broken", Affect),
                Indicator::new("furniture_burnt", "is the furniture burnt", Affect),
                Indicator::new("burn_marks_on_structure", "are there burn marks on the structure", Affect),
                Indicator::new("vegetation_burnt", "is the vegetation around burnt", Affect),
            ],
        }
    }

    /// The eleven-question library.
    pub fn appendix_full() -> Self {
        use IndicatorRole::*;
        IndicatorLibrary {
            indicators: vec![
                Indicator::new("house_destroyed", "is the house destroyed", Destruction),
                Indicator::new("structure_damaged", "is the structure damaged", Affect),
                Indicator::new(
                    "any_damage_visible",
                    "is there any (even minor) damage visible on or around the house",
                    Affect,
                ),
                Indicator::new(
                    "fire_discoloration",
                    "is there discoloration of walls or roof or around the house due to fire",
                    Affect,
                ),
                Indicator::new("signs_of_fire_affect", "are there any signs of even small affect due to fire", Affect),
                Indicator::new("glass_or_windows_broken", "is the glass or windows broken", Affect),
                Indicator::new("furniture_burnt", "is the furniture burnt", Affect),
                Indicator::new("burn_marks_on_structure", "are there burn marks on the structure", Affect),
                Indicator::new("vegetation_burnt", "is the vegetation around burnt", Affect),
                Indicator::new("roof_damaged", "is the roof of the house damaged", Affect),
                Indicator::new("debris_around_house", "is there debris around the house", Affect),
            ],
        }
    }

    pub fn preset(name: &str) -> Result<Self, LibraryError> {
        match name {
            Self::ALG2_MIN => Ok(Self::alg2_min()),
            Self::APPENDIX_FULL => Ok(Self::appendix_full()),
            other => Err(LibraryError::UnknownPreset(other.to_string())),
        }
    }

    pub fn load(path: &Path) -> Result<Self, LibraryError> {
        let read_err = |reason: String| LibraryError::Read { path: path.display().to_string(), reason };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let indicators: Vec<Indicator> = serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        Self::new(indicators)
    }

    /// A preset name, or otherwise a path to a library file.
    pub fn resolve(preset_or_path: &str) -> Result<Self, LibraryError> {
        match Self::preset(preset_or_path) {
            Ok(lib) => Ok(lib),
            Err(_) if Path::new(preset_or_path).exists() => Self::load(Path::new(preset_or_path)),
            Err(e) => Err(e),
        }
    }

    pub fn indicators(&self) -> &[Indicator] {
        &self.indicators
    }

    pub fn len(&self) -> usize {
        self.indicators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicators.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.indicators.iter().map(|i| i.key.as_str())
    }

    pub fn destruction(&self) -> &Indicator {
        self.indicators
            .iter()
            .find(|i| i.role == IndicatorRole::Destruction)
            .expect("library invariant: one destruction indicator")
    }

    /// Library indicator a reply key refers to: the snake_case key or the
    /// question text (case-insensitive, trailing `?` ignored).
    fn lookup(&self, reply_key: &str) -> Option<&Indicator> {
        let norm = normalize_question(reply_key);
        self.indicators.iter().find(|i| i.key == reply_key || normalize_question(&i.question) == norm)
    }

    /// Stage-1 prompt listing every question with a `true/false` slot.
    pub fn extraction_prompt(&self) -> String {
        let mut prompt = String::from("Analyze the image and answer with a JSON object in the following format:\n{\n");
        let last = self.indicators.len() - 1;
        for (i, ind) in self.indicators.iter().enumerate() {
            let comma = if i == last { "" } else { "," };
            let _ = writeln!(prompt, "  '{}': true/false{comma}", ind.question);
        }
        prompt.push_str("}\nOnly output the JSON object, nothing else.");
        prompt
    }
}

fn normalize_question(q: &str) -> String {
    q.trim().trim_end_matches('?').trim().to_lowercase()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndicatorError {
    #[error("no JSON object found in reply")]
    NoObject,
    #[error("reply contains more than one top-level JSON object")]
    MultipleObjects,
    #[error("malformed JSON: {0}")]
    Malformed(String),
    #[error("unknown indicator '{0}'")]
    UnknownKey(String),
    #[error("indicator '{0}' answered twice")]
    DuplicateKey(String),
    #[error("missing indicator(s): {}", .0.join(", "))]
    MissingKeys(Vec<String>),
    #[error("indicator '{key}' has non-boolean value {value}")]
    NotBoolean { key: String, value: String },
}

/// Boolean answers keyed by indicator key, complete for one library.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndicatorSet {
    values: BTreeMap<String, bool>,
}

impl IndicatorSet {
    /// Checks that `values` covers exactly the library's keys.
    pub fn new(library: &IndicatorLibrary, values: BTreeMap<String, bool>) -> Result<Self, IndicatorError> {
        let set = IndicatorSet { values };
        set.check_complete(library)?;
        Ok(set)
    }

    pub fn all(library: &IndicatorLibrary, value: bool) -> Self {
        IndicatorSet { values: library.keys().map(|k| (k.to_string(), value)).collect() }
    }

    /// Assignment whose `i`-th library indicator is bit `i` of `bits`.
    pub fn from_bits(library: &IndicatorLibrary, bits: u64) -> Self {
        IndicatorSet {
            values: library.keys().enumerate().map(|(i, k)| (k.to_string(), bits >> i & 1 == 1)).collect(),
        }
    }

    pub fn check_complete(&self, library: &IndicatorLibrary) -> Result<(), IndicatorError> {
        if let Some(extra) = self.values.keys().find(|k| !library.keys().any(|lk| lk == k.as_str())) {
            return Err(IndicatorError::UnknownKey(extra.clone()));
        }
        let missing: Vec<String> =
            library.keys().filter(|k| !self.values.contains_key(*k)).map(str::to_string).collect();
        if !missing.is_empty() {
            return Err(IndicatorError::MissingKeys(missing));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<bool> {
        self.values.get(key).copied()
    }

    pub fn set(&mut self, key: &str, value: bool) {
        if let Some(v) = self.values.get_mut(key) {
            *v = value;
        }
    }

    pub fn values(&self) -> &BTreeMap<String, bool> {
        &self.values
    }

    pub fn count_true(&self) -> usize {
        self.values.values().filter(|v| **v).count()
    }

    /// Single-line JSON object keyed by question text, in library order.
    pub fn to_question_json(&self, library: &IndicatorLibrary) -> String {
        let parts: Vec<String> = library
            .indicators()
            .iter()
            .map(|ind| {
                let q = serde_json::to_string(&ind.question).expect("string serialization");
                format!("{q}: {}", self.get(&ind.key).unwrap_or(false))
            })
            .collect();
        format!("{{{}}}", parts.join(", "))
    }
}

fn strip_code_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    // drop the info string (e.g. "json") up to the first newline
    let body = rest.split_once('\n').map(|(_, b)| b).unwrap_or(rest);
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

/// Byte ranges of balanced top-level `{...}` objects, skipping braces inside
/// string literals (single- or double-quoted).
fn top_level_objects(text: &str) -> Vec<(usize, usize)> {
    let mut found = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, ch) in text.char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == q {
                quote = None;
            }
            continue;
        }
        match ch {
            '"' if depth > 0 => quote = Some('"'),
            '\'' if depth > 0 => quote = Some('\''),
            '{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            '}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    found.push((start, i + 1));
                }
            }
            _ => {}
        }
    }
    found
}

fn parse_object(candidate: &str) -> Result<Map<String, Value>, IndicatorError> {
    let strict = serde_json::from_str::<Value>(candidate);
    let value = match strict {
        Ok(v) => v,
        // replies sometimes copy the single-quoted format of the prompt
        Err(e) => serde_json::from_str::<Value>(&candidate.replace('\'', "\""))
            .map_err(|_| IndicatorError::Malformed(e.to_string()))?,
    };
    match value {
        Value::Object(map) => Ok(map),
        other => Err(IndicatorError::Malformed(format!("expected an object, got {other}"))),
    }
}

fn as_bool(key: &str, value: &Value) -> Result<bool, IndicatorError> {
    match value {
        Value::Bool(b) => Ok(*b),
        Value::String(s) if s.trim().eq_ignore_ascii_case("true") => Ok(true),
        Value::String(s) if s.trim().eq_ignore_ascii_case("false") => Ok(false),
        other => Err(IndicatorError::NotBoolean { key: key.to_string(), value: other.to_string() }),
    }
}

/// Parses an indicator reply.
///
/// Tolerated: a surrounding markdown code fence, prose before or after a
/// single top-level object, single-quoted keys, and `"true"`/`"false"`
/// strings. Not tolerated: missing, unknown or repeated indicators, or
/// non-boolean answers.
pub fn parse_indicator_reply(text: &str, library: &IndicatorLibrary) -> Result<IndicatorSet, IndicatorError> {
    let body = strip_code_fences(text);
    let objects = top_level_objects(body);
    let (start, end) = match objects.as_slice() {
        [] => return Err(IndicatorError::NoObject),
        [one] => *one,
        _ => return Err(IndicatorError::MultipleObjects),
    };
    let map = parse_object(&body[start..end])?;

    let mut values = BTreeMap::new();
    for (reply_key, value) in &map {
        let ind = library.lookup(reply_key).ok_or_else(|| IndicatorError::UnknownKey(reply_key.clone()))?;
        if values.insert(ind.key.clone(), as_bool(reply_key, value)?).is_some() {
            return Err(IndicatorError::DuplicateKey(ind.key.clone()));
        }
    }
    IndicatorSet::new(library, values)
}
