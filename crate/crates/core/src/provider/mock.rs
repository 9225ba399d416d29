//! Deterministic scripted provider for offline runs and tests.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::Serialize;

use super::{estimate_usage, ModelRequest, ModelResponse, Provider, ProviderError};

/// Computes a reply from the request when no script matches.
pub type Responder = Box<dyn Fn(&ModelRequest) -> Option<String> + Send + Sync>;

/// One call as seen by the mock.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallRecord {
    pub fingerprint: String,
    pub model_id: String,
    pub prompt: String,
    pub n_images: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub reply: String,
}

/// Answers requests by fingerprint lookup.
///
/// A fingerprint may be scripted with a sequence of replies: successive
/// calls walk the sequence and then keep repeating its last element.
/// Unscripted requests go to the responder, if any, then to the default
/// reply. Usage is the deterministic [`estimate_usage`] figure.
pub struct MockProvider {
    scripts: HashMap<String, Vec<String>>,
    default_reply: String,
    responder: Option<Responder>,
    cursors: Mutex<HashMap<String, usize>>,
    log: Mutex<Vec<CallRecord>>,
}

impl Default for MockProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl MockProvider {
    pub const DEFAULT_REPLY: &'static str = "No Damage";

    pub fn new() -> Self {
        MockProvider {
            scripts: HashMap::new(),
            default_reply: Self::DEFAULT_REPLY.to_string(),
            responder: None,
            cursors: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn from_fixtures(fixtures: HashMap<String, Vec<String>>) -> Self {
        MockProvider { scripts: fixtures, ..Self::new() }
    }

    /// Every request gets `reply`.
    pub fn always(reply: impl Into<String>) -> Self {
        Self::new().with_default(reply)
    }

    pub fn with_default(mut self, reply: impl Into<String>) -> Self {
        self.default_reply = reply.into();
        self
    }

    pub fn with_responder(mut self, responder: impl Fn(&ModelRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        self.responder = Some(Box::new(responder));
        self
    }

    pub fn script(self, fingerprint: impl Into<String>, reply: impl Into<String>) -> Self {
        self.script_sequence(fingerprint, vec![reply.into()])
    }

    pub fn script_sequence(mut self, fingerprint: impl Into<String>, replies: Vec<String>) -> Self {
        self.scripts.insert(fingerprint.into(), replies);
        self
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    fn reply_for(&self, request: &ModelRequest, fingerprint: &str) -> String {
        if let Some(seq) = self.scripts.get(fingerprint).filter(|s| !s.is_empty()) {
            let mut cursors = self.cursors.lock().unwrap_or_else(|e| e.into_inner());
            let pos = cursors.entry(fingerprint.to_string()).or_insert(0);
            let reply = seq[(*pos).min(seq.len() - 1)].clone();
            *pos += 1;
            return reply;
        }
        self.responder
            .as_ref()
            .and_then(|r| r(request))
            .unwrap_or_else(|| self.default_reply.clone())
    }
}

impl Provider for MockProvider {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        request.validate()?;
        let fingerprint = request.fingerprint();
        let text = self.reply_for(request, &fingerprint);
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(CallRecord {
            fingerprint,
            model_id: request.model_id.clone(),
            prompt: request.prompt.clone(),
            n_images: request.images.len(),
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            reply: text.clone(),
        });
        Ok(ModelResponse {
            usage: estimate_usage(request, &text),
            text,
            latency_ms: 0,
            raw_finish_reason: "stop".into(),
            usage_estimated: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::EncodedImage;
    use crate::provider::fingerprint;

    fn request(prompt: &str, images: Vec<EncodedImage>) -> ModelRequest {
        ModelRequest { model_id: "mock".into(), prompt: prompt.into(), images, max_tokens: 300, temperature: 0.1 }
    }

    #[test]
    fn always_destroyed() {
        let mock = MockProvider::always("Destroyed");
        assert_eq!(mock.complete(&request("x", vec![])).unwrap().text, "Destroyed");
    }

    #[test]
    fn scripted_fingerprint_echoes_verbatim() {
        let images = vec![EncodedImage::from_bytes("image/png", b"abc")];
        let json = r#"{"is the house destroyed": true}"#;
        let mock = MockProvider::new().script(fingerprint("P", &images), json);
        assert_eq!(mock.complete(&request("P", images.clone())).unwrap().text, json);
        // same prompt, different images: unscripted
        assert_eq!(mock.complete(&request("P", vec![])).unwrap().text, "No Damage");
    }

    #[test]
    fn identical_calls_are_identical_and_logged() {
        let mock = MockProvider::always("Affected");
        let a = mock.complete(&request("P", vec![])).unwrap();
        let b = mock.complete(&request("P", vec![])).unwrap();
        assert_eq!(a, b);
        assert_eq!(mock.call_count(), 2);
        assert_eq!(mock.calls()[0], mock.calls()[1]);
    }

    #[test]
    fn unscripted_default() {
        let mock = MockProvider::new();
        assert_eq!(mock.complete(&request("anything", vec![])).unwrap().text, "No Damage");
    }

    #[test]
    fn sequences_advance_then_repeat() {
        let fp = fingerprint("P", &[]);
        let mock = MockProvider::new().script_sequence(fp, vec!["maybe".into(), "Affected".into()]);
        let texts: Vec<String> = (0..3).map(|_| mock.complete(&request("P", vec![])).unwrap().text).collect();
        assert_eq!(texts, vec!["maybe", "Affected", "Affected"]);
    }

    #[test]
    fn responder_runs_before_default() {
        let mock = MockProvider::new().with_responder(|r| r.prompt.contains("hot").then(|| "Destroyed".to_string()));
        assert_eq!(mock.complete(&request("hot house", vec![])).unwrap().text, "Destroyed");
        assert_eq!(mock.complete(&request("cold house", vec![])).unwrap().text, "No Damage");
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let mut r = request("P", vec![]);
        r.temperature = 3.0;
        assert!(matches!(MockProvider::new().complete(&r), Err(ProviderError::InvalidRequest(_))));
    }
}
