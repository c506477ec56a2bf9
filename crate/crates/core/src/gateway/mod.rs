//! Uniform access to transcription, chat and synthesis providers.
//!
//! Every call goes through [`Gateway`], which owns retry accounting and
//! latency metering. Providers implement [`Backend`] and report a single
//! attempt's outcome; the gateway decides whether to try again. Only timeouts
//! and transport failures are retried, with exponential backoff and the same
//! request id on every attempt.

mod http;
mod mock;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conversation::{Turn, TurnRole};

pub use http::{HttpChat, HttpSynthesizer, HttpTranscriber};
pub use mock::{MockChat, MockScript, MockSynthesizer, MockTranscriber};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Transcription,
    Chat,
    Synthesis,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::Transcription => "transcription",
            ProviderKind::Chat => "chat",
            ProviderKind::Synthesis => "synthesis",
        }
    }

    pub fn default_timeout_secs(self) -> f64 {
        match self {
            ProviderKind::Transcription => 20.0,
            ProviderKind::Chat => 30.0,
            ProviderKind::Synthesis => 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Endpoint {
    /// Offline provider driven by a JSON mock script.
    Mock {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        script: Option<std::path::PathBuf>,
    },
    Http {
        url: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<String>,
    },
}

/// Provider configuration. Holds the *name* of the credential variable, never its value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub kind: ProviderKind,
    pub endpoint: Endpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_base_secs: f64,
}

fn default_backoff() -> f64 {
    0.5
}

impl ProviderSpec {
    pub fn mock(kind: ProviderKind) -> Self {
        ProviderSpec {
            kind,
            endpoint: Endpoint::Mock { script: None },
            credential_env: None,
            timeout_secs: kind.default_timeout_secs(),
            max_retries: 2,
            backoff_base_secs: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(GatewayError::InvalidSpec(format!(
                "{} timeout must be positive",
                self.kind.as_str()
            )));
        }
        if !(self.backoff_base_secs >= 0.0 && self.backoff_base_secs.is_finite()) {
            return Err(GatewayError::InvalidSpec(
                "backoff base must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Resolve the credential from the environment at call time.
    pub(crate) fn credential(&self) -> Result<Option<Credential>, GatewayError> {
        match &self.credential_env {
            None => Ok(None),
            Some(name) => std::env::var(name)
                .map(|v| Some(Credential(v)))
                .map_err(|_| GatewayError::MissingCredential(name.clone())),
        }
    }
}

/// Secret value; never printed.
pub(crate) struct Credential(String);

impl Credential {
    pub(crate) fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Credential(<redacted>)")
    }
}

/// Opaque reference to a stored audio clip.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AudioRef(pub String);

impl AudioRef {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AudioRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system_prompt: String,
    pub history: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("{kind} provider timed out after {attempts} attempts")]
    Timeout { kind: &'static str, attempts: u32 },
    #[error("{kind} provider unreachable after {attempts} attempts: {message}")]
    Transport {
        kind: &'static str,
        attempts: u32,
        message: String,
    },
    #[error("{kind} provider rejected the request: {message}")]
    ProviderRejected { kind: &'static str, message: String },
    #[error("mock script exhausted after {calls} calls")]
    ScriptExhausted { calls: usize },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("invalid provider spec: {0}")]
    InvalidSpec(String),
    #[error("no {0} provider configured")]
    NotConfigured(&'static str),
    /// A failure replayed from a session log.
    #[error("recorded provider failure: {0}")]
    Recorded(String),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Timeout { .. } => "provider_timeout",
            GatewayError::Transport { .. } => "provider_unreachable",
            GatewayError::ProviderRejected { .. } => "provider_rejected",
            GatewayError::ScriptExhausted { .. } => "script_exhausted",
            GatewayError::Precondition(_) => "precondition_failed",
            GatewayError::MissingCredential(_) => "missing_credential",
            GatewayError::InvalidSpec(_) => "invalid_provider_spec",
            GatewayError::NotConfigured(_) => "provider_not_configured",
            GatewayError::Recorded(_) => "recorded_failure",
        }
    }
}

/// Outcome of one provider attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttemptError {
    Timeout,
    Transport(String),
    Rejected(String),
    ScriptExhausted(usize),
    Fatal(GatewayError),
}

impl AttemptError {
    fn retryable(&self) -> bool {
        matches!(self, AttemptError::Timeout | AttemptError::Transport(_))
    }

    fn label(&self) -> &'static str {
        match self {
            AttemptError::Timeout => "timeout",
            AttemptError::Transport(_) => "transport",
            AttemptError::Rejected(_) => "rejected",
            AttemptError::ScriptExhausted(_) => "script-exhausted",
            AttemptError::Fatal(_) => "fatal",
        }
    }
}

/// A single provider implementation. One call is one attempt.
pub trait Backend<Req: ?Sized, Resp>: Send + Sync {
    fn attempt(&self, request_id: &str, request: &Req) -> Result<Resp, AttemptError>;
}

pub type TranscriptionBackend = dyn Backend<AudioRef, String>;
pub type ChatBackend = dyn Backend<ChatExchange, String>;
pub type SynthesisBackend = dyn Backend<str, AudioRef>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallRecord {
    pub kind: ProviderKind,
    pub request_id: String,
    pub attempt: u32,
    pub duration_ms: f64,
    pub outcome: &'static str,
}

/// Shared in-memory log of provider attempts, used for latency reporting.
#[derive(Debug, Clone, Default)]
pub struct CallLog(Arc<Mutex<Vec<CallRecord>>>);

impl CallLog {
    pub fn records(&self) -> Vec<CallRecord> {
        self.0.lock().expect("call log poisoned").clone()
    }

    pub fn attempts_for(&self, request_id: &str) -> usize {
        self.0
            .lock()
            .expect("call log poisoned")
            .iter()
            .filter(|r| r.request_id == request_id)
            .count()
    }

    fn push(&self, record: CallRecord) {
        self.0.lock().expect("call log poisoned").push(record);
    }
}

struct Route<Req: ?Sized, Resp> {
    spec: ProviderSpec,
    backend: Arc<dyn Backend<Req, Resp>>,
}

pub struct Gateway {
    transcription: Option<Route<AudioRef, String>>,
    chat: Option<Route<ChatExchange, String>>,
    synthesis: Option<Route<str, AudioRef>>,
    log: CallLog,
    next_request: AtomicU64,
    sleeper: fn(Duration),
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field(
                "transcription",
                &self.transcription.as_ref().map(|r| &r.spec),
            )
            .field("chat", &self.chat.as_ref().map(|r| &r.spec))
            .field("synthesis", &self.synthesis.as_ref().map(|r| &r.spec))
            .finish()
    }
}

impl Default for Gateway {
    fn default() -> Self {
        Gateway::new()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Gateway {
            transcription: None,
            chat: None,
            synthesis: None,
            log: CallLog::default(),
            next_request: AtomicU64::new(1),
            sleeper: std::thread::sleep,
        }
    }

    /// Build from specs, constructing mock or HTTP backends as declared.
    pub fn from_specs(specs: &[ProviderSpec]) -> Result<Self, GatewayError> {
        let mut gw = Gateway::new();
        for spec in specs {
            spec.validate()?;
            let script = match &spec.endpoint {
                Endpoint::Mock { script: Some(path) } => Some(MockScript::load(path)?),
                Endpoint::Mock { script: None } => Some(MockScript::default()),
                Endpoint::Http { .. } => None,
            };
            gw = match (spec.kind, script) {
                (ProviderKind::Transcription, Some(s)) => {
                    gw.with_transcriber(spec.clone(), Arc::new(MockTranscriber::new(s.transcripts)))
                }
                (ProviderKind::Chat, Some(s)) => {
                    gw.with_chat(spec.clone(), Arc::new(MockChat::new(s.chat)))
                }
                (ProviderKind::Synthesis, Some(_)) => {
                    gw.with_synthesizer(spec.clone(), Arc::new(MockSynthesizer))
                }
                (ProviderKind::Transcription, None) => {
                    gw.with_transcriber(spec.clone(), Arc::new(HttpTranscriber::new(spec.clone())))
                }
                (ProviderKind::Chat, None) => {
                    gw.with_chat(spec.clone(), Arc::new(HttpChat::new(spec.clone())))
                }
                (ProviderKind::Synthesis, None) => {
                    gw.with_synthesizer(spec.clone(), Arc::new(HttpSynthesizer::new(spec.clone())))
                }
            };
        }
        Ok(gw)
    }

    /// Gateway wired to offline mocks for all three provider kinds.
    pub fn mock(script: MockScript) -> Self {
        Gateway::new()
            .with_transcriber(
                ProviderSpec::mock(ProviderKind::Transcription),
                Arc::new(MockTranscriber::new(script.transcripts)),
            )
            .with_chat(
                ProviderSpec::mock(ProviderKind::Chat),
                Arc::new(MockChat::new(script.chat)),
            )
            .with_synthesizer(
                ProviderSpec::mock(ProviderKind::Synthesis),
                Arc::new(MockSynthesizer),
            )
    }

    pub fn with_transcriber(
        mut self,
        spec: ProviderSpec,
        backend: Arc<TranscriptionBackend>,
    ) -> Self {
        self.transcription = Some(Route { spec, backend });
        self
    }

    pub fn with_chat(mut self, spec: ProviderSpec, backend: Arc<ChatBackend>) -> Self {
        self.chat = Some(Route { spec, backend });
        self
    }

    pub fn with_synthesizer(mut self, spec: ProviderSpec, backend: Arc<SynthesisBackend>) -> Self {
        self.synthesis = Some(Route { spec, backend });
        self
    }

    /// Replace the backoff sleep (tests and simulation skip real waiting).
    pub fn with_sleeper(mut self, sleeper: fn(Duration)) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn call_log(&self) -> &CallLog {
        &self.log
    }

    pub fn has_transcriber(&self) -> bool {
        self.transcription.is_some()
    }

    pub fn has_synthesizer(&self) -> bool {
        self.synthesis.is_some()
    }

    fn request_id(&self, kind: ProviderKind) -> String {
        let n = self.next_request.fetch_add(1, Ordering::Relaxed);
        format!("{}-{n:08}", kind.as_str())
    }

    pub fn transcribe(&self, audio: &AudioRef) -> Result<String, GatewayError> {
        self.transcribe_with_id(audio).1
    }

    /// Like [`Gateway::transcribe`], also returning the request id used.
    pub fn transcribe_with_id(&self, audio: &AudioRef) -> (String, Result<String, GatewayError>) {
        let id = self.request_id(ProviderKind::Transcription);
        let result = match &self.transcription {
            None => Err(GatewayError::NotConfigured("transcription")),
            Some(_) if audio.0.is_empty() => {
                Err(GatewayError::Precondition("empty audio reference".into()))
            }
            Some(route) => self.run(route, &id, audio),
        };
        (id, result)
    }

    pub fn chat_reply(&self, exchange: &ChatExchange) -> Result<String, GatewayError> {
        let Some(route) = &self.chat else {
            return Err(GatewayError::NotConfigured("chat"));
        };
        match exchange.history.last() {
            None => return Err(GatewayError::Precondition("empty chat history".into())),
            Some(turn) if turn.role != TurnRole::Participant => {
                return Err(GatewayError::Precondition(
                    "last turn must be the participant's".into(),
                ))
            }
            Some(_) => {}
        }
        let id = self.request_id(ProviderKind::Chat);
        let reply = self.run(route, &id, exchange)?;
        if reply.trim().is_empty() {
            return Err(GatewayError::ProviderRejected {
                kind: "chat",
                message: "empty reply".into(),
            });
        }
        Ok(reply)
    }

    pub fn synthesize(&self, text: &str) -> Result<AudioRef, GatewayError> {
        let Some(route) = &self.synthesis else {
            return Err(GatewayError::NotConfigured("synthesis"));
        };
        if text.is_empty() {
            return Err(GatewayError::Precondition("empty synthesis text".into()));
        }
        let id = self.request_id(ProviderKind::Synthesis);
        self.run(route, &id, text)
    }

    fn run<Req: ?Sized, Resp>(
        &self,
        route: &Route<Req, Resp>,
        request_id: &str,
        request: &Req,
    ) -> Result<Resp, GatewayError> {
        let spec = &route.spec;
        let kind = spec.kind.as_str();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let started = Instant::now();
            let outcome = route.backend.attempt(request_id, request);
            let elapsed = started.elapsed();
            let label = match &outcome {
                Ok(_) => "ok",
                Err(e) => e.label(),
            };
            self.log.push(CallRecord {
                kind: spec.kind,
                request_id: request_id.to_string(),
                attempt,
                duration_ms: elapsed.as_secs_f64() * 1e3,
                outcome: label,
            });
            tracing::debug!(
                provider = kind,
                request_id,
                attempt,
                duration_ms = elapsed.as_secs_f64() * 1e3,
                outcome = label,
                "provider attempt"
            );
            match outcome {
                Ok(resp) => return Ok(resp),
                Err(err) if err.retryable() && attempt <= spec.max_retries => {
                    let backoff = spec.backoff_base_secs * 2f64.powi(attempt as i32 - 1);
                    (self.sleeper)(Duration::from_secs_f64(backoff));
                }
                Err(err) => {
                    tracing::warn!(provider = kind, request_id, attempt, "provider call failed");
                    return Err(match err {
                        AttemptError::Timeout => GatewayError::Timeout {
                            kind: static_kind(spec.kind),
                            attempts: attempt,
                        },
                        AttemptError::Transport(message) => GatewayError::Transport {
                            kind: static_kind(spec.kind),
                            attempts: attempt,
                            message,
                        },
                        AttemptError::Rejected(message) => GatewayError::ProviderRejected {
                            kind: static_kind(spec.kind),
                            message,
                        },
                        AttemptError::ScriptExhausted(calls) => {
                            GatewayError::ScriptExhausted { calls }
                        }
                        AttemptError::Fatal(e) => e,
                    });
                }
            }
        }
    }
}

fn static_kind(kind: ProviderKind) -> &'static str {
    kind.as_str()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::TurnKind;
    use std::sync::atomic::AtomicU32;

    fn participant_turn(text: &str) -> Turn {
        Turn {
            seq: 0,
            role: TurnRole::Participant,
            kind: TurnKind::Chat,
            text: text.into(),
            question_id: None,
            timestamp: chrono::NaiveDate::from_ymd_opt(2024, 6, 3)
                .unwrap()
                .and_hms_opt(20, 0, 0)
                .unwrap(),
        }
    }

    fn exchange(text: &str) -> ChatExchange {
        ChatExchange {
            system_prompt: "be brief".into(),
            history: vec![participant_turn(text)],
        }
    }

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
        error: AttemptError,
    }

    impl Backend<ChatExchange, String> for Flaky {
        fn attempt(&self, _id: &str, _req: &ChatExchange) -> Result<String, AttemptError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(self.error.clone())
            } else {
                Ok("ok".into())
            }
        }
    }

    fn no_sleep(_: Duration) {}

    fn flaky_gateway(failures: u32, max_retries: u32, error: AttemptError) -> Gateway {
        let mut spec = ProviderSpec::mock(ProviderKind::Chat);
        spec.max_retries = max_retries;
        Gateway::new()
            .with_chat(
                spec,
                Arc::new(Flaky {
                    failures,
                    calls: AtomicU32::new(0),
                    error,
                }),
            )
            .with_sleeper(no_sleep)
    }

    #[test]
    fn retry_accounting_matches_formula() {
        for max_retries in 0..4u32 {
            for failures in 0..6u32 {
                let gw = flaky_gateway(failures, max_retries, AttemptError::Timeout);
                let result = gw.chat_reply(&exchange("hi"));
                let attempts = gw.call_log().records().len() as u32;
                assert_eq!(attempts, 1 + max_retries.min(failures));
                let ids: std::collections::BTreeSet<_> = gw
                    .call_log()
                    .records()
                    .into_iter()
                    .map(|r| r.request_id)
                    .collect();
                assert_eq!(ids.len(), 1, "retries must reuse the request id");
                if failures > max_retries {
                    assert_eq!(
                        result,
                        Err(GatewayError::Timeout {
                            kind: "chat",
                            attempts
                        })
                    );
                } else {
                    assert_eq!(result.unwrap(), "ok");
                }
            }
        }
    }

    #[test]
    fn rejections_are_not_retried() {
        let gw = flaky_gateway(5, 3, AttemptError::Rejected("400".into()));
        let err = gw.chat_reply(&exchange("hi")).unwrap_err();
        assert_eq!(err.code(), "provider_rejected");
        assert_eq!(gw.call_log().records().len(), 1);
    }

    #[test]
    fn chat_preconditions() {
        let gw = Gateway::mock(MockScript {
            chat: vec!["hello!".into()],
            ..MockScript::default()
        });
        let empty = ChatExchange {
            system_prompt: String::new(),
            history: vec![],
        };
        assert!(matches!(
            gw.chat_reply(&empty),
            Err(GatewayError::Precondition(_))
        ));
        let mut agent_last = exchange("hi");
        agent_last.history[0].role = TurnRole::Agent;
        assert!(matches!(
            gw.chat_reply(&agent_last),
            Err(GatewayError::Precondition(_))
        ));
    }

    #[test]
    fn spec_validation() {
        let mut spec = ProviderSpec::mock(ProviderKind::Chat);
        spec.timeout_secs = 0.0;
        assert!(spec.validate().is_err());
        let spec: ProviderSpec = serde_json::from_str(
            r#"{"kind":"chat","endpoint":{"type":"http","url":"http://x"},"credential_env":"DIARY_CHAT_API_KEY","timeout_secs":30,"max_retries":2}"#,
        )
        .unwrap();
        assert_eq!(spec.backoff_base_secs, 0.5);
        assert!(!format!("{spec:?}").contains("sk-"));
    }

    #[test]
    fn credential_debug_is_redacted() {
        let c = Credential("sk-very-secret".into());
        assert!(!format!("{c:?}").contains("secret"));
    }

    #[test]
    fn unconfigured_provider() {
        let gw = Gateway::new();
        assert_eq!(
            gw.synthesize("x").unwrap_err(),
            GatewayError::NotConfigured("synthesis")
        );
    }
}
