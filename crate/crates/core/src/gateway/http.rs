//! HTTPS providers.
//!
//! Chat uses the widely deployed chat-completions request shape. Transcription
//! and synthesis use a small JSON protocol:
//! `POST {"request_id","audio_ref","model"} -> {"text"}` and
//! `POST {"request_id","text","model"} -> {"audio_ref"}`.

use serde_json::{json, Value};

use super::{AttemptError, AudioRef, Backend, ChatExchange, ProviderSpec};
use crate::conversation::TurnRole;
use crate::gateway::Endpoint;

fn agent_for(spec: &ProviderSpec) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(spec.timeout()))
        .http_status_as_error(false)
        .build()
        .into()
}

fn endpoint(spec: &ProviderSpec) -> (&str, Option<&str>) {
    match &spec.endpoint {
        Endpoint::Http { url, model } => (url.as_str(), model.as_deref()),
        Endpoint::Mock { .. } => ("", None),
    }
}

fn post_json(
    agent: &ureq::Agent,
    spec: &ProviderSpec,
    request_id: &str,
    body: &Value,
) -> Result<Value, AttemptError> {
    let (url, _) = endpoint(spec);
    let credential = spec.credential().map_err(AttemptError::Fatal)?;
    let mut req = agent
        .post(url)
        .header("Idempotency-Key", request_id)
        .header("X-Request-Id", request_id);
    if let Some(c) = &credential {
        req = req.header("Authorization", &format!("Bearer {}", c.expose()));
    }
    let mut resp = req.send_json(body).map_err(classify)?;
    let status = resp.status().as_u16();
    if !(200..300).contains(&status) {
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        let snippet: String = text.chars().take(200).collect();
        return Err(AttemptError::Rejected(format!(
            "status {status}: {snippet}"
        )));
    }
    resp.body_mut()
        .read_json::<Value>()
        .map_err(|e| AttemptError::Rejected(format!("malformed response body: {e}")))
}

fn classify(err: ureq::Error) -> AttemptError {
    match err {
        ureq::Error::Timeout(_) => AttemptError::Timeout,
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => AttemptError::Timeout,
        ureq::Error::Io(e) => AttemptError::Transport(e.to_string()),
        ureq::Error::HostNotFound => AttemptError::Transport("host not found".into()),
        ureq::Error::ConnectionFailed => AttemptError::Transport("connection failed".into()),
        ureq::Error::StatusCode(code) => AttemptError::Rejected(format!("status {code}")),
        other => AttemptError::Rejected(other.to_string()),
    }
}

fn field(body: &Value, pointer: &str) -> Result<String, AttemptError> {
    body.pointer(pointer)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| AttemptError::Rejected(format!("response missing {pointer}")))
}

pub struct HttpTranscriber {
    spec: ProviderSpec,
    agent: ureq::Agent,
}

impl HttpTranscriber {
    pub fn new(spec: ProviderSpec) -> Self {
        let agent = agent_for(&spec);
        HttpTranscriber { spec, agent }
    }
}

impl Backend<AudioRef, String> for HttpTranscriber {
    fn attempt(&self, request_id: &str, audio: &AudioRef) -> Result<String, AttemptError> {
        let (_, model) = endpoint(&self.spec);
        let body = json!({ "request_id": request_id, "audio_ref": audio, "model": model });
        let resp = post_json(&self.agent, &self.spec, request_id, &body)?;
        field(&resp, "/text")
    }
}

pub struct HttpChat {
    spec: ProviderSpec,
    agent: ureq::Agent,
}

impl HttpChat {
    pub fn new(spec: ProviderSpec) -> Self {
        let agent = agent_for(&spec);
        HttpChat { spec, agent }
    }
}

impl Backend<ChatExchange, String> for HttpChat {
    fn attempt(&self, request_id: &str, exchange: &ChatExchange) -> Result<String, AttemptError> {
        let (_, model) = endpoint(&self.spec);
        let mut messages = vec![json!({ "role": "system", "content": exchange.system_prompt })];
        messages.extend(exchange.history.iter().map(|t| {
            let role = match t.role {
                TurnRole::Participant => "user",
                TurnRole::Agent => "assistant",
            };
            json!({ "role": role, "content": t.text })
        }));
        let body = json!({ "model": model, "messages": messages });
        let resp = post_json(&self.agent, &self.spec, request_id, &body)?;
        field(&resp, "/choices/0/message/content")
    }
}

pub struct HttpSynthesizer {
    spec: ProviderSpec,
    agent: ureq::Agent,
}

impl HttpSynthesizer {
    pub fn new(spec: ProviderSpec) -> Self {
        let agent = agent_for(&spec);
        HttpSynthesizer { spec, agent }
    }
}

impl Backend<str, AudioRef> for HttpSynthesizer {
    fn attempt(&self, request_id: &str, text: &str) -> Result<AudioRef, AttemptError> {
        let (_, model) = endpoint(&self.spec);
        let body = json!({ "request_id": request_id, "text": text, "model": model });
        let resp = post_json(&self.agent, &self.spec, request_id, &body)?;
        field(&resp, "/audio_ref").map(AudioRef)
    }
}
