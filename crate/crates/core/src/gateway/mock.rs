use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AttemptError, AudioRef, Backend, ChatExchange, GatewayError};

/// Contents of a mock script file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    /// Transcript text keyed by audio blob id.
    pub transcripts: BTreeMap<String, String>,
    /// Chat replies, returned in order.
    pub chat: Vec<String>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            GatewayError::InvalidSpec(format!("cannot read mock script {}: {e}", path.display()))
        })?;
        serde_json::from_str(&raw).map_err(|e| {
            GatewayError::InvalidSpec(format!("bad mock script {}: {e}", path.display()))
        })
    }
}

/// Table lookup keyed by blob id.
#[derive(Debug, Default)]
pub struct MockTranscriber {
    table: BTreeMap<String, String>,
}

impl MockTranscriber {
    pub fn new(table: BTreeMap<String, String>) -> Self {
        MockTranscriber { table }
    }
}

impl Backend<AudioRef, String> for MockTranscriber {
    fn attempt(&self, _request_id: &str, audio: &AudioRef) -> Result<String, AttemptError> {
        self.table
            .get(audio.as_str())
            .cloned()
            .ok_or_else(|| AttemptError::Rejected(format!("unknown audio blob {audio}")))
    }
}

/// Returns the n-th scripted reply on the n-th call.
#[derive(Debug, Default)]
pub struct MockChat {
    replies: Vec<String>,
    cursor: AtomicUsize,
}

impl MockChat {
    pub fn new(replies: Vec<String>) -> Self {
        MockChat {
            replies,
            cursor: AtomicUsize::new(0),
        }
    }
}

impl Backend<ChatExchange, String> for MockChat {
    fn attempt(&self, _request_id: &str, _exchange: &ChatExchange) -> Result<String, AttemptError> {
        let n = self.cursor.fetch_add(1, Ordering::SeqCst);
        self.replies
            .get(n)
            .cloned()
            .ok_or(AttemptError::ScriptExhausted(self.replies.len()))
    }
}

/// Returns `mock-audio:<sha256 prefix>` for the text.
#[derive(Debug, Default, Clone, Copy)]
pub struct MockSynthesizer;

impl MockSynthesizer {
    pub fn sentinel(text: &str) -> AudioRef {
        let digest = Sha256::digest(text.as_bytes());
        AudioRef(format!("mock-audio:{}", hex::encode(&digest[..])))
    }
}

impl Backend<str, AudioRef> for MockSynthesizer {
    fn attempt(&self, _request_id: &str, text: &str) -> Result<AudioRef, AttemptError> {
        Ok(MockSynthesizer::sentinel(text))
    }
}
