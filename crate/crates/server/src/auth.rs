//! Bearer tokens: one researcher token, plus short-lived participant tokens.

use std::collections::HashMap;
use std::sync::Mutex;

use chrono::NaiveDateTime;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque participant credential, optionally narrowed to one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiSessionToken {
    pub token: String,
    pub participant_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub expires_at: NaiveDateTime,
}

impl ApiSessionToken {
    pub fn allows_session(&self, session_id: &str) -> bool {
        self.session_id.as_deref().is_none_or(|s| s == session_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Principal {
    Researcher,
    Participant(ApiSessionToken),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("missing bearer token")]
    Missing,
    #[error("unknown token")]
    Invalid,
    #[error("token expired at {0}")]
    Expired(NaiveDateTime),
    #[error("{0}")]
    Forbidden(String),
}

impl AuthError {
    pub fn code(&self) -> &'static str {
        match self {
            AuthError::Missing => "missing_token",
            AuthError::Invalid => "invalid_token",
            AuthError::Expired(_) => "token_expired",
            AuthError::Forbidden(_) => "forbidden",
        }
    }
}

#[derive(Debug, Default)]
pub struct TokenStore {
    researcher: Option<String>,
    tokens: Mutex<HashMap<String, ApiSessionToken>>,
}

impl TokenStore {
    /// `researcher`: the researcher bearer token; `None` disables researcher endpoints.
    pub fn new(researcher: Option<String>) -> Self {
        TokenStore {
            researcher: researcher.filter(|t| !t.is_empty()),
            tokens: Mutex::default(),
        }
    }

    pub fn issue(
        &self,
        participant_id: &str,
        session_id: Option<&str>,
        expires_at: NaiveDateTime,
    ) -> ApiSessionToken {
        let bytes: [u8; 16] = rand::rng().random();
        let token = ApiSessionToken {
            token: hex::encode(bytes),
            participant_id: participant_id.to_string(),
            session_id: session_id.map(str::to_string),
            expires_at,
        };
        self.tokens
            .lock()
            .unwrap()
            .insert(token.token.clone(), token.clone());
        token
    }

    pub fn resolve(
        &self,
        bearer: Option<&str>,
        now: NaiveDateTime,
    ) -> Result<Principal, AuthError> {
        let bearer = bearer.ok_or(AuthError::Missing)?;
        if self.researcher.as_deref() == Some(bearer) {
            return Ok(Principal::Researcher);
        }
        let token = self
            .tokens
            .lock()
            .unwrap()
            .get(bearer)
            .cloned()
            .ok_or(AuthError::Invalid)?;
        if now >= token.expires_at {
            return Err(AuthError::Expired(token.expires_at));
        }
        Ok(Principal::Participant(token))
    }

    /// Drop expired tokens.
    pub fn purge(&self, now: NaiveDateTime) -> usize {
        let mut tokens = self.tokens.lock().unwrap();
        let before = tokens.len();
        tokens.retain(|_, t| now < t.expires_at);
        before - tokens.len()
    }
}

/// Token from an `Authorization: Bearer ...` header value.
pub fn bearer(header: Option<&str>) -> Option<&str> {
    header?.strip_prefix("Bearer ").map(str::trim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn at(h: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2024, 6, 3)
            .unwrap()
            .and_hms_opt(h, 0, 0)
            .unwrap()
    }

    #[test]
    fn tokens_resolve_until_expiry() {
        let store = TokenStore::new(Some("research".into()));
        let t = store.issue("P1", None, at(22));
        assert_eq!(
            store.resolve(Some("research"), at(23)).unwrap(),
            Principal::Researcher
        );
        assert_eq!(
            store.resolve(Some(&t.token), at(21)).unwrap(),
            Principal::Participant(t.clone())
        );
        assert_eq!(
            store.resolve(Some(&t.token), at(22)).unwrap_err(),
            AuthError::Expired(at(22))
        );
        assert_eq!(
            store.resolve(Some("nope"), at(21)).unwrap_err().code(),
            "invalid_token"
        );
        assert_eq!(
            store.resolve(None, at(21)).unwrap_err().code(),
            "missing_token"
        );
        assert_eq!(store.purge(at(23)), 1);
    }

    #[test]
    fn empty_researcher_token_is_disabled() {
        let store = TokenStore::new(Some(String::new()));
        assert!(store.resolve(Some(""), at(1)).is_err());
    }

    #[test]
    fn session_binding() {
        let store = TokenStore::new(None);
        let open = store.issue("P1", None, at(22));
        let bound = store.issue("P1", Some("s-1"), at(22));
        assert!(open.allows_session("s-9"));
        assert!(bound.allows_session("s-1"));
        assert!(!bound.allows_session("s-2"));
        assert_ne!(open.token, bound.token);
        assert_eq!(bearer(Some("Bearer abc ")), Some("abc"));
        assert_eq!(bearer(Some("Basic abc")), None);
    }
}
