use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::NaiveDateTime;

use super::{ConversationError, Session};
use crate::config::{Condition, StudyConfig};

pub type SharedSession = Arc<Mutex<Session>>;

/// Live sessions by id. Each session sits behind its own lock, so events for
/// one session are applied serially while distinct sessions progress in parallel.
#[derive(Debug, Default)]
pub struct SessionRegistry {
    sessions: RwLock<HashMap<String, SharedSession>>,
    next: AtomicU64,
}

impl SessionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(
        &self,
        participant_id: &str,
        condition: Condition,
        at: NaiveDateTime,
    ) -> (String, SharedSession) {
        let n = self.next.fetch_add(1, Ordering::SeqCst) + 1;
        let id = format!("s-{n:06}");
        self.insert(Session::new(id.clone(), participant_id, condition, at));
        let shared = self.get(&id).expect("just inserted");
        (id, shared)
    }

    /// Insert an existing session, e.g. one rebuilt from the log.
    pub fn insert(&self, session: Session) {
        if let Some(n) = session
            .id()
            .strip_prefix("s-")
            .and_then(|s| s.parse::<u64>().ok())
        {
            self.next.fetch_max(n, Ordering::SeqCst);
        }
        let id = session.id().to_string();
        self.sessions
            .write()
            .unwrap()
            .insert(id, Arc::new(Mutex::new(session)));
    }

    pub fn get(&self, id: &str) -> Result<SharedSession, ConversationError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ConversationError::UnknownSession(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Abandon and drop every session idle past the inactivity limit. Returns their ids.
    pub fn expire(&self, now: NaiveDateTime, config: &StudyConfig) -> Vec<String> {
        let mut sessions = self.sessions.write().unwrap();
        let mut expired: Vec<String> = sessions
            .iter()
            .filter_map(|(id, s)| {
                let mut s = s.lock().unwrap();
                s.is_stale(now, config).then(|| {
                    s.abandon();
                    id.clone()
                })
            })
            .collect();
        for id in &expired {
            sessions.remove(id);
        }
        expired.sort();
        expired
    }
}
