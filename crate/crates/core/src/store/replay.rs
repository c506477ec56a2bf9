use thiserror::Error;

use super::{DiaryEntry, Record};
use crate::config::StudyConfig;
use crate::conversation::{Action, ConversationError, ReplayAgent, Session};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("log has no session-opened record for {0}")]
    MissingOpen(String),
    #[error("step {step}: {source}")]
    Conversation {
        step: usize,
        source: ConversationError,
    },
    #[error("step {step} diverged from the recording: {message}")]
    Diverged { step: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub session: Session,
    pub entries: Vec<DiaryEntry>,
    pub actions: Vec<Vec<Action>>,
}

/// Rebuild one session from the log by re-applying its events, serving every
/// provider output from the recording.
pub fn replay_session<'a>(
    config: &StudyConfig,
    records: impl IntoIterator<Item = &'a Record>,
    session_id: &str,
) -> Result<ReplayOutcome, ReplayError> {
    let mut session: Option<Session> = None;
    let mut entries = Vec::new();
    let mut actions = Vec::new();
    for record in records {
        match record {
            Record::SessionOpened {
                session_id: id,
                participant_id,
                condition,
                at,
            } if id == session_id => {
                session = Some(Session::new(
                    id.clone(),
                    participant_id.clone(),
                    *condition,
                    *at,
                ));
            }
            Record::SessionStep {
                session_id: id,
                at,
                event,
                outputs,
            } if id == session_id => {
                let step = actions.len();
                let s = session
                    .as_mut()
                    .ok_or_else(|| ReplayError::MissingOpen(session_id.to_string()))?;
                let mut agent = ReplayAgent::new(outputs.iter().cloned());
                let out = s
                    .handle(event.clone(), *at, config, &mut agent)
                    .map_err(|source| ReplayError::Conversation { step, source })?;
                if agent.remaining() != 0 {
                    return Err(ReplayError::Diverged {
                        step,
                        message: format!("{} recorded outputs left unused", agent.remaining()),
                    });
                }
                if let Some(msg) = out.iter().find_map(|a| match a {
                    Action::Warning { message, .. } if message.contains("replay diverged") => {
                        Some(message.clone())
                    }
                    _ => None,
                }) {
                    return Err(ReplayError::Diverged { step, message: msg });
                }
                entries.extend(out.iter().filter_map(|a| match a {
                    Action::EntryCompleted { entry } => Some(entry.clone()),
                    _ => None,
                }));
                actions.push(out);
            }
            _ => {}
        }
    }
    let session = session.ok_or_else(|| ReplayError::MissingOpen(session_id.to_string()))?;
    Ok(ReplayOutcome {
        session,
        entries,
        actions,
    })
}
