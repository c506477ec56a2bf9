//! The study service: one object binding store, live sessions, providers,
//! reminders and analysis. The HTTP server and the simulator both drive the
//! study exclusively through it.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, AnalysisSummary};
use crate::calendar::StudyCalendar;
use crate::compliance::{
    classify_store, summarize, ComplianceRecord, ComplianceSummary, ManualReminder, Notifier,
    OverlappingEntries, ReminderError, ReminderScheduler, TickReport,
};
use crate::config::{Channel, Condition, ConfigError, PolicyKind, StudyConfig};
use crate::content::Codebook;
use crate::conversation::{
    Action, ConversationError, RecordingAgent, Session, SessionRegistry, SessionStatus, StudyAgent,
};
use crate::gateway::{AudioRef, Gateway, GatewayError};
use crate::interview::{FollowUpPolicy, ProviderPolicy, RulePolicy};
use crate::stats::StatsReport;
use crate::store::{
    replay_session, DiaryEntry, EntryFilter, QuestionResponse, QuestionnaireError,
    QuestionnaireResponse, Record, Scope, Store, StoreError, StudyDb,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ServiceError {
    #[error("unknown participant {0}")]
    UnknownParticipant(String),
    #[error("participant {participant} is in the {condition} condition, which does not use this channel")]
    WrongChannel {
        participant: String,
        condition: &'static str,
    },
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
    #[error("{0} is outside the study window")]
    OutsideStudyWindow(NaiveDateTime),
    #[error(transparent)]
    Conversation(#[from] ConversationError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Reminder(#[from] ReminderError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Questionnaire(#[from] QuestionnaireError),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownParticipant(_) => "unknown_participant",
            ServiceError::WrongChannel { .. } => "wrong_channel",
            ServiceError::InvalidEntry(_) => "invalid_entry",
            ServiceError::OutsideStudyWindow(_) => "outside_study_window",
            ServiceError::Conversation(e) => e.code(),
            ServiceError::Store(e) => e.code(),
            ServiceError::Gateway(e) => e.code(),
            ServiceError::Reminder(e) => e.code(),
            ServiceError::Analysis(e) => e.code(),
            ServiceError::Config(e) => e.code(),
            ServiceError::Questionnaire(e) => e.code(),
        }
    }
}

/// One answer in a directly submitted entry: typed text, or an audio reference
/// to be transcribed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmittedResponse {
    pub question_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_ref: Option<String>,
}

/// Entry for the text-form and audio-transcript conditions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntrySubmission {
    pub participant_id: String,
    /// Defaults to the night the submission time belongs to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study_day: Option<u32>,
    pub responses: Vec<SubmittedResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub records: Vec<ComplianceRecord>,
    pub overlaps: Vec<OverlappingEntries>,
    /// Absent when the study has no participant-nights yet.
    pub summary: Option<ComplianceSummary>,
}

fn policy_for(config: &StudyConfig, gateway: &Arc<Gateway>) -> Box<dyn FollowUpPolicy + Send> {
    match config.follow_up.policy {
        PolicyKind::Rule => Box::new(RulePolicy::new(config.follow_up.min_words)),
        PolicyKind::Provider => Box::new(ProviderPolicy::new(gateway.clone())),
    }
}

pub struct StudyService {
    db: Mutex<StudyDb>,
    sessions: SessionRegistry,
    gateway: Arc<Gateway>,
    notifier: Arc<dyn Notifier>,
    codebook: Codebook,
    scheduler: ReminderScheduler,
}

impl std::fmt::Debug for StudyService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StudyService")
            .field("live_sessions", &self.live_sessions())
            .finish_non_exhaustive()
    }
}

impl StudyService {
    /// Wraps `db`, rebuilding still-active sessions from its log.
    pub fn new(db: StudyDb, gateway: Arc<Gateway>, notifier: Arc<dyn Notifier>) -> Self {
        let sessions = SessionRegistry::new();
        let records = db.records();
        let ids: Vec<String> = records
            .iter()
            .filter_map(|r| match r {
                Record::SessionOpened { session_id, .. } => Some(session_id.clone()),
                _ => None,
            })
            .collect();
        let expired: BTreeSet<&str> = records
            .iter()
            .filter_map(|r| match r {
                Record::SessionExpired { session_id, .. } => Some(session_id.as_str()),
                _ => None,
            })
            .collect();
        for id in &ids {
            match replay_session(db.config(), &records, id) {
                Ok(outcome) if !expired.contains(id.as_str()) => sessions.insert(outcome.session),
                Ok(_) => {}
                Err(e) => tracing::warn!(session = %id, error = %e, "session not restored"),
            }
        }
        StudyService {
            db: Mutex::new(db),
            sessions,
            gateway,
            notifier,
            codebook: Codebook::bundled(),
            scheduler: ReminderScheduler::default(),
        }
    }

    pub fn with_codebook(mut self, codebook: Codebook) -> Self {
        self.codebook = codebook;
        self
    }

    fn db(&self) -> MutexGuard<'_, StudyDb> {
        self.db.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn config(&self) -> StudyConfig {
        self.db().config().clone()
    }

    /// Read-only access to a consistent view of the store.
    pub fn with_store<T>(&self, f: impl FnOnce(&Store) -> T) -> T {
        f(self.db().store())
    }

    pub fn records(&self) -> Vec<Record> {
        self.db().records()
    }

    pub fn snapshot(&self) -> Result<(), StoreError> {
        self.db().snapshot()
    }

    pub fn set_config(&self, config: StudyConfig) -> Result<u64, ServiceError> {
        config.validate()?;
        Ok(self.db().commit(Record::StudyConfigured {
            config: Box::new(config),
        })?)
    }

    fn enrolled(&self, participant_id: &str) -> Result<Condition, ServiceError> {
        self.with_store(|s| s.participants().get(participant_id).copied())
            .ok_or_else(|| ServiceError::UnknownParticipant(participant_id.to_string()))
    }

    pub fn open_session(
        &self,
        participant_id: &str,
        at: NaiveDateTime,
    ) -> Result<Session, ServiceError> {
        let condition = self.enrolled(participant_id)?;
        if condition != Condition::RobotConversational {
            return Err(ServiceError::WrongChannel {
                participant: participant_id.to_string(),
                condition: condition.label(),
            });
        }
        let mut db = self.db();
        let (id, shared) = self.sessions.open(participant_id, condition, at);
        db.commit(Record::SessionOpened {
            session_id: id,
            participant_id: participant_id.to_string(),
            condition,
            at,
        })?;
        let session = shared.lock().unwrap().clone();
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Result<Session, ServiceError> {
        let shared = self.sessions.get(id)?;
        let session = shared.lock().unwrap().clone();
        Ok(session)
    }

    /// Apply one event to a live session. The event and every provider output
    /// it consumed are logged, followed by any completed entry.
    pub fn session_event(
        &self,
        id: &str,
        event: crate::conversation::SessionEvent,
        at: NaiveDateTime,
    ) -> Result<Vec<Action>, ServiceError> {
        let shared = self.sessions.get(id)?;
        let mut session = shared.lock().unwrap();
        let config = self.config();
        let mut inner = StudyAgent::new(self.gateway.clone(), policy_for(&config, &self.gateway));
        let mut agent = RecordingAgent::new(&mut inner);
        let result = session.handle(event.clone(), at, &config, &mut agent);
        let outputs = agent.into_outputs();
        let mut db = self.db();
        let actions = match result {
            Ok(actions) => actions,
            Err(ConversationError::SessionExpired(sid)) => {
                db.commit(Record::SessionExpired {
                    session_id: sid.clone(),
                    at,
                })?;
                return Err(ConversationError::SessionExpired(sid).into());
            }
            Err(e) => return Err(e.into()),
        };
        db.commit(Record::SessionStep {
            session_id: id.to_string(),
            at,
            event,
            outputs,
        })?;
        for a in &actions {
            if let Action::EntryCompleted { entry } = a {
                db.commit(Record::EntryCommitted {
                    entry: entry.clone(),
                })?;
            }
        }
        Ok(actions)
    }

    /// Abandon sessions idle past the inactivity limit.
    pub fn expire_sessions(&self, now: NaiveDateTime) -> Result<Vec<String>, ServiceError> {
        let config = self.config();
        let expired = self.sessions.expire(now, &config);
        let mut db = self.db();
        for id in &expired {
            db.commit(Record::SessionExpired {
                session_id: id.clone(),
                at: now,
            })?;
        }
        Ok(expired)
    }

    pub fn live_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// Direct ingestion for the text-form and audio-transcript conditions.
    pub fn submit_entry(
        &self,
        submission: EntrySubmission,
        at: NaiveDateTime,
    ) -> Result<DiaryEntry, ServiceError> {
        let pid = submission.participant_id.as_str();
        let condition = self.enrolled(pid)?;
        let channel = match condition {
            Condition::TextForm => Channel::TextForm,
            Condition::AudioTranscript => Channel::AudioTranscript,
            Condition::RobotConversational => {
                return Err(ServiceError::WrongChannel {
                    participant: pid.to_string(),
                    condition: condition.label(),
                })
            }
        };
        let config = self.config();
        let calendar = StudyCalendar::from_config(&config);
        let study_day = match submission.study_day {
            Some(d) if (1..=config.total_days).contains(&d) => d,
            Some(d) => {
                return Err(ServiceError::InvalidEntry(format!(
                    "study_day {d} outside 1..={}",
                    config.total_days
                )))
            }
            None => calendar
                .intended_day(at)
                .ok_or(ServiceError::OutsideStudyWindow(at))?,
        };

        let expected: BTreeSet<u32> = config.questions.iter().map(|q| q.id).collect();
        let given: Vec<u32> = submission.responses.iter().map(|r| r.question_id).collect();
        let given_set: BTreeSet<u32> = given.iter().copied().collect();
        if given_set.len() != given.len() || given_set != expected {
            return Err(ServiceError::InvalidEntry(format!(
                "responses must cover questions {expected:?} exactly once, got {given:?}"
            )));
        }
        let mut responses = Vec::with_capacity(submission.responses.len());
        for r in &submission.responses {
            let text = match (&r.audio_ref, &r.text) {
                (Some(audio), _) => self.gateway.transcribe(&AudioRef(audio.clone()))?,
                (None, Some(text)) => text.clone(),
                (None, None) => {
                    return Err(ServiceError::InvalidEntry(format!(
                        "question {} has neither text nor audio",
                        r.question_id
                    )))
                }
            };
            responses.push(QuestionResponse {
                question_id: r.question_id,
                segments: vec![text],
            });
        }

        let mut db = self.db();
        let duplicate = db
            .store()
            .entries()
            .iter()
            .any(|e| e.participant_id == pid && e.study_day == study_day);
        let mut entry = DiaryEntry::new(
            pid.to_string(),
            condition,
            study_day,
            channel,
            responses,
            at,
        );
        entry.duplicate = duplicate;
        db.commit(Record::EntryCommitted {
            entry: entry.clone(),
        })?;
        Ok(entry)
    }

    pub fn fetch_entries(
        &self,
        scope: &Scope,
        filter: &EntryFilter,
    ) -> Result<Vec<DiaryEntry>, ServiceError> {
        Ok(self.with_store(|s| s.fetch_entries(scope, filter))?)
    }

    /// Pre-registered excused night.
    pub fn register_skip(&self, participant_id: &str, day: u32) -> Result<u64, ServiceError> {
        self.enrolled(participant_id)?;
        let total = self.config().total_days;
        if !(1..=total).contains(&day) {
            return Err(ServiceError::InvalidEntry(format!(
                "skip day {day} outside 1..={total}"
            )));
        }
        Ok(self.db().commit(Record::SkipRegistered {
            participant_id: participant_id.to_string(),
            day,
        })?)
    }

    pub fn submit_questionnaire(
        &self,
        response: QuestionnaireResponse,
    ) -> Result<u64, ServiceError> {
        self.enrolled(&response.participant_id)?;
        response.validate(&self.config().questionnaire)?;
        Ok(self
            .db()
            .commit(Record::QuestionnaireSubmitted { response })?)
    }

    /// One scheduler pass at `now`.
    pub fn tick(&self, now: NaiveDateTime) -> Result<TickReport, ServiceError> {
        let mut db = self.db();
        Ok(self.scheduler.tick(now, &mut db, self.notifier.as_ref())?)
    }

    pub fn remind(
        &self,
        participant_id: &str,
        now: NaiveDateTime,
    ) -> Result<ManualReminder, ServiceError> {
        let mut db = self.db();
        Ok(self
            .scheduler
            .remind_now(now, participant_id, &mut db, self.notifier.as_ref())?)
    }

    pub fn compliance(&self) -> ComplianceReport {
        let c = self.with_store(classify_store);
        let summary = summarize(&c.records).ok();
        ComplianceReport {
            records: c.records,
            overlaps: c.overlaps,
            summary,
        }
    }

    pub fn analysis_summary(&self) -> Result<AnalysisSummary, ServiceError> {
        Ok(self.with_store(|s| analysis::summarize(s, &self.codebook))?)
    }

    pub fn stats(&self, measure: Option<&str>) -> Result<StatsReport, ServiceError> {
        let summary = self.analysis_summary()?;
        Ok(analysis::study_stats(&summary, measure)?)
    }

    pub fn is_session_active(&self, id: &str) -> bool {
        self.sessions
            .get(id)
            .map(|s| s.lock().unwrap().status() == SessionStatus::Active)
            .unwrap_or(false)
    }
}
