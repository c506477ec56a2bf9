use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::StudyCalendar;
use crate::config::{ReminderChannel, StudyConfig};
use crate::store::{Record, Store, StoreError, StudyDb};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReminderSchedule {
    pub participant_id: String,
    pub check_time: NaiveTime,
    pub channel: ReminderChannel,
}

pub fn schedules_from_config(config: &StudyConfig) -> Vec<ReminderSchedule> {
    config
        .participants
        .iter()
        .map(|p| ReminderSchedule {
            participant_id: p.participant_id.clone(),
            check_time: p.check_time.unwrap_or(config.reminder_defaults.check_time),
            channel: p
                .reminder_channel
                .unwrap_or(config.reminder_defaults.channel),
        })
        .collect()
}

/// Webhook payload shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReminderDispatch {
    pub participant_id: String,
    pub night: u32,
    pub channel: ReminderChannel,
    pub message: String,
}

impl ReminderDispatch {
    fn new(participant_id: &str, night: u32, channel: ReminderChannel) -> Self {
        ReminderDispatch {
            participant_id: participant_id.to_string(),
            night,
            channel,
            message: format!(
                "Friendly reminder: please record tonight's diary entry (night {night})."
            ),
        }
    }
}

fn needs_reminder(store: &Store, participant_id: &str, night: u32) -> bool {
    !store.reminder_sent(participant_id, night)
        && !store.skips().contains(&(participant_id.to_string(), night))
        && !store
            .entries()
            .iter()
            .any(|e| e.participant_id == participant_id && e.study_day == night)
}

/// Participants whose check time tonight has passed with no entry and no reminder yet.
pub fn due_reminders(
    now: NaiveDateTime,
    schedules: &[ReminderSchedule],
    store: &Store,
) -> Vec<ReminderDispatch> {
    let calendar = StudyCalendar::from_config(&store.config);
    let Some(night) = calendar.night_containing(now) else {
        return Vec::new();
    };
    schedules
        .iter()
        .filter(|s| now >= calendar.check_instant(night, s.check_time))
        .filter(|s| needs_reminder(store, &s.participant_id, night))
        .map(|s| ReminderDispatch::new(&s.participant_id, night, s.channel))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("notifier failed: {0}")]
pub struct NotifierError(pub String);

pub trait Notifier: Send + Sync {
    fn notify(&self, dispatch: &ReminderDispatch) -> Result<(), NotifierError>;
}

/// Prints one JSON line per reminder.
pub struct ConsoleNotifier {
    out: Mutex<Box<dyn Write + Send>>,
}

impl ConsoleNotifier {
    pub fn stdout() -> Self {
        ConsoleNotifier {
            out: Mutex::new(Box::new(std::io::stdout())),
        }
    }

    pub fn to_writer(w: Box<dyn Write + Send>) -> Self {
        ConsoleNotifier { out: Mutex::new(w) }
    }
}

impl Notifier for ConsoleNotifier {
    fn notify(&self, dispatch: &ReminderDispatch) -> Result<(), NotifierError> {
        let line = serde_json::to_string(dispatch).map_err(|e| NotifierError(e.to_string()))?;
        let mut out = self.out.lock().unwrap();
        writeln!(out, "{line}").map_err(|e| NotifierError(e.to_string()))
    }
}

/// POSTs the dispatch as JSON; any non-2xx status is a failure.
pub struct WebhookNotifier {
    url: String,
    agent: ureq::Agent,
}

impl WebhookNotifier {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        WebhookNotifier {
            url: url.into(),
            agent,
        }
    }
}

impl Notifier for WebhookNotifier {
    fn notify(&self, dispatch: &ReminderDispatch) -> Result<(), NotifierError> {
        let resp = self
            .agent
            .post(&self.url)
            .send_json(dispatch)
            .map_err(|e| NotifierError(e.to_string()))?;
        let status = resp.status().as_u16();
        if (200..300).contains(&status) {
            Ok(())
        } else {
            Err(NotifierError(format!("webhook returned status {status}")))
        }
    }
}

/// Keeps dispatches in memory; can be told to fail the next `n` calls.
#[derive(Debug, Default)]
pub struct RecordingNotifier {
    sent: Mutex<Vec<ReminderDispatch>>,
    fail_next: AtomicUsize,
}

impl RecordingNotifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fail_next(&self, n: usize) {
        self.fail_next.store(n, Ordering::SeqCst);
    }

    pub fn sent(&self) -> Vec<ReminderDispatch> {
        self.sent.lock().unwrap().clone()
    }
}

impl Notifier for RecordingNotifier {
    fn notify(&self, dispatch: &ReminderDispatch) -> Result<(), NotifierError> {
        let failing = self
            .fail_next
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if failing {
            return Err(NotifierError("injected failure".into()));
        }
        self.sent.lock().unwrap().push(dispatch.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickReport {
    pub sent: Vec<ReminderDispatch>,
    pub failed: Vec<(ReminderDispatch, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReminderError {
    #[error("unknown participant {0}")]
    UnknownParticipant(String),
    #[error("{0} is not inside a study night")]
    OutsideStudyNight(NaiveDateTime),
    #[error(transparent)]
    Notifier(#[from] NotifierError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ReminderError {
    pub fn code(&self) -> &'static str {
        match self {
            ReminderError::UnknownParticipant(_) => "unknown_participant",
            ReminderError::OutsideStudyNight(_) => "outside_study_night",
            ReminderError::Notifier(_) => "notifier_failure",
            ReminderError::Store(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum ManualReminder {
    Sent { dispatch: ReminderDispatch },
    AlreadySent { night: u32 },
    NotNeeded { night: u32 },
}

/// Periodic reminder worker. Time is always passed in, never read from a clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReminderScheduler {
    pub interval: chrono::Duration,
}

impl Default for ReminderScheduler {
    fn default() -> Self {
        ReminderScheduler {
            interval: chrono::Duration::minutes(5),
        }
    }
}

impl ReminderScheduler {
    /// Dispatch everything due at `now`. Successful dispatches are logged as
    /// sent; failures are logged and retried on the next tick.
    pub fn tick(
        &self,
        now: NaiveDateTime,
        db: &mut StudyDb,
        notifier: &dyn Notifier,
    ) -> Result<TickReport, StoreError> {
        let schedules = schedules_from_config(db.config());
        let mut report = TickReport::default();
        for d in due_reminders(now, &schedules, db.store()) {
            match notifier.notify(&d) {
                Ok(()) => {
                    db.commit(Record::ReminderSent {
                        participant_id: d.participant_id.clone(),
                        day: d.night,
                        channel: d.channel,
                        at: now,
                    })?;
                    report.sent.push(d);
                }
                Err(e) => {
                    tracing::warn!(participant = %d.participant_id, night = d.night, error = %e, "reminder failed");
                    db.commit(Record::NotifierFailed {
                        participant_id: d.participant_id.clone(),
                        day: d.night,
                        at: now,
                        error: e.0.clone(),
                    })?;
                    report.failed.push((d, e.0));
                }
            }
        }
        Ok(report)
    }

    /// Experimenter-triggered reminder for tonight, at most one per night.
    pub fn remind_now(
        &self,
        now: NaiveDateTime,
        participant_id: &str,
        db: &mut StudyDb,
        notifier: &dyn Notifier,
    ) -> Result<ManualReminder, ReminderError> {
        let schedule = schedules_from_config(db.config())
            .into_iter()
            .find(|s| s.participant_id == participant_id)
            .ok_or_else(|| ReminderError::UnknownParticipant(participant_id.to_string()))?;
        let calendar = StudyCalendar::from_config(db.config());
        let night = calendar
            .night_containing(now)
            .ok_or(ReminderError::OutsideStudyNight(now))?;
        if db.store().reminder_sent(participant_id, night) {
            return Ok(ManualReminder::AlreadySent { night });
        }
        if !needs_reminder(db.store(), participant_id, night) {
            return Ok(ManualReminder::NotNeeded { night });
        }
        let dispatch = ReminderDispatch::new(participant_id, night, schedule.channel);
        if let Err(e) = notifier.notify(&dispatch) {
            db.commit(Record::NotifierFailed {
                participant_id: participant_id.to_string(),
                day: night,
                at: now,
                error: e.0.clone(),
            })?;
            return Err(e.into());
        }
        db.commit(Record::ReminderSent {
            participant_id: participant_id.to_string(),
            day: night,
            channel: schedule.channel,
            at: now,
        })?;
        Ok(ManualReminder::Sent { dispatch })
    }
}
