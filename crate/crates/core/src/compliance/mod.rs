//! Per-night submission classification and per-condition summaries.

mod reminders;

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::StudyCalendar;
use crate::config::{Condition, StudyConfig};
use crate::store::{DiaryEntry, ReminderRecord, Store};

pub use reminders::{
    due_reminders, schedules_from_config, ConsoleNotifier, ManualReminder, Notifier, NotifierError,
    RecordingNotifier, ReminderDispatch, ReminderError, ReminderSchedule, ReminderScheduler,
    TickReport, WebhookNotifier,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComplianceStatus {
    OnTimeNoReminder,
    OnTimeWithReminder,
    Late,
    Missed,
    Excused,
}

impl ComplianceStatus {
    pub const ALL: [ComplianceStatus; 5] = [
        ComplianceStatus::OnTimeNoReminder,
        ComplianceStatus::OnTimeWithReminder,
        ComplianceStatus::Late,
        ComplianceStatus::Missed,
        ComplianceStatus::Excused,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ComplianceStatus::OnTimeNoReminder => "on-time-no-reminder",
            ComplianceStatus::OnTimeWithReminder => "on-time-with-reminder",
            ComplianceStatus::Late => "late",
            ComplianceStatus::Missed => "missed",
            ComplianceStatus::Excused => "excused",
        }
    }

    pub fn is_submitted(self) -> bool {
        matches!(
            self,
            ComplianceStatus::OnTimeNoReminder
                | ComplianceStatus::OnTimeWithReminder
                | ComplianceStatus::Late
        )
    }

    /// Lower is better.
    fn rank(self) -> u8 {
        match self {
            ComplianceStatus::OnTimeNoReminder => 0,
            ComplianceStatus::OnTimeWithReminder => 1,
            ComplianceStatus::Late => 2,
            ComplianceStatus::Excused | ComplianceStatus::Missed => 3,
        }
    }

    pub fn at_least_as_good_as(self, other: ComplianceStatus) -> bool {
        self.rank() <= other.rank()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceRecord {
    pub participant_id: String,
    pub condition: Condition,
    pub study_day: u32,
    pub status: ComplianceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_created_at: Option<NaiveDateTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reminder_sent_at: Option<NaiveDateTime>,
}

/// More than one entry for the same participant-night; the earliest governs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlappingEntries {
    pub participant_id: String,
    pub study_day: u32,
    pub entry_ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub records: Vec<ComplianceRecord>,
    pub overlaps: Vec<OverlappingEntries>,
}

/// Status of one entry created at `created_at` for night `day`.
pub fn status_for_entry(
    calendar: &StudyCalendar,
    day: u32,
    created_at: NaiveDateTime,
    reminder_at: Option<NaiveDateTime>,
) -> ComplianceStatus {
    let (_, close) = calendar.night_window(day);
    if created_at < close {
        match reminder_at {
            Some(r) if r <= created_at => ComplianceStatus::OnTimeWithReminder,
            _ => ComplianceStatus::OnTimeNoReminder,
        }
    } else if created_at < calendar.late_deadline(day) {
        ComplianceStatus::Late
    } else {
        ComplianceStatus::Missed
    }
}

/// One record per (participant, night) of the study window.
pub fn classify(
    participants: &BTreeMap<String, Condition>,
    entries: &[DiaryEntry],
    reminders: &[ReminderRecord],
    skips: &BTreeSet<(String, u32)>,
    config: &StudyConfig,
) -> Classification {
    let calendar = StudyCalendar::from_config(config);
    let mut by_night: BTreeMap<(&str, u32), Vec<&DiaryEntry>> = BTreeMap::new();
    for e in entries {
        by_night
            .entry((e.participant_id.as_str(), e.study_day))
            .or_default()
            .push(e);
    }
    let mut first_reminder: BTreeMap<(&str, u32), NaiveDateTime> = BTreeMap::new();
    for r in reminders {
        first_reminder
            .entry((r.participant_id.as_str(), r.day))
            .and_modify(|t| *t = (*t).min(r.at))
            .or_insert(r.at);
    }

    let mut out = Classification::default();
    for (pid, &condition) in participants {
        for day in calendar.days() {
            let key = (pid.as_str(), day);
            let reminder_sent_at = first_reminder.get(&key).copied();
            let mut record = ComplianceRecord {
                participant_id: pid.clone(),
                condition,
                study_day: day,
                status: ComplianceStatus::Missed,
                entry_created_at: None,
                reminder_sent_at,
            };
            match by_night.get_mut(&key) {
                Some(list) => {
                    list.sort_by_key(|e| (e.created_at, e.id.clone()));
                    if list.len() > 1 {
                        out.overlaps.push(OverlappingEntries {
                            participant_id: pid.clone(),
                            study_day: day,
                            entry_ids: list.iter().map(|e| e.id.clone()).collect(),
                        });
                    }
                    let first = list[0];
                    record.entry_created_at = Some(first.created_at);
                    record.status =
                        status_for_entry(&calendar, day, first.created_at, reminder_sent_at);
                }
                None if skips.contains(&(pid.clone(), day)) => {
                    record.status = ComplianceStatus::Excused
                }
                None => {}
            }
            out.records.push(record);
        }
    }
    out
}

pub fn classify_store(store: &Store) -> Classification {
    classify(
        &store.participants(),
        store.entries(),
        store.reminders(),
        store.skips(),
        &store.config,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComplianceError {
    #[error("no compliance records to summarize")]
    EmptyStudy,
}

impl ComplianceError {
    pub fn code(&self) -> &'static str {
        match self {
            ComplianceError::EmptyStudy => "empty_study",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCompliance {
    pub condition: Condition,
    pub participants: usize,
    pub nights: usize,
    pub submitted: usize,
    pub on_time_no_reminder: usize,
    pub on_time_with_reminder: usize,
    pub late: usize,
    pub missed: usize,
    pub excused: usize,
    /// Mean over participants of each participant's share of submitted
    /// entries that were on time without a reminder. This is the headline figure.
    pub on_time_no_reminder_share: f64,
    /// Same shares pooled over all submitted entries of the condition.
    pub pooled_on_time_no_reminder_share: f64,
    pub pooled_on_time_with_reminder_share: f64,
    pub pooled_late_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceSummary {
    pub conditions: Vec<ConditionCompliance>,
    pub total_submitted: usize,
}

impl ComplianceSummary {
    pub fn condition(&self, c: Condition) -> Option<&ConditionCompliance> {
        self.conditions.iter().find(|s| s.condition == c)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn summarize(records: &[ComplianceRecord]) -> Result<ComplianceSummary, ComplianceError> {
    if records.is_empty() {
        return Err(ComplianceError::EmptyStudy);
    }
    let mut conditions = Vec::new();
    for condition in Condition::ALL {
        let rows: Vec<&ComplianceRecord> = records
            .iter()
            .filter(|r| r.condition == condition)
            .collect();
        if rows.is_empty() {
            continue;
        }
        let count = |s: ComplianceStatus| rows.iter().filter(|r| r.status == s).count();
        let mut per_participant: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for r in &rows {
            let slot = per_participant.entry(&r.participant_id).or_default();
            if r.status.is_submitted() {
                slot.1 += 1;
                if r.status == ComplianceStatus::OnTimeNoReminder {
                    slot.0 += 1;
                }
            }
        }
        let shares: Vec<f64> = per_participant
            .values()
            .filter(|(_, submitted)| *submitted > 0)
            .map(|&(on_time, submitted)| ratio(on_time, submitted))
            .collect();
        let on_time = count(ComplianceStatus::OnTimeNoReminder);
        let with_reminder = count(ComplianceStatus::OnTimeWithReminder);
        let late = count(ComplianceStatus::Late);
        let submitted = on_time + with_reminder + late;
        conditions.push(ConditionCompliance {
            condition,
            participants: per_participant.len(),
            nights: rows.len(),
            submitted,
            on_time_no_reminder: on_time,
            on_time_with_reminder: with_reminder,
            late,
            missed: count(ComplianceStatus::Missed),
            excused: count(ComplianceStatus::Excused),
            on_time_no_reminder_share: if shares.is_empty() {
                0.0
            } else {
                shares.iter().sum::<f64>() / shares.len() as f64
            },
            pooled_on_time_no_reminder_share: ratio(on_time, submitted),
            pooled_on_time_with_reminder_share: ratio(with_reminder, submitted),
            pooled_late_share: ratio(late, submitted),
        });
    }
    let total_submitted = conditions.iter().map(|c| c.submitted).sum();
    Ok(ComplianceSummary {
        conditions,
        total_submitted,
    })
}

/// One row per participant-night.
pub fn records_to_csv(records: &[ComplianceRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |t: Option<NaiveDateTime>| {
        t.map(|t| t.format("%Y-%m-%dT%H:%M:%S").to_string())
            .unwrap_or_default()
    };
    w.write_record([
        "participant_id",
        "condition",
        "study_day",
        "status",
        "entry_created_at",
        "reminder_sent_at",
    ])
    .expect("in-memory write");
    for r in records {
        w.write_record([
            r.participant_id.as_str(),
            r.condition.label(),
            &r.study_day.to_string(),
            r.status.as_str(),
            &fmt(r.entry_created_at),
            &fmt(r.reminder_sent_at),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
