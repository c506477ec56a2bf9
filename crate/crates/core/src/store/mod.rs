//! Durable study state: an append-only JSONL event log, periodic JSON
//! snapshots, and the in-memory projection built from them.

mod export;
mod log;
mod replay;

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{Channel, Condition, QuestionnaireLayout, ReminderChannel, StudyConfig};
use crate::conversation::{AgentOutput, SessionEvent};

pub use export::{
    entries_to_csv, entries_to_jsonl, parse_entries_jsonl, read_entries_jsonl, write_entries_csv,
};
pub use log::{EventLog, LogLine, LogOptions};
pub use replay::{replay_session, ReplayError, ReplayOutcome};

/// Whitespace-delimited token count; runs of any Unicode whitespace collapse.
pub fn word_count_text(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionResponse {
    pub question_id: u32,
    /// Initial answer, then follow-up answers, in order.
    pub segments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiaryEntry {
    pub id: String,
    pub participant_id: String,
    pub condition: Condition,
    /// Intended study night, kept even when the entry arrives late.
    pub study_day: u32,
    pub channel: Channel,
    pub responses: Vec<QuestionResponse>,
    pub created_at: NaiveDateTime,
    pub word_count: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub duplicate: bool,
}

impl DiaryEntry {
    pub fn new(
        participant_id: String,
        condition: Condition,
        study_day: u32,
        channel: Channel,
        mut responses: Vec<QuestionResponse>,
        created_at: NaiveDateTime,
    ) -> Self {
        responses.sort_by_key(|r| r.question_id);
        let text = concat_text(&responses);
        let word_count = word_count_text(&text);
        let mut h = Sha256::new();
        h.update(participant_id.as_bytes());
        h.update([0]);
        h.update(study_day.to_le_bytes());
        h.update(created_at.to_string().as_bytes());
        h.update([0]);
        h.update(text.as_bytes());
        let id = format!("e-{}", &hex::encode(h.finalize())[..16]);
        DiaryEntry {
            id,
            participant_id,
            condition,
            study_day,
            channel,
            responses,
            created_at,
            word_count,
            duplicate: false,
        }
    }

    /// All segments joined by single spaces, empty segments skipped.
    pub fn text(&self) -> String {
        concat_text(&self.responses)
    }

    pub fn recount(&self) -> usize {
        word_count_text(&self.text())
    }
}

fn concat_text(responses: &[QuestionResponse]) -> String {
    responses
        .iter()
        .flat_map(|r| r.segments.iter())
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuestionnaireError {
    #[error("{instrument} expects {expected} items, got {got}")]
    WrongItemCount {
        instrument: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{instrument} item {index} = {value} outside [{min}, {max}]")]
    OutOfRangeItem {
        instrument: &'static str,
        index: usize,
        value: u8,
        min: u8,
        max: u8,
    },
}

impl QuestionnaireError {
    pub fn code(&self) -> &'static str {
        match self {
            QuestionnaireError::WrongItemCount { .. } => "wrong_item_count",
            QuestionnaireError::OutOfRangeItem { .. } => "out_of_range_item",
        }
    }
}

/// Post-study questionnaire answers for one participant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireResponse {
    pub participant_id: String,
    pub condition: Condition,
    /// 7-point.
    pub use_items: Vec<u8>,
    /// Ten 5-point items.
    pub sus_items: Vec<u8>,
    /// 7-point, as administered (including the dropped item).
    pub breadth_items: Vec<u8>,
    /// 7-point.
    pub depth_items: Vec<u8>,
}

impl QuestionnaireResponse {
    pub fn validate(&self, layout: &QuestionnaireLayout) -> Result<(), QuestionnaireError> {
        check_items("USE", &self.use_items, layout.use_items, 7)?;
        check_items("SUS", &self.sus_items, 10, 5)?;
        check_items("breadth", &self.breadth_items, layout.breadth_items, 7)?;
        check_items("depth", &self.depth_items, layout.depth_items, 7)
    }
}

fn check_items(
    instrument: &'static str,
    items: &[u8],
    expected: usize,
    max: u8,
) -> Result<(), QuestionnaireError> {
    if items.len() != expected {
        return Err(QuestionnaireError::WrongItemCount {
            instrument,
            expected,
            got: items.len(),
        });
    }
    match items.iter().position(|&v| !(1..=max).contains(&v)) {
        Some(index) => Err(QuestionnaireError::OutOfRangeItem {
            instrument,
            index,
            value: items[index],
            min: 1,
            max,
        }),
        None => Ok(()),
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Record {
    StudyConfigured {
        config: Box<StudyConfig>,
    },
    SessionOpened {
        session_id: String,
        participant_id: String,
        condition: Condition,
        at: NaiveDateTime,
    },
    /// One applied session event plus every provider output it consumed.
    SessionStep {
        session_id: String,
        at: NaiveDateTime,
        event: SessionEvent,
        outputs: Vec<AgentOutput>,
    },
    SessionExpired {
        session_id: String,
        at: NaiveDateTime,
    },
    EntryCommitted {
        entry: DiaryEntry,
    },
    QuestionnaireSubmitted {
        response: QuestionnaireResponse,
    },
    ReminderSent {
        participant_id: String,
        day: u32,
        channel: ReminderChannel,
        at: NaiveDateTime,
    },
    NotifierFailed {
        participant_id: String,
        day: u32,
        at: NaiveDateTime,
        error: String,
    },
    /// Pre-registered skip of one night.
    SkipRegistered {
        participant_id: String,
        day: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("storage full: {needed} bytes needed, {remaining} remaining")]
    StorageFull { needed: u64, remaining: u64 },
    #[error("corrupt log at line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("unknown scope: {0}")]
    UnknownScope(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::StorageFull { .. } => "storage_full",
            StoreError::CorruptLog { .. } => "corrupt_log",
            StoreError::UnknownScope(_) => "unknown_scope",
            StoreError::Io(_) => "io_error",
            StoreError::Serde(_) => "serialization_error",
        }
    }
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for StoreError {
    fn from(e: serde_json::Error) -> Self {
        StoreError::Serde(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReminderRecord {
    pub participant_id: String,
    pub day: u32,
    pub channel: ReminderChannel,
    pub at: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scope {
    Study,
    Participant(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntryFilter {
    pub condition: Option<Condition>,
    pub channel: Option<Channel>,
    pub study_day: Option<u32>,
}

impl EntryFilter {
    pub fn matches(&self, e: &DiaryEntry) -> bool {
        self.condition.is_none_or(|c| c == e.condition)
            && self.channel.is_none_or(|c| c == e.channel)
            && self.study_day.is_none_or(|d| d == e.study_day)
    }
}

/// In-memory projection of the log. Everything here is derivable by
/// replaying records in order, which is also how it is built.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Store {
    pub config: StudyConfig,
    entries: Vec<DiaryEntry>,
    questionnaires: BTreeMap<String, QuestionnaireResponse>,
    reminders: Vec<ReminderRecord>,
    skips: BTreeSet<(String, u32)>,
    /// Last log offset folded into this state.
    pub offset: Option<u64>,
}

impl Store {
    pub fn new(config: StudyConfig) -> Self {
        Store {
            config,
            ..Default::default()
        }
    }

    pub fn apply(&mut self, offset: u64, record: &Record) {
        match record {
            Record::StudyConfigured { config } => self.config = (**config).clone(),
            Record::EntryCommitted { entry } => {
                // Keep (participant, day, created_at) order so reads never sort.
                let key = |e: &DiaryEntry| (e.participant_id.clone(), e.study_day, e.created_at);
                let pos = self.entries.partition_point(|e| key(e) <= key(entry));
                self.entries.insert(pos, entry.clone());
            }
            Record::QuestionnaireSubmitted { response } => {
                self.questionnaires
                    .insert(response.participant_id.clone(), response.clone());
            }
            Record::ReminderSent {
                participant_id,
                day,
                channel,
                at,
            } => self.reminders.push(ReminderRecord {
                participant_id: participant_id.clone(),
                day: *day,
                channel: *channel,
                at: *at,
            }),
            Record::SkipRegistered {
                participant_id,
                day,
            } => {
                self.skips.insert((participant_id.clone(), *day));
            }
            Record::SessionOpened { .. }
            | Record::SessionStep { .. }
            | Record::SessionExpired { .. }
            | Record::NotifierFailed { .. } => {}
        }
        self.offset = Some(offset);
    }

    pub fn entries(&self) -> &[DiaryEntry] {
        &self.entries
    }

    pub fn questionnaires(&self) -> impl Iterator<Item = &QuestionnaireResponse> {
        self.questionnaires.values()
    }

    pub fn reminders(&self) -> &[ReminderRecord] {
        &self.reminders
    }

    pub fn skips(&self) -> &BTreeSet<(String, u32)> {
        &self.skips
    }

    pub fn reminder_sent(&self, participant_id: &str, day: u32) -> bool {
        self.reminders
            .iter()
            .any(|r| r.participant_id == participant_id && r.day == day)
    }

    /// Enrolled participants plus anyone who has submitted something.
    pub fn participants(&self) -> BTreeMap<String, Condition> {
        let mut out: BTreeMap<String, Condition> = self
            .config
            .participants
            .iter()
            .map(|p| (p.participant_id.clone(), p.condition))
            .collect();
        for e in &self.entries {
            out.entry(e.participant_id.clone()).or_insert(e.condition);
        }
        for q in self.questionnaires.values() {
            out.entry(q.participant_id.clone()).or_insert(q.condition);
        }
        out
    }

    /// Entries in (participant, study_day, created_at) order.
    pub fn fetch_entries(
        &self,
        scope: &Scope,
        filter: &EntryFilter,
    ) -> Result<Vec<DiaryEntry>, StoreError> {
        if let Scope::Participant(id) = scope {
            if !self.participants().contains_key(id) {
                return Err(StoreError::UnknownScope(format!("participant {id}")));
            }
        }
        Ok(self
            .entries
            .iter()
            .filter(|e| match scope {
                Scope::Study => true,
                Scope::Participant(id) => &e.participant_id == id,
            })
            .filter(|e| filter.matches(e))
            .cloned()
            .collect())
    }

    /// Rebuild from a log, starting from a snapshot when one is given.
    pub fn from_log(base: Option<Store>, log: &EventLog) -> Result<Store, StoreError> {
        let mut store = base.unwrap_or_default();
        for line in log.read_from(store.offset.map_or(0, |o| o + 1))? {
            store.apply(line.offset, &line.record);
        }
        Ok(store)
    }

    pub fn write_snapshot(&self, path: &std::path::Path) -> Result<(), StoreError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read_snapshot(path: &std::path::Path) -> Result<Option<Store>, StoreError> {
        match std::fs::read(path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

/// The log plus its projection, kept in step: every mutation goes through
/// [`StudyDb::commit`], which appends first and applies only on success.
#[derive(Debug)]
pub struct StudyDb {
    log: EventLog,
    store: Store,
    snapshot_path: Option<std::path::PathBuf>,
}

impl StudyDb {
    pub const LOG_FILE: &'static str = "events.jsonl";
    pub const SNAPSHOT_FILE: &'static str = "snapshot.json";

    pub fn in_memory(config: StudyConfig) -> Self {
        StudyDb {
            log: EventLog::in_memory(),
            store: Store::new(config),
            snapshot_path: None,
        }
    }

    /// Open a study directory, loading the snapshot and replaying the log tail.
    /// A fresh directory is initialized with `config`.
    pub fn open(
        dir: &std::path::Path,
        config: StudyConfig,
        options: LogOptions,
    ) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir)?;
        let log = EventLog::open(&dir.join(Self::LOG_FILE), options)?;
        let snapshot_path = dir.join(Self::SNAPSHOT_FILE);
        let base = Store::read_snapshot(&snapshot_path)?;
        let fresh = log.is_empty();
        let mut db = StudyDb {
            store: Store::from_log(base.or_else(|| Some(Store::new(config.clone()))), &log)?,
            log,
            snapshot_path: Some(snapshot_path),
        };
        if fresh {
            db.commit(Record::StudyConfigured {
                config: Box::new(config),
            })?;
        }
        Ok(db)
    }

    pub fn commit(&mut self, record: Record) -> Result<u64, StoreError> {
        let offset = self.log.append(record.clone())?;
        self.store.apply(offset, &record);
        Ok(offset)
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn config(&self) -> &StudyConfig {
        &self.store.config
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn records(&self) -> Vec<Record> {
        self.log.read_all().into_iter().map(|l| l.record).collect()
    }

    pub fn snapshot(&self) -> Result<(), StoreError> {
        match &self.snapshot_path {
            Some(p) => self.store.write_snapshot(p),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn at(h: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2024, 6, 3)
            .unwrap()
            .and_hms_opt(h, 0, 0)
            .unwrap()
    }

    fn resp(id: u32, segs: &[&str]) -> QuestionResponse {
        QuestionResponse {
            question_id: id,
            segments: segs.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn entry(p: &str, day: u32, h: u32, responses: Vec<QuestionResponse>) -> DiaryEntry {
        DiaryEntry::new(
            p.into(),
            Condition::TextForm,
            day,
            Channel::TextForm,
            responses,
            at(h),
        )
    }

    #[test]
    fn word_count_examples() {
        assert_eq!(word_count_text(""), 0);
        assert_eq!(word_count_text("good   night\tkiddo"), 3);
        assert_eq!(word_count_text(" \n "), 0);
    }

    #[test]
    fn concatenation_joins_with_single_spaces() {
        let e = entry("T1", 1, 20, vec![resp(1, &["a b", "c"]), resp(2, &["d"])]);
        assert_eq!(e.text(), "a b c d");
        assert_eq!(e.word_count, 4);
        let empty = entry("T1", 1, 20, vec![resp(1, &[""]), resp(2, &[""])]);
        assert_eq!(empty.text(), "");
        assert_eq!(empty.word_count, 0);
    }

    #[test]
    fn responses_are_ordered_by_question() {
        let e = entry("T1", 1, 20, vec![resp(2, &["b"]), resp(1, &["a"])]);
        assert_eq!(e.text(), "a b");
    }

    #[test]
    fn fetch_orders_and_filters() {
        let mut s = Store::default();
        let recs = [
            entry("T2", 1, 20, vec![resp(1, &["x"])]),
            entry("T1", 2, 21, vec![resp(1, &["y"])]),
            entry("T1", 1, 22, vec![resp(1, &["z"])]),
        ];
        for (i, e) in recs.iter().enumerate() {
            s.apply(i as u64, &Record::EntryCommitted { entry: e.clone() });
        }
        let all = s
            .fetch_entries(&Scope::Study, &EntryFilter::default())
            .unwrap();
        let keys: Vec<_> = all
            .iter()
            .map(|e| (e.participant_id.as_str(), e.study_day))
            .collect();
        assert_eq!(keys, vec![("T1", 1), ("T1", 2), ("T2", 1)]);
        let day2 = s
            .fetch_entries(
                &Scope::Study,
                &EntryFilter {
                    study_day: Some(2),
                    ..Default::default()
                },
            )
            .unwrap();
        assert_eq!(day2.len(), 1);
        assert_eq!(
            s.fetch_entries(
                &Scope::Participant("nobody".into()),
                &EntryFilter::default()
            )
            .unwrap_err()
            .code(),
            "unknown_scope"
        );
        assert!(Store::default()
            .fetch_entries(&Scope::Study, &EntryFilter::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn questionnaire_validation() {
        let layout = QuestionnaireLayout::default();
        let mut q = QuestionnaireResponse {
            participant_id: "R1".into(),
            condition: Condition::RobotConversational,
            use_items: vec![4; 30],
            sus_items: vec![3; 10],
            breadth_items: vec![4; 3],
            depth_items: vec![4; 8],
        };
        assert!(q.validate(&layout).is_ok());
        q.sus_items.push(3);
        assert!(matches!(
            q.validate(&layout),
            Err(QuestionnaireError::WrongItemCount {
                instrument: "SUS",
                ..
            })
        ));
        q.sus_items.pop();
        q.depth_items[3] = 8;
        assert!(matches!(
            q.validate(&layout),
            Err(QuestionnaireError::OutOfRangeItem { index: 3, .. })
        ));
    }

    #[test]
    fn study_db_reopens_from_snapshot_plus_tail() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = StudyConfig::default();
        let mut db = StudyDb::open(dir.path(), cfg.clone(), LogOptions::default()).unwrap();
        db.commit(Record::EntryCommitted {
            entry: entry("T1", 1, 20, vec![resp(1, &["a"])]),
        })
        .unwrap();
        db.snapshot().unwrap();
        db.commit(Record::EntryCommitted {
            entry: entry("T1", 2, 20, vec![resp(1, &["b"])]),
        })
        .unwrap();
        let expected = db.store().clone();
        drop(db);
        let db = StudyDb::open(dir.path(), cfg, LogOptions::default()).unwrap();
        assert_eq!(db.store(), &expected);
        assert_eq!(db.store().entries().len(), 2);
        assert_eq!(db.log().len(), 3);
    }

    proptest! {
        #[test]
        fn entry_round_trips_and_recount_matches(
            segs in proptest::collection::vec(
                proptest::collection::vec("[a-z \t]{0,30}", 1..4), 1..7),
            day in 1u32..8,
        ) {
            let responses = segs
                .into_iter()
                .enumerate()
                .map(|(i, s)| QuestionResponse { question_id: i as u32 + 1, segments: s })
                .collect();
            let e = entry("P", day, 20, responses);
            let json = serde_json::to_string(&e).unwrap();
            let back: DiaryEntry = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(&back, &e);
            prop_assert_eq!(back.recount(), e.word_count);
            let total: usize = e.responses.iter()
                .flat_map(|r| &r.segments)
                .map(|s| word_count_text(s))
                .sum();
            prop_assert_eq!(e.word_count, total);
        }
    }
}
