//! Scripted, clock-compressed study runs through the real service.
//!
//! Every participant-night in a [`SimulationScript`] becomes one timed action
//! on a virtual clock, merged with reminder ticks every five minutes. Robot
//! participants talk to a live session, the others post entries directly
//! (audio answers go through the transcription gateway). Same script and seed,
//! same log.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::{Duration, NaiveDateTime, NaiveTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::StudyCalendar;
use crate::compliance::{Notifier, RecordingNotifier};
use crate::config::{Condition, Enrollment, StudyConfig};
use crate::conversation::{Action, SessionEvent, TurnKind};
use crate::gateway::{Gateway, MockScript};
use crate::service::{
    ComplianceReport, EntrySubmission, ServiceError, StudyService, SubmittedResponse,
};
use crate::stats::StatsReport;
use crate::store::{QuestionnaireResponse, StudyDb};

pub const TRIGGER_PHRASE: &str = "Can we start the diary entry activity?";
/// Answer given when the agent probes past the scripted segments.
pub const NOTHING_MORE: &str = "That's all for this one.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NightTiming {
    /// Entry before the participant's check time.
    OnTime,
    /// Entry after tonight's reminder, before the night closes.
    AfterReminder,
    /// Entry the next day, inside the validity window.
    Late,
    /// Pre-registered skip.
    Skip,
    Missed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedNight {
    pub night: u32,
    pub timing: NightTiming,
    /// Per question: the answer, then answers to any follow-ups.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub responses: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedQuestionnaire {
    pub use_items: Vec<u8>,
    pub sus_items: Vec<u8>,
    pub breadth_items: Vec<u8>,
    pub depth_items: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedParticipant {
    pub participant_id: String,
    pub condition: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_time: Option<NaiveTime>,
    pub nights: Vec<ScriptedNight>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub questionnaire: Option<ScriptedQuestionnaire>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationScript {
    /// Study settings; enrollment is taken from `participants`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyConfig>,
    #[serde(default)]
    pub seed: u64,
    /// Extra provider mock data (chat replies, transcripts).
    #[serde(default)]
    pub mock: MockScript,
    #[serde(default)]
    pub participants: Vec<ScriptedParticipant>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("invalid script: {0}")]
    ScriptInvalid(String),
    #[error("participant {participant} night {night}: {message}")]
    Stalled {
        participant: String,
        night: u32,
        message: String,
    },
    #[error(transparent)]
    Service(#[from] ServiceError),
}

impl SimulationError {
    pub fn code(&self) -> &'static str {
        match self {
            SimulationError::ScriptInvalid(_) => "script_invalid",
            SimulationError::Stalled { .. } => "simulation_stalled",
            SimulationError::Service(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimulationOptions {
    /// Overrides the script's seed.
    pub seed: Option<u64>,
    /// Virtual seconds per real second. `None` runs as fast as possible.
    pub compression: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub participants: usize,
    pub entries: usize,
    pub entries_by_condition: BTreeMap<String, usize>,
    pub reminders_sent: usize,
    pub reminder_failures: usize,
    pub sessions: usize,
    pub compliance: ComplianceReport,
    /// Absent when there is too little data for any measure.
    pub stats: Option<StatsReport>,
}

fn invalid(msg: impl Into<String>) -> SimulationError {
    SimulationError::ScriptInvalid(msg.into())
}

impl SimulationScript {
    /// Study config with enrollment taken from the script.
    pub fn study_config(&self) -> StudyConfig {
        let mut config = self.study.clone().unwrap_or_default();
        config.participants = self
            .participants
            .iter()
            .map(|p| Enrollment {
                participant_id: p.participant_id.clone(),
                condition: p.condition,
                check_time: p.check_time,
                reminder_channel: None,
            })
            .collect();
        config
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let config = self.study_config();
        config
            .validate()
            .map_err(|e| invalid(format!("study config: {e}")))?;
        let questions = config.questions.len();
        let mut ids = BTreeSet::new();
        for p in &self.participants {
            if !ids.insert(p.participant_id.as_str()) {
                return Err(invalid(format!(
                    "participant {} listed twice",
                    p.participant_id
                )));
            }
            if !config.conditions.contains(&p.condition) {
                return Err(invalid(format!(
                    "participant {}: condition {} not in study",
                    p.participant_id,
                    p.condition.label()
                )));
            }
            let mut nights = BTreeSet::new();
            for n in &p.nights {
                if n.night == 0 || n.night > config.total_days {
                    return Err(invalid(format!(
                        "participant {}: night {} outside 1..={}",
                        p.participant_id, n.night, config.total_days
                    )));
                }
                if !nights.insert(n.night) {
                    return Err(invalid(format!(
                        "participant {}: night {} listed twice",
                        p.participant_id, n.night
                    )));
                }
                let submits = matches!(
                    n.timing,
                    NightTiming::OnTime | NightTiming::AfterReminder | NightTiming::Late
                );
                if submits && n.responses.len() != questions {
                    return Err(invalid(format!(
                        "participant {} night {}: {} responses for {questions} questions",
                        p.participant_id,
                        n.night,
                        n.responses.len()
                    )));
                }
                if submits && n.responses.iter().any(|r| r.is_empty()) {
                    return Err(invalid(format!(
                        "participant {} night {}: empty response list",
                        p.participant_id, n.night
                    )));
                }
            }
        }
        Ok(())
    }
}

fn audio_ref(pid: &str, night: u32, question: usize) -> String {
    format!("audio:{pid}:{night}:{}", question + 1)
}

/// Mock gateway serving the script's chat replies plus one transcript per
/// scripted audio answer.
pub fn script_gateway(script: &SimulationScript) -> Gateway {
    let mut mock = script.mock.clone();
    for p in script
        .participants
        .iter()
        .filter(|p| p.condition == Condition::AudioTranscript)
    {
        for n in &p.nights {
            for (q, segments) in n.responses.iter().enumerate() {
                mock.transcripts
                    .insert(audio_ref(&p.participant_id, n.night, q), segments.join(" "));
            }
        }
    }
    Gateway::mock(mock)
}

#[derive(Debug, Clone)]
enum Step {
    Tick,
    Entry { participant: usize, night: usize },
}

fn entry_time(
    calendar: &StudyCalendar,
    check: NaiveTime,
    night: u32,
    timing: NightTiming,
    rng: &mut ChaCha8Rng,
) -> NaiveDateTime {
    let check_at = calendar.check_instant(night, check);
    let (_, close) = calendar.night_window(night);
    match timing {
        NightTiming::OnTime => check_at - Duration::minutes(rng.random_range(30..150)),
        NightTiming::AfterReminder => {
            let t = check_at + Duration::minutes(rng.random_range(10..40));
            t.min(close - Duration::minutes(10))
        }
        _ => close + Duration::minutes(rng.random_range(300..360)),
    }
}

/// Run the script against `db` (normally empty). Returns the live service so
/// callers can keep querying it.
pub fn simulate(
    script: &SimulationScript,
    options: SimulationOptions,
    db: StudyDb,
) -> Result<(StudyService, SimulationReport), SimulationError> {
    script.validate()?;
    let seed = options.seed.unwrap_or(script.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = script.study_config();
    let calendar = StudyCalendar::from_config(&config);
    let notifier = Arc::new(RecordingNotifier::new());
    let service = StudyService::new(
        db,
        Arc::new(script_gateway(script)),
        notifier.clone() as Arc<dyn Notifier>,
    );
    service.set_config(config.clone())?;

    for p in &script.participants {
        for n in p.nights.iter().filter(|n| n.timing == NightTiming::Skip) {
            service.register_skip(&p.participant_id, n.night)?;
        }
    }

    // Timeline: every entry action plus a reminder tick every five minutes
    // from the first night's opening to the last validity deadline.
    let mut timeline: Vec<(NaiveDateTime, u64, Step)> = Vec::new();
    for (pi, p) in script.participants.iter().enumerate() {
        let check = p.check_time.unwrap_or(config.reminder_defaults.check_time);
        for (ni, n) in p.nights.iter().enumerate() {
            if matches!(n.timing, NightTiming::Skip | NightTiming::Missed) {
                continue;
            }
            let at = entry_time(&calendar, check, n.night, n.timing, &mut rng);
            timeline.push((
                at,
                0,
                Step::Entry {
                    participant: pi,
                    night: ni,
                },
            ));
        }
    }
    // Seeded tie-break between simultaneous actions.
    let mut order: Vec<u64> = (1..=timeline.len() as u64).collect();
    order.shuffle(&mut rng);
    for (slot, o) in timeline.iter_mut().zip(order) {
        slot.1 = o;
    }
    if !script.participants.is_empty() {
        let (mut t, _) = calendar.night_window(1);
        let end = calendar.late_deadline(config.total_days);
        while t < end {
            timeline.push((t, 0, Step::Tick));
            t += Duration::minutes(5);
        }
    }
    timeline.sort_by_key(|(at, o, _)| (*at, *o));

    let question_ids: Vec<u32> = config.questions.iter().map(|q| q.id).collect();
    let mut clock = timeline.first().map(|(t, _, _)| *t);
    let mut sessions = 0;
    for (at, _, step) in &timeline {
        if let (Some(factor), Some(prev)) = (options.compression, clock) {
            let virtual_secs = (*at - prev).num_milliseconds() as f64 / 1000.0;
            if factor > 0.0 && virtual_secs > 0.0 {
                std::thread::sleep(std::time::Duration::from_secs_f64(virtual_secs / factor));
            }
        }
        clock = Some(*at);
        match step {
            Step::Tick => {
                service.tick(*at)?;
                service.expire_sessions(*at)?;
            }
            Step::Entry { participant, night } => {
                let p = &script.participants[*participant];
                let n = &p.nights[*night];
                match p.condition {
                    Condition::RobotConversational => {
                        run_conversation(&service, p, n, &question_ids, *at)?;
                        sessions += 1;
                    }
                    Condition::AudioTranscript | Condition::TextForm => {
                        let audio = p.condition == Condition::AudioTranscript;
                        let responses = n
                            .responses
                            .iter()
                            .enumerate()
                            .map(|(q, segs)| SubmittedResponse {
                                question_id: config.questions[q].id,
                                text: (!audio).then(|| segs.join(" ")),
                                audio_ref: audio.then(|| audio_ref(&p.participant_id, n.night, q)),
                            })
                            .collect();
                        service.submit_entry(
                            EntrySubmission {
                                participant_id: p.participant_id.clone(),
                                study_day: None,
                                responses,
                            },
                            *at,
                        )?;
                    }
                }
            }
        }
    }

    for p in &script.participants {
        if let Some(q) = &p.questionnaire {
            service.submit_questionnaire(QuestionnaireResponse {
                participant_id: p.participant_id.clone(),
                condition: p.condition,
                use_items: q.use_items.clone(),
                sus_items: q.sus_items.clone(),
                breadth_items: q.breadth_items.clone(),
                depth_items: q.depth_items.clone(),
            })?;
        }
    }

    let compliance = service.compliance();
    let (entries, by_condition) = service.with_store(|s| {
        let mut by: BTreeMap<String, usize> = BTreeMap::new();
        for e in s.entries() {
            *by.entry(e.condition.label().to_string()).or_default() += 1;
        }
        (s.entries().len(), by)
    });
    let reminders_sent = service.with_store(|s| s.reminders().len());
    let reminder_failures = service
        .records()
        .iter()
        .filter(|r| matches!(r, crate::store::Record::NotifierFailed { .. }))
        .count();
    let stats = service.stats(None).ok().filter(|r| !r.measures.is_empty());
    let report = SimulationReport {
        seed,
        participants: script.participants.len(),
        entries,
        entries_by_condition: by_condition,
        reminders_sent,
        reminder_failures,
        sessions,
        compliance,
        stats,
    };
    Ok((service, report))
}

/// One robot-condition night: wake the robot, ask for the diary, answer every
/// prompt from the script.
fn run_conversation(
    service: &StudyService,
    p: &ScriptedParticipant,
    n: &ScriptedNight,
    question_ids: &[u32],
    start: NaiveDateTime,
) -> Result<(), SimulationError> {
    let stalled = |message: String| SimulationError::Stalled {
        participant: p.participant_id.clone(),
        night: n.night,
        message,
    };
    let session = service.open_session(&p.participant_id, start)?;
    let id = session.id().to_string();
    let mut t = start;
    let mut send = |event: SessionEvent| -> Result<Vec<Action>, SimulationError> {
        t += Duration::seconds(20);
        Ok(service.session_event(&id, event, t)?)
    };
    send(SessionEvent::Activate)?;
    send(SessionEvent::utterance(TRIGGER_PHRASE))?;
    let mut actions = send(SessionEvent::SilenceTimeout)?;

    let mut question = 0usize;
    let mut segment = 0usize;
    // Cap well above questions × (1 + follow-up cap).
    for _ in 0..(n.responses.len() * 8 + 8) {
        if actions
            .iter()
            .any(|a| matches!(a, Action::EntryCompleted { .. }))
        {
            return Ok(());
        }
        for a in &actions {
            if let Action::Prompt {
                kind, question_id, ..
            } = a
            {
                match kind {
                    TurnKind::PredefinedQuestion => {
                        question = question_id
                            .and_then(|id| question_ids.iter().position(|q| *q == id))
                            .ok_or_else(|| stalled(format!("unknown question {question_id:?}")))?;
                        segment = 0;
                    }
                    TurnKind::FollowUp => segment += 1,
                    _ => {}
                }
            }
        }
        if !actions.iter().any(|a| matches!(a, Action::Prompt { .. })) {
            return Err(stalled(format!("no prompt after {actions:?}")));
        }
        let text = n
            .responses
            .get(question)
            .and_then(|segs| segs.get(segment))
            .map(String::as_str)
            .unwrap_or(NOTHING_MORE);
        send(SessionEvent::utterance(text))?;
        actions = send(SessionEvent::EndOfResponse)?;
    }
    Err(stalled("diary did not complete".into()))
}
