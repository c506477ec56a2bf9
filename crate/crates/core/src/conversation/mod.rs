//! Three-mode interaction machine governing every participant session.
//!
//! ```text
//!   Idle --Activate--> Chat --diary intent--> Diary --complete--> Idle
//!     ^                 |                       |
//!     +---Deactivate----+-----------------------+
//! ```
//!
//! [`fsm`] holds the pure transition table. [`Session::handle`] applies an
//! event, runs the interview engine and provider calls through an [`Agent`],
//! and returns the emitted [`Action`]s. Rejected events leave the session
//! untouched apart from the activity timestamp.

mod agent;
mod intent;
mod registry;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::StudyCalendar;
use crate::config::{Condition, StudyConfig};
use crate::gateway::{AudioRef, ChatExchange};
use crate::interview::{self, DiaryProgress, EntryMeta, InterviewError, NextAction};
use crate::store::DiaryEntry;

pub use agent::{Agent, AgentOutput, Recorded, RecordingAgent, ReplayAgent, StudyAgent};
pub use intent::detect_diary_intent;
pub use registry::SessionRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionMode {
    Idle,
    Chat,
    Diary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SessionEvent {
    /// Bumper-press analog.
    Activate,
    UtteranceReceived {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        audio_ref: Option<String>,
    },
    /// Manual end-of-answer signal used in diary mode.
    EndOfResponse,
    /// End-of-speech detected by silence, used in chat mode.
    SilenceTimeout,
    DiaryIntentDetected,
    DiaryCompleted,
    Deactivate,
}

impl SessionEvent {
    pub fn name(&self) -> &'static str {
        match self {
            SessionEvent::Activate => "activate",
            SessionEvent::UtteranceReceived { .. } => "utterance-received",
            SessionEvent::EndOfResponse => "end-of-response",
            SessionEvent::SilenceTimeout => "silence-timeout",
            SessionEvent::DiaryIntentDetected => "diary-intent-detected",
            SessionEvent::DiaryCompleted => "diary-completed",
            SessionEvent::Deactivate => "deactivate",
        }
    }

    pub fn utterance(text: impl Into<String>) -> Self {
        SessionEvent::UtteranceReceived {
            text: Some(text.into()),
            audio_ref: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionCue {
    Ready,
    Listening,
    Processing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueHint {
    pub light: String,
    pub expression: String,
}

impl InteractionCue {
    /// Cue implied by state alone.
    pub fn implied(mode: SessionMode, in_flight: bool) -> Self {
        match (mode, in_flight) {
            (SessionMode::Idle, _) => InteractionCue::Ready,
            (_, true) => InteractionCue::Processing,
            (_, false) => InteractionCue::Listening,
        }
    }

    pub fn display_hint(self) -> CueHint {
        let (light, expression) = match self {
            InteractionCue::Ready => ("green-chest", "neutral"),
            InteractionCue::Listening => ("blue-head", "attentive"),
            InteractionCue::Processing => ("off", "pensive"),
        };
        CueHint {
            light: light.into(),
            expression: expression.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TurnRole {
    Participant,
    Agent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TurnKind {
    Chat,
    PredefinedQuestion,
    FollowUp,
    SystemCue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub seq: u64,
    pub role: TurnRole,
    pub kind: TurnKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<u32>,
    pub timestamp: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Action {
    ModeChanged {
        from: SessionMode,
        to: SessionMode,
    },
    CueChanged {
        cue: InteractionCue,
        hint: CueHint,
    },
    Prompt {
        kind: TurnKind,
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        question_id: Option<u32>,
    },
    Rejected {
        mode: SessionMode,
        event: String,
        reason: String,
    },
    Warning {
        code: String,
        message: String,
    },
    EntryCompleted {
        entry: DiaryEntry,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConversationError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("malformed event: {0}")]
    MalformedEvent(String),
    #[error("session {0} expired after inactivity")]
    SessionExpired(String),
    #[error("idle sessions accept no participant input")]
    IdleModeHasNoInput,
}

impl ConversationError {
    pub fn code(&self) -> &'static str {
        match self {
            ConversationError::UnknownSession(_) => "unknown_session",
            ConversationError::MalformedEvent(_) => "malformed_event",
            ConversationError::SessionExpired(_) => "session_expired",
            ConversationError::IdleModeHasNoInput => "idle_mode_has_no_input",
        }
    }
}

/// How the end of a participant's input is detected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum InputPolicy {
    /// Participant signals the end explicitly (`EndOfResponse`).
    Manual,
    /// Input ends after this much silence.
    Silence { timeout_secs: f64 },
}

pub fn end_of_input_policy(
    mode: SessionMode,
    config: &StudyConfig,
) -> Result<InputPolicy, ConversationError> {
    match mode {
        SessionMode::Idle => Err(ConversationError::IdleModeHasNoInput),
        SessionMode::Chat => Ok(InputPolicy::Silence {
            timeout_secs: config.chat_silence_timeout_secs,
        }),
        SessionMode::Diary => Ok(InputPolicy::Manual),
    }
}

/// The pure transition table.
pub mod fsm {
    use super::{SessionEvent, SessionMode};

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Transition {
        /// Event is accepted without a mode change.
        Stay,
        Move(SessionMode),
        Reject(&'static str),
    }

    pub fn classify(mode: SessionMode, event: &SessionEvent) -> Transition {
        use SessionEvent as E;
        use SessionMode as M;
        use Transition::*;
        match (mode, event) {
            (M::Idle, E::Activate) => Move(M::Chat),
            (M::Idle, E::Deactivate) => Reject("session is already idle"),
            (M::Idle, _) => Reject("session is idle; activate first"),

            (M::Chat, E::Activate) => Reject("session is already active"),
            (M::Chat, E::UtteranceReceived { .. }) => Stay,
            (M::Chat, E::SilenceTimeout) => Stay,
            (M::Chat, E::DiaryIntentDetected) => Move(M::Diary),
            (M::Chat, E::EndOfResponse) => Reject("end-of-response is only used in diary mode"),
            (M::Chat, E::DiaryCompleted) => Reject("no diary in progress"),
            (M::Chat, E::Deactivate) => Move(M::Idle),

            (M::Diary, E::Activate) => Reject("session is already active"),
            (M::Diary, E::UtteranceReceived { .. }) => Stay,
            (M::Diary, E::EndOfResponse) => Stay,
            (M::Diary, E::SilenceTimeout) => Reject("silence does not end answers in diary mode"),
            (M::Diary, E::DiaryIntentDetected) => Reject("diary already in progress"),
            (M::Diary, E::DiaryCompleted) => Move(M::Idle),
            (M::Diary, E::Deactivate) => Move(M::Idle),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    Active,
    Abandoned,
}

const CHAT_HISTORY_TURNS: usize = 20;

pub const CHAT_SYSTEM_PROMPT: &str = "You are a friendly companion robot chatting with a parent \
in the evening. Keep replies to one or two short sentences. If the parent wants to record \
tonight's diary entry, tell them they can say \"Can we start the diary entry activity?\"";

pub const CHAT_FALLBACK_REPLY: &str = "Sorry, I didn't quite catch that. Could you say it again?";

pub const DIARY_CLOSING: &str =
    "Thank you! Your diary entry for tonight has been saved. Good night!";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    id: String,
    participant_id: String,
    condition: Condition,
    mode: SessionMode,
    cue: InteractionCue,
    in_flight: bool,
    status: SessionStatus,
    transcript: Vec<Turn>,
    diary: Option<DiaryProgress>,
    buffer: Vec<String>,
    opened_at: NaiveDateTime,
    last_event_at: NaiveDateTime,
    entries_completed: u32,
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        participant_id: impl Into<String>,
        condition: Condition,
        opened_at: NaiveDateTime,
    ) -> Self {
        Session {
            id: id.into(),
            participant_id: participant_id.into(),
            condition,
            mode: SessionMode::Idle,
            cue: InteractionCue::Ready,
            in_flight: false,
            status: SessionStatus::Active,
            transcript: Vec::new(),
            diary: None,
            buffer: Vec::new(),
            opened_at,
            last_event_at: opened_at,
            entries_completed: 0,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn participant_id(&self) -> &str {
        &self.participant_id
    }

    pub fn condition(&self) -> Condition {
        self.condition
    }

    pub fn mode(&self) -> SessionMode {
        self.mode
    }

    pub fn cue(&self) -> InteractionCue {
        self.cue
    }

    pub fn in_flight(&self) -> bool {
        self.in_flight
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn transcript(&self) -> &[Turn] {
        &self.transcript
    }

    pub fn diary(&self) -> Option<&DiaryProgress> {
        self.diary.as_ref()
    }

    pub(crate) fn diary_mut(&mut self) -> Option<&mut DiaryProgress> {
        self.diary.as_mut()
    }

    pub fn opened_at(&self) -> NaiveDateTime {
        self.opened_at
    }

    pub fn last_event_at(&self) -> NaiveDateTime {
        self.last_event_at
    }

    pub fn entries_completed(&self) -> u32 {
        self.entries_completed
    }

    /// Whether the session has been idle longer than the configured limit at `now`.
    pub fn is_stale(&self, now: NaiveDateTime, config: &StudyConfig) -> bool {
        now - self.last_event_at > Duration::minutes(i64::from(config.session_inactivity_minutes))
    }

    pub fn abandon(&mut self) {
        self.status = SessionStatus::Abandoned;
        self.mode = SessionMode::Idle;
        self.cue = InteractionCue::Ready;
        self.diary = None;
        self.buffer.clear();
    }

    /// Apply one event. Provider work happens synchronously through `agent`.
    pub fn handle(
        &mut self,
        event: SessionEvent,
        at: NaiveDateTime,
        config: &StudyConfig,
        agent: &mut dyn Agent,
    ) -> Result<Vec<Action>, ConversationError> {
        if self.status == SessionStatus::Abandoned {
            return Err(ConversationError::SessionExpired(self.id.clone()));
        }
        if self.is_stale(at, config) {
            self.abandon();
            return Err(ConversationError::SessionExpired(self.id.clone()));
        }
        if let SessionEvent::UtteranceReceived {
            text: None,
            audio_ref: None,
        } = &event
        {
            return Err(ConversationError::MalformedEvent(
                "utterance carries neither text nor audio".into(),
            ));
        }
        let at = at.max(self.last_event_at);
        self.last_event_at = at;

        let mut out = Vec::new();
        match fsm::classify(self.mode, &event) {
            fsm::Transition::Reject(reason) => out.push(Action::Rejected {
                mode: self.mode,
                event: event.name().to_string(),
                reason: reason.to_string(),
            }),
            fsm::Transition::Move(to) => match (self.mode, to) {
                (SessionMode::Idle, SessionMode::Chat) => self.change_mode(to, &mut out),
                (SessionMode::Chat, SessionMode::Diary) => self.enter_diary(at, config, &mut out),
                (SessionMode::Diary, SessionMode::Idle)
                    if matches!(event, SessionEvent::DiaryCompleted) =>
                {
                    // Completion is produced by the engine; an external signal
                    // while questions remain is refused.
                    out.push(Action::Rejected {
                        mode: self.mode,
                        event: event.name().to_string(),
                        reason: "diary questions remain unanswered".into(),
                    });
                }
                (from, SessionMode::Idle) => {
                    if from == SessionMode::Diary {
                        out.push(Action::Warning {
                            code: "diary_abandoned".into(),
                            message: "diary pass ended before completion".into(),
                        });
                    }
                    self.diary = None;
                    self.buffer.clear();
                    self.change_mode(SessionMode::Idle, &mut out);
                }
                _ => unreachable!("transition table only moves along defined edges"),
            },
            fsm::Transition::Stay => match event {
                SessionEvent::UtteranceReceived { text, audio_ref } => {
                    if let Some(text) = self.resolve_utterance(text, audio_ref, agent, &mut out) {
                        if !text.trim().is_empty() {
                            self.buffer.push(text.trim().to_string());
                        }
                    }
                }
                SessionEvent::SilenceTimeout => {
                    self.finish_chat_utterance(at, config, agent, &mut out)
                }
                SessionEvent::EndOfResponse => self.finish_diary_answer(at, agent, &mut out),
                _ => unreachable!("only input events stay in place"),
            },
        }
        debug_assert_eq!(self.cue, InteractionCue::implied(self.mode, self.in_flight));
        Ok(out)
    }

    fn resolve_utterance(
        &mut self,
        text: Option<String>,
        audio_ref: Option<String>,
        agent: &mut dyn Agent,
        out: &mut Vec<Action>,
    ) -> Option<String> {
        if let Some(text) = text {
            return Some(text);
        }
        let audio = AudioRef(audio_ref?);
        self.set_in_flight(true, out);
        let result = agent.transcribe(&audio);
        self.set_in_flight(false, out);
        match result {
            Ok(text) => Some(text),
            Err(e) => {
                out.push(Action::Warning {
                    code: e.code().into(),
                    message: format!("could not transcribe {audio}: {e}"),
                });
                None
            }
        }
    }

    fn push_turn(
        &mut self,
        role: TurnRole,
        kind: TurnKind,
        text: String,
        question_id: Option<u32>,
        at: NaiveDateTime,
    ) {
        self.transcript.push(Turn {
            seq: self.transcript.len() as u64,
            role,
            kind,
            text,
            question_id,
            timestamp: at,
        });
    }

    fn prompt(
        &mut self,
        kind: TurnKind,
        text: String,
        question_id: Option<u32>,
        at: NaiveDateTime,
        out: &mut Vec<Action>,
    ) {
        self.push_turn(TurnRole::Agent, kind, text.clone(), question_id, at);
        out.push(Action::Prompt {
            kind,
            text,
            question_id,
        });
    }

    fn set_cue(&mut self, out: &mut Vec<Action>, force: bool) {
        let cue = InteractionCue::implied(self.mode, self.in_flight);
        if force || cue != self.cue {
            self.cue = cue;
            out.push(Action::CueChanged {
                cue,
                hint: cue.display_hint(),
            });
        }
    }

    fn set_in_flight(&mut self, in_flight: bool, out: &mut Vec<Action>) {
        self.in_flight = in_flight;
        self.set_cue(out, false);
    }

    fn change_mode(&mut self, to: SessionMode, out: &mut Vec<Action>) {
        let from = self.mode;
        self.mode = to;
        out.push(Action::ModeChanged { from, to });
        self.set_cue(out, true);
    }

    fn enter_diary(&mut self, at: NaiveDateTime, config: &StudyConfig, out: &mut Vec<Action>) {
        let calendar = StudyCalendar::from_config(config);
        let study_day = match calendar.intended_day(at) {
            Some(day) => day,
            None => {
                out.push(Action::Warning {
                    code: "outside_study_window".into(),
                    message: format!("{at} is outside the study nights; clamping the study day"),
                });
                if at < calendar.night_window(1).0 {
                    1
                } else {
                    config.total_days
                }
            }
        };
        let meta = EntryMeta {
            participant_id: self.participant_id.clone(),
            condition: self.condition,
            study_day,
            channel: self.condition.channel(),
        };
        let (mut progress, first) = match interview::start_diary(config, meta) {
            Ok(v) => v,
            Err(e) => {
                out.push(Action::Rejected {
                    mode: self.mode,
                    event: SessionEvent::DiaryIntentDetected.name().into(),
                    reason: e.to_string(),
                });
                return;
            }
        };
        if self.entries_completed > 0 {
            progress.duplicate = true;
            out.push(Action::Warning {
                code: "duplicate_entry".into(),
                message: "a diary entry was already completed in this session; the new one is flagged as a duplicate".into(),
            });
        }
        self.diary = Some(progress);
        self.buffer.clear();
        self.change_mode(SessionMode::Diary, out);
        self.prompt(
            TurnKind::PredefinedQuestion,
            first.text,
            Some(first.id),
            at,
            out,
        );
    }

    fn finish_chat_utterance(
        &mut self,
        at: NaiveDateTime,
        config: &StudyConfig,
        agent: &mut dyn Agent,
        out: &mut Vec<Action>,
    ) {
        if self.buffer.is_empty() {
            return;
        }
        let text = std::mem::take(&mut self.buffer).join(" ");
        self.push_turn(
            TurnRole::Participant,
            TurnKind::Chat,
            text.clone(),
            None,
            at,
        );
        if detect_diary_intent(&text) {
            self.enter_diary(at, config, out);
            return;
        }
        let history: Vec<Turn> = self
            .transcript
            .iter()
            .filter(|t| t.kind == TurnKind::Chat)
            .cloned()
            .collect();
        let start = history.len().saturating_sub(CHAT_HISTORY_TURNS);
        let exchange = ChatExchange {
            system_prompt: CHAT_SYSTEM_PROMPT.to_string(),
            history: history[start..].to_vec(),
        };
        self.set_in_flight(true, out);
        let reply = agent.chat_reply(&exchange);
        self.set_in_flight(false, out);
        let reply = match reply {
            Ok(r) => r,
            Err(e) => {
                out.push(Action::Warning {
                    code: e.code().into(),
                    message: e.to_string(),
                });
                CHAT_FALLBACK_REPLY.to_string()
            }
        };
        self.prompt(TurnKind::Chat, reply, None, at, out);
    }

    fn finish_diary_answer(
        &mut self,
        at: NaiveDateTime,
        agent: &mut dyn Agent,
        out: &mut Vec<Action>,
    ) {
        let Some(progress) = self.diary.as_ref() else {
            return;
        };
        let answering = progress.current_question();
        let kind = if progress.followups_asked() > 0 {
            TurnKind::FollowUp
        } else {
            TurnKind::PredefinedQuestion
        };
        let segment = std::mem::take(&mut self.buffer).join(" ");
        self.push_turn(
            TurnRole::Participant,
            kind,
            segment.clone(),
            Some(answering),
            at,
        );

        self.set_in_flight(true, out);
        let step = interview::submit_response(self, &segment, agent, at);
        self.set_in_flight(false, out);
        let step = match step {
            Ok(s) => s,
            Err(InterviewError::NotInDiaryMode) => return,
            Err(e) => {
                out.push(Action::Warning {
                    code: e.code().into(),
                    message: e.to_string(),
                });
                return;
            }
        };
        if let Some(failure) = &step.policy_failure {
            out.push(Action::Warning {
                code: "policy_failure".into(),
                message: failure.to_string(),
            });
        }
        match step.next {
            NextAction::AskFollowUp { text } => {
                self.prompt(TurnKind::FollowUp, text, Some(answering), at, out)
            }
            NextAction::AskNextQuestion { question } => self.prompt(
                TurnKind::PredefinedQuestion,
                question.text,
                Some(question.id),
                at,
                out,
            ),
            NextAction::Complete { entry } => {
                self.entries_completed += 1;
                self.diary = None;
                out.push(Action::EntryCompleted { entry });
                self.change_mode(SessionMode::Idle, out);
                self.prompt(
                    TurnKind::SystemCue,
                    DIARY_CLOSING.to_string(),
                    None,
                    at,
                    out,
                );
            }
        }
    }
}

#[cfg(test)]
mod tests;
