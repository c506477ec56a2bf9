//! Study definition: questions, conditions, schedule and validity rules.

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Entry-creation modality a participant is assigned to.
///
/// Declaration order is the reporting order used throughout (robot, audio, text).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    RobotConversational,
    AudioTranscript,
    TextForm,
}

impl Condition {
    pub const ALL: [Condition; 3] = [
        Condition::RobotConversational,
        Condition::AudioTranscript,
        Condition::TextForm,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Condition::RobotConversational => "robot",
            Condition::AudioTranscript => "audio",
            Condition::TextForm => "text",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Condition::RobotConversational => "R",
            Condition::AudioTranscript => "A",
            Condition::TextForm => "T",
        }
    }

    pub fn channel(self) -> Channel {
        match self {
            Condition::RobotConversational => Channel::Conversational,
            Condition::AudioTranscript => Channel::AudioTranscript,
            Condition::TextForm => Channel::TextForm,
        }
    }

    pub fn parse(s: &str) -> Option<Condition> {
        match s.trim().to_ascii_lowercase().as_str() {
            "robot" | "robot-conversational" | "r" => Some(Condition::RobotConversational),
            "audio" | "audio-transcript" | "a" => Some(Condition::AudioTranscript),
            "text" | "text-form" | "t" => Some(Condition::TextForm),
            _ => None,
        }
    }
}

/// How an entry reached the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    Conversational,
    TextForm,
    AudioTranscript,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Conversational => "conversational",
            Channel::TextForm => "text-form",
            Channel::AudioTranscript => "audio-transcript",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReminderChannel {
    TextMessage,
    Email,
}

impl ReminderChannel {
    pub fn as_str(self) -> &'static str {
        match self {
            ReminderChannel::TextMessage => "text-message",
            ReminderChannel::Email => "email",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredefinedQuestion {
    pub id: u32,
    pub text: String,
    /// Wording reconstructed locally rather than taken from the study instrument.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub stand_in: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Rule,
    Provider,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowUpSettings {
    pub policy: PolicyKind,
    /// Rule policy probes once when an answer has fewer words than this.
    pub min_words: usize,
}

impl Default for FollowUpSettings {
    fn default() -> Self {
        FollowUpSettings {
            policy: PolicyKind::Rule,
            min_words: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReminderDefaults {
    pub check_time: NaiveTime,
    pub channel: ReminderChannel,
}

impl Default for ReminderDefaults {
    fn default() -> Self {
        ReminderDefaults {
            check_time: NaiveTime::from_hms_opt(21, 30, 0).unwrap(),
            channel: ReminderChannel::TextMessage,
        }
    }
}

/// A participant enrolled in the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enrollment {
    pub participant_id: String,
    pub condition: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_time: Option<NaiveTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reminder_channel: Option<ReminderChannel>,
}

/// Item layout of the post-study questionnaire.
///
/// USE subscale membership is instrument-defined, so it is declared here
/// rather than hard-coded. Indices are zero-based positions in the item vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireLayout {
    pub use_items: usize,
    pub usefulness: Vec<usize>,
    pub ease_of_use: Vec<usize>,
    pub ease_of_learning: Vec<usize>,
    pub satisfaction: Vec<usize>,
    pub breadth_items: usize,
    pub scope_item: usize,
    pub flow_item: usize,
    /// Breadth item excluded from every score.
    pub dropped_breadth_item: usize,
    pub depth_items: usize,
}

impl Default for QuestionnaireLayout {
    fn default() -> Self {
        QuestionnaireLayout {
            use_items: 30,
            usefulness: (0..8).collect(),
            ease_of_use: (8..19).collect(),
            ease_of_learning: (19..23).collect(),
            satisfaction: (23..30).collect(),
            breadth_items: 3,
            scope_item: 0,
            flow_item: 1,
            dropped_breadth_item: 2,
            depth_items: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub study_id: String,
    pub conditions: Vec<Condition>,
    pub questions: Vec<PredefinedQuestion>,
    pub follow_up_cap: u32,
    pub follow_up: FollowUpSettings,
    pub total_days: u32,
    pub required_days: u32,
    /// Calendar date of study night 1.
    pub start_date: NaiveDate,
    /// Local time a study night opens.
    pub day_start: NaiveTime,
    /// Local time (next morning) a study night closes.
    pub day_cutoff: NaiveTime,
    pub validity_window_days: u32,
    pub reminder_defaults: ReminderDefaults,
    pub chat_silence_timeout_secs: f64,
    pub session_inactivity_minutes: u32,
    pub participants: Vec<Enrollment>,
    pub questionnaire: QuestionnaireLayout,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            study_id: "bedtime-routines".to_string(),
            conditions: Condition::ALL.to_vec(),
            questions: default_questions(),
            follow_up_cap: 2,
            follow_up: FollowUpSettings::default(),
            total_days: 7,
            required_days: 5,
            start_date: NaiveDate::from_ymd_opt(2024, 6, 3).unwrap(),
            day_start: NaiveTime::from_hms_opt(12, 0, 0).unwrap(),
            day_cutoff: NaiveTime::from_hms_opt(4, 0, 0).unwrap(),
            validity_window_days: 1,
            reminder_defaults: ReminderDefaults::default(),
            chat_silence_timeout_secs: 2.0,
            session_inactivity_minutes: 30,
            participants: Vec::new(),
            questionnaire: QuestionnaireLayout::default(),
        }
    }
}

/// Nightly question set. Questions 4-6 are local stand-ins.
pub fn default_questions() -> Vec<PredefinedQuestion> {
    let q = |id, text: &str, stand_in| PredefinedQuestion {
        id,
        text: text.to_string(),
        stand_in,
    };
    vec![
        q(
            1,
            "What are the steps involved in your child's bedtime routine, how did they go tonight",
            false,
        ),
        q(
            2,
            "Were there any challenges during tonight's bedtime routine",
            false,
        ),
        q(
            3,
            "How were you feeling by the end of the routine? Why did you feel that way?",
            false,
        ),
        q(
            4,
            "Did anything happen tonight that was different from a usual night?",
            true,
        ),
        q(
            5,
            "Did your child say or do anything tonight that stood out to you?",
            true,
        ),
        q(
            6,
            "Is there anything else about tonight you would like to add?",
            true,
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("required_days ({required}) exceeds total_days ({total})")]
    RequiredExceedsTotal { required: u32, total: u32 },
    #[error("question ids must be contiguous from 1; found {found} at position {position}")]
    NonContiguousQuestions { position: usize, found: u32 },
    #[error("total_days must be at least 1")]
    NoDays,
    #[error("day_cutoff must be earlier than day_start")]
    CutoffAfterStart,
    #[error("participant {0} enrolled more than once")]
    DuplicateParticipant(String),
    #[error("participant {participant} check time {check_time} falls outside the night window")]
    CheckTimeOutsideNight {
        participant: String,
        check_time: NaiveTime,
    },
    #[error("questionnaire layout index {index} out of range for {section}")]
    LayoutOutOfRange { section: &'static str, index: usize },
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::RequiredExceedsTotal { .. } => "required_exceeds_total",
            ConfigError::NonContiguousQuestions { .. } => "non_contiguous_questions",
            ConfigError::NoDays => "no_days",
            ConfigError::CutoffAfterStart => "cutoff_after_start",
            ConfigError::DuplicateParticipant(_) => "duplicate_participant",
            ConfigError::CheckTimeOutsideNight { .. } => "check_time_outside_night",
            ConfigError::LayoutOutOfRange { .. } => "layout_out_of_range",
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.total_days == 0 {
            return Err(ConfigError::NoDays);
        }
        if self.required_days > self.total_days {
            return Err(ConfigError::RequiredExceedsTotal {
                required: self.required_days,
                total: self.total_days,
            });
        }
        for (i, q) in self.questions.iter().enumerate() {
            if q.id as usize != i + 1 {
                return Err(ConfigError::NonContiguousQuestions {
                    position: i,
                    found: q.id,
                });
            }
        }
        if self.day_cutoff >= self.day_start {
            return Err(ConfigError::CutoffAfterStart);
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.participants {
            if !seen.insert(p.participant_id.as_str()) {
                return Err(ConfigError::DuplicateParticipant(p.participant_id.clone()));
            }
            let check_time = p.check_time.unwrap_or(self.reminder_defaults.check_time);
            if !self.time_in_night(check_time) {
                return Err(ConfigError::CheckTimeOutsideNight {
                    participant: p.participant_id.clone(),
                    check_time,
                });
            }
        }
        let layout = &self.questionnaire;
        for (section, items, bound) in [
            ("usefulness", &layout.usefulness, layout.use_items),
            ("ease_of_use", &layout.ease_of_use, layout.use_items),
            (
                "ease_of_learning",
                &layout.ease_of_learning,
                layout.use_items,
            ),
            ("satisfaction", &layout.satisfaction, layout.use_items),
        ] {
            if let Some(&index) = items.iter().find(|&&i| i >= bound) {
                return Err(ConfigError::LayoutOutOfRange { section, index });
            }
        }
        for index in [
            layout.scope_item,
            layout.flow_item,
            layout.dropped_breadth_item,
        ] {
            if index >= layout.breadth_items {
                return Err(ConfigError::LayoutOutOfRange {
                    section: "breadth",
                    index,
                });
            }
        }
        Ok(())
    }

    /// True when `t` lies inside the nightly window `[day_start, 24:00) ∪ [00:00, day_cutoff)`.
    pub fn time_in_night(&self, t: NaiveTime) -> bool {
        t >= self.day_start || t < self.day_cutoff
    }

    pub fn enrollment(&self, participant_id: &str) -> Option<&Enrollment> {
        self.participants
            .iter()
            .find(|p| p.participant_id == participant_id)
    }

    pub fn question(&self, id: u32) -> Option<&PredefinedQuestion> {
        self.questions.iter().find(|q| q.id == id)
    }
}
