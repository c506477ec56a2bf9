//! Diary-study engine: conversation sessions, the structured interview,
//! provider gateway, durable store, compliance tracking, content analysis and
//! statistics.

pub mod analysis;
pub mod calendar;
pub mod compliance;
pub mod config;
pub mod content;
pub mod conversation;
pub mod gateway;
pub mod interview;
pub mod service;
pub mod simulate;
pub mod stats;
pub mod store;
pub mod synthetic;

pub use analysis::{AnalysisError, AnalysisSummary, ParticipantMeasures, MEASURES};
pub use calendar::StudyCalendar;
pub use compliance::{
    ComplianceError, ComplianceRecord, ComplianceStatus, ComplianceSummary, ConditionCompliance,
    Notifier, RecordingNotifier,
};
pub use config::{Channel, Condition, ConfigError, Enrollment, StudyConfig};
pub use content::{Codebook, ContentError};
pub use conversation::{
    Action, ConversationError, InteractionCue, Session, SessionEvent, SessionMode, SessionStatus,
    Turn, TurnKind,
};
pub use gateway::{Gateway, GatewayError, MockScript};
pub use service::{
    ComplianceReport, EntrySubmission, ServiceError, StudyService, SubmittedResponse,
};
pub use simulate::{
    simulate, SimulationError, SimulationOptions, SimulationReport, SimulationScript,
    TRIGGER_PHRASE,
};
pub use stats::{GroupSummary, StatsError, StatsReport, TukeyResult};
pub use store::{DiaryEntry, LogOptions, QuestionnaireResponse, Record, Store, StudyDb};
