//! Structured diary flow: predefined questions, capped follow-ups, entry assembly.
//!
//! The engine is pure with respect to session state. [`DiaryProgress`] goes in,
//! an updated [`DiaryProgress`] and a [`NextAction`] come out. Whatever a
//! [`FollowUpPolicy`] returns, the per-question cap is enforced here.

use std::sync::Arc;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Channel, Condition, PredefinedQuestion, StudyConfig};
use crate::conversation::{Session, SessionMode, Turn, TurnKind, TurnRole};
use crate::gateway::{ChatExchange, Gateway, GatewayError};
use crate::store::{word_count_text, DiaryEntry, QuestionResponse};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterviewError {
    #[error("study has no predefined questions")]
    EmptyQuestionList,
    #[error("session is not in diary mode")]
    NotInDiaryMode,
    #[error("diary progress is incomplete: question {0} unanswered")]
    IncompleteProgress(u32),
    #[error("diary pass already complete")]
    AlreadyComplete,
}

impl InterviewError {
    pub fn code(&self) -> &'static str {
        match self {
            InterviewError::EmptyQuestionList => "empty_question_list",
            InterviewError::NotInDiaryMode => "not_in_diary_mode",
            InterviewError::IncompleteProgress(_) => "incomplete_progress",
            InterviewError::AlreadyComplete => "already_complete",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("follow-up provider failed: {0}")]
    Provider(#[from] GatewayError),
}

/// Who the entry belongs to and where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryMeta {
    pub participant_id: String,
    pub condition: Condition,
    pub study_day: u32,
    pub channel: Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiaryProgress {
    pub meta: EntryMeta,
    questions: Vec<PredefinedQuestion>,
    cap: u32,
    current_question: u32,
    followups_asked: u32,
    responses: Vec<QuestionResponse>,
    complete: bool,
    #[serde(default)]
    pub duplicate: bool,
    #[serde(default)]
    pub policy_failures: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum NextAction {
    AskFollowUp { text: String },
    AskNextQuestion { question: PredefinedQuestion },
    Complete { entry: DiaryEntry },
}

/// Result of one submitted response.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next: NextAction,
    /// Set when the policy failed and the engine moved on without it.
    pub policy_failure: Option<PolicyError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FollowUpDecision {
    FollowUp(String),
    MoveOn,
}

pub struct FollowUpContext<'a> {
    pub question: &'a PredefinedQuestion,
    pub segments: &'a [String],
    pub followups_asked: u32,
    pub transcript: &'a [Turn],
}

pub trait FollowUpPolicy {
    fn decide(&mut self, ctx: &FollowUpContext<'_>) -> Result<FollowUpDecision, PolicyError>;
}

/// Probe once when the latest answer is shorter than `min_words`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RulePolicy {
    pub min_words: usize,
    pub probe: String,
}

impl RulePolicy {
    pub const DEFAULT_PROBE: &'static str = "Could you tell me a little more about that?";

    pub fn new(min_words: usize) -> Self {
        RulePolicy {
            min_words,
            probe: Self::DEFAULT_PROBE.to_string(),
        }
    }
}

impl Default for RulePolicy {
    fn default() -> Self {
        RulePolicy::new(5)
    }
}

impl FollowUpPolicy for RulePolicy {
    fn decide(&mut self, ctx: &FollowUpContext<'_>) -> Result<FollowUpDecision, PolicyError> {
        let last = ctx.segments.last().map(String::as_str).unwrap_or("");
        if ctx.followups_asked == 0 && word_count_text(last) < self.min_words {
            Ok(FollowUpDecision::FollowUp(self.probe.clone()))
        } else {
            Ok(FollowUpDecision::MoveOn)
        }
    }
}

/// Asks the chat provider whether to probe further.
///
/// The prompt is a local reconstruction; the provider answers with a single
/// follow-up question or the literal token `MOVE_ON`.
pub struct ProviderPolicy {
    gateway: Arc<Gateway>,
}

impl ProviderPolicy {
    pub const MOVE_ON: &'static str = "MOVE_ON";

    pub fn new(gateway: Arc<Gateway>) -> Self {
        ProviderPolicy { gateway }
    }

    pub fn system_prompt(question: &PredefinedQuestion, followups_asked: u32) -> String {
        format!(
            "You are a friendly diary companion collecting a parent's nightly diary entry \
             about their child's bedtime routine. The current diary question is: \"{}\". \
             {} follow-up question(s) have already been asked for it. If the participant's \
             answer is unclear, looks mis-transcribed, or leaves out something the question \
             asks about, reply with ONE short, warm follow-up question. Otherwise reply with \
             exactly {}.",
            question.text,
            followups_asked,
            Self::MOVE_ON
        )
    }

    pub fn parse_reply(reply: &str) -> FollowUpDecision {
        let token = reply
            .trim()
            .trim_matches(|c: char| c.is_ascii_punctuation() && c != '_');
        if token.eq_ignore_ascii_case(Self::MOVE_ON) || token.is_empty() {
            FollowUpDecision::MoveOn
        } else {
            FollowUpDecision::FollowUp(reply.trim().to_string())
        }
    }
}

impl FollowUpPolicy for ProviderPolicy {
    fn decide(&mut self, ctx: &FollowUpContext<'_>) -> Result<FollowUpDecision, PolicyError> {
        let mut history = ctx.transcript.to_vec();
        if history.last().map(|t| t.role) != Some(TurnRole::Participant) {
            let timestamp = history.last().map(|t| t.timestamp).unwrap_or_default();
            history.push(Turn {
                seq: history.len() as u64,
                role: TurnRole::Participant,
                kind: TurnKind::PredefinedQuestion,
                text: ctx.segments.join(" "),
                question_id: Some(ctx.question.id),
                timestamp,
            });
        }
        let exchange = ChatExchange {
            system_prompt: Self::system_prompt(ctx.question, ctx.followups_asked),
            history,
        };
        let reply = self.gateway.chat_reply(&exchange)?;
        Ok(Self::parse_reply(&reply))
    }
}

/// Initialize progress at question 1 and return that question.
pub fn start_diary(
    config: &StudyConfig,
    meta: EntryMeta,
) -> Result<(DiaryProgress, PredefinedQuestion), InterviewError> {
    let first = config
        .questions
        .first()
        .cloned()
        .ok_or(InterviewError::EmptyQuestionList)?;
    let progress = DiaryProgress {
        meta,
        responses: config
            .questions
            .iter()
            .map(|q| QuestionResponse {
                question_id: q.id,
                segments: Vec::new(),
            })
            .collect(),
        questions: config.questions.clone(),
        cap: config.follow_up_cap,
        current_question: first.id,
        followups_asked: 0,
        complete: false,
        duplicate: false,
        policy_failures: 0,
    };
    Ok((progress, first))
}

/// Session-level wrapper: checks the mode before delegating to the progress.
pub fn submit_response(
    session: &mut Session,
    text: &str,
    policy: &mut dyn FollowUpPolicy,
    at: NaiveDateTime,
) -> Result<Step, InterviewError> {
    if session.mode() != SessionMode::Diary {
        return Err(InterviewError::NotInDiaryMode);
    }
    let transcript = session.transcript().to_vec();
    let progress = session.diary_mut().ok_or(InterviewError::NotInDiaryMode)?;
    progress.submit_response(text, policy, &transcript, at)
}

impl DiaryProgress {
    pub fn current_question(&self) -> u32 {
        self.current_question
    }

    pub fn followups_asked(&self) -> u32 {
        self.followups_asked
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn question_count(&self) -> u32 {
        self.questions.len() as u32
    }

    pub fn responses(&self) -> &[QuestionResponse] {
        &self.responses
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn current(&self) -> &PredefinedQuestion {
        &self.questions[self.current_question as usize - 1]
    }

    /// Record `text` as a segment of the current question and decide what comes next.
    pub fn submit_response(
        &mut self,
        text: &str,
        policy: &mut dyn FollowUpPolicy,
        transcript: &[Turn],
        at: NaiveDateTime,
    ) -> Result<Step, InterviewError> {
        if self.complete {
            return Err(InterviewError::AlreadyComplete);
        }
        let idx = self.current_question as usize - 1;
        self.responses[idx].segments.push(text.trim().to_string());

        let mut policy_failure = None;
        if self.followups_asked < self.cap {
            let ctx = FollowUpContext {
                question: &self.questions[idx],
                segments: &self.responses[idx].segments,
                followups_asked: self.followups_asked,
                transcript,
            };
            match policy.decide(&ctx) {
                Ok(FollowUpDecision::FollowUp(text)) => {
                    self.followups_asked += 1;
                    return Ok(Step {
                        next: NextAction::AskFollowUp { text },
                        policy_failure: None,
                    });
                }
                Ok(FollowUpDecision::MoveOn) => {}
                Err(e) => {
                    tracing::warn!(
                        participant = %self.meta.participant_id,
                        question = self.current_question,
                        error = %e,
                        "follow-up policy failed; moving on"
                    );
                    self.policy_failures += 1;
                    policy_failure = Some(e);
                }
            }
        }

        let next = if idx + 1 == self.questions.len() {
            self.complete = true;
            NextAction::Complete {
                entry: assemble_entry(self, at)?,
            }
        } else {
            self.current_question += 1;
            self.followups_asked = 0;
            NextAction::AskNextQuestion {
                question: self.questions[idx + 1].clone(),
            }
        };
        Ok(Step {
            next,
            policy_failure,
        })
    }
}

/// Build the entry from answered progress, responses in question order.
pub fn assemble_entry(
    progress: &DiaryProgress,
    created_at: NaiveDateTime,
) -> Result<DiaryEntry, InterviewError> {
    if let Some(r) = progress.responses.iter().find(|r| r.segments.is_empty()) {
        return Err(InterviewError::IncompleteProgress(r.question_id));
    }
    let mut entry = DiaryEntry::new(
        progress.meta.participant_id.clone(),
        progress.meta.condition,
        progress.meta.study_day,
        progress.meta.channel,
        progress.responses.clone(),
        created_at,
    );
    entry.duplicate = progress.duplicate;
    Ok(entry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn at() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2024, 6, 3)
            .unwrap()
            .and_hms_opt(21, 0, 0)
            .unwrap()
    }

    fn meta() -> EntryMeta {
        EntryMeta {
            participant_id: "R1".into(),
            condition: Condition::RobotConversational,
            study_day: 1,
            channel: Channel::Conversational,
        }
    }

    struct Always;
    impl FollowUpPolicy for Always {
        fn decide(&mut self, _: &FollowUpContext<'_>) -> Result<FollowUpDecision, PolicyError> {
            Ok(FollowUpDecision::FollowUp("and then?".into()))
        }
    }

    struct Never;
    impl FollowUpPolicy for Never {
        fn decide(&mut self, _: &FollowUpContext<'_>) -> Result<FollowUpDecision, PolicyError> {
            Ok(FollowUpDecision::MoveOn)
        }
    }

    struct Failing;
    impl FollowUpPolicy for Failing {
        fn decide(&mut self, _: &FollowUpContext<'_>) -> Result<FollowUpDecision, PolicyError> {
            Err(PolicyError::Provider(GatewayError::Timeout {
                kind: "chat",
                attempts: 3,
            }))
        }
    }

    #[test]
    fn first_question_is_verbatim() {
        let cfg = StudyConfig::default();
        let (progress, q) = start_diary(&cfg, meta()).unwrap();
        assert_eq!(
            q.text,
            "What are the steps involved in your child's bedtime routine, how did they go tonight"
        );
        assert_eq!(progress.current_question(), 1);
        assert_eq!(progress.followups_asked(), 0);
    }

    #[test]
    fn empty_and_singleton_question_lists() {
        let mut cfg = StudyConfig::default();
        cfg.questions.clear();
        assert_eq!(
            start_diary(&cfg, meta()).unwrap_err(),
            InterviewError::EmptyQuestionList
        );
        cfg.questions = vec![PredefinedQuestion {
            id: 1,
            text: "How was tonight?".into(),
            stand_in: false,
        }];
        let (_, q) = start_diary(&cfg, meta()).unwrap();
        assert_eq!(q.text, "How was tonight?");
    }

    #[test]
    fn cap_two_with_always_policy() {
        let cfg = StudyConfig::default();
        let (mut p, _) = start_diary(&cfg, meta()).unwrap();
        let a = p.submit_response("one", &mut Always, &[], at()).unwrap();
        assert!(matches!(a.next, NextAction::AskFollowUp { .. }));
        let b = p.submit_response("two", &mut Always, &[], at()).unwrap();
        assert!(matches!(b.next, NextAction::AskFollowUp { .. }));
        let c = p.submit_response("three", &mut Always, &[], at()).unwrap();
        match c.next {
            NextAction::AskNextQuestion { question } => assert_eq!(question.id, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p.responses()[0].segments, vec!["one", "two", "three"]);
    }

    #[test]
    fn cap_zero_dominates_policy() {
        let cfg = StudyConfig {
            follow_up_cap: 0,
            ..StudyConfig::default()
        };
        let (mut p, _) = start_diary(&cfg, meta()).unwrap();
        for expected in 2..=6 {
            match p.submit_response("x", &mut Always, &[], at()).unwrap().next {
                NextAction::AskNextQuestion { question } => assert_eq!(question.id, expected),
                other => panic!("unexpected {other:?}"),
            }
        }
        assert!(matches!(
            p.submit_response("x", &mut Always, &[], at()).unwrap().next,
            NextAction::Complete { .. }
        ));
    }

    #[test]
    fn six_responses_without_follow_ups_complete() {
        let cfg = StudyConfig::default();
        let (mut p, _) = start_diary(&cfg, meta()).unwrap();
        let mut last = None;
        for i in 0..6 {
            last = Some(
                p.submit_response(&format!("answer {i}"), &mut Never, &[], at())
                    .unwrap(),
            );
        }
        let NextAction::Complete { entry } = last.unwrap().next else {
            panic!("expected completion");
        };
        assert_eq!(entry.responses.len(), 6);
        assert!(entry.responses.iter().all(|r| r.segments.len() == 1));
        assert_eq!(entry.word_count, 12);
        assert_eq!(
            p.submit_response("late", &mut Never, &[], at())
                .unwrap_err(),
            InterviewError::AlreadyComplete
        );
    }

    #[test]
    fn policy_failure_falls_back_to_next_question() {
        let cfg = StudyConfig::default();
        let (mut p, _) = start_diary(&cfg, meta()).unwrap();
        let step = p.submit_response("yes", &mut Failing, &[], at()).unwrap();
        assert!(matches!(step.next, NextAction::AskNextQuestion { .. }));
        assert!(step.policy_failure.is_some());
        assert_eq!(p.policy_failures, 1);
    }

    #[test]
    fn rule_policy_branches() {
        let q = &StudyConfig::default().questions[0];
        let mut rule = RulePolicy::default();
        let short = vec!["yes".to_string()];
        let ctx = FollowUpContext {
            question: q,
            segments: &short,
            followups_asked: 0,
            transcript: &[],
        };
        assert_eq!(
            rule.decide(&ctx).unwrap(),
            FollowUpDecision::FollowUp(RulePolicy::DEFAULT_PROBE.into())
        );
        let long = vec!["word ".repeat(30)];
        let ctx = FollowUpContext {
            segments: &long,
            ..ctx
        };
        assert_eq!(rule.decide(&ctx).unwrap(), FollowUpDecision::MoveOn);
        // Probes at most once per question.
        let ctx = FollowUpContext {
            segments: &short,
            followups_asked: 1,
            ..ctx
        };
        assert_eq!(rule.decide(&ctx).unwrap(), FollowUpDecision::MoveOn);
    }

    #[test]
    fn provider_policy_reads_scripted_replies() {
        use crate::gateway::MockScript;
        let gw = Arc::new(Gateway::mock(MockScript {
            chat: vec!["MOVE_ON".into(), "What book did you read?".into()],
            ..MockScript::default()
        }));
        let mut policy = ProviderPolicy::new(gw);
        let q = &StudyConfig::default().questions[0];
        let segs = vec!["we read".to_string()];
        let ctx = FollowUpContext {
            question: q,
            segments: &segs,
            followups_asked: 0,
            transcript: &[],
        };
        assert_eq!(policy.decide(&ctx).unwrap(), FollowUpDecision::MoveOn);
        assert_eq!(
            policy.decide(&ctx).unwrap(),
            FollowUpDecision::FollowUp("What book did you read?".into())
        );
        assert!(matches!(
            policy.decide(&ctx),
            Err(PolicyError::Provider(GatewayError::ScriptExhausted { .. }))
        ));
    }

    #[test]
    fn parse_reply_tolerates_punctuation() {
        assert_eq!(
            ProviderPolicy::parse_reply(" move_on. "),
            FollowUpDecision::MoveOn
        );
        assert_eq!(
            ProviderPolicy::parse_reply("\"MOVE_ON\""),
            FollowUpDecision::MoveOn
        );
    }

    #[test]
    fn assemble_rejects_incomplete_progress() {
        let cfg = StudyConfig::default();
        let (mut p, _) = start_diary(&cfg, meta()).unwrap();
        p.submit_response("only one", &mut Never, &[], at())
            .unwrap();
        assert_eq!(
            assemble_entry(&p, at()).unwrap_err(),
            InterviewError::IncompleteProgress(2)
        );
    }
}
