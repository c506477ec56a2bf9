use std::sync::Arc;

use chrono::NaiveDate;
use proptest::prelude::*;

use super::*;
use crate::gateway::{Gateway, MockScript};
use crate::interview::RulePolicy;

fn t(h: u32, m: u32, s: u32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 6, 3)
        .unwrap()
        .and_hms_opt(h, m, s)
        .unwrap()
}

fn agent(chat: &[&str]) -> StudyAgent {
    let script = MockScript {
        chat: chat.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    };
    StudyAgent::new(
        Arc::new(Gateway::mock(script)),
        Box::new(RulePolicy::default()),
    )
}

fn session() -> Session {
    Session::new("s-1", "R1", Condition::RobotConversational, t(20, 0, 0))
}

fn cues(actions: &[Action]) -> Vec<InteractionCue> {
    actions
        .iter()
        .filter_map(|a| match a {
            Action::CueChanged { cue, .. } => Some(*cue),
            _ => None,
        })
        .collect()
}

#[test]
fn activate_moves_idle_to_chat_with_listening_cue() {
    let cfg = StudyConfig::default();
    let mut s = session();
    assert_eq!(s.cue(), InteractionCue::Ready);
    let out = s
        .handle(SessionEvent::Activate, t(20, 0, 1), &cfg, &mut agent(&[]))
        .unwrap();
    assert_eq!(s.mode(), SessionMode::Chat);
    assert_eq!(
        out[0],
        Action::ModeChanged {
            from: SessionMode::Idle,
            to: SessionMode::Chat
        }
    );
    assert_eq!(cues(&out), vec![InteractionCue::Listening]);
}

#[test]
fn end_of_response_in_idle_is_rejected_without_state_change() {
    let cfg = StudyConfig::default();
    let mut s = session();
    let before = s.clone();
    let out = s
        .handle(
            SessionEvent::EndOfResponse,
            t(20, 0, 1),
            &cfg,
            &mut agent(&[]),
        )
        .unwrap();
    assert!(matches!(
        out.as_slice(),
        [Action::Rejected {
            mode: SessionMode::Idle,
            ..
        }]
    ));
    assert_eq!(s.mode(), before.mode());
    assert_eq!(s.transcript(), before.transcript());
}

#[test]
fn trigger_phrase_enters_diary_with_first_question() {
    let cfg = StudyConfig::default();
    let mut s = session();
    let mut a = agent(&[]);
    s.handle(SessionEvent::Activate, t(20, 0, 1), &cfg, &mut a)
        .unwrap();
    s.handle(
        SessionEvent::utterance("Can we start the diary entry activity?"),
        t(20, 0, 5),
        &cfg,
        &mut a,
    )
    .unwrap();
    let out = s
        .handle(SessionEvent::SilenceTimeout, t(20, 0, 7), &cfg, &mut a)
        .unwrap();
    assert_eq!(s.mode(), SessionMode::Diary);
    assert!(out.contains(&Action::ModeChanged {
        from: SessionMode::Chat,
        to: SessionMode::Diary
    }));
    assert!(out.contains(&Action::Prompt {
        kind: TurnKind::PredefinedQuestion,
        text: cfg.questions[0].text.clone(),
        question_id: Some(1),
    }));
}

#[test]
fn explicit_intent_event_also_enters_diary() {
    let cfg = StudyConfig::default();
    let mut s = session();
    let mut a = agent(&[]);
    s.handle(SessionEvent::Activate, t(20, 0, 1), &cfg, &mut a)
        .unwrap();
    s.handle(SessionEvent::DiaryIntentDetected, t(20, 0, 2), &cfg, &mut a)
        .unwrap();
    assert_eq!(s.mode(), SessionMode::Diary);
    assert_eq!(s.diary().unwrap().current_question(), 1);
}

#[test]
fn chat_turn_gets_scripted_reply_and_processing_cue() {
    let cfg = StudyConfig::default();
    let mut s = session();
    let mut a = agent(&["hello!"]);
    s.handle(SessionEvent::Activate, t(20, 0, 1), &cfg, &mut a)
        .unwrap();
    s.handle(
        SessionEvent::utterance("hi robot"),
        t(20, 0, 2),
        &cfg,
        &mut a,
    )
    .unwrap();
    let out = s
        .handle(SessionEvent::SilenceTimeout, t(20, 0, 4), &cfg, &mut a)
        .unwrap();
    assert_eq!(
        cues(&out),
        vec![InteractionCue::Processing, InteractionCue::Listening]
    );
    assert_eq!(s.transcript().last().unwrap().text, "hello!");
    assert_eq!(s.transcript().len(), 2);
}

#[test]
fn chat_provider_failure_falls_back_with_warning() {
    let cfg = StudyConfig::default();
    let mut s = session();
    let mut a = agent(&[]);
    s.handle(SessionEvent::Activate, t(20, 0, 1), &cfg, &mut a)
        .unwrap();
    s.handle(SessionEvent::utterance("hi"), t(20, 0, 2), &cfg, &mut a)
        .unwrap();
    let out = s
        .handle(SessionEvent::SilenceTimeout, t(20, 0, 4), &cfg, &mut a)
        .unwrap();
    assert!(out
        .iter()
        .any(|a| matches!(a, Action::Warning { code, .. } if code == "script_exhausted")));
    assert_eq!(s.transcript().last().unwrap().text, CHAT_FALLBACK_REPLY);
}

fn run_diary(s: &mut Session, cfg: &StudyConfig, a: &mut dyn Agent, start_min: u32) -> Vec<Action> {
    let mut all = Vec::new();
    let mut sec = 0;
    let mut tick = || {
        sec += 1;
        t(20, start_min + sec / 60, sec % 60)
    };
    all.extend(s.handle(SessionEvent::Activate, tick(), cfg, a).unwrap());
    all.extend(
        s.handle(SessionEvent::DiaryIntentDetected, tick(), cfg, a)
            .unwrap(),
    );
    while s.mode() == SessionMode::Diary {
        all.extend(
            s.handle(
                SessionEvent::utterance("we read two books and then brushed teeth"),
                tick(),
                cfg,
                a,
            )
            .unwrap(),
        );
        all.extend(
            s.handle(SessionEvent::EndOfResponse, tick(), cfg, a)
                .unwrap(),
        );
    }
    all
}

#[test]
fn full_diary_completes_and_returns_to_idle() {
    let cfg = StudyConfig::default();
    let mut s = session();
    let out = run_diary(&mut s, &cfg, &mut agent(&[]), 0);
    let entry = out
        .iter()
        .find_map(|a| match a {
            Action::EntryCompleted { entry } => Some(entry.clone()),
            _ => None,
        })
        .expect("entry completed");
    assert_eq!(entry.responses.len(), 6);
    assert_eq!(entry.word_count, 6 * 8);
    assert_eq!(entry.study_day, 1);
    assert!(!entry.duplicate);
    assert_eq!(s.mode(), SessionMode::Idle);
    assert_eq!(s.cue(), InteractionCue::Ready);
    let asked: Vec<u32> = s
        .transcript()
        .iter()
        .filter(|t| t.role == TurnRole::Agent && t.kind == TurnKind::PredefinedQuestion)
        .filter_map(|t| t.question_id)
        .collect();
    assert_eq!(asked, vec![1, 2, 3, 4, 5, 6]);
}

#[test]
fn second_diary_in_one_session_is_flagged_duplicate() {
    let cfg = StudyConfig::default();
    let mut s = session();
    let mut a = agent(&[]);
    run_diary(&mut s, &cfg, &mut a, 0);
    let out = run_diary(&mut s, &cfg, &mut a, 10);
    assert!(out
        .iter()
        .any(|a| matches!(a, Action::Warning { code, .. } if code == "duplicate_entry")));
    assert!(out
        .iter()
        .any(|a| matches!(a, Action::EntryCompleted { entry } if entry.duplicate)));
}

#[test]
fn short_answer_gets_rule_follow_up() {
    let cfg = StudyConfig::default();
    let mut s = session();
    let mut a = agent(&[]);
    s.handle(SessionEvent::Activate, t(20, 0, 1), &cfg, &mut a)
        .unwrap();
    s.handle(SessionEvent::DiaryIntentDetected, t(20, 0, 2), &cfg, &mut a)
        .unwrap();
    s.handle(SessionEvent::utterance("fine"), t(20, 0, 3), &cfg, &mut a)
        .unwrap();
    let out = s
        .handle(SessionEvent::EndOfResponse, t(20, 0, 4), &cfg, &mut a)
        .unwrap();
    assert!(out.contains(&Action::Prompt {
        kind: TurnKind::FollowUp,
        text: RulePolicy::DEFAULT_PROBE.into(),
        question_id: Some(1),
    }));
}

#[test]
fn deactivate_mid_diary_discards_progress() {
    let cfg = StudyConfig::default();
    let mut s = session();
    let mut a = agent(&[]);
    s.handle(SessionEvent::Activate, t(20, 0, 1), &cfg, &mut a)
        .unwrap();
    s.handle(SessionEvent::DiaryIntentDetected, t(20, 0, 2), &cfg, &mut a)
        .unwrap();
    let out = s
        .handle(SessionEvent::Deactivate, t(20, 0, 3), &cfg, &mut a)
        .unwrap();
    assert!(s.diary().is_none());
    assert_eq!(s.mode(), SessionMode::Idle);
    assert!(out
        .iter()
        .any(|a| matches!(a, Action::Warning { code, .. } if code == "diary_abandoned")));
}

#[test]
fn empty_utterance_is_malformed() {
    let cfg = StudyConfig::default();
    let mut s = session();
    let err = s
        .handle(
            SessionEvent::UtteranceReceived {
                text: None,
                audio_ref: None,
            },
            t(20, 0, 1),
            &cfg,
            &mut agent(&[]),
        )
        .unwrap_err();
    assert_eq!(err.code(), "malformed_event");
}

#[test]
fn inactivity_expires_session() {
    let cfg = StudyConfig::default();
    let mut s = session();
    let mut a = agent(&[]);
    s.handle(SessionEvent::Activate, t(20, 0, 1), &cfg, &mut a)
        .unwrap();
    let err = s
        .handle(SessionEvent::Deactivate, t(20, 40, 0), &cfg, &mut a)
        .unwrap_err();
    assert_eq!(err, ConversationError::SessionExpired("s-1".into()));
    assert_eq!(s.status(), SessionStatus::Abandoned);
}

#[test]
fn input_policy_per_mode() {
    let cfg = StudyConfig::default();
    assert_eq!(
        end_of_input_policy(SessionMode::Diary, &cfg),
        Ok(InputPolicy::Manual)
    );
    assert_eq!(
        end_of_input_policy(SessionMode::Chat, &cfg),
        Ok(InputPolicy::Silence { timeout_secs: 2.0 })
    );
    assert_eq!(
        end_of_input_policy(SessionMode::Idle, &cfg),
        Err(ConversationError::IdleModeHasNoInput)
    );
}

#[test]
fn transition_table_is_total() {
    let events = [
        SessionEvent::Activate,
        SessionEvent::utterance("x"),
        SessionEvent::EndOfResponse,
        SessionEvent::SilenceTimeout,
        SessionEvent::DiaryIntentDetected,
        SessionEvent::DiaryCompleted,
        SessionEvent::Deactivate,
    ];
    for mode in [SessionMode::Idle, SessionMode::Chat, SessionMode::Diary] {
        for e in &events {
            match fsm::classify(mode, e) {
                fsm::Transition::Move(to) => assert!(matches!(
                    (mode, to),
                    (SessionMode::Idle, SessionMode::Chat)
                        | (SessionMode::Chat, SessionMode::Diary)
                        | (SessionMode::Chat, SessionMode::Idle)
                        | (SessionMode::Diary, SessionMode::Idle)
                )),
                fsm::Transition::Stay => assert_ne!(mode, SessionMode::Idle),
                fsm::Transition::Reject(reason) => assert!(!reason.is_empty()),
            }
        }
    }
}

fn arb_event() -> impl Strategy<Value = SessionEvent> {
    prop_oneof![
        Just(SessionEvent::Activate),
        "[a-z ]{0,20}".prop_map(SessionEvent::utterance),
        Just(SessionEvent::utterance("can we start the diary")),
        Just(SessionEvent::EndOfResponse),
        Just(SessionEvent::SilenceTimeout),
        Just(SessionEvent::DiaryIntentDetected),
        Just(SessionEvent::DiaryCompleted),
        Just(SessionEvent::Deactivate),
    ]
}

proptest! {
    #[test]
    fn random_event_streams_keep_cue_and_transcript_consistent(
        events in proptest::collection::vec(arb_event(), 0..80)
    ) {
        let cfg = StudyConfig::default();
        let mut s = session();
        let mut a = agent(&["ok"; 80]);
        let mut prev_len = 0;
        for (i, e) in events.into_iter().enumerate() {
            let at = t(20, 0, 0) + chrono::Duration::seconds(i as i64 + 1);
            let before = s.transcript().to_vec();
            s.handle(e, at, &cfg, &mut a).unwrap();
            prop_assert_eq!(s.cue(), InteractionCue::implied(s.mode(), s.in_flight()));
            prop_assert!(!s.in_flight());
            prop_assert!(s.transcript().len() >= prev_len);
            prop_assert_eq!(&s.transcript()[..before.len()], &before[..]);
            prop_assert_eq!(s.diary().is_some(), s.mode() == SessionMode::Diary);
            prev_len = s.transcript().len();
        }
        for (i, turn) in s.transcript().iter().enumerate() {
            prop_assert_eq!(turn.seq, i as u64);
        }
    }
}
